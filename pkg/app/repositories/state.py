"""
State repository - JSON dumps of self-consistent ground states
"""

import json
import logging
from pathlib import Path
from typing import Union

from app.repositories.field import FieldRepository
from app.schemas.scf import GroundStateDump, IterationRecord
from app.services.scf import GroundState

logger = logging.getLogger(__name__)


class StateRepository:
    """Repository for SCF states"""

    @staticmethod
    def to_dump(state: GroundState) -> GroundStateDump:
        return GroundStateDump(
            kind=state.kind,
            L=state.L,
            cutoff=state.cutoff,
            fermi_level=state.fermi_level,
            num_occupied=state.num_occupied,
            energy=state.energy,
            components=state.parts.as_dict(),
            gap=state.gap if state.gap is not None and state.gap != float("inf") else None,
            trace=[
                IterationRecord(iteration=it.iteration, residual=it.residual, fermi_level=it.fermi_level, energy=it.energy)
                for it in state.trace
            ],
            density=FieldRepository.to_model(state.density),
        )

    @staticmethod
    def save_state(path: Union[str, Path], state: GroundState) -> Path:
        """Write density coefficients, energies and the iteration trace"""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(StateRepository.to_dump(state).model_dump(mode="json"), indent=2))
        logger.info(f"State written to {path}")
        return path

    @staticmethod
    def load_state(path: Union[str, Path]) -> GroundStateDump:
        """Read a dump; the density is restored with FieldRepository.from_model"""
        return GroundStateDump.model_validate_json(Path(path).read_text())
