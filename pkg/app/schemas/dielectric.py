from typing import List, Optional

from pydantic import AliasChoices, BaseModel, Field, model_validator

from app.core.config import settings
from app.schemas.lattice import LatticeSpec
from app.schemas.sources import MuPerSpec


class DielectricRequest(LatticeSpec):
    mu_per: MuPerSpec
    electrons_per_cell: int = Field(ge=0)
    cutoff: float = Field(default_factory=lambda: settings.default_cutoff, gt=0)
    response_cutoff: float = Field(default_factory=lambda: settings.response_cutoff, gt=0)
    P: int = Field(
        default_factory=lambda: settings.response_grid_p,
        gt=0,
        le=32,
        validation_alias=AliasChoices("P", "response_grid_P"),
    )
    periodic_L: Optional[int] = Field(default=None, ge=1, description="k-grid of the periodic solve, defaults to P")

    @model_validator(mode="after")
    def check_neutral(self):
        if self.periodic_L is None:
            self.periodic_L = self.P
        charge = sum(g.weight for g in self.mu_per.gaussians) + sum(b.weight for b in self.mu_per.bumps)
        if abs(charge - self.electrons_per_cell) > 1e-9:
            raise ValueError(f"nuclear charge {charge} does not match electrons_per_cell {self.electrons_per_cell}")
        return self


# Response models for API
class DielectricSummary(BaseModel):
    M_zero: List[List[float]]
    M1_zero: List[List[float]]
    epsilon: Optional[float] = None
    isotropic_cubic: bool
    fermi_level: float
    gap: float
    response_modes: int
    P: int
