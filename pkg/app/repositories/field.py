"""
Field repository - JSON storage of periodic fields
"""

import json
from pathlib import Path
from typing import Union

import numpy as np

from app.schemas.scf import FieldCoefficient, FieldModel
from app.services.fields import PeriodicField, PlaneWaveBasis
from app.services.geometry import LatticeGeometry


class FieldRepository:
    """Repository for periodic fields"""

    @staticmethod
    def to_model(field: PeriodicField, drop_below: float = 0.0) -> FieldModel:
        """Basis descriptor plus the coefficients above drop_below"""
        basis = field.basis
        keep = np.abs(field.coeffs) > drop_below
        return FieldModel(
            lattice=basis.geometry.rows(),
            L=basis.L,
            cutoff=basis.cutoff,
            shift=[float(s) for s in basis.shift],
            real=field.real,
            coefficients=[
                FieldCoefficient(miller=[int(m) for m in basis.miller[i]], re=float(c.real), im=float(c.imag))
                for i, c in zip(np.flatnonzero(keep), field.coeffs[keep])
            ],
        )

    @staticmethod
    def from_model(model: FieldModel) -> PeriodicField:
        """Rebuild the basis and place the stored coefficients"""
        geometry = LatticeGeometry.from_rows(model.lattice)
        basis = PlaneWaveBasis(geometry, model.cutoff, L=model.L, shift=model.shift)
        coeffs = np.zeros(basis.size, dtype=complex)
        if model.coefficients:
            miller = np.array([c.miller for c in model.coefficients], dtype=int)
            pos = basis.lookup(miller)
            if np.any(pos < 0):
                raise ValueError("stored coefficient outside the rebuilt basis")
            coeffs[pos] = [complex(c.re, c.im) for c in model.coefficients]
        return PeriodicField(basis, coeffs, real=model.real)

    @staticmethod
    def save_field(path: Union[str, Path], field: PeriodicField) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(FieldRepository.to_model(field).model_dump(mode="json")))
        return path

    @staticmethod
    def load_field(path: Union[str, Path]) -> PeriodicField:
        return FieldRepository.from_model(FieldModel.model_validate_json(Path(path).read_text()))
