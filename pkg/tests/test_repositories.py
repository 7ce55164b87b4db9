import numpy as np
import pytest

from app.repositories.field import FieldRepository
from app.schemas.scf import FieldCoefficient


class TestFieldRepository:
    """Test group for periodic field storage."""

    def test_round_trip(self, tmp_path, well_potential):
        """Success: the stored field rebuilds on the same basis with the same coefficients"""
        path = FieldRepository.save_field(tmp_path / "fields" / "V.json", well_potential)
        loaded = FieldRepository.load_field(path)
        assert loaded.basis.same_as(well_potential.basis)
        assert loaded.real == well_potential.real
        assert np.allclose(loaded.coeffs, well_potential.coeffs, rtol=0, atol=1e-15)

    def test_drop_small(self, well_potential):
        """Success: coefficients below the threshold are left out"""
        full = FieldRepository.to_model(well_potential)
        trimmed = FieldRepository.to_model(well_potential, drop_below=0.5)
        assert len(full.coefficients) == well_potential.basis.size
        assert 0 < len(trimmed.coefficients) < len(full.coefficients)

    def test_coefficient_outside_basis(self, well_potential):
        """Fail: a stored Miller index outside the rebuilt basis"""
        model = FieldRepository.to_model(well_potential)
        model.coefficients.append(FieldCoefficient(miller=[1000, 0, 0], re=1.0, im=0.0))
        with pytest.raises(ValueError):
            FieldRepository.from_model(model)
