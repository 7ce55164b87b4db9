"""
Settings tests for supercorr
"""

from app.core.config import Settings, get_settings
from app.schemas.scf import MixingConfig, SCFConfig


class TestSettings:
    """Test group for environment-driven settings."""

    def test_defaults(self):
        """Success: numerical defaults without environment overrides"""
        settings = Settings(_env_file=None)
        assert settings.quadrature_order == 24
        assert settings.response_grid_p > 0
        assert 0 < settings.mixing_alpha <= 1

    def test_env_prefix(self, monkeypatch):
        """Success: SUPERCORR_ variables override the defaults"""
        monkeypatch.setenv("SUPERCORR_SCF_TOL", "1e-6")
        monkeypatch.setenv("SUPERCORR_ANDERSON_DEPTH", "0")
        settings = Settings(_env_file=None)
        assert settings.scf_tol == 1e-6
        assert settings.anderson_depth == 0

    def test_get_settings_environment(self, monkeypatch):
        """Success: ENVIRONMENT selects the env file without failing when it is absent"""
        monkeypatch.setenv("ENVIRONMENT", "test")
        assert isinstance(get_settings(), Settings)

    def test_solver_defaults_follow_settings(self):
        """Success: solver configurations take their defaults from settings"""
        cfg = SCFConfig()
        assert cfg.mixing == MixingConfig()
        assert cfg.mixing.scheme.value in ("linear", "anderson")
