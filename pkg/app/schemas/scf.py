from enum import Enum
from typing import List, Optional

from pydantic import BaseModel, Field

from app.core.config import settings
from app.schemas.lattice import LatticeSpec
from app.schemas.sources import MuPerSpec, NuSpec


class MixingScheme(str, Enum):
    LINEAR = "linear"
    ANDERSON = "anderson"


class MixingConfig(BaseModel):
    alpha: float = Field(default_factory=lambda: settings.mixing_alpha, gt=0, le=1)
    anderson_depth: int = Field(
        default_factory=lambda: settings.anderson_depth,
        ge=0,
        description="History length for Anderson mixing, 0 selects linear mixing",
    )

    @property
    def scheme(self) -> MixingScheme:
        return MixingScheme.ANDERSON if self.anderson_depth > 0 else MixingScheme.LINEAR


class SCFConfig(BaseModel):
    cutoff: float = Field(default_factory=lambda: settings.default_cutoff, gt=0)
    L: int = Field(default=1, ge=1)
    tol: float = Field(default_factory=lambda: settings.scf_tol, gt=0)
    max_iter: int = Field(default_factory=lambda: settings.scf_max_iter, gt=0)
    mixing: MixingConfig = Field(default_factory=MixingConfig)
    gap_tol: float = Field(default_factory=lambda: settings.gap_tol, gt=0)


class FieldCoefficient(BaseModel):
    miller: List[int]
    re: float
    im: float


class FieldModel(BaseModel):
    """Serialized periodic field: basis descriptor plus nonzero coefficients"""

    lattice: List[float]
    L: int
    cutoff: float
    shift: List[float] = [0.0, 0.0, 0.0]
    real: bool = True
    coefficients: List[FieldCoefficient]


class IterationRecord(BaseModel):
    iteration: int
    residual: float
    fermi_level: float
    energy: float


class GroundStateDump(BaseModel):
    kind: str
    L: int
    cutoff: float
    fermi_level: float
    num_occupied: int
    energy: float
    components: dict
    gap: Optional[float] = None
    converged: bool = True
    trace: List[IterationRecord]
    density: FieldModel


class SCFRunConfig(LatticeSpec):
    """Input of a single periodic (and optional defect) solve; extra study keys are ignored"""

    mu_per: MuPerSpec
    nu: Optional[NuSpec] = None
    cutoff: float = Field(default_factory=lambda: settings.default_cutoff, gt=0)
    mixing: MixingConfig = Field(default_factory=MixingConfig)
    scf_tol: float = Field(default_factory=lambda: settings.scf_tol, gt=0)
    max_iter: int = Field(default_factory=lambda: settings.scf_max_iter, gt=0)

    def solver_config(self, L: int = 1) -> SCFConfig:
        return SCFConfig(cutoff=self.cutoff, L=L, tol=self.scf_tol, max_iter=self.max_iter, mixing=self.mixing)
