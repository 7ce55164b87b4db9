from enum import Enum
from typing import Dict, List, Optional

from pydantic import BaseModel, Field, field_validator, model_validator

from app.core.config import settings
from app.schemas.lattice import LatticeSpec
from app.schemas.scf import MixingConfig
from app.schemas.sources import MuPerSpec, NuSpec


class Pipeline(str, Enum):
    QUADRATIC_RESPONSE = "quadratic_response"
    FULL_SCF = "full_scf"
    BOTH = "both"


class Tolerances(BaseModel):
    scf: float = Field(default_factory=lambda: settings.scf_tol, gt=0)
    fit: float = Field(default=0.05, gt=0, description="Accepted relative slope deviation")


class StudyConfig(LatticeSpec):
    mu_per: MuPerSpec
    nu: NuSpec
    electrons_per_cell: int = Field(ge=0)
    cutoff: float = Field(default_factory=lambda: settings.default_cutoff, gt=0)
    response_cutoff: float = Field(default_factory=lambda: settings.response_cutoff, gt=0)
    L_ladder: List[int] = Field(min_length=1)
    pipeline: Pipeline = Pipeline.QUADRATIC_RESPONSE
    response_grid_P: int = Field(default_factory=lambda: settings.response_grid_p, gt=0)
    periodic_L: Optional[int] = Field(
        default=None,
        ge=1,
        description="k-grid of the periodic solve feeding the response, defaults to the largest ladder L",
    )
    response_inner_grid: Optional[int] = Field(
        default=None,
        gt=0,
        description="q' grid averaging L_q in the continuum reference, a divisor of response_grid_P",
    )
    t_scaling: List[float] = Field(default=[], description="Defect scalings for the remainder diagnostics")
    mixing: MixingConfig = Field(default_factory=MixingConfig)
    tolerances: Tolerances = Field(default_factory=Tolerances)

    @field_validator("L_ladder")
    @classmethod
    def check_ladder(cls, value: List[int]) -> List[int]:
        if any(L <= 0 for L in value):
            raise ValueError("ladder entries must be positive")
        if value != sorted(set(value)):
            raise ValueError("ladder must be strictly increasing")
        return value

    @model_validator(mode="after")
    def check_consistency(self):
        if self.L_ladder[0] < self.nu.support_L:
            raise ValueError(f"smallest L {self.L_ladder[0]} below defect support {self.nu.support_L}")
        charge = sum(g.weight for g in self.mu_per.gaussians) + sum(b.weight for b in self.mu_per.bumps)
        if abs(charge - self.electrons_per_cell) > 1e-9:
            raise ValueError(f"nuclear charge {charge} does not match electrons_per_cell {self.electrons_per_cell}")
        if self.pipeline != Pipeline.FULL_SCF and self.response_grid_P <= self.L_ladder[-1]:
            raise ValueError("response grid must be finer than the largest supercell")
        if self.response_inner_grid is not None and self.response_grid_P % self.response_inner_grid:
            raise ValueError(f"inner grid {self.response_inner_grid} does not divide {self.response_grid_P}")
        if self.periodic_L is None:
            self.periodic_L = self.L_ladder[-1]
        return self


class LadderEntry(BaseModel):
    L: int
    value: float
    corrected_value: float
    fitted: float
    residual: float


class Provenance(BaseModel):
    lattice: List[float]
    charge: float
    cell_volume: float
    M_zero: List[List[float]]
    M1_zero: Optional[List[List[float]]] = None
    epsilon: Optional[float] = None
    a: float
    madelung: Optional[float] = None
    madelung_shifted: Optional[float] = None
    linear_term: Optional[float] = None
    response_grid_P: Optional[int] = None


class RemainderModel(BaseModel):
    """Diagnostic fits of the remainder scales; coefficients are not separately identifiable"""

    quadratic_coefficient: Optional[float] = None
    cubic_coefficient: Optional[float] = None
    inverse_cube_coefficient: Optional[float] = None
    exponential_floor: Optional[float] = None
    nu_norm: float


class ConvergenceReport(BaseModel):
    pipeline: str
    entries: List[LadderEntry]
    intercept: float
    slope: float
    predicted_slope: float
    relative_deviation: float
    residual_exponent: float
    condition_number: float
    corrected_intercept: Optional[float] = None
    difference_ratio: Optional[float] = None
    provenance: Provenance
    remainder: Optional[RemainderModel] = None
    extras: Dict[str, float] = {}


class StudyReport(BaseModel):
    """Everything a defect study writes to report.json"""

    config: StudyConfig
    reports: List[ConvergenceReport]
