from enum import Enum
from typing import List, Optional

from pydantic import BaseModel, Field, field_validator

from app.core.exceptions import DegenerateLatticeError
from app.services.geometry import LatticeGeometry


class MadelungMethod(str, Enum):
    EWALD = "ewald"
    DIRECT_MULTIPOLE = "direct_multipole"
    BOTH = "both"


class LatticeSpec(BaseModel):
    lattice: List[float] = Field(
        min_length=9,
        max_length=9,
        description="Direct basis, row-major: a1, a2, a3 (bohr)",
    )

    @field_validator("lattice")
    @classmethod
    def check_nondegenerate(cls, value: List[float]) -> List[float]:
        try:
            LatticeGeometry.from_rows(value)
        except DegenerateLatticeError as e:
            raise ValueError(str(e))
        return value

    def geometry(self) -> LatticeGeometry:
        return LatticeGeometry.from_rows(self.lattice)


class MadelungRequest(LatticeSpec):
    method: MadelungMethod = MadelungMethod.EWALD


class CorrectionConstantRequest(LatticeSpec):
    M: List[float] = Field(
        default=[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        min_length=9,
        max_length=9,
        description="Symmetric positive-definite 3x3 matrix, row-major",
    )


class KPointsRequest(LatticeSpec):
    L: int = Field(gt=0, le=64)


# Response models for API
class MadelungResultModel(BaseModel):
    m: float
    m_prime: float
    method: str
    est_error: float


class MadelungResponse(BaseModel):
    results: List[MadelungResultModel]


class CorrectionConstantModel(BaseModel):
    a: float
    M: List[List[float]]
    truncation_index: int
    extrapolation_order: int
    est_error: float


class KPointsResponse(BaseModel):
    L: int
    fractional: List[List[float]]
    cartesian: List[List[float]]
    bz_volume: float
    cell_volume: float
    inradius: Optional[float] = None
