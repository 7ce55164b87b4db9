from typing import List, Tuple

from pydantic import BaseModel, Field, model_validator

FracPoint = Tuple[float, float, float]


class GaussianSpec(BaseModel):
    center_frac: FracPoint = (0.0, 0.0, 0.0)
    sigma: float = Field(gt=0, description="Standard deviation in bohr")
    weight: float = Field(description="Total charge carried by this Gaussian")


class BumpSpec(BaseModel):
    center_frac: FracPoint = (0.0, 0.0, 0.0)
    radius: float = Field(gt=0, description="Support radius in bohr")
    weight: float


class MuPerSpec(BaseModel):
    """Nuclear density per unit cell, repeated over the lattice"""

    gaussians: List[GaussianSpec] = []
    bumps: List[BumpSpec] = []


class NuSpec(BaseModel):
    """Compactly supported defect density"""

    gaussians: List[GaussianSpec] = []
    bumps: List[BumpSpec] = []
    support_L: int = Field(default=1, ge=1)

    @model_validator(mode="after")
    def check_centers(self):
        half = 0.5 * self.support_L
        for item in [*self.gaussians, *self.bumps]:
            if any(abs(c) >= half for c in item.center_frac):
                raise ValueError(f"defect center {item.center_frac} outside its support box")
        return self

    @property
    def charge(self) -> float:
        return float(sum(g.weight for g in self.gaussians) + sum(b.weight for b in self.bumps))
