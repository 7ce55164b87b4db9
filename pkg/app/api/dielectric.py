import numpy as np

from app.core.api_decorator import post_route
from app.schemas.dielectric import DielectricRequest, DielectricSummary
from app.services.fields import source_from_spec
from app.services.study import periodic_dielectric


@post_route(
    path="/dielectric",
    summary="Macroscopic Dielectric Matrix",
    description="Periodic SCF followed by the Schur-complement dielectric matrix M(0).",
    response_model=DielectricSummary,
    tags=["dielectric"],
)
def get_dielectric(req: DielectricRequest):
    geometry = req.geometry()
    mu = source_from_spec("periodic_nuclear", geometry, req.mu_per)
    data, bands = periodic_dielectric(
        geometry, mu, req.electrons_per_cell, req.cutoff, req.P, req.response_cutoff, req.periodic_L
    )
    return DielectricSummary(
        M_zero=np.real(data.M_zero).tolist(),
        M1_zero=np.real(data.M1_zero).tolist(),
        epsilon=data.epsilon,
        isotropic_cubic=data.isotropic_cubic,
        fermi_level=bands.fermi.fermi_level,
        gap=bands.fermi.gap,
        response_modes=data.L_zero.size,
        P=req.P,
    )
