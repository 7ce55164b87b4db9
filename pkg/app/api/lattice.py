import numpy as np

from app.core.api_decorator import post_route
from app.schemas.lattice import (
    CorrectionConstantModel,
    CorrectionConstantRequest,
    KPointsRequest,
    KPointsResponse,
    MadelungMethod,
    MadelungRequest,
    MadelungResponse,
    MadelungResultModel,
)
from app.services.geometry import kpoint_grid
from app.services.lattice_sums import correction_constant, madelung


@post_route(
    path="/lattice/madelung",
    summary="Madelung Constant",
    description="Madelung constant of the lattice (zero-mean gauge) with its shifted variant.",
    response_model=MadelungResponse,
    tags=["lattice"],
)
def get_madelung(req: MadelungRequest):
    geometry = req.geometry()
    methods = ["ewald", "direct_multipole"] if req.method == MadelungMethod.BOTH else [req.method.value]
    results = [madelung(geometry, method) for method in methods]
    return MadelungResponse(
        results=[
            MadelungResultModel(m=r.m, m_prime=r.m_prime, method=r.method, est_error=r.est_error) for r in results
        ]
    )


@post_route(
    path="/lattice/correction-constant",
    summary="Correction Constant",
    description="Lattice-sum constant a(M) governing the 1/L error of charged defect energies.",
    response_model=CorrectionConstantModel,
    tags=["lattice"],
)
def get_correction_constant(req: CorrectionConstantRequest):
    result = correction_constant(req.geometry(), np.asarray(req.M, dtype=float).reshape(3, 3))
    return CorrectionConstantModel(
        a=result.a,
        M=np.real(result.M).tolist(),
        truncation_index=result.truncation_index,
        extrapolation_order=result.extrapolation_order,
        est_error=result.est_error,
    )


@post_route(
    path="/lattice/kpoints",
    summary="Supercell k-points",
    description="The L^3 points of Lambda_L in fractional and Cartesian coordinates.",
    response_model=KPointsResponse,
    tags=["lattice"],
)
def get_kpoints(req: KPointsRequest):
    geometry = req.geometry()
    grid = kpoint_grid(geometry, req.L)
    return KPointsResponse(
        L=req.L,
        fractional=grid.fractional.tolist(),
        cartesian=grid.cartesian.tolist(),
        bz_volume=geometry.bz_volume,
        cell_volume=geometry.cell_volume,
        inradius=geometry.bz_inradius,
    )
