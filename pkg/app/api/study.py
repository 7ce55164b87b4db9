from app.core.api_decorator import get_route, post_route
from app.schemas.study import ConvergenceReport, StudyConfig
from app.services.study import run_quadratic_study


@get_route(
    path="/health",
    summary="Health Check",
    description="Liveness check.",
    tags=["health"],
)
def health():
    return {"status": "ok"}


@post_route(
    path="/study/quadratic",
    summary="Quadratic Defect Study",
    description="Runs the quadratic-response L-ladder and fits the 1/L coefficient.",
    response_model=ConvergenceReport,
    tags=["study"],
)
def quadratic_study(cfg: StudyConfig):
    return run_quadratic_study(cfg)
