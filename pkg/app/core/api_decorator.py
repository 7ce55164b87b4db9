import inspect
import logging
from functools import wraps
from typing import Any, List, Optional, Type

import numpy as np
from fastapi import HTTPException
from pydantic import BaseModel

from app.core.exceptions import SupercorrError

logger = logging.getLogger(__name__)


class BaseResponse(BaseModel):
    success: bool = True
    message: str
    data: Optional[dict] = None


def _plain(value: Any) -> Any:
    """numpy scalars and arrays to JSON-friendly Python values"""
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    return value


def _wrap_result(result: Any) -> BaseModel:
    if isinstance(result, BaseModel):
        return result
    if isinstance(result, dict):
        return BaseResponse(message="Operation successful", data={k: _plain(v) for k, v in result.items()})
    return BaseResponse(message="Operation successful", data={"result": _plain(result)})


def _translate(path: str, exc: Exception) -> HTTPException:
    if isinstance(exc, HTTPException):
        logger.warning(f"HTTP error in {path}: {exc.detail}")
        return exc
    if isinstance(exc, SupercorrError):
        logger.error(f"{type(exc).__name__} in {path}: {exc}")
        return HTTPException(
            status_code=400,
            detail={"error": type(exc).__name__, "message": str(exc), "details": {k: str(v) for k, v in exc.details.items()}},
        )
    if isinstance(exc, ValueError):
        logger.error(f"Invalid input in {path}: {exc}")
        return HTTPException(status_code=400, detail=str(exc))
    logger.exception(f"Unexpected error in {path}: {exc}")
    return HTTPException(status_code=500, detail="Internal server error")


def api_route(
    path: str,
    method: str = "POST",
    response_model: Type[BaseModel] = BaseResponse,
    summary: str = "",
    description: str = "",
    tags: List[str] = None,
    status_code: int = 200,
):
    def decorator(func):
        if not summary:
            raise ValueError(f"API {path} must provide summary")
        if not description:
            raise ValueError(f"API {path} must provide description")

        if inspect.iscoroutinefunction(func):

            @wraps(func)
            async def wrapper(*args, **kwargs):
                logger.info(f"API called: {method} {path}")
                try:
                    result = _wrap_result(await func(*args, **kwargs))
                except Exception as e:
                    raise _translate(path, e) from e
                logger.info(f"API success: {method} {path}")
                return result

        else:

            @wraps(func)
            def wrapper(*args, **kwargs):
                logger.info(f"API called: {method} {path}")
                try:
                    result = _wrap_result(func(*args, **kwargs))
                except Exception as e:
                    raise _translate(path, e) from e
                logger.info(f"API success: {method} {path}")
                return result

        wrapper._route_config = {
            "path": path,
            "method": method,
            "response_model": response_model,
            "summary": summary,
            "description": description,
            "tags": tags or [],
            "status_code": status_code,
        }
        return wrapper

    return decorator


def get_route(path: str, summary: str, description: str, **kwargs):
    return api_route(path, "GET", summary=summary, description=description, **kwargs)


def post_route(path: str, summary: str, description: str, **kwargs):
    return api_route(path, "POST", summary=summary, description=description, **kwargs)


def auto_register_routes(router, module):
    """Attach every decorated function of ``module`` to ``router``"""
    for _, func in inspect.getmembers(module, inspect.isfunction):
        config = getattr(func, "_route_config", None)
        if config is None:
            continue
        route_method = getattr(router, config["method"].lower())
        route_method(
            config["path"],
            response_model=config["response_model"],
            summary=config["summary"],
            description=config["description"],
            tags=config["tags"],
            status_code=config["status_code"],
        )(func)
