import logging
from contextlib import contextmanager
from typing import Iterator

logger = logging.getLogger(__name__)


@contextmanager
def safe_block(block_name: str = "operation", reraise: tuple = ()) -> Iterator[None]:
    """Run an optional step (a CSV dump, a diagnostic) and log instead of failing.

    Exceptions listed in ``reraise`` still propagate.
    """
    try:
        yield
    except reraise:
        raise
    except Exception as exc:
        logger.warning(f"Optional step '{block_name}' skipped: {type(exc).__name__}: {exc}")
