from __future__ import annotations

from typing import Callable, Tuple, Type, TypeVar

from loguru import logger

T = TypeVar("T")


def with_retries(
    fn: Callable[[], T],
    attempts: int = 3,
    retry_on: Tuple[Type[BaseException], ...] = (OSError,),
    what: str = "operation",
) -> T:
    """Call `fn` up to `attempts` times, re-raising the last failure."""
    if attempts < 1:
        raise ValueError("attempts must be >= 1")
    last_exc: BaseException | None = None
    for attempt in range(1, attempts + 1):
        try:
            return fn()
        except retry_on as exc:
            last_exc = exc
            logger.warning(f"{what} failed (attempt {attempt}/{attempts}): {exc}")
    assert last_exc is not None
    raise last_exc
