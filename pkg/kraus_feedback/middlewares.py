"""Module with middlewares."""
import time
import uuid
from contextvars import ContextVar
from typing import Callable

from fastapi import Request, Response
from loguru import logger
from starlette.middleware.base import BaseHTTPMiddleware

request_id_var: ContextVar[str] = ContextVar("request_id", default="-")


class RequestLoggingMiddleware(BaseHTTPMiddleware):
    """Bind a request id to the context and log every request."""

    async def dispatch(
        self, request: Request, call_next: Callable
    ) -> Response:
        """Log method, path, status and elapsed time."""
        request_id = request.headers.get("x-request-id") or uuid.uuid4().hex
        token = request_id_var.set(request_id)
        started = time.perf_counter()
        try:
            with logger.contextualize(request_id=request_id):
                response: Response = await call_next(request)
                elapsed = (time.perf_counter() - started) * 1000
                logger.info(
                    f"{request.method} {request.url.path} "
                    f"{response.status_code} {elapsed:.1f}ms"
                )
        finally:
            request_id_var.reset(token)
        response.headers["x-request-id"] = request_id
        return response
