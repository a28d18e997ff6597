"""Application factory of the HTTP API."""
from fastapi import FastAPI

from kraus_feedback import __version__
from kraus_feedback.config import settings
from kraus_feedback.middlewares import RequestLoggingMiddleware
from kraus_feedback.routes import init_routes


def init_app() -> FastAPI:
    """Build the application."""
    app = FastAPI(title="kraus-feedback", version=__version__)

    # middlewares
    app.add_middleware(RequestLoggingMiddleware)

    init_routes(app)

    app.state.test_mode = settings.KF_ENVIRONMENT == "test"

    return app


application = init_app()
