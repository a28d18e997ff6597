"""Route registration."""
from fastapi import APIRouter, FastAPI

from kraus_feedback.rest.views import fidelity


def init_routes(app: FastAPI) -> None:
    """Attach every router to the app."""
    main_router = APIRouter()
    main_router.include_router(fidelity.router, tags=["fidelity"])
    app.include_router(main_router)
