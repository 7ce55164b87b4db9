import logging

from dotenv import load_dotenv
from fastapi import APIRouter, FastAPI

from app.api import dielectric, lattice, study
from app.core.api_decorator import auto_register_routes

load_dotenv()

logging.basicConfig(level=logging.INFO)

app = FastAPI(title="supercorr")

router = APIRouter()
auto_register_routes(router, lattice)
auto_register_routes(router, dielectric)
auto_register_routes(router, study)
app.include_router(router)
