from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse
from fastapi.middleware.cors import CORSMiddleware
from slowapi import Limiter
from slowapi.util import get_remote_address
from slowapi.errors import RateLimitExceeded
from datetime import datetime, timezone
import asyncio

import numpy as np

from src.logger import get_logger
from src.cache import clear_cache, cache_stats, make_cache_key, load_from_cache, save_to_cache
from src.config import ADMIN_KEY, CHECKPOINT_DIR, RATE_LIMIT, RATE_LIMIT_STORAGE_URI
from src import __version__
from src.antenna_array import beampattern, halfpower_fraction, sphere_grid
from src.channel import SimulationContext
from src.errors import EraLocError
from src.evaluation import peak_direction
from src.policy import run_episode
from src.training import TrainedModel, restore_checkpoint
from src.utils import Stream, substream

# Initialize
logger = get_logger("service")
app = FastAPI(title="EraLoc", version=__version__)

REQUEST_TIMEOUT = 60

# Rate limiting
limiter = Limiter(key_func=get_remote_address, default_limits=[RATE_LIMIT], storage_uri=RATE_LIMIT_STORAGE_URI)
app.state.limiter = limiter
app.state.model = None
app.add_exception_handler(RateLimitExceeded, lambda request, exc: JSONResponse(
    status_code=429,
    content={"status": "error", "error": {"message": "Rate limit exceeded. Please wait before retrying."}},
    headers={"Retry-After": "60"}
))

# CORS
app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)


def error_detail(message: str, **extra) -> dict:
    return {
        "status": "error",
        "error": {"message": message, **extra, "timestamp": datetime.now(timezone.utc).isoformat()},
    }


# Admin helper
def verify_admin_key(request: Request) -> bool:
    key = request.query_params.get("key") or request.headers.get("X-ADMIN-KEY")
    return bool(ADMIN_KEY) and key == ADMIN_KEY


def set_model(model: TrainedModel | None):
    app.state.model = model


def current_model() -> TrainedModel:
    model = app.state.model
    if model is None:
        raise HTTPException(status_code=503, detail=error_detail("No checkpoint loaded; set CHECKPOINT_DIR"))
    return model


# App lifecycle events
@app.on_event("startup")
async def startup_event():
    """Load the served checkpoint"""
    logger.info("EraLoc API starting up...")
    if app.state.model is None and CHECKPOINT_DIR:
        try:
            set_model(restore_checkpoint(CHECKPOINT_DIR))
            logger.info(f"Serving checkpoint {CHECKPOINT_DIR}")
        except (OSError, EraLocError) as e:
            logger.warning(f"Failed to load checkpoint {CHECKPOINT_DIR}: {e}")
    logger.info("EraLoc API ready!")


def _scene_for(model: TrainedModel, x: float, y: float, seed: int, snr_db: float | None):
    context = SimulationContext.from_system(model.run_config.system, snr_db=snr_db)
    R = context.region_half_width
    if abs(x) > R or abs(y) > R:
        raise HTTPException(status_code=400, detail=error_detail(f"UE position must lie in [-{R}, {R}]^2"))
    return context, context.scene([x, y], substream(seed, Stream.SERVICE_SCENE))


def localize(model: TrainedModel, x: float, y: float, seed: int, snr_db: float | None) -> dict:
    """One closed-loop episode for a UE at (x, y)."""
    context, scene = _scene_for(model, x, y, seed, snr_db)
    result = run_episode(
        model.policy, context.measurement([scene]), context.noise,
        noise_keys=[(seed, Stream.EVAL_NOISE, 0)], pilots=context.pilots,
    )
    estimates = result.estimates_array()[0]
    errors = np.linalg.norm(estimates - np.array([x, y]), axis=-1)
    return {
        "method": model.method,
        "ue": [x, y],
        "snr_db": context.noise.snr_db,
        "stages": [
            {"stage": t, "estimate": est.tolist(), "error_m": float(err)}
            for t, (est, err) in enumerate(zip(estimates, errors), start=1)
        ],
    }


def stage_beampattern(
    model: TrainedModel, x: float, y: float, seed: int, stage: int, n_theta: int, n_phi: int
) -> dict:
    context, scene = _scene_for(model, x, y, seed, None)
    if not 1 <= stage <= model.policy.config.stages:
        raise HTTPException(
            status_code=400, detail=error_detail(f"stage must be in 1..{model.policy.config.stages}")
        )
    result = run_episode(
        model.policy, context.measurement([scene]), context.noise,
        noise_keys=[(seed, Stream.EVAL_NOISE, 0)], pilots=context.pilots, record=True,
    )
    config = result.configs[stage - 1].sample(0)
    grid = sphere_grid(n_theta, n_phi)
    power = beampattern(config.w, config.coeffs, context.geom, grid)
    peak = peak_direction(power, grid.thetas, grid.phis)
    return {
        "method": model.method,
        "stage": stage,
        "peak": {"theta": peak.theta, "phi": peak.phi, "power": float(power.max())},
        "halfpower_fraction": halfpower_fraction(power, grid),
        "paths": [{"theta": p.direction.theta, "phi": p.direction.phi} for p in scene.paths],
    }


async def _run(fn, *args):
    try:
        return await asyncio.wait_for(asyncio.to_thread(fn, *args), timeout=REQUEST_TIMEOUT)
    except asyncio.TimeoutError:
        logger.error(f"Timeout in {fn.__name__}")
        raise HTTPException(status_code=504, detail=error_detail("Request timed out"))
    except HTTPException:
        raise
    except EraLocError as e:
        logger.error(f"{fn.__name__} failed: {e}")
        status = 400 if e.exit_code == 1 else 500
        raise HTTPException(status_code=status, detail=error_detail(str(e), type=type(e).__name__))


@app.get("/")
@limiter.limit(RATE_LIMIT)
async def home(request: Request):
    """Main API documentation endpoint"""
    model = app.state.model
    info = None
    if model is not None:
        c = model.policy.config
        info = {
            "method": model.method,
            "config_hash": model.run_config.config_hash(),
            "antennas": c.n_antennas,
            "subcarriers": c.n_subcarriers,
            "stages": c.stages,
            "substages": c.substages,
            "basis_size": c.basis_size,
            "region_half_width": model.run_config.system.region_half_width,
        }
    return {
        "api": "EraLoc",
        "version": __version__,
        "status": "active" if model is not None else "no model",
        "description": "Closed-loop active-sensing localization with reconfigurable antenna patterns",
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "model": info,
        "endpoints": {
            "localize": {
                "url": "/localize/",
                "method": "GET",
                "description": "Run one sensing episode for a UE position and return per-stage estimates",
                "examples": ["/localize/?x=12.5&y=-4&seed=0", "/localize/?x=0&y=20&snr_db=0"]
            },
            "beampattern": {
                "url": "/beampattern/",
                "method": "GET",
                "description": "Peak direction and -3 dB solid-angle fraction of one stage's synthesized beam",
                "examples": ["/beampattern/?x=12.5&y=-4&stage=1"]
            },
            "cache_stats": {
                "url": "/cache/stats",
                "method": "GET",
                "description": "Get cache statistics"
            }
        },
    }


@app.get("/localize/")
@limiter.limit(RATE_LIMIT)
async def route_localize(request: Request, x: float, y: float, seed: int = 0, snr_db: float | None = None):
    """Per-stage position estimates for a simulated UE"""
    model = current_model()
    logger.info(f"Localize request: ({x}, {y}) seed={seed} snr_db={snr_db}")

    cache_key = make_cache_key("localize", model.run_config.config_hash(), x=x, y=y, seed=seed, snr_db=snr_db)
    cached = load_from_cache(cache_key)
    if cached:
        logger.info(f"Cache hit for ({x}, {y})")
        return cached

    data = await _run(localize, model, x, y, seed, snr_db)
    result = {"status": "success", "data": data}
    save_to_cache(cache_key, result)
    return result


@app.get("/beampattern/")
@limiter.limit(RATE_LIMIT)
async def route_beampattern(
    request: Request, x: float, y: float, seed: int = 0, stage: int = 1, n_theta: int = 32, n_phi: int = 64
):
    """Synthesized beampattern summary of one stage"""
    model = current_model()
    if n_theta < 1 or n_phi < 1 or n_theta * n_phi > 65536:
        raise HTTPException(status_code=400, detail=error_detail("grid resolution out of range"))
    data = await _run(stage_beampattern, model, x, y, seed, stage, n_theta, n_phi)
    return {"status": "success", "data": data}


@app.get("/cache/stats")
@limiter.limit(RATE_LIMIT)
async def route_cache_stats(request: Request):
    """Get cache statistics and information"""
    try:
        stats = cache_stats()
        return {"status": "success", **stats}
    except OSError as e:
        logger.error(f"Cache stats error: {str(e)}")
        raise HTTPException(status_code=500, detail=error_detail("Failed to retrieve cache stats", details=str(e)))


@app.get("/cache/clear")
async def admin_clear_cache(request: Request):
    """Clear all cached data (Admin only)"""
    if not verify_admin_key(request):
        raise HTTPException(status_code=403, detail={"error": "unauthorized"})

    try:
        result = clear_cache()
        logger.info("Cache cleared")
        return {"status": "cache cleared", "details": result}
    except OSError as e:
        logger.error(f"Cache clear error: {str(e)}")
        raise HTTPException(status_code=500, detail=error_detail("Failed to clear cache", details=str(e)))
