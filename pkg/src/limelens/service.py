"""Local HTTP service exposing models, images, predictions and explanations.

Explanations are computed on demand and cached on disk, keyed by a content
hash of (model weights, image bytes, config), so repeated requests are
served byte-identically and cheaply. Every API call is appended to a
newline-delimited request log.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
import threading
import time
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import FileResponse, JSONResponse, Response

from .compare import (
    DEFAULT_ARTIFACT_THRESHOLD,
    ComparisonRow,
    border_mass,
    segment_jaccard,
)
from .data import CLASS_LABELS, decode_png, resize_image
from .errors import ConfigError, DataError, DimensionError, LimelensError
from .jsondoc import canonical_json
from .lime import (
    ExplanationConfig,
    explain,
    explanation_from_document,
    render_overlay,
    segment_grid,
)
from .models import Network, load_weights, predict

CACHE_DIR_ENV = "LIMELENS_CACHE_DIR"
REQUEST_LOG_NAME = "requests.log"


def _json_error(status: int, error: str, detail: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": error, "detail": detail})


class ServiceState:
    """Models, image index, explanation cache and the request log."""

    def __init__(self, model_dir: Path, data_dir: Path, cache_dir: Path | None = None):
        self.model_dir = Path(model_dir)
        self.data_dir = Path(data_dir)
        env_cache = os.environ.get(CACHE_DIR_ENV)
        if cache_dir is not None:
            self.cache_dir = Path(cache_dir)
        elif env_cache:
            self.cache_dir = Path(env_cache)
        else:
            self.cache_dir = self.model_dir / ".explanations-cache"
        self.cache_dir.mkdir(parents=True, exist_ok=True)

        self.models: dict[str, Network] = {}
        self.model_fingerprints: dict[str, str] = {}
        for path in sorted(self.model_dir.glob("*.lmnw")):
            network = load_weights(path)
            model_id = path.stem
            self.models[model_id] = network
            self.model_fingerprints[model_id] = hashlib.sha256(path.read_bytes()).hexdigest()
        if not self.models:
            raise ConfigError(f"no .lmnw weight files found in {self.model_dir}")

        self.images: dict[str, Path] = {}
        self.labels: dict[str, str] = {}
        for label in CLASS_LABELS:
            directory = self.data_dir / label
            if not directory.is_dir():
                continue
            for path in sorted(directory.glob("*.png")):
                image_id = f"{label}/{path.name}"
                self.images[image_id] = path
                self.labels[image_id] = label

        self._pixels_cache: dict[tuple[str, int], object] = {}
        self._log_lock = threading.Lock()
        self._cache_lock = threading.Lock()

    # -- images ---------------------------------------------------------

    def pixels_for(self, image_id: str, size: int):
        key = (image_id, size)
        if key not in self._pixels_cache:
            pixels = decode_png(self.images[image_id])
            self._pixels_cache[key] = resize_image(pixels, size, size)
        return self._pixels_cache[key]

    # -- explanation cache ----------------------------------------------

    def cache_key(self, model_id: str, image_id: str, config: ExplanationConfig) -> str:
        payload = canonical_json(
            {
                "model": self.model_fingerprints[model_id],
                "model_id": model_id,
                "image": hashlib.sha256(self.images[image_id].read_bytes()).hexdigest(),
                "image_id": image_id,
                "config": config.to_document(),
            }
        )
        return hashlib.sha256(payload).hexdigest()[:24]

    def cached_explanation(
        self, model_id: str, image_id: str, config: ExplanationConfig
    ) -> tuple[bytes, str, bool]:
        """Returns (document bytes, cache key, hit). Computes and stores on miss."""
        key = self.cache_key(model_id, image_id, config)
        doc_path = self.cache_dir / f"{key}.json"
        png_path = self.cache_dir / f"{key}.png"
        with self._cache_lock:
            if doc_path.exists() and png_path.exists():
                return doc_path.read_bytes(), key, True
        network = self.models[model_id]
        pixels = self.pixels_for(image_id, network.input_shape[1])
        segmap = segment_grid(pixels, config.grid_rows, config.grid_cols)
        explanation = explain(
            network, pixels, segmap, config, model_id=model_id, image_id=image_id
        )
        doc = explanation.to_bytes()
        with self._cache_lock:
            render_overlay(pixels, segmap, explanation, png_path)
            doc_path.write_bytes(doc)
        return doc, key, False

    # -- request log ------------------------------------------------------

    def log(self, route: str, model_id, image_id, config, duration_ms: float, outcome: str):
        entry = {
            "ts_utc_ms": int(time.time() * 1000),
            "route": route,
            "model_id": model_id,
            "image_id": image_id,
            "config": config,
            "duration_ms": round(duration_ms, 3),
            "outcome": outcome,
        }
        line = json.dumps(entry, sort_keys=True) + "\n"
        with self._log_lock:
            with open(self.cache_dir / REQUEST_LOG_NAME, "a", encoding="utf-8") as fh:
                fh.write(line)


def _validated_config(body: dict, defaults: ExplanationConfig | None = None) -> ExplanationConfig:
    base = defaults or ExplanationConfig()
    grid = body.get("grid", [base.grid_rows, base.grid_cols])
    if not (isinstance(grid, (list, tuple)) and len(grid) == 2):
        raise ConfigError(f"grid must be [rows, cols], got {grid!r}")
    try:
        config = ExplanationConfig(
            k=int(body.get("k", base.k)),
            num_samples=int(body.get("samples", body.get("num_samples", base.num_samples))),
            seed=int(body.get("seed", base.seed)),
            kernel_width=float(body.get("kernel_width", base.kernel_width)),
            ridge_lambda=float(body.get("lambda", base.ridge_lambda)),
            grid_rows=int(grid[0]),
            grid_cols=int(grid[1]),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid explanation config: {exc}") from exc
    if not math.isfinite(config.kernel_width) or not math.isfinite(config.ridge_lambda):
        raise ConfigError("kernel_width and lambda must be finite")
    if config.k < 1 or config.num_samples < 1 or config.grid_rows < 1 or config.grid_cols < 1:
        raise ConfigError("k, samples and grid dimensions must be >= 1")
    return config


def create_app(model_dir, data_dir, cache_dir=None, console_dir=None) -> FastAPI:
    state = ServiceState(Path(model_dir), Path(data_dir), cache_dir)
    app = FastAPI(title="limelens", version="0.1.0")
    app.state.engine = state
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )

    def run_logged(route, meta, fn):
        # meta holds model_id/image_id/config; fn may fill config in while running
        start = time.perf_counter()
        outcome = "ok"
        try:
            return fn()
        except KeyError as exc:
            outcome = "not_found"
            return _json_error(404, "not_found", f"unknown id {exc.args[0]!r}")
        except (ConfigError, DimensionError, DataError) as exc:
            outcome = "bad_request"
            return _json_error(400, "bad_request", str(exc))
        except LimelensError as exc:
            outcome = "error"
            return _json_error(500, "internal_error", str(exc))
        finally:
            state.log(
                route,
                meta.get("model_id"),
                meta.get("image_id"),
                meta.get("config"),
                (time.perf_counter() - start) * 1000,
                outcome,
            )

    @app.get("/api/models")
    def list_models():
        def fn():
            return {
                "version": 1,
                "models": [
                    {
                        "id": model_id,
                        "architecture": net.architecture,
                        "input_shape": list(net.input_shape),
                    }
                    for model_id, net in sorted(state.models.items())
                ],
            }

        return run_logged("/api/models", {}, fn)

    @app.get("/api/images")
    def list_images(limit: int = 50, offset: int = 0):
        def fn():
            ids = sorted(state.images)
            page = ids[offset:offset + limit] if limit > 0 else ids[offset:]
            return {
                "version": 1,
                "total": len(ids),
                "offset": offset,
                "images": [{"id": i, "label": state.labels[i]} for i in page],
            }

        return run_logged("/api/images", {"config": {"limit": limit, "offset": offset}}, fn)

    @app.get("/api/images/{image_id:path}")
    def get_image(image_id: str):
        def fn():
            path = state.images[image_id]  # KeyError -> 404
            return FileResponse(path, media_type="image/png")

        return run_logged("/api/images/{id}", {"image_id": image_id}, fn)

    @app.post("/api/predict")
    async def predict_route(request: Request):
        body = await request.json()
        model_id = body.get("model_id")
        image_id = body.get("image_id")

        def fn():
            network = state.models[model_id]
            pixels = state.pixels_for(image_id, network.input_shape[1])
            result = predict(network, pixels)
            return Response(
                content=canonical_json(result.to_document(model_id, image_id)),
                media_type="application/json",
            )

        return run_logged("/api/predict", {"model_id": model_id, "image_id": image_id}, fn)

    @app.post("/api/explain")
    async def explain_route(request: Request):
        body = await request.json()
        model_id = body.get("model_id")
        image_id = body.get("image_id")
        meta = {"model_id": model_id, "image_id": image_id}

        def fn():
            config = _validated_config(body)
            meta["config"] = config.to_document()
            if model_id not in state.models:
                raise KeyError(model_id)
            if image_id not in state.images:
                raise KeyError(image_id)
            doc, key, hit = state.cached_explanation(model_id, image_id, config)
            envelope = {
                "document": json.loads(doc.decode("utf-8")),
                "overlay_url": f"/api/overlays/{key}.png",
                "cache_hit": hit,
            }
            return Response(content=canonical_json(envelope), media_type="application/json")

        return run_logged("/api/explain", meta, fn)

    @app.get("/api/overlays/{name}")
    def get_overlay(name: str):
        def fn():
            if Path(name).name != name or not name.endswith(".png"):
                raise KeyError(name)
            path = state.cache_dir / name
            if not path.is_file():
                raise KeyError(name)
            return FileResponse(path, media_type="image/png")

        return run_logged("/api/overlays/{name}", {}, fn)

    @app.post("/api/compare")
    async def compare_route(request: Request):
        body = await request.json()
        model_a = body.get("model_a")
        model_b = body.get("model_b")
        image_id = body.get("image_id")
        meta = {"model_id": f"{model_a}|{model_b}", "image_id": image_id}

        def fn():
            config = _validated_config(body)
            meta["config"] = config.to_document()
            for mid in (model_a, model_b):
                if mid not in state.models:
                    raise KeyError(mid)
            if image_id not in state.images:
                raise KeyError(image_id)
            net_a, net_b = state.models[model_a], state.models[model_b]
            if net_a.input_shape != net_b.input_shape:
                raise DimensionError(
                    f"models expect different input shapes: {net_a.input_shape} vs "
                    f"{net_b.input_shape}"
                )
            pixels = state.pixels_for(image_id, net_a.input_shape[1])
            segmap = segment_grid(pixels, config.grid_rows, config.grid_cols)
            doc_a, key_a, _ = state.cached_explanation(model_a, image_id, config)
            doc_b, key_b, _ = state.cached_explanation(model_b, image_id, config)
            exp_a = explanation_from_document(json.loads(doc_a.decode("utf-8")))
            exp_b = explanation_from_document(json.loads(doc_b.decode("utf-8")))
            mass_a = border_mass(exp_a, pixels, segmap)
            mass_b = border_mass(exp_b, pixels, segmap)
            row = ComparisonRow(
                image_id=image_id,
                jaccard_selected_pixels=segment_jaccard(exp_a, exp_b, segmap),
                border_mass_a=mass_a,
                border_mass_b=mass_b,
                artifact_a=mass_a > DEFAULT_ARTIFACT_THRESHOLD,
                artifact_b=mass_b > DEFAULT_ARTIFACT_THRESHOLD,
                prediction_agreement=exp_a.predicted_class == exp_b.predicted_class,
            )
            doc = {
                "version": 1,
                "model_a": model_a,
                "model_b": model_b,
                "config": config.to_document(),
                "row": row.to_document(),
                "overlay_url_a": f"/api/overlays/{key_a}.png",
                "overlay_url_b": f"/api/overlays/{key_b}.png",
            }
            return Response(content=canonical_json(doc), media_type="application/json")

        return run_logged("/api/compare", meta, fn)

    if console_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=console_dir, html=True), name="console")
    return app


def serve(host, port, model_dir, data_dir, console_dir=None, cache_dir=None) -> None:
    import uvicorn

    app = create_app(model_dir, data_dir, cache_dir=cache_dir, console_dir=console_dir)
    uvicorn.run(app, host=host, port=port, log_level="warning")
