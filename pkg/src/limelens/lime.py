"""Local surrogate explanations for single image predictions.

The pipeline: tile the image into a segment grid, sample binary keep/mask
vectors, replace masked segments with their mean color, query the model on
every perturbed image, weight samples by proximity to the original, fit a
weighted ridge surrogate, and report the top-k segments by absolute
coefficient. A positive coefficient supports the predicted class, a
negative one opposes it.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .data import PARASITIZED
from .errors import ConfigError, DataError, DimensionError, NumericalError
from .jsondoc import canonical_json

SIGN_SUPPORTS = "supports"
SIGN_OPPOSES = "opposes"

# Fixed inference chunk: explanation bytes must not depend on worker count.
EXPLAIN_CHUNK = 64

OVERLAY_SUFFIX = ".explained.png"
_GREEN = np.array([0.0, 1.0, 0.0])
_RED = np.array([1.0, 0.0, 0.0])
OVERLAY_ALPHA = 0.5


@dataclass
class SegmentMap:
    width: int
    height: int
    segment_of: np.ndarray  # [h, w] int ids in [0, segment_count)
    segment_count: int
    scheme: str

    def pixels_of(self, segment_ids) -> np.ndarray:
        """Boolean [h, w] mask of the pixels covered by the given segments."""
        return np.isin(self.segment_of, list(segment_ids))


@dataclass
class ExplanationConfig:
    k: int = 2
    num_samples: int = 1000
    seed: int = 0
    kernel_width: float = 0.25
    ridge_lambda: float = 1.0
    grid_rows: int = 8
    grid_cols: int = 8

    def to_document(self) -> dict:
        return {
            "k": int(self.k),
            "num_samples": int(self.num_samples),
            "seed": int(self.seed),
            "kernel_width": float(self.kernel_width),
            "lambda": float(self.ridge_lambda),
            "grid": [int(self.grid_rows), int(self.grid_cols)],
        }


@dataclass
class Explanation:
    model_id: str
    image_id: str
    predicted_class: str
    probability: float
    segment_weights: np.ndarray  # [d] surrogate coefficients
    intercept: float
    selected: list[int]          # top-k segment ids, ranked by |weight| desc
    signs: dict[int, str]        # segment id -> supports | opposes
    r2: float
    config: ExplanationConfig = field(default_factory=ExplanationConfig)

    def to_document(self) -> dict:
        selected = set(self.selected)
        segments = [
            {
                "id": i,
                "weight": float(w),
                "selected": i in selected,
                "sign": SIGN_SUPPORTS if w >= 0 else SIGN_OPPOSES,
            }
            for i, w in enumerate(self.segment_weights)
        ]
        return {
            "version": 1,
            "model_id": self.model_id,
            "image_id": self.image_id,
            "predicted_class": self.predicted_class,
            "probability": float(self.probability),
            "config": self.config.to_document(),
            "segments": segments,
            "intercept": float(self.intercept),
            "r2": float(self.r2),
        }

    def to_bytes(self) -> bytes:
        return canonical_json(self.to_document())


def explanation_from_document(doc: dict) -> Explanation:
    """Rebuild an Explanation from its serialized document."""
    config = doc["config"]
    segments = doc["segments"]
    selected = [s["id"] for s in segments if s["selected"]]
    selected.sort(key=lambda i: (-abs(segments[i]["weight"]), i))
    return Explanation(
        model_id=doc["model_id"],
        image_id=doc["image_id"],
        predicted_class=doc["predicted_class"],
        probability=doc["probability"],
        segment_weights=np.array([s["weight"] for s in segments]),
        intercept=doc["intercept"],
        selected=selected,
        signs={s["id"]: s["sign"] for s in segments if s["selected"]},
        r2=doc["r2"],
        config=ExplanationConfig(
            k=config["k"],
            num_samples=config["num_samples"],
            seed=config["seed"],
            kernel_width=config["kernel_width"],
            ridge_lambda=config["lambda"],
            grid_rows=config["grid"][0],
            grid_cols=config["grid"][1],
        ),
    )


def segment_grid(image: np.ndarray, rows: int, cols: int) -> SegmentMap:
    """Tile [c, h, w] into near-equal rectangles, row-major ids.

    When a dimension does not divide evenly the remainder goes to the
    first tiles, so a 10-pixel axis split 3 ways yields widths {4, 3, 3}.
    """
    _, h, w = image.shape
    if rows < 1 or cols < 1 or rows > h or cols > w:
        raise ConfigError(f"grid {rows}x{cols} does not fit an {h}x{w} image")

    def boundaries(size: int, parts: int) -> np.ndarray:
        base, rem = divmod(size, parts)
        sizes = [base + 1 if i < rem else base for i in range(parts)]
        return np.cumsum([0] + sizes)

    row_edges = boundaries(h, rows)
    col_edges = boundaries(w, cols)
    segment_of = np.zeros((h, w), dtype=np.int32)
    for r in range(rows):
        for c in range(cols):
            segment_of[row_edges[r]:row_edges[r + 1], col_edges[c]:col_edges[c + 1]] = r * cols + c
    return SegmentMap(
        width=w, height=h, segment_of=segment_of,
        segment_count=rows * cols, scheme=f"grid({rows},{cols})",
    )


def sample_perturbations(d: int, num_samples: int, seed: int) -> np.ndarray:
    """Binary [num_samples, d] matrix; row 0 is the unperturbed instance."""
    if num_samples < d + 2:
        raise ConfigError(
            f"num_samples={num_samples} is below the identifiability floor {d + 2}"
        )
    rng = np.random.default_rng(seed)
    z = np.empty((num_samples, d), dtype=np.uint8)
    z[0] = 1
    z[1:] = rng.integers(0, 2, size=(num_samples - 1, d), dtype=np.uint8)
    return z


def segment_mean_image(image: np.ndarray, segmap: SegmentMap) -> np.ndarray:
    """Image where every segment is flattened to its per-channel mean color."""
    c = image.shape[0]
    flat_ids = segmap.segment_of.reshape(-1)
    counts = np.bincount(flat_ids, minlength=segmap.segment_count).astype(np.float64)
    mean = np.empty_like(image)
    for ch in range(c):
        sums = np.bincount(flat_ids, weights=image[ch].reshape(-1), minlength=segmap.segment_count)
        mean[ch] = (sums / counts)[segmap.segment_of]
    return mean


def apply_mask(image: np.ndarray, segmap: SegmentMap, z: np.ndarray) -> np.ndarray:
    """Keep segments with z=1; replace z=0 segments with their mean color."""
    z = np.asarray(z)
    if z.shape != (segmap.segment_count,):
        raise DimensionError(
            f"mask length {z.shape} does not match segment count {segmap.segment_count}"
        )
    keep = z[segmap.segment_of].astype(bool)
    return np.where(keep[None, :, :], image, segment_mean_image(image, segmap))


def proximity_weight(z: np.ndarray, sigma: float) -> float:
    """exp(-D^2/sigma^2) where D is the fraction of masked segments."""
    if sigma <= 0:
        raise ConfigError(f"kernel width must be positive, got {sigma}")
    z = np.asarray(z)
    distance = float(np.count_nonzero(z == 0)) / z.shape[0]
    return float(np.exp(-(distance**2) / sigma**2))


def _proximity_weights(z_matrix: np.ndarray, sigma: float) -> np.ndarray:
    if sigma <= 0:
        raise ConfigError(f"kernel width must be positive, got {sigma}")
    distances = np.count_nonzero(z_matrix == 0, axis=1) / z_matrix.shape[1]
    return np.exp(-(distances**2) / sigma**2)


def fit_weighted_ridge(
    z_matrix: np.ndarray, y: np.ndarray, weights: np.ndarray, ridge_lambda: float
) -> tuple[np.ndarray, float]:
    """Minimize sum_i w_i (y_i - b0 - z_i.b)^2 + lambda*||b||^2.

    The intercept is unpenalized: the system is centered by the weighted
    means and solved via Cholesky on the normal equations.
    """
    z = np.asarray(z_matrix, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if z.shape[0] != y.shape[0] or z.shape[0] != w.shape[0]:
        raise DimensionError(
            f"rows disagree: Z {z.shape}, y {y.shape}, weights {w.shape}"
        )
    if ridge_lambda < 0:
        raise ConfigError(f"ridge lambda must be >= 0, got {ridge_lambda}")
    w_sum = w.sum()
    if w_sum <= 0:
        raise NumericalError("proximity weights sum to zero; nothing to fit")
    z_bar = (w @ z) / w_sum
    y_bar = float(w @ y) / w_sum
    zc = z - z_bar
    yc = y - y_bar
    zcw = zc * w[:, None]
    lhs = zcw.T @ zc + ridge_lambda * np.eye(z.shape[1])
    rhs = zcw.T @ yc
    try:
        coef = cho_solve(cho_factor(lhs), rhs)
    except LinAlgError as exc:
        raise NumericalError(
            "singular surrogate system; use a ridge lambda > 0"
        ) from exc
    intercept = y_bar - float(z_bar @ coef)
    return coef, intercept


def _model_probabilities(model, images: np.ndarray) -> np.ndarray:
    batch_fn = getattr(model, "predict_batch", None)
    if batch_fn is not None:
        return np.asarray(batch_fn(images), dtype=np.float64)
    return np.array([model.predict(img).probability for img in images], dtype=np.float64)


def explain(
    model,
    image: np.ndarray,
    segmap: SegmentMap,
    config: ExplanationConfig,
    *,
    model_id: str | None = None,
    image_id: str | None = None,
    workers: int = 1,
) -> Explanation:
    """Explain model's prediction on image via a weighted ridge surrogate.

    `model` needs a `predict(image) -> PredictionResult`; a vectorized
    `predict_batch(images) -> probabilities` is used when available. The
    surrogate target is the probability of the *predicted* class, so the
    supports/opposes signs are relative to what the model actually said.
    Deterministic for fixed (model weights, image, config), regardless of
    the worker count.
    """
    d = segmap.segment_count
    if not 1 <= config.k <= d:
        raise ConfigError(f"k={config.k} must be in [1, {d}]")
    prediction = model.predict(image)
    z_matrix = sample_perturbations(d, config.num_samples, config.seed)
    mean_image = segment_mean_image(image, segmap)

    def masked_batch(rows: np.ndarray) -> np.ndarray:
        keep = rows[:, segmap.segment_of].astype(bool)
        return np.where(keep[:, None, :, :], image[None], mean_image[None])

    chunks = [
        slice(start, min(start + EXPLAIN_CHUNK, config.num_samples))
        for start in range(0, config.num_samples, EXPLAIN_CHUNK)
    ]

    def run_chunk(sl: slice) -> np.ndarray:
        return _model_probabilities(model, masked_batch(z_matrix[sl]))

    if workers <= 1:
        parts = [run_chunk(sl) for sl in chunks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run_chunk, chunks))
    probs = np.concatenate(parts)

    y = probs if prediction.predicted_class == PARASITIZED else 1.0 - probs
    weights = _proximity_weights(z_matrix, config.kernel_width)
    coef, intercept = fit_weighted_ridge(z_matrix, y, weights, config.ridge_lambda)

    order = sorted(range(d), key=lambda i: (-abs(coef[i]), i))
    selected = order[: config.k]
    signs = {i: SIGN_SUPPORTS if coef[i] >= 0 else SIGN_OPPOSES for i in selected}

    fitted = intercept + z_matrix.astype(np.float64) @ coef
    y_bar = float(weights @ y) / float(weights.sum())
    ss_res = float(weights @ (y - fitted) ** 2)
    ss_tot = float(weights @ (y - y_bar) ** 2)
    if ss_tot <= 1e-12:
        r2 = 1.0 if ss_res <= 1e-12 else 0.0
    else:
        r2 = 1.0 - ss_res / ss_tot

    return Explanation(
        model_id=model_id if model_id is not None else getattr(model, "id", "model"),
        image_id=image_id if image_id is not None else "image",
        predicted_class=prediction.predicted_class,
        probability=float(prediction.probability),
        segment_weights=coef,
        intercept=float(intercept),
        selected=selected,
        signs=signs,
        r2=float(r2),
        config=config,
    )


def overlay_array(image: np.ndarray, segmap: SegmentMap, explanation: Explanation) -> np.ndarray:
    """uint8 [h, w, 3] render: supporting segments tinted green, opposing red."""
    if image.shape[1:] != (segmap.height, segmap.width):
        raise DimensionError(
            f"image {tuple(image.shape)} does not match segment map "
            f"{segmap.height}x{segmap.width}"
        )
    out = image.copy()
    for segment_id in explanation.selected:
        tint = _GREEN if explanation.signs[segment_id] == SIGN_SUPPORTS else _RED
        mask = segmap.segment_of == segment_id
        out[:, mask] = (1.0 - OVERLAY_ALPHA) * out[:, mask] + OVERLAY_ALPHA * tint[:, None]
    return np.round(out.transpose(1, 2, 0) * 255.0).astype(np.uint8)


def render_overlay(
    image: np.ndarray, segmap: SegmentMap, explanation: Explanation, out_path
) -> Path:
    """Write the overlay PNG; output dimensions equal the input image's."""
    path = Path(out_path)
    arr = overlay_array(image, segmap, explanation)
    try:
        Image.fromarray(arr).save(path, format="PNG")
    except OSError as exc:
        raise DataError(f"cannot write overlay to {path}: {exc}") from exc
    return path
