"""Cross-model comparison of explanation strategies on shared images.

For each image both models predict and explain with the same seed (so the
perturbation masks are identical and differences are attributable to the
models), then the selected-pixel overlap and the fraction of explanation
mass landing on dark background are computed. A selection dominated by
background (border mass above the artifact threshold) is flagged: dark
borders carry no class information, so highlighting them is undesirable
model behavior worth surfacing.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset
from .errors import DataError, DimensionError
from .jsondoc import canonical_json
from .lime import Explanation, ExplanationConfig, SegmentMap, explain, render_overlay, segment_grid
from .metrics import MetricsReport, classification_report, confusion
from .models import Network, predicted_labels

DEFAULT_ARTIFACT_THRESHOLD = 0.5
DEFAULT_LUMINANCE_THRESHOLD = 0.05


@dataclass
class ComparisonRow:
    image_id: str
    jaccard_selected_pixels: float
    border_mass_a: float
    border_mass_b: float
    artifact_a: bool
    artifact_b: bool
    prediction_agreement: bool
    overlay_a: str | None = None
    overlay_b: str | None = None

    def to_document(self) -> dict:
        return {
            "image_id": self.image_id,
            "jaccard_selected_pixels": float(self.jaccard_selected_pixels),
            "border_mass_a": float(self.border_mass_a),
            "border_mass_b": float(self.border_mass_b),
            "artifact_a": bool(self.artifact_a),
            "artifact_b": bool(self.artifact_b),
            "prediction_agreement": bool(self.prediction_agreement),
            "overlay_a": self.overlay_a,
            "overlay_b": self.overlay_b,
        }


@dataclass
class ComparisonReport:
    model_a: str
    model_b: str
    config: ExplanationConfig
    artifact_threshold: float
    luminance_threshold: float
    rows: list[ComparisonRow] = field(default_factory=list)
    metrics_a: MetricsReport | None = None
    metrics_b: MetricsReport | None = None

    @property
    def mean_jaccard(self) -> float:
        return float(np.mean([r.jaccard_selected_pixels for r in self.rows]))

    @property
    def artifact_rate_a(self) -> float:
        return float(np.mean([r.artifact_a for r in self.rows]))

    @property
    def artifact_rate_b(self) -> float:
        return float(np.mean([r.artifact_b for r in self.rows]))

    def to_document(self) -> dict:
        return {
            "version": 1,
            "model_a": self.model_a,
            "model_b": self.model_b,
            "config": self.config.to_document(),
            "artifact_threshold": float(self.artifact_threshold),
            "luminance_threshold": float(self.luminance_threshold),
            "rows": [r.to_document() for r in self.rows],
            "aggregates": {
                "mean_jaccard": self.mean_jaccard,
                "artifact_rate_a": self.artifact_rate_a,
                "artifact_rate_b": self.artifact_rate_b,
                "prediction_agreement_rate": float(
                    np.mean([r.prediction_agreement for r in self.rows])
                ),
            },
            "metrics_a": self.metrics_a.to_document() if self.metrics_a else None,
            "metrics_b": self.metrics_b.to_document() if self.metrics_b else None,
        }

    def to_bytes(self) -> bytes:
        return canonical_json(self.to_document())

    def format_table(self) -> str:
        header = (
            f"{'image':<34} {'jaccard':>8} {'border A':>9} {'border B':>9} "
            f"{'flag A':>7} {'flag B':>7} {'agree':>6}"
        )
        lines = [f"model A = {self.model_a}, model B = {self.model_b}", header, "-" * len(header)]
        for r in self.rows:
            lines.append(
                f"{r.image_id:<34} {r.jaccard_selected_pixels:>8.4f} "
                f"{r.border_mass_a:>9.4f} {r.border_mass_b:>9.4f} "
                f"{str(r.artifact_a):>7} {str(r.artifact_b):>7} "
                f"{str(r.prediction_agreement):>6}"
            )
        lines.append(
            f"mean jaccard {self.mean_jaccard:.4f}; artifact rate A {self.artifact_rate_a:.4f}, "
            f"B {self.artifact_rate_b:.4f}"
        )
        return "\n".join(lines)


def segment_jaccard(exp_a: Explanation, exp_b: Explanation, segmap: SegmentMap) -> float:
    """Pixel-level IoU of the two selections; both empty counts as 1.0."""
    if exp_a.image_id != exp_b.image_id:
        raise DataError(
            f"explanations refer to different images: {exp_a.image_id!r} vs {exp_b.image_id!r}"
        )
    pixels_a = segmap.pixels_of(exp_a.selected)
    pixels_b = segmap.pixels_of(exp_b.selected)
    union = np.count_nonzero(pixels_a | pixels_b)
    if union == 0:
        return 1.0
    return float(np.count_nonzero(pixels_a & pixels_b)) / float(union)


def border_mass(
    explanation: Explanation,
    image: np.ndarray,
    segmap: SegmentMap,
    luminance_threshold: float = DEFAULT_LUMINANCE_THRESHOLD,
) -> float:
    """Fraction of the selected pixels that are dark background."""
    if image.shape[1:] != (segmap.height, segmap.width):
        raise DimensionError(
            f"image {tuple(image.shape)} does not match segment map "
            f"{segmap.height}x{segmap.width}"
        )
    selected = segmap.pixels_of(explanation.selected)
    n_selected = np.count_nonzero(selected)
    if n_selected == 0:
        return 0.0
    background = image.mean(axis=0) < luminance_threshold
    return float(np.count_nonzero(selected & background)) / float(n_selected)


def compare_on_image(
    model_a: Network,
    model_b: Network,
    image: np.ndarray,
    image_id: str,
    segmap: SegmentMap,
    config: ExplanationConfig,
    *,
    artifact_threshold: float = DEFAULT_ARTIFACT_THRESHOLD,
    luminance_threshold: float = DEFAULT_LUMINANCE_THRESHOLD,
    workers: int = 1,
) -> tuple[ComparisonRow, Explanation, Explanation]:
    """One comparison row: same image, same seed, two models."""
    exp_a = explain(model_a, image, segmap, config, image_id=image_id, workers=workers)
    exp_b = explain(model_b, image, segmap, config, image_id=image_id, workers=workers)
    mass_a = border_mass(exp_a, image, segmap, luminance_threshold)
    mass_b = border_mass(exp_b, image, segmap, luminance_threshold)
    row = ComparisonRow(
        image_id=image_id,
        jaccard_selected_pixels=segment_jaccard(exp_a, exp_b, segmap),
        border_mass_a=mass_a,
        border_mass_b=mass_b,
        artifact_a=mass_a > artifact_threshold,
        artifact_b=mass_b > artifact_threshold,
        prediction_agreement=exp_a.predicted_class == exp_b.predicted_class,
    )
    return row, exp_a, exp_b


def compare_models(
    model_a: Network,
    model_b: Network,
    dataset: Dataset,
    config: ExplanationConfig | None = None,
    *,
    artifact_threshold: float = DEFAULT_ARTIFACT_THRESHOLD,
    luminance_threshold: float = DEFAULT_LUMINANCE_THRESHOLD,
    artifact_dir: str | Path | None = None,
    workers: int = 1,
) -> ComparisonReport:
    """Explain every dataset image with both models and aggregate.

    Row order equals dataset order. With a fixed config seed the report is
    fully deterministic (byte-identical serialization).
    """
    if model_a.input_shape != model_b.input_shape:
        raise DimensionError(
            f"models expect different input shapes: {model_a.input_shape} vs "
            f"{model_b.input_shape}"
        )
    if len(dataset) == 0:
        raise DataError("comparison dataset is empty")
    config = config or ExplanationConfig()
    out_dir = Path(artifact_dir) if artifact_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    report = ComparisonReport(
        model_a=model_a.id,
        model_b=model_b.id,
        config=config,
        artifact_threshold=artifact_threshold,
        luminance_threshold=luminance_threshold,
    )
    segmap: SegmentMap | None = None
    for sample in dataset.samples:
        if tuple(sample.pixels.shape) != model_a.input_shape:
            raise DimensionError(
                f"sample {sample.id} has shape {tuple(sample.pixels.shape)}, expected "
                f"{model_a.input_shape}"
            )
        if segmap is None:
            segmap = segment_grid(sample.pixels, config.grid_rows, config.grid_cols)
        row, exp_a, exp_b = compare_on_image(
            model_a, model_b, sample.pixels, sample.id, segmap, config,
            artifact_threshold=artifact_threshold,
            luminance_threshold=luminance_threshold,
            workers=workers,
        )
        if out_dir is not None:
            stem = sample.id.replace("/", "__")
            path_a = render_overlay(sample.pixels, segmap, exp_a, out_dir / f"{stem}.{model_a.id}.explained.png")
            path_b = render_overlay(sample.pixels, segmap, exp_b, out_dir / f"{stem}.{model_b.id}.explained.png")
            row.overlay_a = str(path_a)
            row.overlay_b = str(path_b)
        report.rows.append(row)

    truths = [s.label for s in dataset.samples]
    report.metrics_a = classification_report(confusion(predicted_labels(model_a, dataset), truths))
    report.metrics_b = classification_report(confusion(predicted_labels(model_b, dataset), truths))
    return report
