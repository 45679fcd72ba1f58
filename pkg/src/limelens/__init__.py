"""limelens: train small image classifiers, explain predictions locally,
and compare explanation strategies across models."""

from .compare import ComparisonReport, border_mass, compare_models, segment_jaccard
from .data import Dataset, ImageSample, load_dataset, resize_image, split, synthesize_dataset
from .errors import (
    ConfigError,
    DataError,
    DimensionError,
    FormatError,
    LimelensError,
    NumericalError,
    StateError,
)
from .lime import (
    Explanation,
    ExplanationConfig,
    SegmentMap,
    explain,
    render_overlay,
    segment_grid,
)
from .metrics import ConfusionMatrix, MetricsReport, classification_report, confusion
from .models import (
    Network,
    PredictionResult,
    TrainingConfig,
    TrainingHistory,
    build_cnn,
    build_mlp,
    load_weights,
    predict,
    save_weights,
    train,
)

__version__ = "0.1.0"
