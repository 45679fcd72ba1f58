import time
from dataclasses import dataclass

import pytest

from limelens.data import Dataset, save_dataset_png, split, synthesize_dataset
from limelens.metrics import MetricsReport, classification_report, confusion
from limelens.models import (
    Network,
    TrainingConfig,
    TrainingHistory,
    build_cnn,
    build_mlp,
    predicted_labels,
    save_weights,
    train,
)

DESK_SEED = 7
DESK_N = 2000
DESK_SIZE = 32


@dataclass
class WiredModels:
    """Two cheap trained MLPs plus a served dataset, for CLI/service wiring tests."""

    model_dir: object
    data_dir: object
    alpha: Network
    beta: Network
    dataset: Dataset


@pytest.fixture(scope="session")
def wired_models(tmp_path_factory) -> WiredModels:
    root = tmp_path_factory.mktemp("wired")
    dataset = synthesize_dataset(40, 32, seed=21)
    val = synthesize_dataset(12, 32, seed=22)
    config = TrainingConfig(batch_size=16, max_epochs=3, patience=5, seed=21)
    alpha, _ = train(build_mlp([3, 32, 32], seed=21), dataset, val, config)
    beta, _ = train(build_mlp([3, 32, 32], seed=22), dataset, val, config)
    alpha.id, beta.id = "alpha", "beta"
    model_dir = root / "models"
    model_dir.mkdir()
    save_weights(alpha, model_dir / "alpha.lmnw")
    save_weights(beta, model_dir / "beta.lmnw")
    data_dir = save_dataset_png(Dataset(dataset.samples[:10]), root / "data")
    return WiredModels(model_dir=model_dir, data_dir=data_dir, alpha=alpha, beta=beta, dataset=dataset)


@dataclass
class DeskRun:
    """The full desk-scale training fixture behind the acceptance criteria."""

    train_set: Dataset
    val_set: Dataset
    test_set: Dataset
    mlp: Network
    cnn: Network
    mlp_history: TrainingHistory
    cnn_history: TrainingHistory
    mlp_report: MetricsReport
    cnn_report: MetricsReport
    elapsed_seconds: float
    model_dir: object


@pytest.fixture(scope="session")
def desk_run(tmp_path_factory) -> DeskRun:
    start = time.perf_counter()
    dataset = synthesize_dataset(DESK_N, DESK_SIZE, seed=DESK_SEED)
    train_set, val_set, test_set = split(dataset, seed=DESK_SEED)
    config = TrainingConfig(seed=DESK_SEED)
    mlp, mlp_history = train(build_mlp([3, DESK_SIZE, DESK_SIZE], seed=DESK_SEED), train_set, val_set, config)
    cnn, cnn_history = train(build_cnn([3, DESK_SIZE, DESK_SIZE], seed=DESK_SEED), train_set, val_set, config)
    elapsed = time.perf_counter() - start

    mlp.id, cnn.id = "mlp-desk", "cnn-desk"
    truths = [s.label for s in test_set.samples]
    mlp_report = classification_report(confusion(predicted_labels(mlp, test_set), truths))
    cnn_report = classification_report(confusion(predicted_labels(cnn, test_set), truths))

    model_dir = tmp_path_factory.mktemp("desk-models")
    save_weights(mlp, model_dir / "mlp-desk.lmnw")
    save_weights(cnn, model_dir / "cnn-desk.lmnw")
    return DeskRun(
        train_set=train_set,
        val_set=val_set,
        test_set=test_set,
        mlp=mlp,
        cnn=cnn,
        mlp_history=mlp_history,
        cnn_history=cnn_history,
        mlp_report=mlp_report,
        cnn_report=cnn_report,
        elapsed_seconds=elapsed,
        model_dir=model_dir,
    )


def pytest_runtest_logreport(report):
    # One visible pass/fail line per acceptance criterion.
    if report.when == "call" and "test_acceptance" in report.nodeid:
        name = report.nodeid.split("::")[-1]
        print(f"\n[ACCEPTANCE] {name}: {report.outcome.upper()}")
