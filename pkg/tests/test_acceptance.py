"""Acceptance suite: one test per release criterion, at pinned tolerances.

Run with `pytest tests/test_acceptance.py -v`; a [ACCEPTANCE] line is
printed per criterion. The desk-scale fixture (n=2000 synthetic images,
32x32, seed 7) trains both classifiers once per session.
"""
import time

import numpy as np
import pytest

from limelens.compare import border_mass, compare_models
from limelens.data import Dataset
from limelens.errors import FormatError
from limelens.jsondoc import canonical_json
from limelens.lime import ExplanationConfig, explain, render_overlay, segment_grid
from limelens.models import (
    build_cnn,
    build_mlp,
    load_weights,
    predict_probabilities,
    save_weights,
)
from limelens.numerics import LayerKind, LayerParams
from limelens.metrics import ConfusionMatrix, classification_report

from gradcheck import max_relative_error
from test_lime import MaskLinearModel, manual_explanation

GRAD_TOLERANCE = 1e-4
CONFIGS_PER_KIND = 50


def _dense(rng, i, o):
    return LayerParams(LayerKind.DENSE, weights=rng.normal(size=(i, o)) * 0.5,
                       bias=rng.normal(size=o) * 0.1)


def _conv(rng, ci, co):
    return LayerParams(LayerKind.CONV2D, weights=rng.normal(size=(co, ci, 3, 3)) * 0.4,
                       bias=rng.normal(size=co) * 0.1)


def _act(name):
    return LayerParams(LayerKind.ACTIVATION, activation=name)


def _head(rng, width):
    return [_dense(rng, width, 1), _act("sigmoid")]


def _layer_kind_harness(kind: LayerKind, rng):
    """A minimal stack embedding one random configuration of `kind`."""
    batch = int(rng.integers(1, 4))
    if kind == LayerKind.DENSE:
        i, o = int(rng.integers(2, 6)), int(rng.integers(1, 5))
        layers = [_dense(rng, i, o), _act("relu"), *_head(rng, o)]
        x = rng.normal(size=(batch, i))
    elif kind == LayerKind.CONV2D:
        ci, co = int(rng.integers(1, 3)), int(rng.integers(1, 3))
        h = int(rng.integers(2, 5))
        layers = [_conv(rng, ci, co), LayerParams(LayerKind.FLATTEN), *_head(rng, co * h * h)]
        x = rng.normal(size=(batch, ci, h, h))
    elif kind == LayerKind.AVGPOOL2D:
        ci = int(rng.integers(1, 3))
        h = int(rng.choice([4, 6]))
        layers = [
            _conv(rng, ci, 2), _act("relu"), LayerParams(LayerKind.AVGPOOL2D),
            LayerParams(LayerKind.FLATTEN), *_head(rng, 2 * (h // 2) ** 2),
        ]
        x = rng.normal(size=(batch, ci, h, h))
    elif kind == LayerKind.DROPOUT:
        i = int(rng.integers(3, 7))
        layers = [_dense(rng, i, 5), _act("relu"), LayerParams(LayerKind.DROPOUT, rate=0.5),
                  *_head(rng, 5)]
        x = rng.normal(size=(batch, i))
    elif kind == LayerKind.FLATTEN:
        ci, h = int(rng.integers(1, 3)), int(rng.integers(2, 4))
        layers = [LayerParams(LayerKind.FLATTEN), *_head(rng, ci * h * h)]
        x = rng.normal(size=(batch, ci, h, h))
    else:  # ACTIVATION
        i = int(rng.integers(2, 6))
        layers = [_dense(rng, i, 4), _act("relu"), *_head(rng, 4)]
        x = rng.normal(size=(batch, i))
    y = rng.integers(0, 2, batch).astype(float)
    return layers, x, y


def _tiny_mlp_stack(rng):
    layers = [LayerParams(LayerKind.FLATTEN)]
    width, prev = 4, 8
    for _ in range(3):
        layers += [_dense(rng, prev, width), _act("relu")]
        prev = width
    layers += [LayerParams(LayerKind.DROPOUT, rate=0.5), *_head(rng, width)]
    x = rng.normal(size=(2, 2, 2, 2))
    return layers, x, np.array([1.0, 0.0])


def _tiny_cnn_stack(rng):
    layers = []
    ci = 1
    for co in (2, 2, 2, 2, 2):
        layers += [_conv(rng, ci, co), _act("relu"), LayerParams(LayerKind.AVGPOOL2D)]
        ci = co
    layers += [LayerParams(LayerKind.FLATTEN)]
    layers += [_dense(rng, 2, 3), _act("relu"), _dense(rng, 3, 3), _act("relu")]
    layers += [LayerParams(LayerKind.DROPOUT, rate=0.5), *_head(rng, 3)]
    x = rng.normal(size=(1, 1, 32, 32)) * 0.5
    return layers, x, np.array([1.0])


def test_gradient_correctness():
    """Criterion: analytic vs central finite differences, every layer kind."""
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for kind in LayerKind:
        for _ in range(CONFIGS_PER_KIND):
            layers, x, y = _layer_kind_harness(kind, rng)
            worst = max(worst, max_relative_error(layers, x, y))
    for stack in (_tiny_mlp_stack, _tiny_cnn_stack):
        layers, x, y = stack(rng)
        worst = max(worst, max_relative_error(layers, x, y))
    elapsed = time.perf_counter() - start
    print(f"max relative error {worst:.2e} in {elapsed:.1f}s")
    assert worst < GRAD_TOLERANCE
    assert elapsed < 60.0


def test_architecture_fidelity():
    """Criterion: builder layer sequences match the published architectures."""
    mlp = build_mlp([3, 32, 32])
    mlp_dense = [l for l in mlp.layers if l.kind == LayerKind.DENSE]
    assert [d.weights.shape[1] for d in mlp_dense] == [128, 128, 128, 1]
    mlp_acts = [l.activation for l in mlp.layers if l.kind == LayerKind.ACTIVATION]
    assert mlp_acts == ["relu", "relu", "relu", "sigmoid"]
    assert [l.rate for l in mlp.layers if l.kind == LayerKind.DROPOUT] == [0.5]
    # dropout sits between the last hidden layer and the output layer
    kinds = [l.kind for l in mlp.layers]
    assert kinds.index(LayerKind.DROPOUT) == len(kinds) - 3

    cnn = build_cnn([3, 32, 32])
    convs = [l for l in cnn.layers if l.kind == LayerKind.CONV2D]
    assert [c.weights.shape[0] for c in convs] == [32, 64, 128, 256, 512]
    assert all(c.weights.shape[2:] == (3, 3) and c.stride == 1 for c in convs)
    assert sum(1 for l in cnn.layers if l.kind == LayerKind.AVGPOOL2D) == 5
    cnn_dense = [l for l in cnn.layers if l.kind == LayerKind.DENSE]
    assert [d.weights.shape[1] for d in cnn_dense] == [1024, 1024, 1]
    assert [l.rate for l in cnn.layers if l.kind == LayerKind.DROPOUT] == [0.5]
    assert cnn.layers[-1].activation == "sigmoid"
    # block order: five conv -> relu -> pool triples before the dense head
    for block in range(5):
        assert cnn.layers[3 * block].kind == LayerKind.CONV2D
        assert cnn.layers[3 * block + 1].kind == LayerKind.ACTIVATION
        assert cnn.layers[3 * block + 2].kind == LayerKind.AVGPOOL2D


def test_desk_scale_quality_ordering(desk_run):
    """Criterion: CNN weighted F1 >= MLP weighted F1 and >= 0.90 at desk scale."""
    cnn_f1 = desk_run.cnn_report.weighted_f1
    mlp_f1 = desk_run.mlp_report.weighted_f1
    print(
        f"CNN weighted F1 {cnn_f1:.4f}, MLP weighted F1 {mlp_f1:.4f}, "
        f"training wall time {desk_run.elapsed_seconds:.0f}s"
    )
    assert cnn_f1 >= mlp_f1
    assert cnn_f1 >= 0.90
    assert desk_run.elapsed_seconds < 15 * 60


def test_metrics_oracle():
    """Criterion: report matches hand-computed values on 10 crafted matrices."""
    # (counts, per-class (P, R, F1) in class order, weighted (P, R, F1), accuracy)
    cases = [
        ([[5, 0], [0, 5]], [(1, 1, 1), (1, 1, 1)], (1, 1, 1), 1.0),
        ([[8, 2], [1, 9]],
         [(8 / 9, 8 / 10, 16 / 19), (9 / 11, 9 / 10, 162 / 189)],
         ((8 / 9 + 9 / 11) / 2, (8 / 10 + 9 / 10) / 2, (16 / 19 + 162 / 189) / 2),
         17 / 20),
        ([[0, 7], [0, 3]],
         [(0.0, 0.0, 0.0), (3 / 10, 1.0, 6 / 13)],
         (0.3 * (3 / 10), 0.3 * 1.0, 0.3 * (6 / 13)),
         3 / 10),
        ([[10, 0], [10, 0]],
         [(10 / 20, 1.0, 2 / 3), (0.0, 0.0, 0.0)],
         (0.25, 0.5, 1 / 3),
         0.5),
        ([[0, 0], [0, 5]],
         [(0.0, 0.0, 0.0), (1.0, 1.0, 1.0)],
         (1.0, 1.0, 1.0),
         1.0),
        ([[3, 3], [3, 3]], [(0.5, 0.5, 0.5), (0.5, 0.5, 0.5)], (0.5, 0.5, 0.5), 0.5),
        ([[1, 0], [0, 0]], [(1.0, 1.0, 1.0), (0.0, 0.0, 0.0)], (1.0, 1.0, 1.0), 1.0),
        ([[2, 8], [1, 9]],
         [(2 / 3, 2 / 10, 2 * (2 / 3) * (2 / 10) / (2 / 3 + 2 / 10)),
          (9 / 17, 9 / 10, 2 * (9 / 17) * (9 / 10) / (9 / 17 + 9 / 10))],
         None, 11 / 20),
        ([[97, 3], [2, 98]],
         [(97 / 99, 97 / 100, 2 * (97 / 99) * (97 / 100) / (97 / 99 + 97 / 100)),
          (98 / 101, 98 / 100, 2 * (98 / 101) * (98 / 100) / (98 / 101 + 98 / 100))],
         None, 195 / 200),
        ([[0, 10], [10, 0]], [(0.0, 0.0, 0.0), (0.0, 0.0, 0.0)], (0.0, 0.0, 0.0), 0.0),
    ]
    for counts, per_class, weighted, accuracy in cases:
        counts = np.array(counts)
        report = classification_report(ConfusionMatrix(counts=counts))
        for (p, r, f1), label in zip(per_class, report.per_class):
            m = report.per_class[label]
            assert abs(m.precision - p) < 1e-9, (counts, label, "precision")
            assert abs(m.recall - r) < 1e-9, (counts, label, "recall")
            assert abs(m.f1 - f1) < 1e-9, (counts, label, "f1")
        if weighted is None:
            supports = counts.sum(axis=1) / counts.sum()
            weighted = tuple(
                float(supports @ np.array([pc[j] for pc in per_class])) for j in range(3)
            )
        assert abs(report.weighted_precision - weighted[0]) < 1e-9
        assert abs(report.weighted_recall - weighted[1]) < 1e-9
        assert abs(report.weighted_f1 - weighted[2]) < 1e-9
        assert abs(report.overall_accuracy - accuracy) < 1e-9


def test_lime_fidelity():
    """Criterion: planted top-2 recovery >= 95/100 and mean Spearman > 0.9."""
    from scipy.stats import spearmanr

    image = np.random.default_rng(321).random((3, 32, 32))
    segmap = segment_grid(image, 4, 4)

    planted = np.zeros(16)
    planted[3], planted[7] = 2.0, -2.0
    model = MaskLinearModel(image, segmap, planted)
    successes = 0
    for seed in range(100):
        config = ExplanationConfig(k=2, num_samples=1000, seed=seed, grid_rows=4, grid_cols=4)
        exp = explain(model, image, segmap, config)
        if (set(exp.selected) == {3, 7}
                and exp.signs[3] == "supports" and exp.signs[7] == "opposes"):
            successes += 1

    correlations = []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        dense = rng.uniform(0.2, 2.0, 16) * rng.choice([-1.0, 1.0], 16)
        dense_model = MaskLinearModel(image, segmap, dense, bias=-float(dense.sum()) / 2.0)
        config = ExplanationConfig(k=2, num_samples=1000, seed=seed + 1000,
                                   grid_rows=4, grid_cols=4)
        exp = explain(dense_model, image, segmap, config)
        correlations.append(spearmanr(np.abs(dense), np.abs(exp.segment_weights)).statistic)
    mean_rho = float(np.mean(correlations))
    print(f"top-2 recovery {successes}/100, mean Spearman {mean_rho:.3f}")
    assert successes >= 95
    assert mean_rho > 0.9


def test_determinism_across_cli_http_and_workers(wired_models, tmp_path, capsys):
    """Criterion: byte-identical documents and overlays across every path."""
    from fastapi.testclient import TestClient

    from limelens.cli import cli_run
    from limelens.service import create_app

    image_path = sorted((wired_models.data_dir / "parasitized").glob("*.png"))[0]
    image_id = f"parasitized/{image_path.name}"
    local = tmp_path / "parasitized" / image_path.name
    local.parent.mkdir()
    local.write_bytes(image_path.read_bytes())

    code = cli_run([
        "explain", "--model", str(wired_models.model_dir / "alpha.lmnw"),
        "--image", str(local), "--k", "2", "--samples", "120", "--seed", "9",
        "--grid", "4x4",
    ])
    capsys.readouterr()
    assert code == 0
    cli_doc = local.with_suffix(".explanation.json").read_bytes()
    cli_overlay = local.with_suffix(".explained.png").read_bytes()

    app = create_app(wired_models.model_dir, wired_models.data_dir, cache_dir=tmp_path / "cache")
    with TestClient(app) as client:
        body = {"model_id": "alpha", "image_id": image_id, "k": 2, "samples": 120,
                "seed": 9, "grid": [4, 4]}
        env1 = client.post("/api/explain", json=body).json()
        env2 = client.post("/api/explain", json=body).json()
        http_doc1 = canonical_json(env1["document"])
        http_doc2 = canonical_json(env2["document"])
        http_overlay = client.get(env1["overlay_url"]).content

    assert http_doc1 == http_doc2 == cli_doc
    assert http_overlay == cli_overlay

    # direct library path, 1 vs 4 worker threads
    network = load_weights(wired_models.model_dir / "alpha.lmnw")
    from limelens.data import decode_png

    pixels = decode_png(local)
    config = ExplanationConfig(k=2, num_samples=120, seed=9, grid_rows=4, grid_cols=4)
    segmap = segment_grid(pixels, 4, 4)
    exp1 = explain(network, pixels, segmap, config, image_id=image_id, workers=1)
    exp4 = explain(network, pixels, segmap, config, image_id=image_id, workers=4)
    assert exp1.to_bytes() == exp4.to_bytes() == cli_doc
    p1 = render_overlay(pixels, segmap, exp1, tmp_path / "w1.png")
    p4 = render_overlay(pixels, segmap, exp4, tmp_path / "w4.png")
    assert p1.read_bytes() == p4.read_bytes() == cli_overlay


def test_border_artifact_detector():
    """Criterion: 37.5%-background tile measures 0.375; flag iff mass > 0.5."""
    image = np.full((3, 128, 128), 0.8)
    image[:, 0:6, 0:16] = 0.0  # 96 of the first 16x16 tile's 256 pixels
    segmap = segment_grid(image, 8, 8)
    exp = manual_explanation([0], {0: "supports"}, d=64)
    mass = border_mass(exp, image, segmap)
    assert abs(mass - 0.375) < 1e-9
    assert not mass > 0.5

    image[:, 0:8, 0:16] = 0.0  # exactly half the tile: still not flagged
    assert not border_mass(exp, image, segmap) > 0.5
    image[:, 0:9, 0:16] = 0.0  # 9/16 of the tile: flagged
    assert border_mass(exp, image, segmap) > 0.5


def test_comparison_sanity(desk_run):
    """Criterion: self-compare is unity; CNN artifact rate <= MLP's."""
    config = ExplanationConfig(k=2, num_samples=300, seed=7, grid_rows=8, grid_cols=8)
    subset = Dataset(desk_run.test_set.samples[:4])
    self_report = compare_models(desk_run.cnn, desk_run.cnn, subset, config)
    assert self_report.mean_jaccard == 1.0
    assert self_report.metrics_a.to_document() == self_report.metrics_b.to_document()

    sample = Dataset(desk_run.test_set.samples[:24])
    report = compare_models(desk_run.cnn, desk_run.mlp, sample, config)
    print(
        f"artifact rate CNN {report.artifact_rate_a:.3f} vs MLP {report.artifact_rate_b:.3f}; "
        f"mean jaccard {report.mean_jaccard:.3f}"
    )
    assert report.artifact_rate_a <= report.artifact_rate_b


def test_round_trip_persistence(tmp_path):
    """Criterion: save/load drift < 1e-5 over 100 images; malformed rejected."""
    network = build_cnn([3, 32, 32], seed=13)
    path = tmp_path / "net.lmnw"
    save_weights(network, path)
    loaded = load_weights(path)
    rng = np.random.default_rng(17)
    images = rng.random((100, 3, 32, 32))
    drift = np.max(np.abs(
        predict_probabilities(network, images) - predict_probabilities(loaded, images)
    ))
    print(f"max probability drift {drift:.2e}")
    assert drift < 1e-5

    blob = path.read_bytes()
    bad_magic = tmp_path / "bad-magic.lmnw"
    bad_magic.write_bytes(b"NOPE" + blob[4:])
    with pytest.raises(FormatError):
        load_weights(bad_magic)

    bad_version = tmp_path / "bad-version.lmnw"
    bad_version.write_bytes(blob[:4] + (99).to_bytes(4, "little") + blob[8:])
    with pytest.raises(FormatError):
        load_weights(bad_version)

    truncated = tmp_path / "truncated.lmnw"
    truncated.write_bytes(blob[: len(blob) - 1000])
    with pytest.raises(FormatError):
        load_weights(truncated)

    trailing = tmp_path / "trailing.lmnw"
    trailing.write_bytes(blob + b"extra")
    with pytest.raises(FormatError):
        load_weights(trailing)
