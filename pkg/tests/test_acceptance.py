"""Acceptance criteria, one test each; every test prints a single verdict line.

Criteria 5-7 train on the real Fashion-MNIST files, looked up in
``$TACNN_DATA_DIR`` (default ``data/fashion``). Without them they fail and say
so. Criterion 8 is an extended reproduction target, not a gate: it only runs
with ``TACNN_FULL_PROTOCOL=1``.
"""
import csv
import gzip
import os
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, synthetic_images, write_idx_dataset
from tacnn import data_io, gradcheck
from tacnn.cli import RunConfig, main, train_seeds
from tacnn.errors import ParseError
from tacnn.training import multi_seed_summary

DATA_DIR = os.environ.get("TACNN_DATA_DIR", "data/fashion")
WORKERS = int(os.environ.get("TACNN_WORKERS", os.cpu_count() or 1))


def verdict(number, title, passed, detail, started=None):
    took = f" [{time.perf_counter() - started:.1f}s]" if started is not None else ""
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {title}: {detail}{took}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert passed, line


def reports_line(reports, tolerance):
    worst = max(reports, key=lambda r: r.max_rel_error)
    ok = all(r.max_rel_error < tolerance for r in reports)
    return ok, f"worst rel {worst.max_rel_error:.2e} < {tolerance:g} ({worst.name}, {worst.location})"


def test_criterion_01_oracle_equivalence():
    start = time.perf_counter()
    report = gradcheck.contract_equivalence(np.random.default_rng(101), per_order=1000)
    verdict(1, "contract vs brute force, 1000 per N=1..9", report.passed,
            f"rel {report.max_rel_error:.2e} < 1e-12 at {report.location}", start)


def test_criterion_02_gradient_exactness():
    start = time.perf_counter()
    rng = np.random.default_rng(202)
    reports = [gradcheck.patch_gradients(rng, 20), gradcheck.normalize_gradients(rng, 20)]
    models = gradcheck.small_models()
    for name in ("1-layer TACNN end-to-end", "2-layer TACNN end-to-end"):
        reports.append(gradcheck.model_gradients(rng, models[name], name))
    ok, detail = reports_line(reports, 1e-5)
    verdict(2, "analytic gradients vs central differences", ok, detail, start)


def test_criterion_03_invariants():
    start = time.perf_counter()
    rng = np.random.default_rng(303)
    basis = gradcheck.basis_normalization(rng)
    affine = gradcheck.multilinearity(rng)
    bounded = gradcheck.normalize_range(rng, 10000)
    ok = basis.passed and affine.passed and bounded.max_abs_error == 0
    verdict(3, "basis sum, midpoint affinity, normalized range", ok,
            f"sum err {basis.max_rel_error:.1e}, midpoint err {affine.max_rel_error:.1e}, "
            f"{int(bounded.max_abs_error)} of 10000 planes outside (0, 1)", start)


def test_criterion_04_parameter_counts(tmp_path):
    start = time.perf_counter()
    assert main(["bench", "--grid", "published", "--params-only", "--out-dir", str(tmp_path)]) == 0
    with open(tmp_path / "bench" / "bench.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    head = lambda flat: flat * 128 + 128 + 1290  # noqa: E731
    expected = {}
    for m in range(12):
        k = 2 ** m
        expected["tacnn", str(k)] = 512 * k + head(676 * k)
        expected["cnn", str(k)] = 10 * k + head(676 * k)
    for n in (16, 32, 64):
        expected["tacnn", f"{n}x{n}"] = 512 * n + 512 * n * n + head(576 * n)
    found = {(r["model"], r["kernels"]): int(r["parameters"]) for r in rows}
    wrong = [k for k in expected if found.get(k) != expected[k]]
    ok = not wrong and len(found) == len(expected)
    verdict(4, "parameter totals on the published grid", ok,
            f"{len(expected) - len(wrong)}/{len(expected)} exact" + (f", mismatched {wrong}" if wrong else ""), start)


def _real_data(number, title):
    if not data_io.dataset_present(DATA_DIR):
        verdict(number, title, False,
                f"Fashion-MNIST not available in {DATA_DIR!r} (set TACNN_DATA_DIR or run `tacnn fetch`)")
    return data_io.load_dataset(DATA_DIR, np.float32)


def _best(model, kernels, epochs, seeds, data):
    cfg = RunConfig(model=model, kernels=str(kernels), epochs=epochs, seeds=",".join(map(str, seeds)),
                    workers=WORKERS)
    cfg.validate()
    log = print if os.environ.get("TACNN_VERBOSE") else None
    return [acc for _, acc, _ in train_seeds(cfg, cfg.spec(), *data, None, log=log)]


@pytest.mark.dataset
def test_criterion_05_small_accuracy():
    title = "1-layer TACNN, 1 kernel, 20 epochs, best test acc >= 86%"
    data = _real_data(5, title)
    start = time.perf_counter()
    (acc,) = _best("tacnn", 1, 20, [0], data)
    verdict(5, title, acc >= 0.86, f"{100 * acc:.2f}%", start)


@pytest.mark.dataset
def test_criterion_06_medium_accuracy():
    title = "1-layer TACNN, 4 kernels, 30 epochs, best test acc >= 89%"
    data = _real_data(6, title)
    start = time.perf_counter()
    (acc,) = _best("tacnn", 4, 30, [0], data)
    verdict(6, title, acc >= 0.89, f"{100 * acc:.2f}%", start)


@pytest.mark.dataset
def test_criterion_07_tacnn_beats_cnn():
    title = "TACNN - CNN >= 1 pp, 1 kernel, 20 epochs, 3 seeds"
    data = _real_data(7, title)
    start = time.perf_counter()
    t_mean, t_std = multi_seed_summary(_best("tacnn", 1, 20, [0, 1, 2], data))
    c_mean, c_std = multi_seed_summary(_best("cnn", 1, 20, [0, 1, 2], data))
    gap = 100 * (t_mean - c_mean)
    verdict(7, title, gap >= 1.0,
            f"TACNN {100 * t_mean:.2f}+-{100 * t_std:.2f}%, CNN {100 * c_mean:.2f}+-{100 * c_std:.2f}%, "
            f"gap {gap:.2f} pp", start)


@pytest.mark.dataset
def test_criterion_08_full_protocol():
    if os.environ.get("TACNN_FULL_PROTOCOL") != "1":
        line = "criterion  8: SKIP  full-protocol reproduction is not a gate; set TACNN_FULL_PROTOCOL=1 to run it"
        ACCEPTANCE_LINES.append(line)
        pytest.skip(line)
    data = _real_data(8, "full protocol")
    start = time.perf_counter()
    one_mean, one_std = multi_seed_summary(_best("tacnn", 512, 400, range(5), data))
    cfg = RunConfig(model="tacnn", layers=2, kernels="64,64", epochs=800, seeds="0", workers=WORKERS).validate()
    (two_acc,) = [acc for _, acc, _ in train_seeds(cfg, cfg.spec(), *data, None, log=None)]
    ok = abs(100 * one_mean - 93.1) <= 0.3 and abs(100 * two_acc - 93.65) <= 0.3
    verdict(8, "512 kernels x 400 epochs x 5 seeds; 64x64 x 800 epochs", ok,
            f"{100 * one_mean:.2f}+-{100 * one_std:.2f}% vs 93.1; {100 * two_acc:.2f}% vs 93.65", start)


def test_criterion_09_determinism(tmp_path):
    start = time.perf_counter()
    data_dir = write_idx_dataset(tmp_path / "data", 300, 100)
    runs = []
    for name in ("first", "second"):
        code = main(["train", "--epochs", "3", "--seeds", "7", "--workers", "2", "--data-dir", str(data_dir),
                     "--out-dir", str(tmp_path), "--run-name", name])
        assert code == 0
        runs.append((tmp_path / name / "seed7" / "metrics.csv").read_bytes())
    verdict(9, "metrics.csv byte-identical across two runs", runs[0] == runs[1],
            f"{len(runs[0])} bytes, {len(runs[0].splitlines()) - 1} epochs", start)


def test_criterion_10_idx_round_trip():
    start = time.perf_counter()
    images, labels = synthetic_images(50, 28, 10)
    im, lb = data_io.idx_images_bytes(images), data_io.idx_labels_bytes(labels)
    identical = all([
        np.array_equal(data_io.parse_idx_images(im), images),
        np.array_equal(data_io.parse_idx_labels(lb), labels),
        np.array_equal(data_io.parse_idx_images(gzip.compress(im)), images),
        np.array_equal(data_io.parse_idx_labels(gzip.compress(lb)), labels),
    ])
    corpus = [
        (data_io.parse_idx_images, b"\x00\x00\x08\x01" + im[4:]),
        (data_io.parse_idx_labels, b"\x00\x00\x08\x03" + lb[4:]),
        (data_io.parse_idx_images, im[:12]),
        (data_io.parse_idx_images, im[:-1]),
        (data_io.parse_idx_labels, lb[:-1]),
        (data_io.parse_idx_labels, lb[:-1] + b"\x0a"),
        (data_io.parse_idx_labels, lb[:-1] + b"\xff"),
        (data_io.parse_idx_images, gzip.compress(im)[:-5]),
    ]
    rejected = 0
    for parse, blob in corpus:
        try:
            parse(blob)
        except ParseError:
            rejected += 1
    ok = identical and rejected == len(corpus)
    verdict(10, "IDX round trip and malformed corpus", ok,
            f"round trip {'identical' if identical else 'differs'}, {rejected}/{len(corpus)} malformed rejected", start)
