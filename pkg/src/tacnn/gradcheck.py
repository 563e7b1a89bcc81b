"""Oracle suites run by ``tacnn gradcheck`` and the acceptance tests."""
import numpy as np

from . import tensor_core as tc
from .encoding import normalize_backward, normalize_channel
from .layers import (
    Model,
    baseline_conv_backward,
    baseline_conv_forward,
    cnn_spec,
    dense_backward,
    dense_forward,
    tacnn_spec,
    tensor_conv_backward,
    tensor_conv_forward,
)
from .oracle import (
    OracleReport,
    brute_force_contract,
    compare,
    enumerated_contract,
    finite_diff,
    mean_cross_entropy,
    widen,
)

SCALES = {
    # contract instances per order, random instances for gradient checks
    "small": dict(per_order=100, grad_cases=5, norm_cases=1000),
    "default": dict(per_order=1000, grad_cases=20, norm_cases=10000),
    "full": dict(per_order=5000, grad_cases=100, norm_cases=100000),
}


def contract_equivalence(rng, per_order=1000, orders=range(1, 10)):
    fast, slow, labels = [], [], []
    for n in orders:
        for i in range(per_order):
            patch = tc.PatchState.from_pixels(rng.random(n))
            kernel = tc.TensorKernel(rng.standard_normal(1 << n))
            fast.append(tc.contract(patch, kernel))
            slow.append(brute_force_contract(patch, kernel))
            labels.append(f"N={n} case {i}")
    return compare("contract vs brute force", fast, slow, 1e-12, labels)


def patch_gradients(rng, cases=20, orders=range(1, 10)):
    analytic, numeric, labels = [], [], []
    for n in orders:
        for i in range(cases):
            x = rng.random(n)
            c = rng.standard_normal(1 << n)
            wx, wc = widen([x, c])
            gx, gc = finite_diff(lambda: enumerated_contract(wx, wc), [wx, wc])
            patch, kernel = tc.PatchState.from_pixels(x), tc.TensorKernel(c)
            analytic += [tc.grad_pixels(patch, kernel), tc.grad_coefficients(patch)]
            numeric += [gx, gc]
            labels += [f"N={n} case {i} d/dx", f"N={n} case {i} d/dc"]
    return compare("contract gradients vs finite differences", analytic, numeric, 1e-6, labels)


def normalize_gradients(rng, cases=20):
    analytic, numeric, labels = [], [], []
    for i in range(cases):
        raw = rng.standard_normal((4, 4)) * rng.uniform(0.1, 3) + rng.uniform(-2, 2)
        up = rng.standard_normal((4, 4))
        wraw, wup = widen([raw, up])
        (g,) = finite_diff(lambda: (normalize_channel(wraw) * wup).sum(), [wraw])
        analytic.append(normalize_backward(raw, up))
        numeric.append(g)
        labels.append(f"plane {i}")
    return compare("normalize_channel gradient", analytic, numeric, 1e-6, labels)


def normalize_range(rng, cases=10000):
    """Fraction of normalized values outside (0, 1), reported as the error."""
    raws = rng.standard_normal((cases, 6, 6)) * rng.exponential(3, (cases, 1, 1)) ** 3
    z = normalize_channel(raws)
    bad = np.logical_or(z <= 0, z >= 1)
    where = "-" if not bad.any() else f"plane {int(np.argwhere(bad)[0][0])}"
    return OracleReport("normalize_channel range (0, 1)", float(bad.sum()), float(bad.mean()), where, 1e-300)


def basis_normalization(rng, cases=200, orders=range(1, 10)):
    worst, where = 0.0, "-"
    for n in orders:
        for i in range(cases):
            x = rng.random(n)
            if i % 10 == 0:
                x[rng.random(n) < 0.3] = rng.choice([0.0, 1.0])
            err = abs(tc.grad_coefficients(tc.PatchState.from_pixels(x)).sum() - 1.0)
            if err >= worst:
                worst, where = err, f"N={n} case {i}"
    return OracleReport("sum of basis weights == 1", worst, worst, where, 1e-12)


def multilinearity(rng, cases=200, orders=range(1, 10)):
    """Midpoint of each pixel's segment, absolute deviation."""
    worst, where = 0.0, "-"
    for n in orders:
        for i in range(cases):
            x = rng.random(n)
            kernel = tc.TensorKernel(rng.standard_normal(1 << n))
            k = int(rng.integers(n))
            ys = []
            for v in (0.0, 0.5, 1.0):
                x[k] = v
                ys.append(tc.contract(tc.PatchState.from_pixels(x), kernel))
            err = abs(ys[1] - 0.5 * (ys[0] + ys[2]))
            if err >= worst:
                worst, where = err, f"N={n} case {i} pixel {k}"
    return OracleReport("affine in each pixel (midpoint)", worst, worst, where, 1e-12)


def _layer_check(name, forward, backward, arrays, upstream, labels):
    """Analytic layer gradients vs long double differences of ``sum(forward * upstream)``."""
    wide = widen(arrays)
    wup = widen([upstream])[0]
    numeric = finite_diff(lambda: (forward(*wide) * wup).sum(), wide)
    return compare(name, backward(*arrays, upstream), numeric, 1e-6, labels)


def layer_gradients(rng):
    """Tensor conv (6x6, 2 kernels), baseline conv and dense layer vs finite differences."""
    reports = []
    x = rng.random((2, 1, 6, 6))
    kernels = rng.standard_normal((1, 2, 512))
    reports.append(_layer_check(
        "tensor conv layer gradients",
        lambda k, x: tensor_conv_forward(k, x),
        lambda k, x, up: tensor_conv_backward(k, x, up),
        [kernels, x], rng.standard_normal((2, 2, 4, 4)), ["kernels", "input"],
    ))
    x2 = rng.random((2, 2, 6, 6)) * 0.8 + 0.1
    k2 = rng.standard_normal((2, 3, 512))
    reports.append(_layer_check(
        "tensor conv 2-channel gradients",
        lambda k, x: tensor_conv_forward(k, x),
        lambda k, x, up: tensor_conv_backward(k, x, up),
        [k2, x2], rng.standard_normal((2, 3, 4, 4)), ["kernels", "input"],
    ))

    def conv_backward(w, b, x, up):
        return baseline_conv_backward(w, x, baseline_conv_forward(w, b, x)[1], up)

    reports.append(_layer_check(
        "baseline conv gradients",
        lambda w, b, x: baseline_conv_forward(w, b, x)[0],
        conv_backward,
        [rng.standard_normal((3, 2, 3, 3)), rng.standard_normal(3), rng.standard_normal((2, 2, 6, 6))],
        rng.standard_normal((2, 3, 4, 4)), ["weights", "bias", "input"],
    ))

    def dense_back(w, b, x, up):
        return dense_backward(w, x, dense_forward(w, b, x, "relu")[1], up, "relu")

    reports.append(_layer_check(
        "dense layer gradients",
        lambda w, b, x: dense_forward(w, b, x, "relu")[0],
        dense_back,
        [rng.standard_normal((5, 7)), rng.standard_normal(5), rng.standard_normal((3, 7))],
        rng.standard_normal((3, 5)), ["weights", "bias", "input"],
    ))
    return reports


def model_gradients(rng, spec, name, samples=3, tolerance=1e-5):
    """Every parameter of a float64 model against long double differences of the batch loss."""
    model = Model(spec, rng=rng, dtype=np.float64)
    x = rng.random((samples, *spec.input_shape))
    y = rng.integers(0, spec.num_classes, samples)
    _, _, grads = model.loss_and_grads(x, y)
    wide = Model(spec, [widen(ps) for ps in model.params], dtype=np.longdouble)
    wx = widen([x])[0]
    numeric = finite_diff(lambda: mean_cross_entropy(wide.forward(wx)[0], y), wide.flat_params())
    labels = []
    for i, (layer, ps) in enumerate(zip(spec.layers, model.params)):
        labels += [f"layer {i} {layer.kind} param {j}" for j in range(len(ps))]
    return compare(name, [g for gs in grads for g in gs], numeric, tolerance, labels)


def small_models():
    """The 8x8 models used for end-to-end checks."""
    shape = (1, 8, 8)
    return {
        "1-layer TACNN end-to-end": tacnn_spec((2,), shape, hidden=8),
        "2-layer TACNN end-to-end": tacnn_spec((2, 2), shape, hidden=8),
        "1-layer CNN end-to-end": cnn_spec((2,), shape, hidden=8),
    }


def run_all(scale="default", seed=0, log=None):
    cfg = SCALES[scale]
    rng = np.random.default_rng(seed)
    steps = [
        lambda: [contract_equivalence(rng, cfg["per_order"])],
        lambda: [basis_normalization(rng), multilinearity(rng)],
        lambda: [patch_gradients(rng, cfg["grad_cases"])],
        lambda: [normalize_gradients(rng, cfg["grad_cases"]), normalize_range(rng, cfg["norm_cases"])],
        lambda: layer_gradients(rng),
        lambda: [model_gradients(rng, spec, name) for name, spec in small_models().items()],
    ]
    reports = []
    for step in steps:
        for report in step():
            reports.append(report)
            if log:
                log(report.line())
    return reports
