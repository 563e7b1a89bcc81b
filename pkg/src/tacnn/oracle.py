"""Naive reference implementations and the gradient-check harness.

Nothing here calls into ``tensor_core``'s arithmetic: the brute-force
contraction enumerates every configuration with its own bit handling, so
agreement between the two is meaningful. References accumulate in long double
so that their own rounding stays well below the tolerances being checked.
"""
import itertools
from dataclasses import dataclass

import numpy as np

from .errors import GuardError, NumericError

MAX_BRUTE_ORDER = 16
FD_STEP = 1e-5
DENOM_FLOOR = 1e-12
WIDE = np.longdouble


@dataclass
class OracleReport:
    name: str
    max_abs_error: float
    max_rel_error: float
    location: str
    tolerance: float

    @property
    def passed(self):
        return bool(self.max_rel_error < self.tolerance)

    def line(self):
        flag = "PASS" if self.passed else "FAIL"
        return (
            f"{flag}  {self.name:<40s} rel {self.max_rel_error:.3e} (tol {self.tolerance:.0e})  "
            f"abs {self.max_abs_error:.3e}  worst at {self.location}"
        )


def rel_errors(a, b):
    """Elementwise ``|a - b| / max(|a|, |b|, 1e-12)``."""
    a = np.asarray(a, dtype=WIDE)
    b = np.asarray(b, dtype=WIDE)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), DENOM_FLOOR)


def rel_error(a, b):
    return float(np.max(rel_errors(a, b), initial=0.0))


def compare(name, analytic, reference, tolerance, labels=None):
    """Report over blocks of values; ``labels[i]`` names block i in the report."""
    if isinstance(analytic, np.ndarray) or np.isscalar(analytic):
        analytic, reference = [analytic], [reference]
    labels = labels or [f"block {i}" for i in range(len(analytic))]
    worst_rel, worst_abs, where = 0.0, 0.0, "-"
    for label, a, b in zip(labels, analytic, reference):
        a = np.asarray(a, dtype=WIDE)
        b = np.asarray(b, dtype=WIDE)
        if a.shape != b.shape:
            raise NumericError(f"{name}: shape mismatch at {label}: {a.shape} vs {b.shape}")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            return OracleReport(name, float("inf"), float("inf"), label, tolerance)
        if a.size == 0:
            continue
        rel = rel_errors(a, b)
        worst_abs = max(worst_abs, float(np.abs(a - b).max()))
        i = int(np.argmax(rel))
        if rel.flat[i] >= worst_rel:
            worst_rel = float(rel.flat[i])
            idx = np.unravel_index(i, rel.shape)
            where = f"{label}{[int(v) for v in idx] if idx else ''}"
    return OracleReport(name, worst_abs, worst_rel, where, tolerance)


def brute_force_contract(patch, kernel):
    """Literal sum over all ``2**N`` configurations of ``c(s) * prod_k local_k[s_k]``."""
    loc = np.asarray(patch.locals, dtype=WIDE)
    coeffs = np.asarray(kernel.coefficients, dtype=WIDE)
    n = len(loc)
    if n > MAX_BRUTE_ORDER:
        raise GuardError(f"brute-force contraction limited to N <= {MAX_BRUTE_ORDER}, got {n}")
    if len(coeffs) != 2 ** n:
        raise GuardError(f"kernel has {len(coeffs)} coefficients, patch needs {2 ** n}")
    total = WIDE(0)
    for s in itertools.product((0, 1), repeat=n):
        index = int("".join(str(b) for b in s), 2)
        term = coeffs[index]
        for k, sk in enumerate(s):
            term *= loc[k, sk]
        total += term
    return float(total)


def enumerated_contract(pixels, coeffs):
    """Vectorized enumeration in long double, straight from pixel values.

    Used as the function under finite differences: the table of all
    configurations is built from shifts, not from any folding.
    """
    x = np.asarray(pixels)
    n = len(x)
    if n > MAX_BRUTE_ORDER:
        raise GuardError(f"enumeration limited to N <= {MAX_BRUTE_ORDER}, got {n}")
    bits = (np.arange(1 << n)[:, None] >> (n - 1 - np.arange(n))) & 1
    factors = np.where(bits == 1, 1 - x.astype(WIDE), x.astype(WIDE))
    return np.prod(factors, axis=1) @ np.asarray(coeffs, dtype=WIDE)


def mean_cross_entropy(logits, labels):
    """Batch-mean ``-log softmax`` in long double, for differencing whole models."""
    z = np.asarray(logits, dtype=WIDE)
    z = z - z.max(axis=1, keepdims=True)
    return (np.log(np.exp(z).sum(axis=1)) - z[np.arange(len(labels)), labels]).mean()


def widen(arrays):
    return [np.array(a, dtype=WIDE) for a in arrays]


def finite_diff(loss_fn, parameters, step=FD_STEP):
    """Central differences of ``loss_fn()`` w.r.t. every entry of every array.

    The arrays are perturbed in place and restored afterwards; ``loss_fn``
    must read them when called. Arrays must be float64 or wider; long double
    arrays with a long double loss keep the rounding part of the error near
    ``1e-19 / step``.
    """
    grads = []
    for p in parameters:
        if np.finfo(p.dtype).eps > np.finfo(np.float64).eps:
            raise NumericError(f"finite differences need float64 or wider, got {p.dtype}")
        h = p.dtype.type(step)
        g = np.empty_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_fn()
            flat[i] = orig - h
            down = loss_fn()
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NumericError(f"non-finite loss while differencing entry {i}")
            gflat[i] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def reference_single_layer_forward(image, kernels, window=3, stride=1):
    """Patch-by-patch brute-force evaluation of a one-channel tensor convolution.

    ``kernels`` is a sequence of TensorKernel; returns ``(K, H_out, W_out)``.
    """
    from .tensor_core import PatchState

    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape
    ho, wo = (h - window) // stride + 1, (w - window) // stride + 1
    out = np.zeros((len(kernels), ho, wo))
    for i in range(ho):
        for j in range(wo):
            r, c = i * stride, j * stride
            pix = image[r:r + window, c:c + window].ravel()
            patch = PatchState(np.stack([pix, 1 - pix], axis=1))
            for k, kernel in enumerate(kernels):
                out[k, i, j] = brute_force_contract(patch, kernel)
    return out
