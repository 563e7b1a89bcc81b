"""Dense order-N tensor kernels and their contraction with product states.

A configuration ``s = (s_1, ..., s_N)`` is stored as an N-bit integer with
``s_1`` in the most significant bit, so pixel k of a row-major window sits at
bit position ``N - k``. Reshaping a coefficient table to ``(2,) * N`` in C order
therefore puts pixel k on axis ``k - 1``.

The single-patch functions (``contract``, ``grad_pixels`` ...) follow the
one-leg-at-a-time folding literally. The batched ``*_columns`` functions used
by the layers fold a group of legs per step so that each step is one matrix
product or one contiguous multiply-reduce.
"""
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, EncodingError, NumericError

# Upper bound on elements held by one intermediate array in the batched paths.
CHUNK_ELEMENTS = 1 << 22


def config_index(bits):
    """Pack ``(s_1, ..., s_N)`` into an integer, ``s_1`` most significant."""
    index = 0
    for bit in bits:
        if bit not in (0, 1):
            raise DimensionError(f"configuration entries must be 0 or 1, got {bit!r}")
        index = (index << 1) | int(bit)
    return index


def config_bits(index, order):
    if not 0 <= index < (1 << order):
        raise DimensionError(f"configuration {index} out of range for order {order}")
    return tuple((index >> (order - 1 - k)) & 1 for k in range(order))


@dataclass(frozen=True)
class TensorKernel:
    coefficients: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coefficients)
        if c.ndim != 1 or c.size < 2 or c.size & (c.size - 1):
            raise DimensionError(f"coefficient table must have 2**N entries, got shape {c.shape}")
        if not np.all(np.isfinite(c)):
            raise NumericError("kernel coefficients must be finite")
        object.__setattr__(self, "coefficients", c)

    @property
    def order(self):
        return self.coefficients.size.bit_length() - 1

    @classmethod
    def from_function(cls, order, fn, dtype=np.float64):
        """Build a kernel from ``fn(bits) -> coefficient``."""
        return cls(np.array([fn(config_bits(i, order)) for i in range(1 << order)], dtype=dtype))


@dataclass(frozen=True)
class PatchState:
    """N local vectors ``(x_k, 1 - x_k)``; their tensor product is the patch state."""

    locals: np.ndarray

    def __post_init__(self):
        loc = np.asarray(self.locals)
        if loc.ndim != 2 or loc.shape[1] != 2 or loc.shape[0] < 1:
            raise DimensionError(f"patch locals must have shape (N, 2), got {loc.shape}")
        object.__setattr__(self, "locals", loc)

    @property
    def order(self):
        return self.locals.shape[0]

    @classmethod
    def from_pixels(cls, pixels, dtype=np.float64):
        x = np.asarray(pixels, dtype=dtype).ravel()
        if np.any(~np.isfinite(x)) or np.any(x < 0) or np.any(x > 1):
            raise EncodingError("patch pixels must lie in [0, 1]")
        return cls(np.stack([x, 1 - x], axis=1))


def _check_orders(patch, kernel):
    if patch.order != kernel.order:
        raise DimensionError(f"patch has {patch.order} pixels but kernel has order {kernel.order}")


def contract(patch, kernel):
    """Inner product of the patch product state with the kernel state.

    Folds the last remaining leg into the table at every step, halving it;
    total work is about ``2**(N+1)`` multiply-adds. The fold runs one precision
    step above the inputs (long double for float64 data) and rounds once, so
    outputs that nearly cancel keep their relative accuracy.
    """
    _check_orders(patch, kernel)
    wide = np.longdouble if np.result_type(patch.locals, kernel.coefficients) == np.float64 else np.float64
    table = kernel.coefficients.astype(wide)
    locals_ = patch.locals.astype(wide)
    for k in range(patch.order - 1, -1, -1):
        table = table.reshape(-1, 2) @ locals_[k]
    return float(table[0])


def basis_weight(patch, config):
    bits = config_bits(config, patch.order) if np.isscalar(config) else tuple(config)
    if len(bits) != patch.order:
        raise DimensionError(f"configuration has {len(bits)} bits, patch has {patch.order} pixels")
    weight = 1.0
    for k, bit in enumerate(bits):
        weight *= patch.locals[k, int(bit)]
    return float(weight)


def grad_coefficients(patch):
    """d contract / d c(s) for every s, i.e. the full basis-weight vector."""
    return basis_weights(patch.locals)


def grad_pixels(patch, kernel):
    """d contract / d x_k for every pixel, one partial contraction per pixel.

    Each partial contraction folds every leg except k; the open leg gives the
    pair ``(y | x_k = 1, y | x_k = 0)`` and their difference is the derivative,
    since the output is affine in each pixel.
    """
    _check_orders(patch, kernel)
    n = patch.order
    loc = patch.locals
    out = np.empty(n, dtype=np.result_type(loc, kernel.coefficients))
    for k in range(n):
        table = kernel.coefficients
        for i in range(n - 1, k, -1):
            table = table.reshape(-1, 2) @ loc[i]
        table = table.reshape(-1, 2)
        for i in range(k - 1, -1, -1):
            table = np.einsum("ijo,j->io", table.reshape(-1, 2, 2), loc[i])
        out[k] = table[0, 0] - table[0, 1]
    return out


# ---------------------------------------------------------------------------
# batched paths
#
# These work on pixel columns: ``cols`` has shape (N, M), one column per patch,
# and the local vector of pixel k in patch m is (cols[k, m], 1 - cols[k, m]).
# Keeping the patch axis last makes every elementwise step a contiguous sweep.


def basis_weights(locals_):
    """Basis weights for a stack of patches: ``(..., N, 2) -> (..., 2**N)``."""
    locals_ = np.asarray(locals_)
    lead = locals_.shape[:-2]
    out = locals_[..., 0, :]
    for k in range(1, locals_.shape[-2]):
        out = (out[..., :, None] * locals_[..., k, None, :]).reshape(*lead, -1)
    return out


def basis_columns(cols):
    """``(n, M)`` pixel columns -> ``(2**n, M)`` basis weights, first pixel most significant."""
    n, m = cols.shape
    if n > 3:
        # build per-group bases first, then one broadcast product per group
        sizes = _groups(n)[::-1]
        starts = np.cumsum([0] + sizes)
        out = basis_columns(cols[: starts[1]])
        for a, b in zip(starts[1:-1], starts[2:]):
            out = (out[:, None, :] * basis_columns(cols[a:b])).reshape(-1, m)
        return out
    out = np.empty((2, m), dtype=cols.dtype)
    out[0] = cols[0]
    np.subtract(1, cols[0], out=out[1])
    for k in range(1, n):
        x = cols[k]
        nxt = np.empty((2 * len(out), m), dtype=out.dtype)
        np.multiply(out, x, out=nxt[0::2])
        np.subtract(out, nxt[0::2], out=nxt[1::2])
        out = nxt
    return out


def _groups(order):
    # leg groups folded per step, rightmost (least significant) group first
    size = -(-order // 3)
    groups = []
    rest = order
    while rest > 0:
        g = min(size, rest)
        groups.append(g)
        rest -= g
    return groups


def _chunks(total, width):
    step = max(1, CHUNK_ELEMENTS // max(width, 1))
    for start in range(0, total, step):
        yield slice(start, min(start + step, total))


def _check_columns(cols, coeffs):
    if cols.ndim != 2:
        raise DimensionError(f"pixel columns must have shape (N, M), got {cols.shape}")
    if coeffs.ndim != 2 or coeffs.shape[1] != 1 << cols.shape[0]:
        raise DimensionError(
            f"coefficient stack shape {coeffs.shape} does not match order {cols.shape[0]}"
        )


def contract_columns(cols, coeffs):
    """Contract M patches against K kernels: ``(N, M), (K, 2**N) -> (K, M)``."""
    _check_columns(cols, coeffs)
    n, m = cols.shape
    k = coeffs.shape[0]
    groups = _groups(n)
    out = np.empty((k, m), dtype=np.result_type(cols, coeffs))
    if k > 1 << groups[0]:
        # many kernels: one GEMM against the full basis is cheaper
        for span in _chunks(m, 1 << n):
            out[:, span] = coeffs @ basis_columns(cols[:, span])
        return out
    g = groups[0]
    folded = coeffs.reshape(k << (n - g), 1 << g)
    for span in _chunks(m, k << (n - g)):
        c = cols[:, span]
        table = folded @ basis_columns(c[n - g:])
        rest = n - g
        for g2 in groups[1:]:
            weights = basis_columns(c[rest - g2:rest])
            table = (table.reshape(-1, 1 << g2, table.shape[-1]) * weights).sum(axis=1)
            rest -= g2
        out[:, span] = table
    return out


def contract_columns_backward(cols, coeffs, grad_out, need_pixels=True):
    """Reverse pass of ``contract_columns`` for upstream ``grad_out`` of shape (K, M).

    Returns ``(grad_coeffs (K, 2**N), grad_cols (N, M) or None)``.
    """
    _check_columns(cols, coeffs)
    n, m = cols.shape
    k = coeffs.shape[0]
    if grad_out.shape != (k, m):
        raise DimensionError(f"upstream gradient shape {grad_out.shape} != {(k, m)}")
    dtype = np.result_type(cols, coeffs, grad_out)
    g = _groups(n)[0]
    gc = np.zeros((k, 1 << n), dtype=dtype)
    if k > 1 << g:
        for span in _chunks(m, 1 << n):
            gc += grad_out[:, span] @ basis_columns(cols[:, span]).T
    else:
        for span in _chunks(m, k << (n - g)):
            c = cols[:, span]
            w = grad_out[:, span]
            if n > g:
                w = (w[:, None, :] * basis_columns(c[: n - g])).reshape(-1, w.shape[-1])
            gc += (w @ basis_columns(c[n - g:]).T).reshape(k, 1 << n)
    if not need_pixels:
        return gc, None
    gp = np.empty((n, m), dtype=dtype)
    for span in _chunks(m, 4 << n):
        gp[:, span] = _pixel_grads(cols[:, span], coeffs.T @ grad_out[:, span])
    return gc, gp


def _leg_grads(bases, effective):
    """Gradient of ``<kron(bases), effective>`` w.r.t. each basis factor.

    ``bases`` are ``(d_i, M)`` arrays (first one most significant) and
    ``effective`` is ``(prod d_i, M)``. Prefix and suffix Kronecker products are
    shared, so each factor costs one pass over ``effective``.
    """
    m = effective.shape[-1]
    prefix = [np.ones((1, m), dtype=effective.dtype)]
    for b in bases[:-1]:
        prefix.append((prefix[-1][:, None, :] * b).reshape(-1, m))
    suffix = [np.ones((1, m), dtype=effective.dtype)]
    for b in bases[:0:-1]:
        suffix.append((b[:, None, :] * suffix[-1]).reshape(-1, m))
    out = []
    for i, b in enumerate(bases):
        pre, suf = prefix[i], suffix[len(bases) - 1 - i]
        t = effective.reshape(len(pre), len(b), len(suf), m)
        if len(suf) > 1:
            t = (t * suf).sum(axis=2)
        else:
            t = t[:, :, 0]
        out.append((t * pre[:, None, :]).sum(axis=0))
    return out


def _pixel_grads(cols, effective):
    # effective[:, m] = sum_j g[j, m] c_j; differentiate <beta_m, effective[:, m]>
    # first w.r.t. each group basis, then within each group w.r.t. its pixels
    n, m = cols.shape
    sizes = _groups(n)[::-1]
    starts = np.cumsum([0] + sizes)
    bases = [basis_columns(cols[a:b]) for a, b in zip(starts[:-1], starts[1:])]
    out = np.empty((n, m), dtype=effective.dtype)
    for a, b, d_basis in zip(starts[:-1], starts[1:], _leg_grads(bases, effective)):
        locals_ = [np.stack([x, 1 - x]) for x in cols[a:b]]
        for k, v in zip(range(a, b), _leg_grads(locals_, d_basis)):
            out[k] = v[0] - v[1]
    return out


def contract_many(pixels, coeffs):
    """Row-major convenience form: ``(M, N) pixels, (K, 2**N) -> (M, K)``."""
    return contract_columns(np.ascontiguousarray(np.asarray(pixels).T), coeffs).T


def contract_many_backward(pixels, coeffs, grad_out, need_pixels=True):
    """Row-major convenience form of ``contract_columns_backward``."""
    gc, gp = contract_columns_backward(
        np.ascontiguousarray(np.asarray(pixels).T), coeffs, np.ascontiguousarray(grad_out.T), need_pixels
    )
    return gc, (None if gp is None else gp.T)
