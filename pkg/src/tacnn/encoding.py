"""Pixel encoding, patch extraction and the inter-layer sigmoid normalization."""
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import BoundsError, DimensionError, EncodingError
from .tensor_core import PatchState

NORM_EPS = 1e-8


def encode_pixel(x):
    """Map a normalized pixel to its local state ``(x, 1 - x)``."""
    if not 0.0 <= x <= 1.0:
        raise EncodingError(f"pixel value {x!r} outside [0, 1]; normalize raw bytes first")
    return (x, 1.0 - x)


def encode_planes(planes):
    """Vectorized ``encode_pixel``: appends a trailing axis of size 2."""
    planes = np.asarray(planes)
    return np.stack([planes, 1 - planes], axis=-1)


@dataclass(frozen=True)
class PatchGeometry:
    window: int
    stride: int
    height: int
    width: int

    def __post_init__(self):
        if self.window < 1 or self.stride < 1:
            raise DimensionError("window and stride must be positive")
        if self.window > min(self.height, self.width):
            raise DimensionError(
                f"window {self.window} larger than input {self.height}x{self.width}"
            )

    @property
    def order(self):
        return self.window * self.window

    @property
    def out_height(self):
        return (self.height - self.window) // self.stride + 1

    @property
    def out_width(self):
        return (self.width - self.window) // self.stride + 1

    @property
    def output_shape(self):
        return (self.out_height, self.out_width)


def extract_patch(plane, position, geometry):
    """Patch state of the window whose output-grid coordinate is ``position``."""
    plane = np.asarray(plane)
    if plane.shape != (geometry.height, geometry.width):
        raise DimensionError(f"plane shape {plane.shape} does not match geometry")
    i, j = position
    if not (0 <= i < geometry.out_height and 0 <= j < geometry.out_width):
        raise BoundsError(f"position {position} outside output grid {geometry.output_shape}")
    r, c, L = i * geometry.stride, j * geometry.stride, geometry.window
    return PatchState.from_pixels(plane[r:r + L, c:c + L], dtype=plane.dtype)


def windows(planes, window, stride=1):
    """All windows of ``(..., H, W)`` planes as ``(..., H_out, W_out, L*L)``, row-major."""
    view = sliding_window_view(planes, (window, window), axis=(-2, -1))
    view = view[..., ::stride, ::stride, :, :]
    return view.reshape(*view.shape[:-2], window * window)


def window_columns(planes, window, stride=1):
    """Windows of ``(B, H, W)`` planes as pixel columns ``(L*L, B*H_out*W_out)``.

    Row k holds pixel k (row-major in the window) of every patch; patches are
    ordered by (sample, row, column).
    """
    b, h, w = planes.shape
    ho, wo = (h - window) // stride + 1, (w - window) // stride + 1
    cols = np.empty((window * window, b, ho, wo), dtype=planes.dtype)
    for di in range(window):
        for dj in range(window):
            cols[di * window + dj] = planes[:, di:di + stride * (ho - 1) + 1:stride, dj:dj + stride * (wo - 1) + 1:stride]
    return cols.reshape(window * window, -1)


def scatter_columns(cols, window, stride, height, width):
    """Adjoint of ``window_columns``: ``(L*L, B, H_out, W_out)`` back onto ``(B, H, W)``."""
    _, b, ho, wo = cols.shape
    out = np.zeros((b, height, width), dtype=cols.dtype)
    for di in range(window):
        for dj in range(window):
            out[:, di:di + stride * (ho - 1) + 1:stride, dj:dj + stride * (wo - 1) + 1:stride] += cols[di * window + dj]
    return out


def scatter_windows(grads, window, stride, height, width):
    """Adjoint of ``windows``: accumulate per-window pixel values back onto planes."""
    lead = grads.shape[:-3]
    ho, wo = grads.shape[-3:-1]
    out = np.zeros((*lead, height, width), dtype=grads.dtype)
    g = grads.reshape(*lead, ho, wo, window, window)
    for di in range(window):
        for dj in range(window):
            out[..., di:di + stride * (ho - 1) + 1:stride, dj:dj + stride * (wo - 1) + 1:stride] += g[..., di, dj]
    return out


@dataclass(frozen=True)
class NormalizationStats:
    mean: float
    std: float
    epsilon: float = NORM_EPS


def _sigmoid(t):
    return 0.5 * (1.0 + np.tanh(0.5 * t))


def channel_stats(raw, eps=NORM_EPS):
    raw = np.asarray(raw)
    return NormalizationStats(float(raw.mean()), float(raw.std()), eps)


def normalize_channel(raw, eps=NORM_EPS):
    """``sigmoid((y - mean) / (std + eps))`` with statistics over the last two axes.

    Every leading index (sample, channel) gets its own mean and population std.
    """
    raw = np.asarray(raw)
    if raw.size == 0:
        raise DimensionError("cannot normalize an empty plane")
    mean = raw.mean(axis=(-2, -1), keepdims=True)
    std = raw.std(axis=(-2, -1), keepdims=True)
    return _sigmoid((raw - mean) / (std + eps))


def normalize_backward(raw, upstream, eps=NORM_EPS):
    """Exact gradient of ``normalize_channel`` w.r.t. ``raw``, through mean and std."""
    raw = np.asarray(raw)
    upstream = np.asarray(upstream)
    if raw.shape != upstream.shape:
        raise DimensionError(f"shape mismatch: {raw.shape} vs {upstream.shape}")
    axes = (-2, -1)
    count = raw.shape[-1] * raw.shape[-2]
    mean = raw.mean(axis=axes, keepdims=True)
    centered = raw - mean
    std = np.sqrt((centered * centered).mean(axis=axes, keepdims=True))
    denom = std + eps
    z = _sigmoid(centered / denom)
    gu = upstream * z * (1 - z)  # gradient w.r.t. u = centered / denom
    # u = c / (s + eps);  ds/dy_i = c_i / (n s) (zero when s == 0)
    safe_std = np.where(std > 0, std, 1.0)
    dstd = -(gu * centered).sum(axis=axes, keepdims=True) / (denom * denom)
    gc = gu / denom + np.where(std > 0, dstd * centered / (count * safe_std), 0.0)
    return gc - gc.mean(axis=axes, keepdims=True)
