"""Inverse-mapped image resampling shared by the warping code paths."""

from __future__ import annotations

import numpy as np


def bilinear_sample(
    data: np.ndarray,
    xs: np.ndarray,
    ys: np.ndarray,
    mask: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Sample ``data`` at float coordinates with bilinear weights.

    Args:
        data: (H, W) array of any numeric dtype.
        xs, ys: sample coordinates, broadcastable to a common shape.
        mask: optional (H, W) bool validity mask of the source.

    Returns:
        (values, valid): float64 samples and a bool array that is True where
        the sample point is in bounds and every contributing tap is valid.
        Values at invalid points are 0.
    """
    h, w = data.shape
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)

    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    fx = xs - x0
    fy = ys - y0

    x0c = np.clip(x0, 0, w - 1)
    x1c = np.clip(x0 + 1, 0, w - 1)
    y0c = np.clip(y0, 0, h - 1)
    y1c = np.clip(y0 + 1, 0, h - 1)

    d = data.astype(np.float64, copy=False)
    w00 = (1.0 - fx) * (1.0 - fy)
    w10 = fx * (1.0 - fy)
    w01 = (1.0 - fx) * fy
    w11 = fx * fy
    values = (
        w00 * d[y0c, x0c] + w10 * d[y0c, x1c] + w01 * d[y1c, x0c] + w11 * d[y1c, x1c]
    )

    valid = (xs >= 0.0) & (xs <= w - 1.0) & (ys >= 0.0) & (ys <= h - 1.0)
    if mask is not None:
        m = mask.astype(np.float64)
        mval = (
            w00 * m[y0c, x0c]
            + w10 * m[y0c, x1c]
            + w01 * m[y1c, x0c]
            + w11 * m[y1c, x1c]
        )
        valid &= mval >= 0.999

    values = np.where(valid, values, 0.0)
    return values, valid


def nearest_sample(
    data: np.ndarray,
    xs: np.ndarray,
    ys: np.ndarray,
    mask: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-neighbour variant of :func:`bilinear_sample`."""
    h, w = data.shape
    xi = np.rint(np.asarray(xs, dtype=np.float64)).astype(np.int64)
    yi = np.rint(np.asarray(ys, dtype=np.float64)).astype(np.int64)
    valid = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
    xic = np.clip(xi, 0, w - 1)
    yic = np.clip(yi, 0, h - 1)
    values = data[yic, xic].astype(np.float64)
    if mask is not None:
        valid &= mask[yic, xic]
    values = np.where(valid, values, 0.0)
    return values, valid


def resample_image(
    data: np.ndarray,
    mask: np.ndarray | None,
    xs: np.ndarray,
    ys: np.ndarray,
    interpolation: str = "bilinear",
) -> tuple[np.ndarray, np.ndarray]:
    """Resample a uint8 image (and mask) onto sample coordinates.

    Returns a uint8 array shaped like ``xs`` and the bool validity mask.
    """
    if interpolation == "bilinear":
        values, valid = bilinear_sample(data, xs, ys, mask)
    elif interpolation == "nearest":
        values, valid = nearest_sample(data, xs, ys, mask)
    else:
        raise ValueError(f"unknown interpolation {interpolation!r}")
    out = np.rint(np.clip(values, 0.0, 255.0)).astype(np.uint8)
    out[~valid] = 0
    return out, valid
