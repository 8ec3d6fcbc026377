"""Force-based rectification of contact-deformed images.

A four-sensor force sample yields the total normal load and the probe tilt.
The tilt turns into a per-pixel load field, and the radial strain model maps
each deformed pixel back to its unloaded location.
"""

from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._interp import resample_image
from .core import CameraIntrinsics, ForceSample, Image, MaterialParams
from .exceptions import FoldOverError, GrazingTiltError, SensorDomainError

#: Tilt normals with a z component below this are rejected (tilt >= ~84 deg,
#: physically impossible for the probe).
MIN_NORMAL_Z = 0.1


@dataclass(frozen=True)
class TiltState:
    """Total load and probe orientation derived from one force sample."""

    total_force: float
    theta_x: float
    theta_y: float
    tilt_normal: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.tilt_normal, dtype=float).reshape(3)
        object.__setattr__(self, "tilt_normal", u)
        if abs(np.linalg.norm(u) - 1.0) > 1e-12:
            raise ValueError("tilt normal must be a unit vector")


@dataclass(frozen=True)
class LoadField:
    """Per-pixel effective contact load in newtons."""

    load: np.ndarray

    def __post_init__(self):
        load = np.asarray(self.load, dtype=float)
        if load.ndim != 2:
            raise ValueError("load field must be 2-D")
        object.__setattr__(self, "load", load)

    @property
    def width(self) -> int:
        return self.load.shape[1]

    @property
    def height(self) -> int:
        return self.load.shape[0]


def total_force(fs: ForceSample) -> float:
    """Total force in the z direction: the sum of the four sensors."""
    return fs.f1 + fs.f2 + fs.f3 + fs.f4


def tilt_angles(fs: ForceSample, mp: MaterialParams) -> tuple[float, float]:
    """Probe tilt angles (theta_x, theta_y) in radians.

    theta_x = asin((f2 - f1) / (2 k Sx)), theta_y = asin((f4 - f3) / (2 k Sy)).

    Raises:
        SensorDomainError: if a force difference exceeds the arcsine domain.
    """
    ax = (fs.f2 - fs.f1) / (2.0 * mp.hooke_constant * mp.sensor_sep_x)
    ay = (fs.f4 - fs.f3) / (2.0 * mp.hooke_constant * mp.sensor_sep_y)
    if abs(ax) > 1.0 or abs(ay) > 1.0:
        raise SensorDomainError(
            f"arcsine argument out of range (x: {ax:.4f}, y: {ay:.4f}); "
            "sensor fault or wrong Hooke constant"
        )
    return float(np.arcsin(ax)), float(np.arcsin(ay))


def tilt_normal(theta_x: float, theta_y: float) -> np.ndarray:
    """Surface normal of the tilted probe: Rx(theta_x) @ Ry(theta_y) @ (0,0,1)."""
    cx, sx = np.cos(theta_x), np.sin(theta_x)
    cy, sy = np.cos(theta_y), np.sin(theta_y)
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    u = rx @ ry @ np.array([0.0, 0.0, 1.0])
    return u / np.linalg.norm(u)


def tilt_state(fs: ForceSample, mp: MaterialParams) -> TiltState:
    """Bundle total force, tilt angles and tilt normal for one sample."""
    tx, ty = tilt_angles(fs, mp)
    return TiltState(total_force(fs), tx, ty, tilt_normal(tx, ty))


def depth_deviation_field(
    u: np.ndarray, width: int, height: int, pitch: float
) -> np.ndarray:
    """Per-pixel probe depth deviation in millimetres for a tilt normal.

    The deviation is the plane through the image centre with normal ``u``:
    Z(x, y) = -(u_x X + u_y Y) / u_z, with (X, Y) physical plane coordinates
    in mm measured from the image centre.

    Raises:
        GrazingTiltError: if ``u_z`` < 0.1.
    """
    u = np.asarray(u, dtype=float).reshape(3)
    if u[2] < MIN_NORMAL_Z:
        raise GrazingTiltError(f"tilt normal z component {u[2]:.4f} below {MIN_NORMAL_Z}")
    cx = (width - 1) / 2.0
    cy = (height - 1) / 2.0
    xs = (np.arange(width) - cx) * pitch
    ys = (np.arange(height) - cy) * pitch
    X, Y = np.meshgrid(xs, ys)
    return -(u[0] * X + u[1] * Y) / u[2]


def load_field(fz: float, depth_dev: np.ndarray, kappa: float) -> LoadField:
    """Per-pixel load: F_Z + kappa * Z(x, y), clamped below at zero.

    The clamp encodes that contact cannot pull on the surface.
    """
    return LoadField(np.maximum(fz + kappa * np.asarray(depth_dev, dtype=float), 0.0))


def lateral_strain(sigma_z: float, mp: MaterialParams) -> float:
    """Orthogonal lateral strain for an axial stress: -(v / E) * sigma_z."""
    return -(mp.poisson_ratio / mp.youngs_modulus) * sigma_z


def correction_factors(lf: LoadField, mp: MaterialParams) -> np.ndarray:
    """Radial correction factor 1 - (v / (E A)) * F(x, y) per pixel.

    Raises:
        FoldOverError: if the factor is non-positive anywhere.
    """
    coef = mp.poisson_ratio / (mp.youngs_modulus * mp.scanner_area)
    g = 1.0 - coef * lf.load
    if g.min() <= 0.0:
        raise FoldOverError(
            f"radial correction factor reaches {g.min():.4f}; load too large "
            "for the deformation model (check calibration)"
        )
    return g


def _clamped_bilinear(field: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Exact float64 bilinear sample with replicated borders."""
    h, w = field.shape
    xc = np.clip(xs, 0.0, w - 1.0)
    yc = np.clip(ys, 0.0, h - 1.0)
    x0 = np.floor(xc).astype(np.int64)
    y0 = np.floor(yc).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xc - x0
    fy = yc - y0
    return (
        field[y0, x0] * (1 - fx) * (1 - fy)
        + field[y0, x1] * fx * (1 - fy)
        + field[y1, x0] * (1 - fx) * fy
        + field[y1, x1] * fx * fy
    )


def radial_source_scale(
    lf: LoadField,
    mp: MaterialParams,
    intrinsics: CameraIntrinsics,
    n_iter: int = 60,
    tol: float = 1e-7,
    refine_iter: int = 5,
) -> np.ndarray:
    """Solve the per-pixel radial scale s mapping rectified to deformed coords.

    A rectified pixel p at radius r from the principal point originates from
    the deformed location p' = c + s (p - c) where s = r'/r satisfies the
    fixed point s = 1 / g(c + s (p - c)); g is the correction factor field on
    the deformed grid. Converges geometrically for any invertible load field.
    The bulk of the iterations run in float32 through cv2.remap; a few final
    float64 iterations remove its fixed-point interpolation error.
    """
    g64 = correction_factors(lf, mp)
    g = g64.astype(np.float32)
    h, w = g.shape
    cx, cy = intrinsics.cx, intrinsics.cy
    xs32, ys32 = np.meshgrid(
        np.arange(w, dtype=np.float32) - np.float32(cx),
        np.arange(h, dtype=np.float32) - np.float32(cy),
    )
    s = np.ones((h, w), dtype=np.float32)
    for _ in range(n_iter):
        map_x = np.float32(cx) + s * xs32
        map_y = np.float32(cy) + s * ys32
        g_at = cv2.remap(
            g, map_x, map_y, cv2.INTER_LINEAR, borderMode=cv2.BORDER_REPLICATE
        )
        s_new = 1.0 / g_at
        if np.max(np.abs(s_new - s)) < tol:
            s = s_new
            break
        s = s_new

    s64 = s.astype(np.float64)
    xs = xs32.astype(np.float64)
    ys = ys32.astype(np.float64)
    for _ in range(refine_iter):
        g_at = _clamped_bilinear(g64, cx + s64 * xs, cy + s64 * ys)
        s64 = 1.0 / g_at
    return s64


def rectify_image(
    img: Image,
    lf: LoadField,
    mp: MaterialParams,
    intrinsics: CameraIntrinsics,
    interpolation: str = "bilinear",
) -> Image:
    """Undo the load-induced radial stretch of a deformed image.

    Every pixel at deformed radius r' moves to r = r' (1 - (v/(E A)) F(x,y)).
    The output is resampled onto the regular grid by inverse mapping; pixels
    whose source falls outside the input (or its mask) come out invalid.

    Raises:
        FoldOverError: if the correction factor is non-positive anywhere.
    """
    if (lf.height, lf.width) != img.shape:
        raise ValueError(
            f"load field {lf.load.shape} does not match image {img.shape}"
        )
    s = radial_source_scale(lf, mp, intrinsics)
    h, w = img.shape
    xs, ys = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
    src_x = intrinsics.cx + s * (xs - intrinsics.cx)
    src_y = intrinsics.cy + s * (ys - intrinsics.cy)
    data, valid = resample_image(img.data, img.mask, src_x, src_y, interpolation)
    return Image(data, valid)


def rectify_frame(
    img: Image,
    fs: ForceSample,
    mp: MaterialParams,
    intrinsics: CameraIntrinsics,
    interpolation: str = "bilinear",
) -> Image:
    """Full per-frame rectification: sensors -> tilt -> load field -> warp."""
    state = tilt_state(fs, mp)
    dev = depth_deviation_field(
        state.tilt_normal, img.width, img.height, intrinsics.pixel_pitch
    )
    lf = load_field(state.total_force, dev, mp.hooke_constant)
    return rectify_image(img, lf, mp, intrinsics, interpolation)


class ForceRectifier(BaseEstimator, TransformerMixin):
    """Transformer that rectifies (image, force sample) pairs.

    Stateless; ``fit`` only validates parameters. ``transform`` accepts a
    sequence of ``(Image, ForceSample)`` pairs and returns rectified images.
    """

    def __init__(self, material=None, intrinsics=None, interpolation="bilinear"):
        self.material = material
        self.intrinsics = intrinsics
        self.interpolation = interpolation

    def _check_params(self):
        if self.material is None or self.intrinsics is None:
            raise ValueError("material and intrinsics must be set")

    def fit(self, X=None, y=None):
        self._check_params()
        return self

    def transform(self, X):
        self._check_params()
        return [
            rectify_frame(img, fs, self.material, self.intrinsics, self.interpolation)
            for img, fs in X
        ]
