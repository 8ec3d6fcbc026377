"""Shared domain types and homogeneous-coordinate geometry.

Conventions used throughout the package:

* image origin is the top-left pixel, x grows rightward, y grows downward;
* pixel (x, y) lives at array index [y, x];
* luminance is 8-bit; an optional boolean mask marks valid pixels;
* physical lengths are millimetres, forces newtons, angles radians unless a
  name says otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import DegenerateDepthError

#: Depth below which a projection is considered degenerate.
DEPTH_EPS = 1e-12


@dataclass(frozen=True)
class Image:
    """8-bit luminance image with an optional validity mask.

    Attributes:
        data: (height, width) uint8 array, row-major.
        mask: optional (height, width) bool array; True marks valid pixels.
            ``None`` means every pixel is valid.
    """

    data: np.ndarray
    mask: np.ndarray | None = None

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.uint8)
        object.__setattr__(self, "data", data)
        if data.ndim != 2:
            raise ValueError(f"image data must be 2-D, got shape {data.shape}")
        if self.mask is not None:
            mask = np.asarray(self.mask, dtype=bool)
            if mask.shape != data.shape:
                raise ValueError(
                    f"mask shape {mask.shape} does not match image shape {data.shape}"
                )
            object.__setattr__(self, "mask", mask)
        self.data.setflags(write=False)
        if self.mask is not None:
            self.mask.setflags(write=False)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def valid_mask(self) -> np.ndarray:
        """Mask as a concrete array (all-True when no mask is attached)."""
        if self.mask is None:
            return np.ones(self.data.shape, dtype=bool)
        return self.mask

    @property
    def center(self) -> tuple[float, float]:
        """Geometric centre of the pixel grid, (x, y)."""
        return ((self.width - 1) / 2.0, (self.height - 1) / 2.0)


@dataclass(frozen=True)
class MaterialParams:
    """Elastic constants of the scanned surface plus scanner geometry.

    Attributes:
        youngs_modulus: E, pascals.
        poisson_ratio: dimensionless, in (0, 0.5].
        hooke_constant: spring constant relating indentation depth to force,
            newtons per millimetre.
        scanner_area: contact area of the probe, square metres.
        sensor_sep_x: separation of the x-axis sensor pair, millimetres.
        sensor_sep_y: separation of the y-axis sensor pair, millimetres.
    """

    youngs_modulus: float
    poisson_ratio: float
    hooke_constant: float
    scanner_area: float
    sensor_sep_x: float
    sensor_sep_y: float

    def __post_init__(self):
        if not self.youngs_modulus > 0:
            raise ValueError("Young's modulus must be positive")
        if not 0 < self.poisson_ratio <= 0.5:
            raise ValueError("Poisson ratio must be in (0, 0.5]")
        if not self.hooke_constant > 0:
            raise ValueError("Hooke constant must be positive")
        if not self.scanner_area > 0:
            raise ValueError("scanner area must be positive")
        if not (self.sensor_sep_x > 0 and self.sensor_sep_y > 0):
            raise ValueError("sensor separations must be positive")


@dataclass(frozen=True)
class ForceSample:
    """Four-sensor force reading for one frame.

    Sensor layout: f4 -> f3 spans the x axis, f2 -> f1 spans the y axis.
    Synthesized samples may carry negative readings (preloaded sensors); use
    :func:`check_nonnegative_forces` to validate real captures.
    """

    frame_id: int
    f1: float
    f2: float
    f3: float
    f4: float

    def __post_init__(self):
        for name in ("f1", "f2", "f3", "f4"):
            value = getattr(self, name)
            if not np.isfinite(value):
                raise ValueError(f"force {name} must be finite, got {value!r}")

    def as_array(self) -> np.ndarray:
        return np.array([self.f1, self.f2, self.f3, self.f4], dtype=float)


def check_nonnegative_forces(sample: ForceSample) -> None:
    """Reject samples with negative readings (contact sensors cannot pull)."""
    if min(sample.f1, sample.f2, sample.f3, sample.f4) < 0:
        raise ValueError(
            f"frame {sample.frame_id}: negative sensor force in {sample.as_array()}"
        )


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics plus the physical pixel scale at the contact plane.

    Attributes:
        fx, fy: focal lengths in pixels.
        cx, cy: principal point in pixels.
        pixel_pitch: millimetres per pixel at the contact plane. Together
            with fx it fixes the plane depth ``fx * pixel_pitch`` used by the
            planar re-projection model.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    pixel_pitch: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not self.pixel_pitch > 0:
            raise ValueError("pixel pitch must be positive")

    @property
    def matrix(self) -> np.ndarray:
        """3x3 intrinsic matrix (zero skew)."""
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    @property
    def plane_depth(self) -> float:
        """Distance from the camera centre to the contact plane, mm."""
        return self.fx * self.pixel_pitch

    def principal_point(self) -> tuple[float, float]:
        return (self.cx, self.cy)


def _check_rotation(R: np.ndarray, tol: float = 1e-9) -> None:
    if R.shape != (3, 3):
        raise ValueError(f"rotation must be 3x3, got {R.shape}")
    if not np.allclose(R @ R.T, np.eye(3), atol=tol):
        raise ValueError("rotation matrix is not orthonormal")
    if abs(np.linalg.det(R) - 1.0) > tol:
        raise ValueError("rotation matrix determinant is not +1")


@dataclass(frozen=True)
class Pose:
    """Rigid transform of a frame camera relative to the reconstruction reference.

    Maps reference-camera coordinates to frame-camera coordinates:
    ``x_frame = R @ x_ref + T``. Translation is in millimetres.
    """

    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    T: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.asarray(self.R, dtype=float)
        T = np.asarray(self.T, dtype=float).reshape(3)
        _check_rotation(R)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "T", T)
        self.R.setflags(write=False)
        self.T.setflags(write=False)

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    def compose(self, other: "Pose") -> "Pose":
        """Apply ``other`` first, then ``self``: x -> self(other(x))."""
        return Pose(self.R @ other.R, self.R @ other.T + self.T)

    def inverse(self) -> "Pose":
        return Pose(self.R.T, -self.R.T @ self.T)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform (N, 3) or (3,) points."""
        pts = np.asarray(points, dtype=float)
        return pts @ self.R.T + self.T


def project_homogeneous(
    point3: np.ndarray, pose: Pose, intrinsics: CameraIntrinsics
) -> np.ndarray:
    """Project a 3-D point through a pinhole camera at ``pose``.

    Returns the dehomogenized pixel location (x, y). A point that coincides
    with the camera centre is the limit of points approaching along the
    optical axis and maps to the principal point; any other point with
    near-zero depth raises :class:`DegenerateDepthError`.
    """
    cam = pose.apply(np.asarray(point3, dtype=float).reshape(3))
    z = cam[2]
    if abs(z) < DEPTH_EPS:
        if abs(cam[0]) < DEPTH_EPS and abs(cam[1]) < DEPTH_EPS:
            return np.array([intrinsics.cx, intrinsics.cy])
        raise DegenerateDepthError(f"projected depth {z!r} is degenerate")
    x = intrinsics.fx * cam[0] / z + intrinsics.cx
    y = intrinsics.fy * cam[1] / z + intrinsics.cy
    return np.array([x, y])


def back_project(
    pixel: np.ndarray, depth: float, pose: Pose, intrinsics: CameraIntrinsics
) -> np.ndarray:
    """Invert :func:`project_homogeneous` at a known camera depth."""
    px = np.asarray(pixel, dtype=float).reshape(2)
    cam = np.array(
        [
            (px[0] - intrinsics.cx) * depth / intrinsics.fx,
            (px[1] - intrinsics.cy) * depth / intrinsics.fy,
            depth,
        ]
    )
    return pose.inverse().apply(cam)
