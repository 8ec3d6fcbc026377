"""Synthetic phantom and scan generator: the oracle for verification.

The phantom is a branching dark vein network over a bright textured
background. Frames are cropped at scripted poses and forward-deformed with
the exact algebraic inverse of the rectification model, so a rectified
render should recover the crop up to interpolation. Sensor readings are
synthesized as the exact right-inverse of the total-force and tilt-angle
relations. Ground-truth trajectories stand in for an external tracker.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from . import io as dataio
from ._interp import bilinear_sample
from .core import CameraIntrinsics, ForceSample, Image, MaterialParams
from .exceptions import OutOfBoundsFootprintError
from .force import correction_factors, depth_deviation_field, load_field, tilt_normal

DEFAULT_FRAME_WIDTH = 640
DEFAULT_FRAME_HEIGHT = 480
DEFAULT_MASK_RADIUS_FRAC = 0.48

#: Default material constants of the calibrated silicone phantom.
DEFAULT_MATERIAL = MaterialParams(
    youngs_modulus=16100.0,
    poisson_ratio=0.5,
    hooke_constant=18.0,
    scanner_area=0.0048,
    sensor_sep_x=53.0,
    sensor_sep_y=53.0,
)

#: Default camera: frame pixels map to 0.05 mm on the contact plane.
DEFAULT_INTRINSICS = CameraIntrinsics(
    fx=800.0, fy=800.0, cx=319.5, cy=239.5, pixel_pitch=0.05
)


def generate_phantom(
    width_mm: float, height_mm: float, resolution: float, seed: int
) -> Image:
    """Vein-pattern phantom texture, deterministic per seed.

    Args:
        width_mm, height_mm: physical extent.
        resolution: pixels per millimetre.
        seed: RNG seed; equal seeds give bit-identical textures.
    """
    if width_mm <= 0 or height_mm <= 0 or resolution <= 0:
        raise ValueError("phantom dimensions and resolution must be positive")
    w = int(round(width_mm * resolution))
    h = int(round(height_mm * resolution))
    rng = np.random.default_rng(seed)

    base = np.full((h, w), 205.0)
    blotch = cv2.GaussianBlur(rng.standard_normal((h, w)), (0, 0), 12.0)
    blotch *= 18.0 / max(blotch.std(), 1e-9)
    speckle = cv2.GaussianBlur(rng.standard_normal((h, w)), (0, 0), 1.2)
    speckle *= 9.0 / max(speckle.std(), 1e-9)
    background = base + blotch + speckle

    veins = np.zeros((h, w), dtype=np.uint8)
    area_mm2 = width_mm * height_mm
    n_trees = max(4, int(round(area_mm2 / 900.0)))
    step_mm = 1.0
    step_px = step_mm * resolution
    for _ in range(n_trees):
        x = rng.uniform(0.05 * w, 0.95 * w)
        y = rng.uniform(0.05 * h, 0.95 * h)
        heading = rng.uniform(0.0, 2 * math.pi)
        stack = [(x, y, heading, rng.uniform(1.0, 1.9), rng.uniform(40.0, 90.0))]
        while stack:
            x, y, heading, width_mm_v, budget = stack.pop()
            while budget > 0:
                heading += rng.normal(0.0, 0.16)
                nx = x + step_px * math.cos(heading)
                ny = y + step_px * math.sin(heading)
                thickness = max(1, int(round(width_mm_v * resolution)))
                cv2.line(
                    veins,
                    (int(round(x)), int(round(y))),
                    (int(round(nx)), int(round(ny))),
                    255,
                    thickness,
                    lineType=cv2.LINE_8,
                )
                x, y = nx, ny
                budget -= step_mm
                width_mm_v = max(0.45, width_mm_v * 0.997)
                if rng.random() < 0.03 and budget > 8.0:
                    split = heading + rng.choice([-1.0, 1.0]) * rng.uniform(0.5, 1.1)
                    stack.append((x, y, split, width_mm_v * 0.75, budget * 0.5))
                if not (0 <= x < w and 0 <= y < h):
                    break

    vein_soft = cv2.GaussianBlur(veins.astype(np.float64) / 255.0, (0, 0), 0.06 * resolution + 0.6)
    depth = 0.62 + 0.10 * cv2.GaussianBlur(rng.standard_normal((h, w)), (0, 0), 6.0)
    img = background * (1.0 - np.clip(depth, 0.4, 0.8) * vein_soft)
    img = cv2.GaussianBlur(img, (0, 0), 0.8)
    return Image(np.clip(np.rint(img), 0, 255).astype(np.uint8))


def synthesize_forces(
    frame_id: int,
    fz: float,
    theta_x: float,
    theta_y: float,
    mp: MaterialParams,
) -> ForceSample:
    """Sensor readings whose total and tilt angles reproduce the inputs.

    Uses the symmetric split about fz/4; the pair differences follow
    f2 - f1 = 2 k Sx sin(theta_x) and f4 - f3 = 2 k Sy sin(theta_y) exactly.
    Angles in radians. Readings may come out negative for large tilts at
    small loads (preloaded-sensor convention).
    """
    base = fz / 4.0
    dx = 2.0 * mp.hooke_constant * mp.sensor_sep_x * math.sin(theta_x)
    dy = 2.0 * mp.hooke_constant * mp.sensor_sep_y * math.sin(theta_y)
    return ForceSample(
        frame_id=frame_id,
        f1=base - dx / 2.0,
        f2=base + dx / 2.0,
        f3=base - dy / 2.0,
        f4=base + dy / 2.0,
    )


def render_frame(
    phantom: Image,
    pose_truth: tuple[float, float, float],
    force: tuple[float, float, float],
    mp: MaterialParams,
    intrinsics: CameraIntrinsics,
    width: int = DEFAULT_FRAME_WIDTH,
    height: int = DEFAULT_FRAME_HEIGHT,
    resolution: float | None = None,
    mask_radius_frac: float = DEFAULT_MASK_RADIUS_FRAC,
    frame_id: int = 1,
) -> tuple[Image, ForceSample]:
    """Render one deformed frame at a scripted pose and load.

    Args:
        pose_truth: (x_mm, y_mm, yaw_deg) of the scanner centre relative to
            the phantom centre.
        force: (fz_newton, theta_x_deg, theta_y_deg).
        resolution: phantom pixels per mm; defaults to 1 / pixel_pitch.

    The deformed frame samples the phantom at radius r = r' g(x', y') along
    each ray from the principal point, the exact inverse mapping of the
    rectification warp, so rectifying the result recovers the crop.

    Raises:
        OutOfBoundsFootprintError: the (masked) footprint leaves the phantom.
    """
    if resolution is None:
        resolution = 1.0 / intrinsics.pixel_pitch
    x_mm, y_mm, yaw_deg = (float(v) for v in pose_truth)
    fz, tx_deg, ty_deg = (float(v) for v in force)

    u = tilt_normal(math.radians(tx_deg), math.radians(ty_deg))
    dev = depth_deviation_field(u, width, height, intrinsics.pixel_pitch)
    lf = load_field(fz, dev, mp.hooke_constant)
    g = correction_factors(lf, mp)

    xs, ys = np.meshgrid(np.arange(width, dtype=float), np.arange(height, dtype=float))
    dx = (xs - intrinsics.cx) * intrinsics.pixel_pitch
    dy = (ys - intrinsics.cy) * intrinsics.pixel_pitch
    local_x = g * dx
    local_y = g * dy

    yaw = math.radians(yaw_deg)
    c, s = math.cos(yaw), math.sin(yaw)
    world_x = x_mm + c * local_x + s * local_y
    world_y = y_mm - s * local_x + c * local_y

    pcx = (phantom.width - 1) / 2.0
    pcy = (phantom.height - 1) / 2.0
    px = world_x * resolution + pcx
    py = world_y * resolution + pcy

    values, inbounds = bilinear_sample(phantom.data, px, py, phantom.mask)

    radius = mask_radius_frac * min(width, height)
    circ = (xs - intrinsics.cx) ** 2 + (ys - intrinsics.cy) ** 2 <= radius**2
    if np.any(circ & ~inbounds):
        raise OutOfBoundsFootprintError(
            f"footprint at ({x_mm:.1f}, {y_mm:.1f}) mm leaves the phantom"
        )
    data = np.rint(np.clip(values, 0, 255)).astype(np.uint8)
    data[~circ] = 0
    sample = synthesize_forces(
        frame_id, fz, math.radians(tx_deg), math.radians(ty_deg), mp
    )
    return Image(data, circ), sample


@dataclass(frozen=True)
class ScanScript:
    """Scripted trajectory and per-frame force profile.

    Attributes:
        trajectory: (n, 3) array of (x_mm, y_mm, yaw_deg) waypoints.
        force_profile: (n, 3) array of (fz_newton, theta_x_deg, theta_y_deg).
        rng_seed: seed for phantom generation and optional sensor noise.
    """

    trajectory: np.ndarray
    force_profile: np.ndarray
    rng_seed: int = 0

    def __post_init__(self):
        traj = np.asarray(self.trajectory, dtype=float).reshape(-1, 3)
        prof = np.asarray(self.force_profile, dtype=float).reshape(-1, 3)
        if len(traj) != len(prof):
            raise ValueError("trajectory and force profile lengths differ")
        if len(traj) < 1:
            raise ValueError("script needs at least one frame")
        if np.any(np.abs(prof[:, 1:]) >= 80.0):
            raise ValueError("scripted tilt angles must stay below 80 degrees")
        object.__setattr__(self, "trajectory", traj)
        object.__setattr__(self, "force_profile", prof)
        traj.setflags(write=False)
        prof.setflags(write=False)

    @property
    def frame_count(self) -> int:
        return len(self.trajectory)

    def arc_length(self) -> float:
        steps = np.diff(self.trajectory[:, :2], axis=0)
        return float(np.linalg.norm(steps, axis=1).sum())


def _force_profile(
    n: int,
    force_range: tuple[float, float],
    max_tilt_deg: float,
) -> np.ndarray:
    """Smooth per-frame load/tilt profile; frame 1 is force free."""
    prof = np.zeros((n, 3))
    if n > 1:
        i = np.arange(1, n, dtype=float)
        lo, hi = force_range
        mid, amp = (lo + hi) / 2.0, (hi - lo) / 2.0
        prof[1:, 0] = mid + amp * np.sin(2 * np.pi * i / 13.0 + 0.7)
        prof[1:, 1] = max_tilt_deg * np.sin(2 * np.pi * i / 23.0)
        prof[1:, 2] = max_tilt_deg * np.sin(2 * np.pi * i / 31.0 + 1.2)
    return prof


def raster_script(
    frame_count: int,
    x_extent_mm: float = 60.0,
    y_extent_mm: float = 40.0,
    rows: int = 5,
    force_range: tuple[float, float] = (2.0, 15.0),
    max_tilt_deg: float = 8.0,
    yaw_amplitude_deg: float = 0.0,
    seed: int = 0,
) -> ScanScript:
    """Serpentine raster over a rectangle, frames spaced evenly by arc length."""
    if frame_count < 1:
        raise ValueError("frame count must be positive")
    xs = []
    ys = []
    levels = np.linspace(-y_extent_mm / 2.0, y_extent_mm / 2.0, rows)
    for r, y in enumerate(levels):
        x0, x1 = -x_extent_mm / 2.0, x_extent_mm / 2.0
        if r % 2:
            x0, x1 = x1, x0
        xs.extend([x0, x1])
        ys.extend([y, y])
    waypoints = np.column_stack([xs, ys])
    seglen = np.linalg.norm(np.diff(waypoints, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seglen)])
    s = np.linspace(0.0, cum[-1], frame_count)
    traj = np.column_stack(
        [
            np.interp(s, cum, waypoints[:, 0]),
            np.interp(s, cum, waypoints[:, 1]),
            yaw_amplitude_deg
            * np.sin(2 * np.pi * np.arange(frame_count) / max(frame_count, 2)),
        ]
    )
    return ScanScript(traj, _force_profile(frame_count, force_range, max_tilt_deg), seed)


def loop_script(
    frame_count: int,
    radius_mm: float = 16.0,
    revolutions: float = 1.25,
    force_range: tuple[float, float] = (2.0, 12.0),
    max_tilt_deg: float = 5.0,
    yaw_amplitude_deg: float = 4.0,
    seed: int = 0,
) -> ScanScript:
    """Closed loop that revisits its start, producing a recurrence region."""
    if frame_count < 1:
        raise ValueError("frame count must be positive")
    a = 2 * np.pi * revolutions * np.arange(frame_count) / max(frame_count - 1, 1)
    traj = np.column_stack(
        [
            radius_mm * (np.cos(a) - 1.0),
            radius_mm * np.sin(a),
            yaw_amplitude_deg * np.sin(a * 1.5),
        ]
    )
    return ScanScript(traj, _force_profile(frame_count, force_range, max_tilt_deg), seed)


def press_script(
    frame_count: int,
    max_force: float = 12.0,
    seed: int = 0,
) -> ScanScript:
    """Stationary press with a force ramp; used for self-calibration."""
    if frame_count < 1:
        raise ValueError("frame count must be positive")
    traj = np.zeros((frame_count, 3))
    prof = np.zeros((frame_count, 3))
    prof[:, 0] = np.linspace(0.0, max_force, frame_count)
    return ScanScript(traj, prof, seed)


def phantom_for_script(
    script: ScanScript,
    intrinsics: CameraIntrinsics,
    width: int = DEFAULT_FRAME_WIDTH,
    height: int = DEFAULT_FRAME_HEIGHT,
    margin_mm: float = 8.0,
) -> Image:
    """Generate a phantom large enough to contain every scripted footprint."""
    half_diag = (
        0.5 * math.hypot(width, height) * intrinsics.pixel_pitch
    )
    traj = script.trajectory
    span_x = 2.0 * np.abs(traj[:, 0]).max() if len(traj) else 0.0
    span_y = 2.0 * np.abs(traj[:, 1]).max() if len(traj) else 0.0
    w_mm = span_x + 2 * (half_diag + margin_mm)
    h_mm = span_y + 2 * (half_diag + margin_mm)
    return generate_phantom(w_mm, h_mm, 1.0 / intrinsics.pixel_pitch, script.rng_seed)


def generate_dataset(
    script: ScanScript,
    mp: MaterialParams,
    intrinsics: CameraIntrinsics,
    out_dir: Path,
    phantom: Image | None = None,
    width: int = DEFAULT_FRAME_WIDTH,
    height: int = DEFAULT_FRAME_HEIGHT,
    mask_radius_frac: float = DEFAULT_MASK_RADIUS_FRAC,
    noise_frac: float = 0.0,
    stretch_ratio: float = 1.13,
    peak_threshold: float = 1.0,
    edge_threshold: float = 10.0,
) -> Path:
    """Render a script to a dataset directory with ground truth.

    Optional multiplicative Gaussian sensor noise (``noise_frac`` standard
    deviation) perturbs the stored force log, not the rendered geometry.
    """
    out_dir = Path(out_dir)
    if phantom is None:
        phantom = phantom_for_script(script, intrinsics, width, height)
    rng = np.random.default_rng(script.rng_seed + 1)

    samples: list[ForceSample] = []
    truth_rows: list[tuple[int, float, float, float]] = []
    for i in range(script.frame_count):
        frame_id = i + 1
        img, fs = render_frame(
            phantom,
            tuple(script.trajectory[i]),
            tuple(script.force_profile[i]),
            mp,
            intrinsics,
            width=width,
            height=height,
            mask_radius_frac=mask_radius_frac,
            frame_id=frame_id,
        )
        if noise_frac > 0.0:
            noisy = fs.as_array() * (1.0 + noise_frac * rng.standard_normal(4))
            fs = ForceSample(frame_id, *noisy)
        dataio.write_image(dataio.frame_path(out_dir, frame_id), img)
        samples.append(fs)
        x, y, yaw = script.trajectory[i]
        truth_rows.append((frame_id, float(x), float(y), float(yaw)))

    dataio.write_forces_csv(out_dir / "forces.csv", samples)
    dataio.write_groundtruth_csv(out_dir / "groundtruth.csv", truth_rows)
    cfg = dataio.DatasetConfig(
        material=mp,
        intrinsics=intrinsics,
        stretch_ratio=stretch_ratio,
        peak_threshold=peak_threshold,
        edge_threshold=edge_threshold,
        mask_shape="circle",
        mask_radius_frac=mask_radius_frac,
    )
    dataio.write_config(out_dir / "config.txt", cfg)
    return out_dir


def generate_calibration_dataset(
    out_dir: Path,
    mp: MaterialParams,
    intrinsics: CameraIntrinsics,
    n_kappa: int = 12,
    n_pairs: int = 6,
    seed: int = 0,
    noise_frac: float = 0.0,
    width: int = DEFAULT_FRAME_WIDTH,
    height: int = DEFAULT_FRAME_HEIGHT,
) -> Path:
    """Write a calibration set: angle-referenced samples plus load pairs.

    ``kappa.csv`` holds sensor readings at known reference tilts;
    ``pairs/`` holds unloaded/loaded image pairs at normal load with their
    sensor logs in ``pairs.csv``.
    """
    out_dir = Path(out_dir)
    rng = np.random.default_rng(seed)

    angles = np.linspace(2.0, 9.0, n_kappa) * np.where(
        np.arange(n_kappa) % 2 == 0, 1.0, -1.0
    )
    kappa_rows = []
    for i, theta_deg in enumerate(angles):
        fz = rng.uniform(8.0, 20.0)
        fs = synthesize_forces(i + 1, fz, math.radians(theta_deg), 0.0, mp)
        values = fs.as_array()
        if noise_frac > 0.0:
            values = values * (1.0 + noise_frac * rng.standard_normal(4))
        kappa_rows.append((i + 1, *values, float(theta_deg)))
    dataio.write_kappa_csv(out_dir / "kappa.csv", kappa_rows)

    margin = 0.6 * math.hypot(width, height) * intrinsics.pixel_pitch
    phantom = generate_phantom(
        2 * margin + 30.0, 2 * margin + 30.0, 1.0 / intrinsics.pixel_pitch, seed + 7
    )
    pair_rows = []
    for i in range(n_pairs):
        pos = (rng.uniform(-12.0, 12.0), rng.uniform(-12.0, 12.0), 0.0)
        unloaded, _ = render_frame(
            phantom, pos, (0.0, 0.0, 0.0), mp, intrinsics, width, height
        )
        fz = rng.uniform(6.0, 14.0)
        loaded, fs = render_frame(
            phantom, pos, (fz, 0.0, 0.0), mp, intrinsics, width, height,
            frame_id=i + 1,
        )
        values = fs.as_array()
        if noise_frac > 0.0:
            values = values * (1.0 + noise_frac * rng.standard_normal(4))
        dataio.write_image(out_dir / "pairs" / f"unloaded_{i + 1:03d}.png", unloaded)
        dataio.write_image(out_dir / "pairs" / f"loaded_{i + 1:03d}.png", loaded)
        pair_rows.append((i + 1, *values))
    dataio.write_pairs_csv(out_dir / "pairs.csv", pair_rows)

    cfg = dataio.DatasetConfig(material=mp, intrinsics=intrinsics)
    dataio.write_config(out_dir / "config.txt", cfg)
    return out_dir
