"""Sequential surface reconstruction: rectify, register, correct, stitch.

Frame 1 anchors the reconstruction. Every later frame is force-rectified,
matched against a neighbourhood crop of the growing mosaic with the affine
feature schedule, registered robustly, re-projected from its corrected pose
and blended in; the scanner path accumulates alongside.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.ndimage import distance_transform_edt
from sklearn.base import BaseEstimator

from .core import CameraIntrinsics, ForceSample, Image, MaterialParams
from .exceptions import (
    CheiralityError,
    DegenerateConfigurationError,
    FrameMismatchError,
    ImageTooSmallError,
    InsufficientInliersError,
    SingularHomographyError,
)
from .features import AsiftConfig, asift_schedule, detect_asift, detect_sift, match_asift, match_points
from .force import rectify_frame, total_force
from .pose import camera_center_xy, correct_pose, estimate_plane_pose, reproject

logger = logging.getLogger(__name__)

#: Frames registered with fewer inliers than this are skipped and their path
#: position extrapolated linearly.
DEFAULT_INLIER_FLOOR = 15
#: Neighbourhood of the previous frame used for matching, in frame extents.
CROP_FACTOR = 3.0
#: Warn when the first frame carries more than this load (it is assumed
#: undeformed); it is still rectified with its own sample.
FRAME1_FORCE_WARN = 0.5


@dataclass(frozen=True)
class Placement:
    """One frame's contribution to the mosaic."""

    frame_id: int
    offset_x_mm: float
    offset_y_mm: float
    weight_map: np.ndarray | None = field(repr=False, default=None)


class Mosaic:
    """Growing reconstructed surface with feather-blended placements.

    The canvas lives on the contact plane: canvas pixel = plane mm divided by
    ``pixel_pitch`` plus the canvas origin. Frame 1's centre is the plane
    origin. Placements are append-only.
    """

    def __init__(self, pixel_pitch: float):
        if pixel_pitch <= 0:
            raise ValueError("pixel pitch must be positive")
        self.pixel_pitch = float(pixel_pitch)
        self.placements: list[Placement] = []
        self._sum: np.ndarray | None = None
        self._weight: np.ndarray | None = None
        self._origin = np.zeros(2)  # canvas px of plane (0, 0)

    @property
    def is_empty(self) -> bool:
        return self._sum is None

    @property
    def reference_origin(self) -> tuple[float, float]:
        """Canvas pixel of the plane origin (frame 1 centre), (x, y)."""
        return (float(self._origin[0]), float(self._origin[1]))

    @property
    def canvas(self) -> Image:
        """Current reconstruction as an image with validity mask."""
        if self._sum is None:
            return Image(np.zeros((1, 1), dtype=np.uint8), np.zeros((1, 1), dtype=bool))
        valid = self._weight > 0
        data = np.zeros_like(self._sum)
        np.divide(self._sum, self._weight, out=data, where=valid)
        return Image(np.rint(np.clip(data, 0, 255)).astype(np.uint8), valid)

    def _grow(self, tl: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
        """Ensure the canvas covers [tl, tl + shape); returns adjusted tl."""
        h, w = shape
        if self._sum is None:
            self._sum = np.zeros((h, w))
            self._weight = np.zeros((h, w))
            self._origin = self._origin - tl
            return np.zeros(2, dtype=int)
        ch, cw = self._sum.shape
        pad_left = max(0, -int(tl[0]))
        pad_top = max(0, -int(tl[1]))
        pad_right = max(0, int(tl[0]) + w - cw)
        pad_bottom = max(0, int(tl[1]) + h - ch)
        if pad_left or pad_top or pad_right or pad_bottom:
            pads = ((pad_top, pad_bottom), (pad_left, pad_right))
            self._sum = np.pad(self._sum, pads)
            self._weight = np.pad(self._weight, pads)
            self._origin = self._origin + (pad_left, pad_top)
        return tl + (pad_left, pad_top)


def feather_weights(img: Image) -> np.ndarray:
    """Linear distance-to-edge blending weights (0 on invalid pixels)."""
    mask = img.valid_mask()
    padded = np.pad(mask, 1)
    dist = distance_transform_edt(padded)[1:-1, 1:-1]
    return np.where(mask, dist, 0.0)


def stitch(
    mosaic: Mosaic, img: Image, offset_mm: tuple[float, float], frame_id: int | None = None
) -> Mosaic:
    """Blend an image into the mosaic with its centre at ``offset_mm``.

    Overlaps are feather-averaged by distance to the mask edge; the canvas
    grows as needed. Placement on the pixel grid rounds to the nearest
    canvas pixel (at most half a pixel, recorded offsets stay exact).
    """
    if frame_id is None:
        frame_id = len(mosaic.placements) + 1
    weights = feather_weights(img)

    centre_px = mosaic._origin + np.asarray(offset_mm, dtype=float) / mosaic.pixel_pitch
    tl = np.rint(centre_px - ((img.width - 1) / 2.0, (img.height - 1) / 2.0)).astype(int)
    tl = mosaic._grow(tl, img.shape)

    x0, y0 = int(tl[0]), int(tl[1])
    region_sum = mosaic._sum[y0 : y0 + img.height, x0 : x0 + img.width]
    region_w = mosaic._weight[y0 : y0 + img.height, x0 : x0 + img.width]
    region_sum += weights * img.data.astype(float)
    region_w += weights

    mosaic.placements.append(
        Placement(
            frame_id=frame_id,
            offset_x_mm=float(offset_mm[0]),
            offset_y_mm=float(offset_mm[1]),
            weight_map=weights.astype(np.float32),
        )
    )
    return mosaic


def crop_around(mosaic: Mosaic, center_mm: tuple[float, float], width: int, height: int):
    """Crop the canvas around a plane position; returns (Image, top-left px)."""
    canvas = mosaic.canvas
    centre_px = mosaic._origin + np.asarray(center_mm, dtype=float) / mosaic.pixel_pitch
    x0 = int(np.clip(np.rint(centre_px[0] - width / 2), 0, max(canvas.width - 1, 0)))
    y0 = int(np.clip(np.rint(centre_px[1] - height / 2), 0, max(canvas.height - 1, 0)))
    x1 = min(canvas.width, x0 + width)
    y1 = min(canvas.height, y0 + height)
    crop = Image(canvas.data[y0:y1, x0:x1], canvas.valid_mask()[y0:y1, x0:x1])
    return crop, np.array([x0, y0], dtype=float)


@dataclass(frozen=True)
class PathEstimate:
    """Per-frame scanner-centre positions relative to frame 1.

    ``skipped`` lists frames whose pose could not be tracked (their entries
    are linear extrapolations); ``inlier_counts`` has one count per frame
    after the first.
    """

    entries: tuple[tuple[int, float, float], ...]
    skipped: tuple[int, ...] = ()
    inlier_counts: tuple[int, ...] = ()

    def __post_init__(self):
        if self.entries:
            first = self.entries[0]
            if abs(first[1]) > 1e-12 or abs(first[2]) > 1e-12:
                raise ValueError("path must start at the origin")

    @classmethod
    def from_rows(cls, rows: Sequence[tuple]) -> "PathEstimate":
        """Build from (frame_id, x_mm, y_mm, ...) rows, re-anchored at frame 1."""
        if not rows:
            return cls(entries=())
        x0, y0 = float(rows[0][1]), float(rows[0][2])
        return cls(
            entries=tuple(
                (int(r[0]), float(r[1]) - x0, float(r[2]) - y0) for r in rows
            )
        )

    def positions(self) -> np.ndarray:
        return np.array([[x, y] for _, x, y in self.entries], dtype=float).reshape(-1, 2)

    def frame_ids(self) -> tuple[int, ...]:
        return tuple(fid for fid, _, _ in self.entries)

    def arc_length(self) -> float:
        pos = self.positions()
        if len(pos) < 2:
            return 0.0
        return float(np.linalg.norm(np.diff(pos, axis=0), axis=1).sum())


@dataclass(frozen=True)
class PathMetrics:
    rmse_mm: float
    error_ratio_percent: float
    per_frame_errors: np.ndarray


def path_metrics(est: PathEstimate, truth: PathEstimate) -> PathMetrics:
    """Positioning error of an estimated path against ground truth.

    RMSE is over per-frame Euclidean position errors; the error ratio is
    100 x (sum of per-frame errors) / (ground-truth arc length).

    Raises:
        FrameMismatchError: frame ids differ.
    """
    if est.frame_ids() != truth.frame_ids():
        raise FrameMismatchError(
            f"paths cover different frames: {est.frame_ids()[:5]}... vs "
            f"{truth.frame_ids()[:5]}..."
        )
    if not est.entries:
        raise FrameMismatchError("paths are empty")
    errors = np.linalg.norm(est.positions() - truth.positions(), axis=1)
    rmse = float(np.sqrt(np.mean(errors**2)))
    total = float(errors.sum())
    length = truth.arc_length()
    if length > 0:
        ratio = 100.0 * total / length
    else:
        ratio = 0.0 if total == 0.0 else float("inf")
    return PathMetrics(rmse_mm=rmse, error_ratio_percent=ratio, per_frame_errors=errors)


@dataclass(frozen=True)
class ReconstructionSettings:
    """Tuning knobs of the reconstruction loop."""

    ransac_seed: int = 0
    ransac_threshold_px: float = 1.0
    ransac_max_iters: int = 2000
    inlier_floor: int = DEFAULT_INLIER_FLOOR
    frame_max_features: int = 1200
    ref_max_features: int = 6000
    match_ratio: float = 0.8
    interpolation: str = "bilinear"


_TRACKING_ERRORS = (
    InsufficientInliersError,
    CheiralityError,
    DegenerateConfigurationError,
    SingularHomographyError,
    ImageTooSmallError,
    ValueError,
)


def reconstruct(
    frames: Sequence[Image],
    forces: Sequence[ForceSample],
    mp: MaterialParams,
    intrinsics: CameraIntrinsics,
    cfg: AsiftConfig,
    settings: ReconstructionSettings | None = None,
) -> tuple[Mosaic, PathEstimate]:
    """Run the sequential reconstruction loop over an aligned frame sequence.

    Frame 1 is taken as the undeformed anchor. For each following frame:
    force rectification, plain detection on the mosaic neighbourhood,
    schedule detection on the rectified frame, per-view matching, robust
    pose, pose correction and re-projection, then feathered stitching.
    Frames that cannot be tracked are skipped with their position
    extrapolated linearly and flagged.
    """
    if len(frames) != len(forces):
        raise FrameMismatchError(
            f"{len(frames)} frames vs {len(forces)} force samples"
        )
    if len(frames) < 2:
        raise ValueError("need at least two frames")
    s = settings or ReconstructionSettings()

    frame_cfg = dataclasses.replace(cfg, max_features=s.frame_max_features)
    ref_cfg = dataclasses.replace(cfg, max_features=s.ref_max_features)

    first = frames[0]
    if total_force(forces[0]) > FRAME1_FORCE_WARN:
        logger.warning(
            "frame %d carries %.2f N but is the undeformed anchor; "
            "rectifying it against zero reference",
            forces[0].frame_id,
            total_force(forces[0]),
        )
        first = rectify_frame(first, forces[0], mp, intrinsics, s.interpolation)

    mosaic = Mosaic(intrinsics.pixel_pitch)
    stitch(mosaic, first, (0.0, 0.0), frame_id=forces[0].frame_id)

    entries: list[tuple[int, float, float]] = [(forces[0].frame_id, 0.0, 0.0)]
    skipped: list[int] = []
    inlier_counts: list[int] = []
    position = np.zeros(2)
    placement_pos = np.zeros(2)
    velocity = np.zeros(2)

    for idx in range(1, len(frames)):
        frame_id = forces[idx].frame_id
        tracked = False
        try:
            rectified = rectify_frame(
                frames[idx], forces[idx], mp, intrinsics, s.interpolation
            )
            crop, crop_tl = crop_around(
                mosaic,
                tuple(placement_pos),
                int(CROP_FACTOR * frames[idx].width),
                int(CROP_FACTOR * frames[idx].height),
            )
            ref_feats = detect_sift(crop, ref_cfg)
            frame_feats = detect_asift(rectified, frame_cfg)
            matches = match_asift(ref_feats, frame_feats, s.match_ratio)
            if len(matches) < max(8, s.inlier_floor):
                raise InsufficientInliersError(
                    f"only {len(matches)} raw matches for frame {frame_id}"
                )
            crop_pts, frame_pts = match_points(ref_feats, frame_feats, matches)
            ref_pts = (
                crop_pts
                + crop_tl
                - mosaic._origin
                + (intrinsics.cx, intrinsics.cy)
            )
            result = estimate_plane_pose(
                ref_pts,
                frame_pts,
                intrinsics,
                threshold_px=s.ransac_threshold_px,
                max_iters=s.ransac_max_iters,
                seed=s.ransac_seed + idx,
            )
            if len(result.inlier_indices) < s.inlier_floor:
                raise InsufficientInliersError(
                    f"{len(result.inlier_indices)} pose inliers for frame {frame_id}"
                )
            tracked = True
        except _TRACKING_ERRORS as exc:
            logger.warning("frame %d skipped: %s", frame_id, exc)

        if not tracked:
            position = position + velocity
            placement_pos = placement_pos + velocity
            entries.append((frame_id, float(position[0]), float(position[1])))
            skipped.append(frame_id)
            inlier_counts.append(0)
            continue

        pose = result.pose
        corrected = correct_pose(pose)
        projected = reproject(rectified, pose, corrected, intrinsics, s.interpolation)
        new_placement = -pose.T[:2]
        stitch(mosaic, projected, tuple(new_placement), frame_id=frame_id)

        new_position = np.array(camera_center_xy(pose))
        velocity = new_position - position
        position = new_position
        placement_pos = new_placement
        entries.append((frame_id, float(position[0]), float(position[1])))
        inlier_counts.append(len(result.inlier_indices))

    path = PathEstimate(
        entries=tuple(entries),
        skipped=tuple(skipped),
        inlier_counts=tuple(inlier_counts),
    )
    return mosaic, path


class SurfaceReconstructor(BaseEstimator):
    """Estimator wrapper around :func:`reconstruct`.

    ``fit`` takes a sequence of (Image, ForceSample) pairs and exposes the
    results as ``mosaic_`` and ``path_``.
    """

    def __init__(
        self,
        material=None,
        intrinsics=None,
        stretch_ratio=1.13,
        peak_threshold=1.0,
        edge_threshold=10.0,
        ransac_seed=0,
        ransac_threshold_px=1.0,
        inlier_floor=DEFAULT_INLIER_FLOOR,
        frame_max_features=1200,
        ref_max_features=6000,
        interpolation="bilinear",
    ):
        self.material = material
        self.intrinsics = intrinsics
        self.stretch_ratio = stretch_ratio
        self.peak_threshold = peak_threshold
        self.edge_threshold = edge_threshold
        self.ransac_seed = ransac_seed
        self.ransac_threshold_px = ransac_threshold_px
        self.inlier_floor = inlier_floor
        self.frame_max_features = frame_max_features
        self.ref_max_features = ref_max_features
        self.interpolation = interpolation

    def fit(self, X, y=None):
        if self.material is None or self.intrinsics is None:
            raise ValueError("material and intrinsics must be set")
        frames = [img for img, _ in X]
        forces = [fs for _, fs in X]
        cfg = asift_schedule(
            self.stretch_ratio,
            peak_threshold=self.peak_threshold,
            edge_threshold=self.edge_threshold,
        )
        settings = ReconstructionSettings(
            ransac_seed=self.ransac_seed,
            ransac_threshold_px=self.ransac_threshold_px,
            inlier_floor=self.inlier_floor,
            frame_max_features=self.frame_max_features,
            ref_max_features=self.ref_max_features,
            interpolation=self.interpolation,
        )
        self.mosaic_, self.path_ = reconstruct(
            frames, forces, self.material, self.intrinsics, cfg, settings
        )
        return self

    def score(self, X, y):
        """Negative RMSE against a ground-truth :class:`PathEstimate`."""
        return -path_metrics(self.path_, y).rmse_mm
