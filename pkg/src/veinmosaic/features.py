"""SIFT detection plus the two-tilt-level affine extension and matching.

The affine extension runs SIFT on the original image and on nine
rotated-then-compressed views at a single extra tilt level derived from the
observed stretch ratio, then maps every feature back into the original frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import cv2
import numpy as np
from scipy.ndimage import distance_transform_edt
from sklearn.base import BaseEstimator, TransformerMixin

from .core import Image
from .exceptions import ImageTooSmallError

#: Rotation step (degrees) of the tilted-view schedule.
ROTATION_STEP_DEG = 20.0
#: Gaussian scale-space base sigma of the detector.
SIFT_SIGMA = 1.6
#: Scales sampled per octave.
SIFT_OCTAVE_LAYERS = 3
#: A feature is dropped when its descriptor support (4 x scale) overlaps the
#: invalid part of the mask.
MASK_MARGIN_SCALES = 4.0


class Match(NamedTuple):
    """Correspondence between feature lists: indices plus descriptor distance."""

    index_a: int
    index_b: int
    distance: float


@dataclass(frozen=True)
class Feature:
    """A detected keypoint in original-image coordinates.

    Attributes:
        x, y: sub-pixel location, always in the original image frame.
        scale: keypoint radius in pixels.
        orientation: dominant gradient direction, radians.
        descriptor: 128 non-negative floats, L2-normalized.
        provenance: (tilt t, rotation phi in degrees) of the simulated view
            the feature was detected in; (1, 0) for the identity view.
    """

    x: float
    y: float
    scale: float
    orientation: float
    descriptor: np.ndarray
    provenance: tuple[float, float] = (1.0, 0.0)

    def __post_init__(self):
        d = np.asarray(self.descriptor, dtype=np.float32).reshape(128)
        object.__setattr__(self, "descriptor", d)
        d.setflags(write=False)


@dataclass(frozen=True)
class AsiftConfig:
    """Tilt/rotation sampling schedule and detector thresholds.

    Build with :func:`asift_schedule`; the derived fields must satisfy
    delta_t = sqrt(stretch_ratio) and the fixed two-level schedule.
    """

    stretch_ratio: float
    delta_t: float
    tilt_levels: tuple[float, ...]
    rotations_deg: tuple[float, ...]
    peak_threshold: float = 1.0
    edge_threshold: float = 10.0
    max_features: int = 0

    def __post_init__(self):
        if self.stretch_ratio < 1.0:
            raise ValueError("stretch ratio must be >= 1")
        if abs(self.delta_t - math.sqrt(self.stretch_ratio)) > 1e-12:
            raise ValueError("delta_t must equal sqrt(stretch_ratio)")
        expected_levels = (1.0,) if self.delta_t == 1.0 else (1.0, self.delta_t)
        if self.tilt_levels != expected_levels:
            raise ValueError(f"tilt levels must be {expected_levels}")
        expected_rot = () if self.delta_t == 1.0 else tuple(
            float(d) for d in np.arange(0.0, 180.0 - 1e-9, ROTATION_STEP_DEG)
        )
        if self.rotations_deg != expected_rot:
            raise ValueError(f"rotations must be {expected_rot}")

    @property
    def latitude_angle(self) -> float:
        """Tilt angle of the extra level, acos(1/delta_t), radians."""
        return math.acos(1.0 / self.delta_t)

    @property
    def predicted_compute_factor(self) -> float:
        """Predicted processed-area factor relative to plain detection."""
        return 1.0 + len(self.rotations_deg) * math.cos(self.latitude_angle)


def tilt_from_angle(theta: float) -> float:
    """Tilt parameter for a camera tilt angle: t = 1 / cos(theta)."""
    if not 0.0 <= theta < math.pi / 2:
        raise ValueError("tilt angle must be in [0, pi/2)")
    return 1.0 / math.cos(theta)


def asift_schedule(
    stretch_ratio: float,
    peak_threshold: float = 1.0,
    edge_threshold: float = 10.0,
    max_features: int = 0,
) -> AsiftConfig:
    """Build the two-level schedule for an observed stretch ratio R.

    The extra tilt level is the geometric mean sqrt(R), so any actual tilt in
    [1, R] is within a factor sqrt(R) of a sampled view. R = 1 degenerates to
    plain detection.
    """
    if stretch_ratio < 1.0:
        raise ValueError("stretch ratio must be >= 1")
    delta_t = math.sqrt(stretch_ratio)
    if delta_t == 1.0:
        levels: tuple[float, ...] = (1.0,)
        rotations: tuple[float, ...] = ()
    else:
        levels = (1.0, delta_t)
        rotations = tuple(float(d) for d in np.arange(0.0, 180.0 - 1e-9, ROTATION_STEP_DEG))
    return AsiftConfig(
        stretch_ratio=stretch_ratio,
        delta_t=delta_t,
        tilt_levels=levels,
        rotations_deg=rotations,
        peak_threshold=peak_threshold,
        edge_threshold=edge_threshold,
        max_features=max_features,
    )


def _make_sift(cfg: AsiftConfig) -> cv2.SIFT:
    # cv2 rejects DoG extrema with |response| * layers < contrastThreshold * 255;
    # peak_threshold is expressed in DoG units on the 0..255 luminance scale.
    contrast = cfg.peak_threshold * SIFT_OCTAVE_LAYERS / 255.0
    return cv2.SIFT_create(
        nfeatures=cfg.max_features,
        nOctaveLayers=SIFT_OCTAVE_LAYERS,
        contrastThreshold=contrast,
        edgeThreshold=cfg.edge_threshold,
        sigma=SIFT_SIGMA,
    )


def detect_sift(img: Image, cfg: AsiftConfig) -> list[Feature]:
    """Detect SIFT features, honouring the validity mask.

    Keypoints are found as DoG extrema over the scale-space pyramid, edge
    rejected, sub-pixel refined and described by 128-D gradient histograms.
    Features whose descriptor support overlaps invalid pixels are dropped.

    Raises:
        ImageTooSmallError: fewer than 32x32 valid pixels.
    """
    valid = img.valid_mask()
    if min(img.width, img.height) < 32 or valid.sum() < 32 * 32:
        raise ImageTooSmallError(
            f"need at least 32x32 valid pixels, image is {img.width}x{img.height} "
            f"with {int(valid.sum())} valid"
        )
    sift = _make_sift(cfg)
    cv_mask = None
    if img.mask is not None:
        cv_mask = (valid * np.uint8(255)).astype(np.uint8)
    keypoints, descriptors = sift.detectAndCompute(img.data, cv_mask)
    if not keypoints or descriptors is None:
        return []

    if img.mask is not None:
        # distance (px) from each valid pixel to the nearest invalid one
        margin = distance_transform_edt(valid)
    else:
        margin = None

    feats = []
    h, w = img.shape
    for kp, desc in zip(keypoints, descriptors):
        x, y = kp.pt
        if not (0.0 <= x <= w - 1 and 0.0 <= y <= h - 1):
            continue
        scale = kp.size / 2.0
        if margin is not None:
            iy = min(int(round(y)), h - 1)
            ix = min(int(round(x)), w - 1)
            if margin[iy, ix] < MASK_MARGIN_SCALES * scale:
                continue
        norm = float(np.linalg.norm(desc))
        if norm == 0.0:
            continue
        feats.append(
            Feature(
                x=float(x),
                y=float(y),
                scale=float(scale),
                orientation=math.radians(kp.angle % 360.0),
                descriptor=desc / norm,
            )
        )
    feats.sort(key=lambda f: (f.x, f.y, f.scale, f.orientation))
    return feats


@dataclass(frozen=True)
class TiltView:
    """A simulated affine view and the transform that produced it."""

    image: Image
    affine: np.ndarray = field(repr=False)  # 2x3, original -> view
    tilt: float
    rotation_deg: float

    def to_original(self, pts: np.ndarray) -> np.ndarray:
        """Map (N, 2) view coordinates back into the original frame."""
        A = self.affine[:, :2]
        b = self.affine[:, 2]
        return (np.asarray(pts, dtype=float) - b) @ np.linalg.inv(A).T


def _tilt_view(img: Image, tilt: float, phi_deg: float) -> TiltView:
    """Rotate by phi on an expanded canvas, then compress y by the tilt."""
    h, w = img.shape
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    rot = cv2.getRotationMatrix2D((cx, cy), phi_deg, 1.0)
    corners = np.array([[0, 0], [w - 1, 0], [0, h - 1], [w - 1, h - 1]], dtype=float)
    rc = corners @ rot[:, :2].T + rot[:, 2]
    x0, y0 = rc.min(axis=0)
    x1, y1 = rc.max(axis=0)
    rot[:, 2] -= (x0, y0)
    rw = int(math.ceil(x1 - x0)) + 1
    rh = int(math.ceil(y1 - y0)) + 1

    rotated = cv2.warpAffine(img.data, rot, (rw, rh), flags=cv2.INTER_LINEAR)
    mask = (img.valid_mask() * np.uint8(255)).astype(np.uint8)
    rotated_mask = cv2.warpAffine(mask, rot, (rw, rh), flags=cv2.INTER_LINEAR)

    # directional anti-alias before subsampling the y axis
    sigma = 0.8 * math.sqrt(tilt * tilt - 1.0)
    if sigma > 0.01:
        rotated = cv2.GaussianBlur(rotated, (1, 0), sigmaX=0.0, sigmaY=sigma)

    scale = np.array([[1.0, 0.0, 0.0], [0.0, 1.0 / tilt, 0.0]])
    th = max(2, int(round(rh / tilt)))
    view = cv2.warpAffine(rotated, scale, (rw, th), flags=cv2.INTER_LINEAR)
    view_mask = cv2.warpAffine(rotated_mask, scale, (rw, th), flags=cv2.INTER_LINEAR)

    affine = np.hstack([scale[:, :2] @ rot[:, :2], (scale[:, :2] @ rot[:, 2])[:, None]])
    return TiltView(
        image=Image(view, view_mask >= 254),
        affine=affine,
        tilt=tilt,
        rotation_deg=phi_deg,
    )


def simulate_tilt_views(img: Image, cfg: AsiftConfig) -> list[TiltView]:
    """All simulated views of the schedule, identity view first."""
    identity = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    views = [TiltView(image=img, affine=identity, tilt=1.0, rotation_deg=0.0)]
    for t in cfg.tilt_levels:
        if t == 1.0:
            continue
        for phi in cfg.rotations_deg:
            views.append(_tilt_view(img, t, phi))
    return views


def detect_asift(img: Image, cfg: AsiftConfig) -> list[Feature]:
    """Detect features over the full tilt/rotation schedule.

    The identity view contributes plain SIFT features unchanged; every other
    view is detected independently and its features are mapped back through
    the inverse tilt and rotation. Features landing outside the original
    bounds (or its mask) are dropped. Output order follows the schedule, so
    identical input produces an identical list.
    """
    results = list(detect_sift(img, cfg))
    valid = img.valid_mask()
    h, w = img.shape
    for view in simulate_tilt_views(img, cfg)[1:]:
        try:
            view_feats = detect_sift(view.image, cfg)
        except ImageTooSmallError:
            continue
        if not view_feats:
            continue
        pts = np.array([[f.x, f.y] for f in view_feats])
        orig = view.to_original(pts)
        Ainv = np.linalg.inv(view.affine[:, :2])
        scale_gain = math.sqrt(abs(np.linalg.det(Ainv)))
        for f, (ox, oy) in zip(view_feats, orig):
            if not (0.0 <= ox <= w - 1 and 0.0 <= oy <= h - 1):
                continue
            if not valid[int(round(oy)), int(round(ox))]:
                continue
            direction = Ainv @ np.array([math.cos(f.orientation), math.sin(f.orientation)])
            results.append(
                Feature(
                    x=float(ox),
                    y=float(oy),
                    scale=f.scale * scale_gain,
                    orientation=math.atan2(direction[1], direction[0]) % (2 * math.pi),
                    descriptor=f.descriptor,
                    provenance=(view.tilt, view.rotation_deg),
                )
            )
    return results


def _descriptor_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise L2 distances between unit descriptors."""
    gram = a @ b.T
    d2 = np.maximum(2.0 - 2.0 * gram, 0.0)
    return np.sqrt(d2)


def match_features(
    a: Sequence[Feature], b: Sequence[Feature], ratio: float = 0.8
) -> list[Match]:
    """Mutual nearest-neighbour matches passing the ratio test.

    One-to-one by construction: a pair is kept only when each side is the
    other's nearest neighbour and the best distance beats ``ratio`` times the
    second best.
    """
    if not a or not b:
        raise ValueError("feature lists must be non-empty")
    da = np.stack([f.descriptor for f in a])
    db = np.stack([f.descriptor for f in b])
    dist = _descriptor_distances(da, db)

    best_b = np.argmin(dist, axis=1)
    best_a = np.argmin(dist, axis=0)
    matches = []
    for i, j in enumerate(best_b):
        if best_a[j] != i:
            continue
        d1 = dist[i, j]
        if dist.shape[1] > 1:
            row = dist[i].copy()
            row[j] = np.inf
            d2 = row.min()
            if not d1 < ratio * d2:
                continue
        matches.append(Match(i, int(j), float(d1)))
    return matches


def match_asift(
    ref: Sequence[Feature],
    candidates: Sequence[Feature],
    ratio: float = 0.8,
    exclusion_px: float = 1.0,
) -> list[Match]:
    """Match a plain feature list against a multi-view feature list.

    Candidates are grouped by provenance and matched per view, so copies of
    the same physical point detected in several views never compete inside
    one ratio test. The per-view matches are merged one-to-one, best
    descriptor distance first; a candidate within ``exclusion_px`` of an
    already matched candidate is a duplicate placement and is dropped.
    """
    if not ref or not candidates:
        raise ValueError("feature lists must be non-empty")
    groups: dict[tuple[float, float], list[int]] = {}
    for idx, f in enumerate(candidates):
        groups.setdefault(f.provenance, []).append(idx)

    pooled: list[Match] = []
    for key in sorted(groups):
        indices = groups[key]
        sub = [candidates[i] for i in indices]
        for m in match_features(ref, sub, ratio):
            pooled.append(Match(m.index_a, indices[m.index_b], m.distance))

    pooled.sort(key=lambda m: (m.distance, m.index_a, m.index_b))
    used_a: set[int] = set()
    kept: list[Match] = []
    kept_pts: list[tuple[float, float]] = []
    r2 = exclusion_px * exclusion_px
    for m in pooled:
        if m.index_a in used_a:
            continue
        fx, fy = candidates[m.index_b].x, candidates[m.index_b].y
        if any((fx - px) ** 2 + (fy - py) ** 2 < r2 for px, py in kept_pts):
            continue
        used_a.add(m.index_a)
        kept.append(m)
        kept_pts.append((fx, fy))
    kept.sort(key=lambda m: m.index_a)
    return kept


def match_points(
    a: Sequence[Feature], b: Sequence[Feature], matches: Sequence[Match]
) -> tuple[np.ndarray, np.ndarray]:
    """Matched coordinates as two (N, 2) arrays."""
    pa = np.array([[a[m.index_a].x, a[m.index_a].y] for m in matches], dtype=float)
    pb = np.array([[b[m.index_b].x, b[m.index_b].y] for m in matches], dtype=float)
    return pa.reshape(-1, 2), pb.reshape(-1, 2)


class AsiftDetector(BaseEstimator, TransformerMixin):
    """Transformer turning images into feature lists.

    With ``use_tilt_views=True`` the full schedule is used; otherwise plain
    detection only.
    """

    def __init__(
        self,
        stretch_ratio=1.13,
        peak_threshold=1.0,
        edge_threshold=10.0,
        max_features=0,
        use_tilt_views=True,
    ):
        self.stretch_ratio = stretch_ratio
        self.peak_threshold = peak_threshold
        self.edge_threshold = edge_threshold
        self.max_features = max_features
        self.use_tilt_views = use_tilt_views

    def _config(self) -> AsiftConfig:
        return asift_schedule(
            self.stretch_ratio,
            peak_threshold=self.peak_threshold,
            edge_threshold=self.edge_threshold,
            max_features=self.max_features,
        )

    def fit(self, X=None, y=None):
        self._config()
        return self

    def transform(self, X):
        cfg = self._config()
        detect = detect_asift if self.use_tilt_views else detect_sift
        return [detect(img, cfg) for img in X]
