"""Material constant estimation from calibration captures.

Hooke's constant comes from sensor force differences at known reference
tilts; Young's modulus from the radial stretch of matched features between
an unloaded and a loaded capture of the same spot.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator

from .core import CameraIntrinsics, ForceSample, Image, MaterialParams
from .exceptions import (
    InsufficientExcitationError,
    NoMatchesError,
    TiltedCaptureError,
)
from .features import asift_schedule, detect_sift, match_features, match_points
from .force import total_force

#: Reference angles smaller than this carry no usable excitation.
MIN_EXCITATION_RAD = math.radians(1.0)
#: Calibration captures must be near-normal.
MAX_CALIBRATION_TILT_RAD = math.radians(2.0)


def calibrate_hooke(
    samples: Sequence[tuple[ForceSample, float]], sensor_sep_x: float
) -> float:
    """Least-squares Hooke constant from angle-referenced force samples.

    Each sample inverts the tilt relation: f2 - f1 = 2 k Sx sin(theta_x).
    Samples with |theta_x| below one degree are ignored. Three or more
    excited samples are recommended.

    Raises:
        InsufficientExcitationError: no sample has a usable reference angle.
    """
    diffs = []
    excitations = []
    for fs, theta_x in samples:
        if abs(theta_x) <= MIN_EXCITATION_RAD:
            continue
        diffs.append(fs.f2 - fs.f1)
        excitations.append(2.0 * sensor_sep_x * math.sin(theta_x))
    if not diffs:
        raise InsufficientExcitationError(
            "all reference angles are below 1 degree; cannot estimate kappa"
        )
    d = np.asarray(diffs)
    x = np.asarray(excitations)
    return float(np.dot(d, x) / np.dot(x, x))


def _radial_scale_ransac(
    r_unloaded: np.ndarray,
    r_loaded: np.ndarray,
    threshold_px: float = 1.5,
    max_iters: int = 200,
    seed: int = 0,
) -> np.ndarray:
    """Inlier mask of a one-parameter radial-scale model r = s r'."""
    rng = np.random.default_rng(seed)
    n = len(r_unloaded)
    best = np.ones(n, dtype=bool)
    best_count = 0
    usable = r_loaded > 1e-9
    for _ in range(max_iters):
        i = int(rng.integers(n))
        if not usable[i]:
            continue
        s = r_unloaded[i] / r_loaded[i]
        inliers = np.abs(r_unloaded - s * r_loaded) <= threshold_px
        count = int(inliers.sum())
        if count > best_count:
            best_count = count
            best = inliers
    return best


def _displacement_centre(pts_a: np.ndarray, pts_b: np.ndarray) -> np.ndarray:
    """Centre of a radial displacement field d = a (p - c).

    Fitting d = a p + b linearly gives the centre c = -b / a; degenerate
    (near-zero) scaling falls back to the point centroid.
    """
    d = pts_b - pts_a
    A = np.column_stack([pts_a.reshape(-1), np.tile(np.eye(2), (len(pts_a), 1))])
    coef, *_ = np.linalg.lstsq(A, d.reshape(-1), rcond=None)
    a, b = coef[0], coef[1:]
    if abs(a) < 1e-6:
        return pts_a.mean(axis=0)
    return -b / a


def calibrate_youngs(
    pairs: Sequence[tuple[Image, Image, ForceSample]],
    mp_partial: MaterialParams,
    seed: int = 0,
) -> float:
    """Young's modulus from unloaded/loaded feature displacement.

    For each pair, features are matched between the unloaded and loaded
    captures; the radial stretch (r' - r) grows linearly with r' and its
    slope equals (v / E) sigma_z. The slope is fit jointly over all pairs by
    least squares, after a radial-scale RANSAC per pair and one 3-sigma
    robust refit; E = v sigma_z / slope. Only the Poisson ratio and scanner
    area of ``mp_partial`` are used.

    Raises:
        TiltedCaptureError: a loaded capture was taken at |tilt| > 2 degrees.
        NoMatchesError: a pair yields no feature matches.
        InsufficientExcitationError: all pairs carry (near-)zero load.
    """
    cfg = asift_schedule(1.0)
    xs: list[np.ndarray] = []
    ys: list[np.ndarray] = []
    for k, (unloaded, loaded, fs) in enumerate(pairs):
        # arcsine inversion of the pair differences, without needing kappa
        for diff, sep in ((fs.f2 - fs.f1, mp_partial.sensor_sep_x),
                          (fs.f4 - fs.f3, mp_partial.sensor_sep_y)):
            arg = diff / (2.0 * mp_partial.hooke_constant * sep)
            if abs(arg) <= 1.0 and abs(math.asin(arg)) > MAX_CALIBRATION_TILT_RAD:
                raise TiltedCaptureError(
                    f"pair {k + 1}: capture tilted by {math.degrees(math.asin(arg)):.2f} deg"
                )
        fz = total_force(fs)
        sigma = fz / mp_partial.scanner_area
        if abs(sigma) < 1e-9:
            continue

        feats_u = detect_sift(unloaded, cfg)
        feats_l = detect_sift(loaded, cfg)
        if not feats_u or not feats_l:
            raise NoMatchesError(f"pair {k + 1}: no features detected")
        matches = match_features(feats_u, feats_l)
        if len(matches) < 8:
            raise NoMatchesError(f"pair {k + 1}: only {len(matches)} matches")
        pts_u, pts_l = match_points(feats_u, feats_l, matches)

        centre = _displacement_centre(pts_u, pts_l)
        r_u = np.linalg.norm(pts_u - centre, axis=1)
        r_l = np.linalg.norm(pts_l - centre, axis=1)
        keep = _radial_scale_ransac(r_u, r_l, seed=seed + k)
        r_u, r_l = r_u[keep], r_l[keep]
        # (r' - r) = slope * r' with slope = (v / E) sigma, so regress
        # against sigma * r' to pool pairs with different loads
        xs.append(sigma * r_l)
        ys.append(r_l - r_u)

    if not xs:
        raise InsufficientExcitationError("no pair carries a measurable load")
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    beta = float(np.dot(x, y) / np.dot(x, x))
    resid = y - beta * x
    sd = resid.std()
    if sd > 0:
        keep = np.abs(resid) <= 3.0 * sd
        if keep.sum() >= 8:
            x, y = x[keep], y[keep]
            beta = float(np.dot(x, y) / np.dot(x, x))
    if abs(beta) < 1e-12:
        raise InsufficientExcitationError("measured stretch is zero; E indeterminate")
    return mp_partial.poisson_ratio / beta


class HookeCalibrator(BaseEstimator):
    """Estimator fitting kappa from (ForceSample, reference theta_x) pairs."""

    def __init__(self, sensor_sep_x=53.0):
        self.sensor_sep_x = sensor_sep_x

    def fit(self, X, y=None):
        self.hooke_constant_ = calibrate_hooke(X, self.sensor_sep_x)
        return self


class YoungsModulusCalibrator(BaseEstimator):
    """Estimator fitting E from (unloaded, loaded, ForceSample) triples."""

    def __init__(self, material=None, seed=0):
        self.material = material
        self.seed = seed

    def fit(self, X, y=None):
        if self.material is None:
            raise ValueError("material (for Poisson ratio and area) must be set")
        self.youngs_modulus_ = calibrate_youngs(X, self.material, self.seed)
        return self
