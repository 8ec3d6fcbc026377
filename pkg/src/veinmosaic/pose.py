"""Robust relative pose estimation and planar re-projection.

The estimation chain is RANSAC over the normalized eight-point algorithm,
essential-matrix factorization with a cheirality test, and a planar fallback:
when the inlier structure is explained by a homography (the scene is the
contact plane, for which F is not unique), the pose is recovered from the
plane-induced homography instead. Pose correction zeroes rotation and the
z translation, and re-projection applies the induced homography.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._interp import resample_image
from .core import CameraIntrinsics, Image, Pose
from .exceptions import (
    CheiralityError,
    DegenerateConfigurationError,
    InsufficientInliersError,
    SingularHomographyError,
)

#: Points-vs-line rank threshold: the design matrix of the eight-point solve
#: must have at least rank 6 (coplanar scenes give exactly 6, collinear less).
_RANK_TOL = 1e-9


@dataclass(frozen=True)
class FundamentalMatrix:
    """Rank-2, Frobenius-normalized fundamental matrix."""

    matrix: np.ndarray

    def __post_init__(self):
        F = np.asarray(self.matrix, dtype=float)
        if F.shape != (3, 3):
            raise ValueError("fundamental matrix must be 3x3")
        if abs(np.linalg.norm(F) - 1.0) > 1e-12:
            raise ValueError("fundamental matrix must have unit Frobenius norm")
        if abs(np.linalg.det(F)) > 1e-9:
            raise ValueError("fundamental matrix must be rank 2")
        object.__setattr__(self, "matrix", F)
        F.setflags(write=False)

    @classmethod
    def from_array(cls, F: np.ndarray) -> "FundamentalMatrix":
        """Normalize scale and sign, then validate."""
        F = np.asarray(F, dtype=float)
        norm = np.linalg.norm(F)
        if norm == 0:
            raise ValueError("zero matrix is not a fundamental matrix")
        F = F / norm
        anchor = np.unravel_index(np.argmax(np.abs(F)), F.shape)
        if F[anchor] < 0:
            F = -F
        return cls(F)


@dataclass(frozen=True)
class RansacResult:
    """Best consensus model with its inlier set."""

    model: FundamentalMatrix
    inlier_indices: np.ndarray
    iterations_used: int

    def __post_init__(self):
        idx = np.asarray(self.inlier_indices, dtype=int)
        object.__setattr__(self, "inlier_indices", idx)
        idx.setflags(write=False)


def _homogeneous(pts: np.ndarray) -> np.ndarray:
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    return np.hstack([pts, np.ones((len(pts), 1))])


def _hartley_transform(pts: np.ndarray) -> np.ndarray:
    centroid = pts.mean(axis=0)
    dist = np.linalg.norm(pts - centroid, axis=1).mean()
    scale = np.sqrt(2.0) / max(dist, 1e-12)
    return np.array(
        [
            [scale, 0.0, -scale * centroid[0]],
            [0.0, scale, -scale * centroid[1]],
            [0.0, 0.0, 1.0],
        ]
    )


def eight_point(
    pts1: np.ndarray,
    pts2: np.ndarray,
    intrinsics: CameraIntrinsics | None = None,
) -> FundamentalMatrix:
    """Normalized eight-point estimate of F with x2' F x1 = 0.

    Point normalization uses the inverse intrinsic matrix when provided,
    otherwise the data-driven Hartley transform. Rank 2 is enforced by
    truncating the smallest singular value.

    Raises:
        DegenerateConfigurationError: design matrix rank below 6 (e.g. all
            points collinear). Coplanar scenes (rank exactly 6) pass and
            yield one member of the consistent family.
    """
    pts1 = np.asarray(pts1, dtype=float).reshape(-1, 2)
    pts2 = np.asarray(pts2, dtype=float).reshape(-1, 2)
    if len(pts1) != len(pts2):
        raise ValueError("point lists must have equal length")
    if len(pts1) < 8:
        raise ValueError(f"need at least 8 correspondences, got {len(pts1)}")

    if intrinsics is not None:
        T1 = T2 = np.linalg.inv(intrinsics.matrix)
    else:
        T1 = _hartley_transform(pts1)
        T2 = _hartley_transform(pts2)
    h1 = _homogeneous(pts1) @ T1.T
    h2 = _homogeneous(pts2) @ T2.T

    A = np.einsum("ni,nj->nij", h2, h1).reshape(-1, 9)
    _, s, Vt = np.linalg.svd(A)
    if len(s) < 6 or s[5] / s[0] < _RANK_TOL:
        raise DegenerateConfigurationError(
            "correspondences are rank-deficient (collinear or repeated points)"
        )
    F = Vt[-1].reshape(3, 3)

    U, sv, Vt2 = np.linalg.svd(F)
    F = U @ np.diag([sv[0], sv[1], 0.0]) @ Vt2
    F = T2.T @ F @ T1
    return FundamentalMatrix.from_array(F)


def sampson_distance(F: FundamentalMatrix, pts1: np.ndarray, pts2: np.ndarray) -> np.ndarray:
    """First-order geometric distance (px) to the epipolar constraint."""
    M = F.matrix
    h1 = _homogeneous(pts1)
    h2 = _homogeneous(pts2)
    Fx1 = h1 @ M.T
    Ftx2 = h2 @ M
    num = np.sum(h2 * Fx1, axis=1)
    denom = Fx1[:, 0] ** 2 + Fx1[:, 1] ** 2 + Ftx2[:, 0] ** 2 + Ftx2[:, 1] ** 2
    return np.abs(num) / np.sqrt(np.maximum(denom, 1e-300))


def ransac_fundamental(
    pts1: np.ndarray,
    pts2: np.ndarray,
    threshold_px: float = 1.0,
    max_iters: int = 2000,
    seed: int = 0,
    confidence: float = 0.999,
    intrinsics: CameraIntrinsics | None = None,
) -> RansacResult:
    """RANSAC over eight-point minimal samples, deterministic under ``seed``.

    The consensus score is the Sampson inlier count; the winner is refit on
    all of its inliers and the inlier set is re-evaluated against the refit
    model. Iterations stop early once the adaptive confidence bound is met.

    Raises:
        InsufficientInliersError: best consensus below 8.
    """
    pts1 = np.asarray(pts1, dtype=float).reshape(-1, 2)
    pts2 = np.asarray(pts2, dtype=float).reshape(-1, 2)
    n = len(pts1)
    if n < 8:
        raise ValueError(f"need at least 8 correspondences, got {n}")
    rng = np.random.default_rng(seed)

    best_count = 0
    best_inliers: np.ndarray | None = None
    best_model: FundamentalMatrix | None = None
    needed = max_iters
    it = 0
    while it < min(max_iters, needed):
        it += 1
        sample = rng.choice(n, size=8, replace=False)
        try:
            F = eight_point(pts1[sample], pts2[sample], intrinsics)
        except DegenerateConfigurationError:
            continue
        inliers = sampson_distance(F, pts1, pts2) <= threshold_px
        count = int(inliers.sum())
        if count > best_count:
            best_count = count
            best_inliers = inliers
            best_model = F
            w = count / n
            if w >= 1.0:
                needed = it
            else:
                needed = int(
                    np.ceil(np.log(1.0 - confidence) / np.log(1.0 - w**8 + 1e-300))
                )

    if best_model is None or best_count < 8:
        raise InsufficientInliersError(
            f"best consensus has {best_count} inliers (need 8)"
        )

    idx = np.flatnonzero(best_inliers)
    try:
        refit = eight_point(pts1[idx], pts2[idx], intrinsics)
        refit_inliers = sampson_distance(refit, pts1, pts2) <= threshold_px
        if int(refit_inliers.sum()) >= 8:
            best_model = refit
            idx = np.flatnonzero(refit_inliers)
    except DegenerateConfigurationError:
        pass
    return RansacResult(model=best_model, inlier_indices=idx, iterations_used=it)


def _triangulate(P1: np.ndarray, P2: np.ndarray, x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    """Linear (DLT) triangulation of normalized image points, (N, 3)."""
    out = np.empty((len(x1), 3))
    for i, (a, b) in enumerate(zip(x1, x2)):
        A = np.stack(
            [
                a[0] * P1[2] - P1[0],
                a[1] * P1[2] - P1[1],
                b[0] * P2[2] - P2[0],
                b[1] * P2[2] - P2[1],
            ]
        )
        _, _, Vt = np.linalg.svd(A)
        X = Vt[-1]
        out[i] = X[:3] / X[3] if abs(X[3]) > 1e-15 else np.inf
    return out


def recover_pose(
    F: FundamentalMatrix,
    intrinsics: CameraIntrinsics,
    pts1: np.ndarray,
    pts2: np.ndarray,
) -> Pose:
    """Factor the essential matrix and pick the cheirality-consistent pose.

    Of the four (R, T) candidates from the SVD of E = K' F K, returns the one
    placing the most triangulated points in front of both cameras. T comes
    out of the factorization up to scale and is fixed so the plane-induced
    displacement matches the median inlier pixel displacement, converted to
    millimetres through the pixel pitch.

    Raises:
        CheiralityError: no candidate passes the positive-depth test for more
            than half of the points.
    """
    pts1 = np.asarray(pts1, dtype=float).reshape(-1, 2)
    pts2 = np.asarray(pts2, dtype=float).reshape(-1, 2)
    K = intrinsics.matrix
    E = K.T @ F.matrix @ K
    U, _, Vt = np.linalg.svd(E)
    if np.linalg.det(U) < 0:
        U = -U
    if np.linalg.det(Vt) < 0:
        Vt = -Vt
    W = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    t_unit = U[:, 2]
    candidates = [
        (U @ W @ Vt, t_unit),
        (U @ W @ Vt, -t_unit),
        (U @ W.T @ Vt, t_unit),
        (U @ W.T @ Vt, -t_unit),
    ]

    Kinv = np.linalg.inv(K)
    x1 = _homogeneous(pts1) @ Kinv.T
    x2 = _homogeneous(pts2) @ Kinv.T
    P1 = np.hstack([np.eye(3), np.zeros((3, 1))])

    best = None
    best_count = -1
    for R, t in candidates:
        P2 = np.hstack([R, t[:, None]])
        X = _triangulate(P1, P2, x1, x2)
        z1 = X[:, 2]
        z2 = X @ R[2] + t[2]
        count = int(np.sum((z1 > 0) & (z2 > 0) & np.isfinite(z1)))
        if count > best_count:
            best_count = count
            best = (R, t)
    if best is None or best_count <= len(pts1) / 2:
        raise CheiralityError(
            f"best candidate passes cheirality for {best_count}/{len(pts1)} points"
        )
    R, t = best

    disp = float(np.median(np.linalg.norm(pts2 - pts1, axis=1)))
    q = float(np.hypot(t[0], t[1]))
    if q >= abs(t[2]):
        lam = disp * intrinsics.pixel_pitch / max(q, 1e-12)
    else:
        radii = np.linalg.norm(
            pts1 - np.array([intrinsics.cx, intrinsics.cy]), axis=1
        )
        med_r = float(np.median(radii))
        lam = disp * intrinsics.plane_depth / max(med_r * abs(t[2]), 1e-12)
    return Pose(R, t * lam)


def correct_pose(p: Pose) -> Pose:
    """Zero the rotation and the z translation: R' = I, T' = (tx, ty, 0)."""
    return Pose(np.eye(3), np.array([p.T[0], p.T[1], 0.0]))


def plane_projection(pose: Pose, intrinsics: CameraIntrinsics) -> np.ndarray:
    """3x3 map from contact-plane mm coordinates (X, Y, 1) to frame pixels.

    The pose is relative to the reference camera, which sits at the plane
    depth fx * pixel_pitch; that depth is re-attached here so the corrected
    pose with zero relative z keeps a valid projection.
    """
    h = intrinsics.plane_depth
    T_abs = pose.R @ np.array([0.0, 0.0, h]) + pose.T
    M = np.column_stack([pose.R[:, 0], pose.R[:, 1], T_abs])
    return intrinsics.matrix @ M


def homography_between(
    p_src: Pose, p_dst: Pose, intrinsics: CameraIntrinsics
) -> np.ndarray:
    """Plane-induced homography mapping src-pose pixels to dst-pose pixels."""
    G_src = plane_projection(p_src, intrinsics)
    G_dst = plane_projection(p_dst, intrinsics)
    det = np.linalg.det(G_src)
    if abs(det) < 1e-12:
        raise SingularHomographyError("source pose projects the plane degenerately")
    H = G_dst @ np.linalg.inv(G_src)
    return H / H[2, 2] if abs(H[2, 2]) > 1e-15 else H


def apply_homography(H: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Transform (N, 2) points by a 3x3 homography."""
    h = _homogeneous(pts) @ H.T
    return h[:, :2] / h[:, 2:3]


def reproject(
    img: Image,
    p: Pose,
    p_corrected: Pose,
    intrinsics: CameraIntrinsics,
    interpolation: str = "bilinear",
) -> Image:
    """Re-render a frame as seen from the corrected pose.

    Every output pixel is inverse-mapped through the plane-induced homography
    between the two poses; the validity mask travels with the warp.
    """
    H = homography_between(p, p_corrected, intrinsics)
    Hinv = np.linalg.inv(H)
    hgt, wdt = img.shape
    xs, ys = np.meshgrid(np.arange(wdt, dtype=float), np.arange(hgt, dtype=float))
    denom = Hinv[2, 0] * xs + Hinv[2, 1] * ys + Hinv[2, 2]
    denom = np.where(np.abs(denom) < 1e-15, np.nan, denom)
    src_x = (Hinv[0, 0] * xs + Hinv[0, 1] * ys + Hinv[0, 2]) / denom
    src_y = (Hinv[1, 0] * xs + Hinv[1, 1] * ys + Hinv[1, 2]) / denom
    src_x = np.nan_to_num(src_x, nan=-1.0)
    src_y = np.nan_to_num(src_y, nan=-1.0)
    data, valid = resample_image(img.data, img.mask, src_x, src_y, interpolation)
    return Image(data, valid)


def homography_dlt(pts_src: np.ndarray, pts_dst: np.ndarray) -> np.ndarray:
    """Direct linear transform estimate of a homography (normalized)."""
    pts_src = np.asarray(pts_src, dtype=float).reshape(-1, 2)
    pts_dst = np.asarray(pts_dst, dtype=float).reshape(-1, 2)
    if len(pts_src) < 4:
        raise ValueError("need at least 4 correspondences")
    Ts = _hartley_transform(pts_src)
    Td = _hartley_transform(pts_dst)
    s = _homogeneous(pts_src) @ Ts.T
    d = _homogeneous(pts_dst) @ Td.T
    rows = []
    for (x, y, _), (u, v, _) in zip(s, d):
        rows.append([x, y, 1, 0, 0, 0, -u * x, -u * y, -u])
        rows.append([0, 0, 0, x, y, 1, -v * x, -v * y, -v])
    A = np.asarray(rows)
    _, sv, Vt = np.linalg.svd(A)
    if sv[-2] / sv[0] < _RANK_TOL:
        raise DegenerateConfigurationError("homography sample is degenerate")
    H = Vt[-1].reshape(3, 3)
    H = np.linalg.inv(Td) @ H @ Ts
    return H / H[2, 2]


def homography_transfer_error(
    H: np.ndarray, pts_src: np.ndarray, pts_dst: np.ndarray
) -> np.ndarray:
    """Symmetric transfer error (max of forward and backward), px.

    Singular or near-singular homographies give infinite error.
    """
    try:
        Hinv = np.linalg.inv(H)
    except np.linalg.LinAlgError:
        return np.full(len(pts_src), np.inf)
    with np.errstate(invalid="ignore", divide="ignore"):
        fwd = np.linalg.norm(apply_homography(H, pts_src) - pts_dst, axis=1)
        bwd = np.linalg.norm(apply_homography(Hinv, pts_dst) - pts_src, axis=1)
        err = np.maximum(fwd, bwd)
    return np.where(np.isfinite(err), err, np.inf)


def ransac_homography(
    pts_src: np.ndarray,
    pts_dst: np.ndarray,
    threshold_px: float = 1.0,
    max_iters: int = 2000,
    seed: int = 0,
    confidence: float = 0.999,
) -> tuple[np.ndarray, np.ndarray, int]:
    """RANSAC homography fit; returns (H, inlier_indices, iterations)."""
    pts_src = np.asarray(pts_src, dtype=float).reshape(-1, 2)
    pts_dst = np.asarray(pts_dst, dtype=float).reshape(-1, 2)
    n = len(pts_src)
    if n < 4:
        raise ValueError(f"need at least 4 correspondences, got {n}")
    rng = np.random.default_rng(seed)

    best_count = 0
    best_inliers: np.ndarray | None = None
    best_H: np.ndarray | None = None
    needed = max_iters
    it = 0
    while it < min(max_iters, needed):
        it += 1
        sample = rng.choice(n, size=4, replace=False)
        try:
            H = homography_dlt(pts_src[sample], pts_dst[sample])
        except (DegenerateConfigurationError, np.linalg.LinAlgError):
            continue
        err = homography_transfer_error(H, pts_src, pts_dst)
        inliers = err <= threshold_px
        count = int(inliers.sum())
        if count > best_count:
            best_count, best_inliers, best_H = count, inliers, H
            w = count / n
            needed = it if w >= 1.0 else int(
                np.ceil(np.log(1.0 - confidence) / np.log(1.0 - w**4 + 1e-300))
            )
    if best_H is None or best_count < 4:
        raise InsufficientInliersError(
            f"best homography consensus has {best_count} inliers (need 4)"
        )
    idx = np.flatnonzero(best_inliers)
    try:
        refit = homography_dlt(pts_src[idx], pts_dst[idx])
        refit_in = homography_transfer_error(refit, pts_src, pts_dst) <= threshold_px
        if int(refit_in.sum()) >= 4:
            best_H = refit
            idx = np.flatnonzero(refit_in)
    except (DegenerateConfigurationError, np.linalg.LinAlgError):
        pass
    return best_H, idx, it


def pose_from_plane_homography(
    H_ref_from_frame: np.ndarray, intrinsics: CameraIntrinsics
) -> Pose:
    """Decompose a frame-to-reference homography induced by the contact plane.

    The reference camera is canonical (identity pose at the plane depth), so
    K^-1 H^-1 G_ref = [r1 r2 T] up to scale; the scale is fixed by the unit
    norm of the rotation columns and the sign by positive plane depth.
    """
    h = intrinsics.plane_depth
    K = intrinsics.matrix
    G_ref = K @ np.column_stack(
        [np.array([1.0, 0, 0]), np.array([0.0, 1, 0]), np.array([0.0, 0, h])]
    )
    det = np.linalg.det(H_ref_from_frame)
    if abs(det) < 1e-15:
        raise SingularHomographyError("homography is singular")
    M = np.linalg.inv(K) @ np.linalg.inv(H_ref_from_frame) @ G_ref
    s = 2.0 / (np.linalg.norm(M[:, 0]) + np.linalg.norm(M[:, 1]))
    M = M * s
    if M[2, 2] < 0:
        M = -M
    R0 = np.column_stack([M[:, 0], M[:, 1], np.cross(M[:, 0], M[:, 1])])
    U, _, Vt = np.linalg.svd(R0)
    R = U @ np.diag([1.0, 1.0, np.linalg.det(U @ Vt)]) @ Vt
    T_abs = M[:, 2]
    T_rel = T_abs - R @ np.array([0.0, 0.0, h])
    return Pose(R, T_rel)


def camera_center_xy(pose: Pose) -> tuple[float, float]:
    """In-plane displacement of the camera from the reference, mm."""
    c = -pose.R.T @ pose.T
    return float(c[0]), float(c[1])


def yaw_angle(pose: Pose) -> float:
    """Rotation about the optical axis, radians."""
    return float(np.arctan2(pose.R[1, 0], pose.R[0, 0]))


@dataclass(frozen=True)
class PlanePoseResult:
    """Pose estimate with its supporting inliers and the route taken."""

    pose: Pose
    inlier_indices: np.ndarray = field(repr=False)
    method: str
    fundamental: FundamentalMatrix
    iterations_used: int


#: H must explain at least this share of F-inliers to switch to the planar route.
HOMOGRAPHY_CONSENSUS = 0.95


def estimate_plane_pose(
    ref_pts: np.ndarray,
    frame_pts: np.ndarray,
    intrinsics: CameraIntrinsics,
    threshold_px: float = 1.0,
    max_iters: int = 2000,
    seed: int = 0,
) -> PlanePoseResult:
    """Robust relative pose of a frame against reference-image matches.

    Runs fundamental-matrix RANSAC first; when a homography refit explains at
    least 95% of the F-inliers at the same threshold the scene is treated as
    planar and the pose comes from the plane-induced homography, otherwise
    from the essential factorization.
    """
    ref_pts = np.asarray(ref_pts, dtype=float).reshape(-1, 2)
    frame_pts = np.asarray(frame_pts, dtype=float).reshape(-1, 2)
    rr = ransac_fundamental(
        ref_pts, frame_pts, threshold_px, max_iters, seed, intrinsics=intrinsics
    )
    f_idx = rr.inlier_indices
    try:
        H, h_sub_idx, _ = ransac_homography(
            frame_pts[f_idx], ref_pts[f_idx], threshold_px, max_iters, seed + 1
        )
    except InsufficientInliersError:
        H, h_sub_idx = None, np.empty(0, dtype=int)

    if H is not None and len(h_sub_idx) >= HOMOGRAPHY_CONSENSUS * len(f_idx):
        pose = pose_from_plane_homography(H, intrinsics)
        return PlanePoseResult(
            pose=pose,
            inlier_indices=f_idx[h_sub_idx],
            method="homography",
            fundamental=rr.model,
            iterations_used=rr.iterations_used,
        )
    pose = recover_pose(rr.model, intrinsics, ref_pts[f_idx], frame_pts[f_idx])
    return PlanePoseResult(
        pose=pose,
        inlier_indices=f_idx,
        method="essential",
        fundamental=rr.model,
        iterations_used=rr.iterations_used,
    )
