"""Head pose estimation and canonical face alignment.

Pose is recovered from 2D facial landmarks and a generic 3D landmark model
with a pinhole camera: a linear DLT initialization followed by a damped
Gauss-Newton refinement of the reprojection error.  Euler angles follow the
``Rz(roll) @ Ry(yaw) @ Rx(pitch)`` convention with the camera looking down
+z, x right and y down, all reported in degrees.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .core import FaceMedia, FacepoolError, _freeze
from ._kernels import warp_affine_bilinear

__all__ = [
    "CameraModel",
    "Model3D",
    "HeadPose",
    "AlignedFace",
    "PoseError",
    "DegenerateGeometry",
    "NoConvergence",
    "MissingEyeLandmarks",
    "DegenerateScale",
    "default_camera",
    "bundled_model",
    "compose_rotation",
    "decompose_rotation",
    "solve_pnp",
    "quantize_yaw",
    "eye_centers",
    "roll_compensate",
    "canonical_align",
    "DEFAULT_YAW_EDGES",
    "CANONICAL_SIZE",
]


class PoseError(FacepoolError):
    """Base class for pose estimation failures."""


class DegenerateGeometry(PoseError):
    """Correspondences do not constrain a pose (too few or collinear)."""


class NoConvergence(PoseError):
    """Refinement still improving when the iteration budget ran out."""


class MissingEyeLandmarks(PoseError):
    """Eye corner landmarks absent, alignment cannot proceed."""


class DegenerateScale(PoseError):
    """Interocular distance too small to fix the crop scale."""


DEFAULT_YAW_EDGES = (20.0, 40.0, 60.0)
CANONICAL_SIZE = 128
# canonical placement of the eye midpoint and interocular distance,
# as fractions of the crop side
_EYE_ROW = 0.38
_IOD_FRACTION = 0.32

_LEFT_EYE = slice(36, 42)
_RIGHT_EYE = slice(42, 48)
_EYE_CORNERS = (36, 39, 42, 45)

_MIN_CORRESPONDENCES = 6


@dataclass(frozen=True)
class CameraModel:
    """Pinhole intrinsics: square pixels, no skew, no distortion."""

    focal_px: float
    principal_point: tuple[float, float]

    def __post_init__(self):
        if not (self.focal_px > 0 and math.isfinite(self.focal_px)):
            raise ValueError("focal length must be positive and finite")

    def matrix(self) -> np.ndarray:
        cx, cy = self.principal_point
        return np.array(
            [[self.focal_px, 0.0, cx], [0.0, self.focal_px, cy], [0.0, 0.0, 1.0]]
        )


def default_camera(width: int, height: int) -> CameraModel:
    """Camera guess when intrinsics are unknown: f = W + H, center principal point."""
    return CameraModel(
        focal_px=float(width + height),
        principal_point=(width / 2.0, height / 2.0),
    )


@dataclass(frozen=True)
class Model3D:
    """68 reference landmark positions of a generic head, centroid at origin."""

    points: np.ndarray  # (68, 3) float64

    def __post_init__(self):
        pts = np.ascontiguousarray(np.asarray(self.points, dtype=np.float64))
        if pts.shape != (68, 3):
            raise ValueError(f"expected (68, 3) model points, got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("model points must be finite")
        object.__setattr__(self, "points", _freeze(pts))

    @classmethod
    def from_file(cls, path) -> "Model3D":
        """Parse an ``index x y z`` text file, recenter, and reject flat models."""
        pts = np.full((68, 3), np.nan)
        with open(path, "r", encoding="utf-8") as fh:
            for raw in fh:
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                parts = line.split()
                if len(parts) != 4:
                    raise ValueError(f"malformed model line: {line!r}")
                idx = int(parts[0])
                if not 0 <= idx < 68:
                    raise ValueError(f"model point index {idx} out of range")
                pts[idx] = [float(v) for v in parts[1:]]
        if not np.all(np.isfinite(pts)):
            missing = np.nonzero(~np.isfinite(pts).all(axis=1))[0]
            raise ValueError(f"model file missing points {missing.tolist()}")
        pts -= pts.mean(axis=0)
        w = np.linalg.eigvalsh(np.cov(pts.T))
        if w[0] <= 1e-9 * w[-1]:
            raise DegenerateGeometry("model points are (near) coplanar")
        return cls(points=pts)


def bundled_model() -> Model3D:
    """The generic head model shipped with the package."""
    ref = resources.files("facepool").joinpath("data/generic_face_68.txt")
    with resources.as_file(ref) as path:
        return Model3D.from_file(path)


@dataclass(frozen=True)
class HeadPose:
    """Rigid head pose plus its Euler decomposition, angles in degrees."""

    rotation: np.ndarray  # (3, 3)
    translation: np.ndarray  # (3,)
    yaw_deg: float
    pitch_deg: float
    roll_deg: float
    reproj_rmse: float = 0.0

    def __post_init__(self):
        R = np.ascontiguousarray(np.asarray(self.rotation, dtype=np.float64))
        t = np.ascontiguousarray(np.asarray(self.translation, dtype=np.float64))
        if R.shape != (3, 3) or t.shape != (3,):
            raise ValueError("rotation must be (3, 3) and translation (3,)")
        object.__setattr__(self, "rotation", _freeze(R))
        object.__setattr__(self, "translation", _freeze(t))


@dataclass(frozen=True)
class AlignedFace:
    """A face crop warped to the canonical frame."""

    raster: np.ndarray  # (S, S) or (S, S, 3) float32 in [0, 1]
    pose: HeadPose
    media_id: str

    def __post_init__(self):
        r = np.ascontiguousarray(np.asarray(self.raster, dtype=np.float32))
        if r.ndim not in (2, 3) or r.shape[0] != r.shape[1]:
            raise ValueError("aligned raster must be square")
        object.__setattr__(self, "raster", _freeze(r))

    @property
    def size(self) -> int:
        return self.raster.shape[0]


# ---------------------------------------------------------------------------
# rotations


def _rot_x(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def _rot_y(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rot_z(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def compose_rotation(yaw_deg: float, pitch_deg: float, roll_deg: float) -> np.ndarray:
    """Rotation matrix for the given Euler angles, Rz(roll) Ry(yaw) Rx(pitch)."""
    return (
        _rot_z(math.radians(roll_deg))
        @ _rot_y(math.radians(yaw_deg))
        @ _rot_x(math.radians(pitch_deg))
    )


_GIMBAL_MARGIN_DEG = 0.1


def decompose_rotation(R: np.ndarray) -> tuple[float, float, float]:
    """Recover (yaw, pitch, roll) in degrees from a rotation matrix.

    Within 0.1 degrees of yaw = +-90 the roll/pitch split is ambiguous;
    there roll is reported as 0 and pitch absorbs the in-plane part.
    """
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (3, 3):
        raise ValueError("rotation must be (3, 3)")
    if np.max(np.abs(R.T @ R - np.eye(3))) > 1e-6 or np.linalg.det(R) < 0:
        raise ValueError("matrix is not a rotation (orthonormality beyond 1e-6)")

    sy = -R[2, 0]
    sy = min(1.0, max(-1.0, sy))
    yaw = math.asin(sy)
    if 90.0 - abs(math.degrees(yaw)) < _GIMBAL_MARGIN_DEG:
        roll = 0.0
        if sy > 0:
            pitch = math.atan2(R[0, 1], R[0, 2])
        else:
            pitch = math.atan2(-R[0, 1], -R[0, 2])
    else:
        roll = math.atan2(R[1, 0], R[0, 0])
        pitch = math.atan2(R[2, 1], R[2, 2])
    return math.degrees(yaw), math.degrees(pitch), math.degrees(roll)


def _rvec_to_rotation(rvec: np.ndarray) -> np.ndarray:
    theta = float(np.linalg.norm(rvec))
    K = np.array(
        [
            [0.0, -rvec[2], rvec[1]],
            [rvec[2], 0.0, -rvec[0]],
            [-rvec[1], rvec[0], 0.0],
        ]
    )
    if theta < 1e-12:
        return np.eye(3) + K
    K /= theta
    return np.eye(3) + math.sin(theta) * K + (1.0 - math.cos(theta)) * (K @ K)


def _rotation_to_rvec(R: np.ndarray) -> np.ndarray:
    cos_t = min(1.0, max(-1.0, (np.trace(R) - 1.0) / 2.0))
    theta = math.acos(cos_t)
    if theta < 1e-12:
        return np.zeros(3)
    if math.pi - theta < 1e-6:
        # antipodal case: axis from the symmetric part
        B = (R + np.eye(3)) / 2.0
        axis = np.sqrt(np.maximum(np.diag(B), 0.0))
        k = int(np.argmax(axis))
        if axis[k] > 0:
            for j in range(3):
                if j != k and B[k, j] < 0:
                    axis[j] = -axis[j]
        n = np.linalg.norm(axis)
        if n == 0:
            return np.array([theta, 0.0, 0.0])
        return theta * axis / n
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return theta / (2.0 * math.sin(theta)) * w


# ---------------------------------------------------------------------------
# projection and PnP


def project_points(
    points3d: np.ndarray, rotation: np.ndarray, translation: np.ndarray, camera: CameraModel
) -> np.ndarray:
    """Project 3D points to pixel coordinates with a pinhole camera."""
    cam = np.asarray(points3d, dtype=np.float64) @ np.asarray(rotation).T + np.asarray(
        translation, dtype=np.float64
    )
    z = cam[:, 2]
    cx, cy = camera.principal_point
    u = camera.focal_px * cam[:, 0] / z + cx
    v = camera.focal_px * cam[:, 1] / z + cy
    return np.stack([u, v], axis=1)


def _dlt_pose(pts2d: np.ndarray, pts3d: np.ndarray, camera: CameraModel):
    """Linear initialization: null vector of the normalized DLT system."""
    cx, cy = camera.principal_point
    xn = (pts2d[:, 0] - cx) / camera.focal_px
    yn = (pts2d[:, 1] - cy) / camera.focal_px
    n = len(pts3d)
    X = np.hstack([pts3d, np.ones((n, 1))])
    A = np.zeros((2 * n, 12))
    A[0::2, 0:4] = X
    A[0::2, 8:12] = -xn[:, None] * X
    A[1::2, 4:8] = X
    A[1::2, 8:12] = -yn[:, None] * X
    _, _, vt = np.linalg.svd(A)
    M = vt[-1].reshape(3, 4)
    depths = X @ M[2]
    if np.median(depths) < 0:
        M = -M
    U, S, Vt = np.linalg.svd(M[:, :3])
    R = U @ Vt
    if np.linalg.det(R) < 0:
        Vt = Vt.copy()
        Vt[-1] *= -1.0
        R = U @ Vt
    scale = S.mean()
    if scale <= 0 or not np.isfinite(scale):
        raise DegenerateGeometry("linear pose initialization collapsed")
    t = M[:, 3] / scale
    return R, t


def _residuals(params, pts2d, pts3d, camera):
    R = _rvec_to_rotation(params[:3])
    proj = project_points(pts3d, R, params[3:], camera)
    return (proj - pts2d).ravel()


def solve_pnp(
    landmarks2d: np.ndarray,
    model: Model3D,
    camera: CameraModel,
    max_iters: int = 100,
    return_history: bool = False,
):
    """Estimate head pose from 2D/3D landmark correspondences.

    Landmarks with non-finite coordinates are treated as missing and dropped
    together with their model points.  Returns a HeadPose; with
    ``return_history=True`` also the per-iteration RMSE trace, which is
    non-increasing.
    """
    lm = np.asarray(landmarks2d, dtype=np.float64)
    if lm.shape != (68, 2):
        raise ValueError(f"expected (68, 2) landmarks, got {lm.shape}")
    valid = np.isfinite(lm).all(axis=1)
    if int(valid.sum()) < _MIN_CORRESPONDENCES:
        raise DegenerateGeometry(
            f"only {int(valid.sum())} usable correspondences, need {_MIN_CORRESPONDENCES}"
        )
    pts2d = lm[valid]
    pts3d = model.points[valid]

    w = np.linalg.eigvalsh(np.cov(pts3d.T))
    if w[0] <= 1e-9 * max(w[-1], 1e-30):
        raise DegenerateGeometry("usable model points are (near) coplanar or collinear")
    wi = np.linalg.eigvalsh(np.cov(pts2d.T))
    if wi[-1] <= 1e-18:
        raise DegenerateGeometry("image landmarks collapsed to a point")

    R, t = _dlt_pose(pts2d, pts3d, camera)
    params = np.concatenate([_rotation_to_rvec(R), t])

    n = len(pts2d)
    r = _residuals(params, pts2d, pts3d, camera)
    cost = float(r @ r)
    history = [math.sqrt(cost / n)]
    lam = 1e-3
    converged = False
    for _ in range(max_iters):
        # numeric Jacobian, central differences
        J = np.empty((2 * n, 6))
        for k in range(6):
            h = 1e-6 * max(1.0, abs(params[k]))
            up = params.copy()
            up[k] += h
            dn = params.copy()
            dn[k] -= h
            J[:, k] = (_residuals(up, pts2d, pts3d, camera) - _residuals(dn, pts2d, pts3d, camera)) / (2 * h)
        JTJ = J.T @ J
        JTr = J.T @ r
        if np.linalg.norm(JTr, ord=np.inf) < 1e-10:
            converged = True
            break
        stepped = False
        for _ in range(30):
            H = JTJ + lam * np.diag(np.diag(JTJ)) + 1e-12 * np.eye(6)
            try:
                delta = np.linalg.solve(H, -JTr)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            cand = params + delta
            rc = _residuals(cand, pts2d, pts3d, camera)
            cc = float(rc @ rc)
            if cc < cost:
                params, r, cost = cand, rc, cc
                history.append(math.sqrt(cost / n))
                lam = max(lam / 3.0, 1e-12)
                stepped = True
                if np.linalg.norm(delta) < 1e-12 or cost < 1e-24:
                    converged = True
                break
            lam *= 10.0
            if lam > 1e14:
                break
        if not stepped:
            # no downhill step exists at any damping: a (local) minimum
            converged = True
        if converged:
            break
    if not converged:
        raise NoConvergence(f"refinement did not settle within {max_iters} iterations")

    R = _rvec_to_rotation(params[:3])
    yaw, pitch, roll = decompose_rotation(R)
    pose = HeadPose(
        rotation=R,
        translation=params[3:],
        yaw_deg=yaw,
        pitch_deg=pitch,
        roll_deg=roll,
        reproj_rmse=history[-1],
    )
    if return_history:
        return pose, history
    return pose


def quantize_yaw(yaw_deg: float, edges=DEFAULT_YAW_EDGES) -> int:
    """Absolute-yaw bin index: [0,20) -> 0, [20,40) -> 1, [40,60) -> 2, rest 3."""
    if not math.isfinite(yaw_deg):
        raise ValueError("yaw must be finite")
    return int(np.searchsorted(np.asarray(edges, dtype=np.float64), abs(yaw_deg), side="right"))


# ---------------------------------------------------------------------------
# in-plane alignment


def eye_centers(landmarks: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Left and right eye centers from the 68-point layout.

    Uses the mean of each eye ring's finite points; the four eye corners
    must be present.
    """
    lm = np.asarray(landmarks, dtype=np.float64)
    corners = lm[list(_EYE_CORNERS)]
    if not np.all(np.isfinite(corners)):
        raise MissingEyeLandmarks("eye corner landmarks are missing")

    def ring_center(ring):
        keep = np.isfinite(ring).all(axis=1)
        return ring[keep].mean(axis=0)

    return ring_center(lm[_LEFT_EYE]), ring_center(lm[_RIGHT_EYE])


def _warp(image: np.ndarray, inv_affine, out_h: int, out_w: int) -> np.ndarray:
    """Apply the inverse-mapped affine warp per channel."""
    if image.ndim == 2:
        return warp_affine_bilinear(image, inv_affine, out_h, out_w)
    chans = [
        warp_affine_bilinear(np.ascontiguousarray(image[:, :, c]), inv_affine, out_h, out_w)
        for c in range(image.shape[2])
    ]
    return np.stack(chans, axis=2)


def _apply_affine_points(pts, a, b, tx, c, d, ty):
    out = np.empty_like(pts)
    out[:, 0] = a * pts[:, 0] + b * pts[:, 1] + tx
    out[:, 1] = c * pts[:, 0] + d * pts[:, 1] + ty
    return out


def roll_compensate(media: FaceMedia, pose: HeadPose) -> tuple[np.ndarray, np.ndarray]:
    """Rotate the raster so the eye line is horizontal.

    The compensation angle is measured from the eye landmarks rather than
    taken from ``pose.roll_deg``: out-of-plane pose leaks into the Euler roll,
    while the post-warp eye line must be level regardless.  Returns the
    rotated raster and the landmarks mapped into it.
    """
    le, re = eye_centers(media.landmarks)
    mid = (le + re) / 2.0
    theta = math.atan2(re[1] - le[1], re[0] - le[0])

    # output (x, y) -> source: rotate by +theta about the eye midpoint
    ct, st = math.cos(theta), math.sin(theta)
    a, b = ct, -st
    c, d = st, ct
    tx = mid[0] - ct * mid[0] + st * mid[1]
    ty = mid[1] - st * mid[0] - ct * mid[1]
    h, w = media.image.shape[:2]
    raster = _warp(media.image, (a, b, tx, c, d, ty), h, w)

    # landmarks move by the forward map, rotate by -theta about mid
    lm = np.asarray(media.landmarks, dtype=np.float64)
    fwd = _apply_affine_points(
        lm - mid, ct, st, 0.0, -st, ct, 0.0
    ) + mid
    fwd[~np.isfinite(lm).all(axis=1)] = np.nan
    return raster, fwd


def canonical_align(
    media: FaceMedia,
    pose: HeadPose,
    size: int = CANONICAL_SIZE,
    landmarks: np.ndarray | None = None,
    image: np.ndarray | None = None,
) -> AlignedFace:
    """Similarity-warp a face into the canonical crop.

    The eye midpoint lands at (0.5 S, 0.38 S) and the interocular distance
    becomes 0.32 S.  ``landmarks``/``image`` override the media's own (used
    after roll compensation).  Raises DegenerateScale when the eyes are
    closer than 2 px.
    """
    if size < 8:
        raise ValueError("canonical size must be at least 8")
    lm = media.landmarks if landmarks is None else np.asarray(landmarks, dtype=np.float64)
    img = media.image if image is None else image
    le, re = eye_centers(lm)
    iod = float(np.hypot(re[0] - le[0], re[1] - le[1]))
    if iod < 2.0:
        raise DegenerateScale(f"interocular distance {iod:.3f} px is below 2 px")

    mid = (le + re) / 2.0
    theta = math.atan2(re[1] - le[1], re[0] - le[0])
    scale = (_IOD_FRACTION * size) / iod
    dst = np.array([0.5 * size, _EYE_ROW * size])

    # output -> source: undo the translation, rotation and scale
    k = 1.0 / scale
    ct, st = math.cos(theta), math.sin(theta)
    a = k * ct
    b = -k * st
    c = k * st
    d = k * ct
    tx = mid[0] - a * dst[0] - b * dst[1]
    ty = mid[1] - c * dst[0] - d * dst[1]
    raster = _warp(img, (a, b, tx, c, d, ty), size, size)
    return AlignedFace(raster=raster, pose=pose, media_id=media.media_id)
