"""Point clouds, rigid transforms, normal estimation, and least-squares alignment.

All arrays are float64. Clouds and transforms are frozen value objects whose
arrays are marked read-only, so they are safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import (
    DegenerateGeometryError,
    InvalidParameterError,
    NonRigidMatrixError,
    TooFewPointsError,
)

UNIT_NORMAL_TOL = 1e-6
RIGID_GATE_TOL = 1e-6  # construction-time gate; internal constructors are far tighter


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class PointCloud:
    """3D positions plus optional unit normals of the same length."""

    points: np.ndarray
    normals: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] == 0:
            raise InvalidParameterError(f"points must have shape (n, 3) with n >= 1, got {pts.shape}")
        object.__setattr__(self, "points", _freeze(pts))
        if self.normals is not None:
            nrm = np.asarray(self.normals, dtype=np.float64)
            if nrm.shape != pts.shape:
                raise InvalidParameterError(f"normals shape {nrm.shape} does not match points shape {pts.shape}")
            lengths = np.sqrt(((nrm * nrm).sum(axis=1)))
            if not np.all(np.abs(lengths - 1.0) <= UNIT_NORMAL_TOL):
                raise InvalidParameterError("normals must be unit length within 1e-6")
            object.__setattr__(self, "normals", _freeze(nrm))

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def has_normals(self) -> bool:
        return self.normals is not None


@dataclass(frozen=True)
class RigidTransform:
    """Rotation matrix plus translation vector; p -> R p + t (column convention)."""

    rotation: np.ndarray
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64)
        tra = np.asarray(self.translation, dtype=np.float64)
        if rot.shape != (3, 3) or tra.shape != (3,):
            raise NonRigidMatrixError(f"expected 3x3 rotation and 3-vector translation, got {rot.shape} and {tra.shape}")
        if not np.all(np.isfinite(rot)) or not np.all(np.isfinite(tra)):
            raise NonRigidMatrixError("transform contains non-finite values")
        err = np.abs(rot.T @ rot - np.eye(3)).max()
        if err > RIGID_GATE_TOL:
            raise NonRigidMatrixError(f"rotation is not orthonormal (max |R^T R - I| = {err:.3e})")
        det = float(np.linalg.det(rot))
        if abs(det - 1.0) > RIGID_GATE_TOL:
            raise NonRigidMatrixError(f"rotation determinant is {det:.6f}, expected +1")
        object.__setattr__(self, "rotation", _freeze(rot))
        object.__setattr__(self, "translation", _freeze(tra))

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -(rt @ self.translation))

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Transform equal to applying `other` first, then self."""
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation + self.translation)

    def matrix(self) -> np.ndarray:
        """4x4 row-major homogeneous matrix."""
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m


def apply_transform(cloud: PointCloud, transform: RigidTransform) -> PointCloud:
    """Rotate then translate every point; normals are rotated only."""
    pts = cloud.points @ transform.rotation.T + transform.translation
    normals = None
    if cloud.normals is not None:
        normals = cloud.normals @ transform.rotation.T
    return PointCloud(pts, normals)


def transform_points(points: np.ndarray, transform: RigidTransform) -> np.ndarray:
    return np.asarray(points, dtype=np.float64) @ transform.rotation.T + transform.translation


def cloud_resolution(cloud: PointCloud) -> float:
    """Mean distance from each point to its single nearest other point (`pr`)."""
    n = len(cloud)
    if n < 2:
        raise TooFewPointsError(f"resolution needs at least 2 points, got {n}")
    tree = cKDTree(cloud.points)
    dists, _ = tree.query(cloud.points, k=2)
    return float(dists[:, 1].mean())


def estimate_normals(cloud: PointCloud, k: int = 10) -> PointCloud:
    """Attach per-point normals from PCA over each point's k nearest neighbors.

    The normal is the smallest-eigenvalue eigenvector of the neighbor
    covariance, sign-flipped to point away from the cloud centroid (an exact
    zero dot product keeps the eigenvector as computed).
    """
    if k < 3:
        raise InvalidParameterError(f"normal estimation needs k >= 3, got {k}")
    n = len(cloud)
    if n < k + 1:
        raise TooFewPointsError(f"normal estimation with k={k} needs at least {k + 1} points, got {n}")
    tree = cKDTree(cloud.points)
    _, idx = tree.query(cloud.points, k=k + 1)
    neighbors = cloud.points[idx[:, 1:]]  # self excluded
    centered = neighbors - neighbors.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / k
    _, vecs = np.linalg.eigh(cov)  # ascending eigenvalues
    normals = vecs[:, :, 0].copy()
    normals /= np.sqrt((normals * normals).sum(axis=1, keepdims=True))
    outward = ((cloud.points - cloud.points.mean(axis=0)) * normals).sum(axis=1)
    normals[outward < 0.0] *= -1.0
    return PointCloud(cloud.points, normals)


def estimate_rigid_transform(src_points: np.ndarray, tgt_points: np.ndarray) -> RigidTransform:
    """Least-squares rigid transform minimizing sum ||R src_i + t - tgt_i||^2.

    Closed form via SVD of the cross-covariance, with the usual sign flip of
    the last singular direction when the raw solution is a reflection.
    """
    src = np.asarray(src_points, dtype=np.float64).reshape(-1, 3)
    tgt = np.asarray(tgt_points, dtype=np.float64).reshape(-1, 3)
    if src.shape != tgt.shape:
        raise InvalidParameterError(f"point lists differ in length: {src.shape[0]} vs {tgt.shape[0]}")
    if src.shape[0] < 3:
        raise DegenerateGeometryError(f"rigid estimation needs >= 3 point pairs, got {src.shape[0]}")
    src_c = src.mean(axis=0)
    tgt_c = tgt.mean(axis=0)
    h = (src - src_c).T @ (tgt - tgt_c)
    u, s, vt = np.linalg.svd(h)
    if s[0] <= 0.0 or s[1] <= 1e-9 * s[0]:
        raise DegenerateGeometryError("degenerate configuration: point pairs are (near-)collinear")
    d = np.sign(np.linalg.det(vt.T @ u.T))
    flip = np.diag([1.0, 1.0, d])
    rotation = vt.T @ flip @ u.T
    translation = tgt_c - rotation @ src_c
    return RigidTransform(rotation, translation)


def rotation_from_quaternion(q: np.ndarray) -> np.ndarray:
    """Rotation matrix from a (w, x, y, z) quaternion (normalized internally)."""
    q = np.asarray(q, dtype=np.float64)
    norm = np.sqrt((q * q).sum())
    if norm < 1e-12:
        raise InvalidParameterError("quaternion norm too small")
    w, x, y, z = q / norm
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform random rotation: normalized Gaussian quaternion."""
    while True:
        q = rng.normal(size=4)
        if np.sqrt((q * q).sum()) >= 1e-12:
            return rotation_from_quaternion(q)


def rotation_from_euler(rx: float, ry: float, rz: float) -> np.ndarray:
    """Rotation matrix Rz @ Ry @ Rx from angles in radians."""
    cx, sx = np.cos(rx), np.sin(rx)
    cy, sy = np.cos(ry), np.sin(ry)
    cz, sz = np.cos(rz), np.sin(rz)
    mx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    my = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    mz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return mz @ my @ mx
