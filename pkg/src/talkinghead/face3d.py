"""Linear 3D morphable face model.

A face mesh is the mean shape plus linear combinations of identity and
expression basis columns; a rigid head pose (Euler rotation + translation)
is applied on top. Mouth-region vertices are gathered out for the sync
scorer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class FaceBasis:
    """Mean shape and identity/expression bases spanning a linear face space.

    mean_shape is a flat length-3N vector (x0, y0, z0, x1, ...); the bases
    are 3N x D matrices whose columns are deformation directions.
    mouth_indices are the vertex indices (strictly increasing, < N) whose
    motion drives the lip-sync scorer.
    """

    mean_shape: np.ndarray
    basis_id: np.ndarray
    basis_exp: np.ndarray
    mouth_indices: np.ndarray

    def __post_init__(self):
        self.mean_shape = np.asarray(self.mean_shape, dtype=np.float64).ravel()
        self.basis_id = np.asarray(self.basis_id, dtype=np.float64)
        self.basis_exp = np.asarray(self.basis_exp, dtype=np.float64)
        self.mouth_indices = np.asarray(self.mouth_indices, dtype=np.int64).ravel()
        n3 = self.mean_shape.shape[0]
        if n3 % 3 != 0:
            raise ValueError(f"mean_shape length {n3} is not a multiple of 3")
        if self.basis_id.ndim != 2 or self.basis_id.shape[0] != n3:
            raise ValueError("basis_id must be a 3N x D_alpha matrix")
        if self.basis_exp.ndim != 2 or self.basis_exp.shape[0] != n3:
            raise ValueError("basis_exp must be a 3N x D_beta matrix")
        if self.mouth_indices.size == 0:
            raise ValueError("mouth_indices must be non-empty")
        if np.any(np.diff(self.mouth_indices) <= 0):
            raise ValueError("mouth_indices must be strictly increasing")
        if self.mouth_indices[0] < 0 or self.mouth_indices[-1] >= n3 // 3:
            raise ValueError("mouth_indices out of vertex range")

    @property
    def num_vertices(self) -> int:
        return self.mean_shape.shape[0] // 3

    @property
    def dim_id(self) -> int:
        return self.basis_id.shape[1]

    @property
    def dim_exp(self) -> int:
        return self.basis_exp.shape[1]


@dataclass
class Mesh:
    """N x 3 vertex positions."""

    vertices: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise ValueError("vertices must be an N x 3 array")
        if not np.all(np.isfinite(self.vertices)):
            raise ValueError("vertices must be finite")


@dataclass
class PoseCoeffs:
    """Head pose: Euler rotation angles (radians) and a translation vector."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).ravel()
        self.translation = np.asarray(self.translation, dtype=np.float64).ravel()
        if self.rotation.shape != (3,) or self.translation.shape != (3,):
            raise ValueError("rotation and translation must each have 3 entries")

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.rotation, self.translation])

    @classmethod
    def from_vector(cls, vec) -> "PoseCoeffs":
        vec = np.asarray(vec, dtype=np.float64).ravel()
        if vec.shape != (6,):
            raise ValueError("pose vector must have 6 entries")
        return cls(vec[:3], vec[3:])


def reconstruct_mesh(basis: FaceBasis, alpha, beta) -> Mesh:
    """Reconstruct vertices: mean shape + identity and expression offsets.

    alpha and beta are coefficient vectors against basis_id / basis_exp.
    """
    alpha = np.asarray(alpha, dtype=np.float64).ravel()
    beta = np.asarray(beta, dtype=np.float64).ravel()
    if alpha.shape[0] != basis.dim_id:
        raise ValueError(f"alpha has {alpha.shape[0]} entries, basis expects {basis.dim_id}")
    if beta.shape[0] != basis.dim_exp:
        raise ValueError(f"beta has {beta.shape[0]} entries, basis expects {basis.dim_exp}")
    flat = basis.mean_shape + basis.basis_id @ alpha + basis.basis_exp @ beta
    return Mesh(flat.reshape(basis.num_vertices, 3))


def euler_rotation_matrix(rotation) -> np.ndarray:
    """Rotation matrix R = Rz(rz) @ Ry(ry) @ Rx(rx) for Euler angles in radians."""
    rx, ry, rz = np.asarray(rotation, dtype=np.float64).ravel()
    cx, sx = math.cos(rx), math.sin(rx)
    cy, sy = math.cos(ry), math.sin(ry)
    cz, sz = math.cos(rz), math.sin(rz)
    rot_x = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    rot_y = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rot_z = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return rot_z @ rot_y @ rot_x


def apply_pose(mesh: Mesh, pose: PoseCoeffs) -> Mesh:
    """Rigidly transform a mesh: v -> R v + t per vertex."""
    rot = euler_rotation_matrix(pose.rotation)
    return Mesh(mesh.vertices @ rot.T + pose.translation)


def select_mouth_motion(mesh: Mesh, basis: FaceBasis) -> np.ndarray:
    """Gather the mouth vertices' (x, y, z) in index order as one flat vector."""
    if basis.mouth_indices[-1] >= mesh.vertices.shape[0]:
        raise ValueError("mouth index exceeds mesh vertex count")
    return mesh.vertices[basis.mouth_indices].ravel()


def mouth_linear_map(basis: FaceBasis, alpha) -> tuple[np.ndarray, np.ndarray]:
    """Mouth motion as an affine map of expression coefficients.

    Returns (offset, weights) with mouth_motion(beta) = offset + weights @ beta,
    identical to select_mouth_motion(reconstruct_mesh(basis, alpha, beta), basis).
    Training uses this to differentiate the sync loss through predicted
    expression coefficients.
    """
    alpha = np.asarray(alpha, dtype=np.float64).ravel()
    if alpha.shape[0] != basis.dim_id:
        raise ValueError(f"alpha has {alpha.shape[0]} entries, basis expects {basis.dim_id}")
    rows = (3 * basis.mouth_indices[:, None] + np.arange(3)).ravel()
    offset = (basis.mean_shape + basis.basis_id @ alpha)[rows]
    return offset, basis.basis_exp[rows]


def make_synthetic_basis(
    N: int,
    D_alpha: int,
    D_beta: int,
    mouth_fraction: float = 0.25,
    seed: int = 0,
) -> FaceBasis:
    """Random stand-in face basis with the last ceil(mouth_fraction*N) vertices as mouth.

    Basis entries are i.i.d. standard normal scaled by 1/sqrt(3N) so unit
    coefficient perturbations displace the mesh by O(1) in total norm.
    """
    if N < 4:
        raise ValueError("N must be at least 4")
    if D_alpha < 1 or D_beta < 1:
        raise ValueError("basis dimensions must be at least 1")
    if not 0.0 < mouth_fraction <= 1.0:
        raise ValueError("mouth_fraction must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    scale = 1.0 / math.sqrt(3 * N)
    mean_shape = rng.standard_normal(3 * N)
    basis_id = rng.standard_normal((3 * N, D_alpha)) * scale
    basis_exp = rng.standard_normal((3 * N, D_beta)) * scale
    n_mouth = math.ceil(mouth_fraction * N)
    mouth = np.arange(N - n_mouth, N, dtype=np.int64)
    return FaceBasis(mean_shape, basis_id, basis_exp, mouth)
