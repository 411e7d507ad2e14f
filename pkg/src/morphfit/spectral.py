"""Graph-Laplacian spectral basis for per-vertex displacement fields.

The combinatorial Laplacian L = Degree - Adjacency of the triangle mesh yields an
orthonormal eigenbasis; low eigenvalues correspond to smooth fields. Displacement
fields are encoded per axis against one shared scalar basis, giving 3k coefficients
ordered [x-block, y-block, z-block].
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import MeshTopologyError, SizingError
from .fileio import load_bundle, save_bundle
from .model import mesh_edges


@dataclass
class DisplacementField:
    """Per-vertex 3-vectors (mm) on a mesh; optionally tagged with the mesh hash."""

    vectors: np.ndarray  # (N, 3)
    mesh_hash: str | None = None

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64).reshape(-1, 3)

    @property
    def n_vertices(self) -> int:
        return self.vectors.shape[0]


@dataclass
class SpectralBasis:
    """k smallest strictly-positive eigenpairs of a mesh Laplacian.

    eigenvalues: (k,) strictly positive, non-decreasing
    vectors: (N, k) orthonormal columns; the constant eigenvector is excluded
    mesh_hash: hash of the source topology, checked on encode/decode
    """

    eigenvalues: np.ndarray
    vectors: np.ndarray
    mesh_hash: str

    def __post_init__(self):
        self.eigenvalues = np.asarray(self.eigenvalues, dtype=np.float64).reshape(-1)
        self.vectors = np.asarray(self.vectors, dtype=np.float64)

    @property
    def k(self) -> int:
        return self.eigenvalues.shape[0]

    @property
    def n_vertices(self) -> int:
        return self.vectors.shape[0]

    def save(self, path) -> None:
        save_bundle(
            path,
            {"eigenvalues": self.eigenvalues, "vectors": self.vectors},
            meta={"mesh_hash": self.mesh_hash, "k": int(self.k)},
        )

    @classmethod
    def load(cls, path) -> "SpectralBasis":
        planes, meta = load_bundle(path)
        return cls(
            eigenvalues=planes["eigenvalues"],
            vectors=planes["vectors"],
            mesh_hash=meta["mesh_hash"],
        )


def topology_hash(n_vertices: int, topology: np.ndarray) -> str:
    """Same convention as BilinearModel.mesh_hash, usable on bare topology."""
    h = hashlib.sha256()
    h.update(struct.pack("<I", int(n_vertices)))
    h.update(np.ascontiguousarray(topology, dtype=np.int32).tobytes())
    return h.hexdigest()


def graph_laplacian(topology: np.ndarray, n_vertices: int | None = None) -> sp.csr_matrix:
    """Combinatorial Laplacian L = D - A of a triangle mesh's vertex graph.

    Raises MeshTopologyError for a disconnected mesh (naming the component count);
    the spectral basis below relies on a single zero eigenvalue.
    """
    topology = np.asarray(topology, dtype=np.int64)
    if topology.size == 0:
        raise MeshTopologyError("empty topology has no Laplacian")
    n = int(n_vertices) if n_vertices is not None else int(topology.max()) + 1
    edges = mesh_edges(topology)
    i = np.concatenate([edges[:, 0], edges[:, 1]])
    j = np.concatenate([edges[:, 1], edges[:, 0]])
    adj = sp.coo_matrix((np.ones(i.size), (i, j)), shape=(n, n)).tocsr()
    n_comp, _ = connected_components(adj, directed=False)
    if n_comp != 1:
        raise MeshTopologyError(f"mesh is disconnected: {n_comp} components")
    deg = np.asarray(adj.sum(axis=1)).reshape(-1)
    return (sp.diags(deg) - adj).tocsr()


def eigenbasis(laplacian, k: int, mesh_hash: str = "") -> SpectralBasis:
    """k smallest strictly-positive eigenpairs via a dense symmetric solve.

    The constant (zero-eigenvalue) vector is excluded. Each eigenvector's sign is
    fixed so its first entry of non-negligible magnitude is positive.
    """
    dense = laplacian.toarray() if sp.issparse(laplacian) else np.asarray(laplacian, float)
    n = dense.shape[0]
    if dense.shape != (n, n):
        raise SizingError("laplacian must be square")
    if not (1 <= k <= n - 1):
        raise SizingError(f"k={k} out of range for a mesh with {n} vertices")
    w, v = np.linalg.eigh(dense)

    zero_tol = max(w[-1], 1.0) * 1e-10
    n_zero = int(np.count_nonzero(w < zero_tol))
    if n_zero != 1:
        raise MeshTopologyError(
            f"{n_zero} numerically-zero eigenvalues; the mesh graph is not connected"
        )
    values = w[1 : k + 1].copy()
    vectors = v[:, 1 : k + 1].copy()

    # Deterministic sign: first entry whose magnitude is significant must be positive.
    for col in range(vectors.shape[1]):
        x = vectors[:, col]
        idx = np.flatnonzero(np.abs(x) > 1e-12 * max(1.0, np.abs(x).max()))
        if idx.size and x[idx[0]] < 0:
            vectors[:, col] = -x
    return SpectralBasis(eigenvalues=values, vectors=vectors, mesh_hash=mesh_hash)


def basis_for_model(model, k: int) -> SpectralBasis:
    """Eigenbasis of a model's mesh, tagged with its mesh hash."""
    lap = graph_laplacian(model.topology, model.n_vertices)
    return eigenbasis(lap, k, mesh_hash=model.mesh_hash())


def _check_compatible(basis: SpectralBasis, field: DisplacementField):
    if field.n_vertices != basis.n_vertices:
        raise SizingError(
            f"field has {field.n_vertices} vertices, basis {basis.n_vertices}"
        )
    if field.mesh_hash and basis.mesh_hash and field.mesh_hash != basis.mesh_hash:
        raise MeshTopologyError("mesh hash mismatch between basis and field")


def encode(basis: SpectralBasis, field: DisplacementField) -> np.ndarray:
    """Project a field onto the basis: 3k coefficients [x-block, y-block, z-block]."""
    _check_compatible(basis, field)
    return (basis.vectors.T @ field.vectors).T.reshape(-1)


def decode(basis: SpectralBasis, coeffs: np.ndarray, mesh_hash: str | None = None) -> DisplacementField:
    """Reconstruct a field from 3k coefficients."""
    coeffs = np.asarray(coeffs, dtype=np.float64).reshape(-1)
    if coeffs.shape != (3 * basis.k,):
        raise SizingError(f"expected {3 * basis.k} coefficients, got {coeffs.shape[0]}")
    blocks = coeffs.reshape(3, basis.k)
    vectors = (basis.vectors @ blocks.T)
    return DisplacementField(vectors=vectors, mesh_hash=mesh_hash or basis.mesh_hash)
