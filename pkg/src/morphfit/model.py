"""Bilinear face model: storage, contraction, bases, and per-vertex mesh attributes.

The model is a rank-3 tensor over (vertex coordinates, identity modes, expression
modes). A face shape is produced by contracting the tensor with one identity
coefficient vector and one expression coefficient vector; all geometry is in
millimeters.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BadMagicError,
    DegenerateGeometryError,
    SizingError,
    TruncatedFileError,
    VersionMismatchError,
)

MODEL_MAGIC = b"MFIT"
MODEL_VERSION = b"0001"

# Label ids for the per-vertex semantic regions. Ties in majority votes resolve to
# the lowest id, so "other" wins only all-distinct corner votes that include it.
SEMANTIC_LEGEND = ("other", "eyes", "eyebrows", "nose", "lips", "inner_mouth")

_AREA_EPS = 1e-12  # mm^2; triangles at or below this count as degenerate


@dataclass
class Shape:
    """A single face mesh geometry.

    positions: length-3N vector, grouped per vertex [x0, y0, z0, x1, ...], mm.
    """

    positions: np.ndarray

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1)
        if self.positions.size % 3 != 0:
            raise SizingError("shape position vector length must be a multiple of 3")

    @property
    def n_vertices(self) -> int:
        return self.positions.size // 3

    def as_points(self) -> np.ndarray:
        """View positions as an (N, 3) array."""
        return self.positions.reshape(-1, 3)


@dataclass
class Coefficients:
    """Identity and expression weights for one subject/expression pair."""

    identity: np.ndarray
    expression: np.ndarray

    def __post_init__(self):
        self.identity = np.asarray(self.identity, dtype=np.float64).reshape(-1)
        self.expression = np.asarray(self.expression, dtype=np.float64).reshape(-1)

    def copy(self) -> "Coefficients":
        return Coefficients(self.identity.copy(), self.expression.copy())


@dataclass
class VertexAttributes:
    """Per-vertex differential quantities of one shape on the model topology."""

    normals: np.ndarray        # (N, 3) unit vectors
    one_ring_area: np.ndarray  # (N,) mm^2, sum of incident non-degenerate triangle areas
    curvature: np.ndarray      # (N,) 1/mm-scaled, see vertex_attributes
    degenerate_triangles: int  # count of zero-area triangles skipped


@dataclass
class BilinearModel:
    """Bilinear face model plus the mesh metadata needed by the pipeline.

    tensor: (3N, N_a, N_e) float64
    topology: (T, 3) int32 vertex indices
    uv: (N, 2) float64 in [0, 1]^2
    semantic: (N,) uint8 labels into SEMANTIC_LEGEND
    landmark_indices: (L,) int32 vertex indices
    neutral_expression: (N_e,) float64, the expression vector of the neutral face
    """

    tensor: np.ndarray
    topology: np.ndarray
    uv: np.ndarray
    semantic: np.ndarray
    landmark_indices: np.ndarray
    neutral_expression: np.ndarray
    _hash_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.tensor = np.ascontiguousarray(self.tensor, dtype=np.float64)
        self.topology = np.ascontiguousarray(self.topology, dtype=np.int32)
        self.uv = np.ascontiguousarray(self.uv, dtype=np.float64)
        self.semantic = np.ascontiguousarray(self.semantic, dtype=np.uint8)
        self.landmark_indices = np.ascontiguousarray(self.landmark_indices, dtype=np.int32)
        self.neutral_expression = np.ascontiguousarray(self.neutral_expression, dtype=np.float64)
        self.validate()

    # --- sizes ---------------------------------------------------------------

    @property
    def n_vertices(self) -> int:
        return self.tensor.shape[0] // 3

    @property
    def n_identity(self) -> int:
        return self.tensor.shape[1]

    @property
    def n_expression(self) -> int:
        return self.tensor.shape[2]

    @property
    def n_triangles(self) -> int:
        return self.topology.shape[0]

    @property
    def n_landmarks(self) -> int:
        return self.landmark_indices.shape[0]

    def validate(self):
        if self.tensor.ndim != 3 or self.tensor.shape[0] % 3 != 0:
            raise SizingError("tensor must have shape (3N, N_a, N_e)")
        n = self.n_vertices
        if self.topology.ndim != 2 or self.topology.shape[1] != 3:
            raise SizingError("topology must have shape (T, 3)")
        if self.topology.size and (self.topology.min() < 0 or self.topology.max() >= n):
            raise SizingError("topology references vertices outside [0, N)")
        if self.uv.shape != (n, 2):
            raise SizingError("uv must have shape (N, 2)")
        if self.semantic.shape != (n,):
            raise SizingError("semantic labels must have shape (N,)")
        if self.semantic.size and self.semantic.max() >= len(SEMANTIC_LEGEND):
            raise SizingError("semantic label outside the legend")
        if self.landmark_indices.ndim != 1:
            raise SizingError("landmark_indices must be a flat index vector")
        if self.landmark_indices.size and (
            self.landmark_indices.min() < 0 or self.landmark_indices.max() >= n
        ):
            raise SizingError("landmark index outside [0, N)")
        if self.neutral_expression.shape != (self.n_expression,):
            raise SizingError("neutral_expression length must equal N_e")
        if not np.isfinite(self.tensor).all():
            raise SizingError("tensor contains non-finite entries")

    # --- hashes for cache keys and provenance checks --------------------------

    def mesh_hash(self) -> str:
        """Hash of vertex count and topology; identifies the graph structure."""
        if "mesh" not in self._hash_cache:
            h = hashlib.sha256()
            h.update(struct.pack("<I", self.n_vertices))
            h.update(np.ascontiguousarray(self.topology).tobytes())
            self._hash_cache["mesh"] = h.hexdigest()
        return self._hash_cache["mesh"]

    def uv_hash(self) -> str:
        """Hash of the UV atlas plus topology; identifies the raster layout."""
        if "uv" not in self._hash_cache:
            h = hashlib.sha256()
            h.update(self.mesh_hash().encode())
            h.update(np.ascontiguousarray(self.uv).tobytes())
            self._hash_cache["uv"] = h.hexdigest()
        return self._hash_cache["uv"]

    # --- canonical shapes ------------------------------------------------------

    def reference_identity(self) -> np.ndarray:
        """Uniform identity weights summing to 1; the model's canonical subject."""
        return np.full(self.n_identity, 1.0 / self.n_identity)

    def neutral_shape(self) -> Shape:
        """Canonical-subject face at the neutral expression."""
        return contract_bilinear(
            self, Coefficients(self.reference_identity(), self.neutral_expression)
        )


# --- contraction and bases -----------------------------------------------------


def contract_bilinear(model: BilinearModel, coeffs: Coefficients) -> Shape:
    """Contract the model tensor with identity and expression weights.

    positions[v] = sum_ij tensor[v, i, j] * identity[i] * expression[j]
    """
    a = coeffs.identity
    e = coeffs.expression
    if a.shape != (model.n_identity,):
        raise SizingError(
            f"identity length {a.shape[0]} != model N_a {model.n_identity}"
        )
    if e.shape != (model.n_expression,):
        raise SizingError(
            f"expression length {e.shape[0]} != model N_e {model.n_expression}"
        )
    positions = np.tensordot(model.tensor, e, axes=([2], [0])) @ a
    return Shape(positions)


def expression_basis(model: BilinearModel, identity: np.ndarray) -> np.ndarray:
    """(3N, N_e) linear basis for expressions at a fixed identity."""
    identity = np.asarray(identity, dtype=np.float64).reshape(-1)
    if identity.shape != (model.n_identity,):
        raise SizingError("identity length does not match the model")
    return np.tensordot(model.tensor, identity, axes=([1], [0]))


def identity_basis(model: BilinearModel, expression: np.ndarray) -> np.ndarray:
    """(3N, N_a) linear basis for identities at a fixed expression."""
    expression = np.asarray(expression, dtype=np.float64).reshape(-1)
    if expression.shape != (model.n_expression,):
        raise SizingError("expression length does not match the model")
    return np.tensordot(model.tensor, expression, axes=([2], [0]))


# --- per-vertex attributes -------------------------------------------------------


def mesh_edges(topology: np.ndarray) -> np.ndarray:
    """Unique undirected edges (E, 2) of a triangle list."""
    t = np.asarray(topology, dtype=np.int64)
    e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]], axis=0)
    e.sort(axis=1)
    return np.unique(e, axis=0)


def vertex_attributes(model: BilinearModel, shape: Shape) -> VertexAttributes:
    """Normals, one-ring areas, and a discrete curvature proxy for one shape.

    Normals are area-weighted averages of incident triangle normals. The curvature
    proxy is the uniform graph-Laplacian displacement of the vertex positions
    projected onto the vertex normal, scaled by the reciprocal one-ring area; it is
    exactly zero on planar meshes and has a uniform sign on convex ones.

    Zero-area triangles are skipped; a vertex whose entire ring is degenerate (or
    empty) raises DegenerateGeometryError.
    """
    if shape.n_vertices != model.n_vertices:
        raise SizingError("shape vertex count does not match the model")
    pts = shape.as_points()
    tris = model.topology
    n = model.n_vertices

    p0, p1, p2 = pts[tris[:, 0]], pts[tris[:, 1]], pts[tris[:, 2]]
    face_normal = np.cross(p1 - p0, p2 - p0)  # norm is twice the area
    double_area = np.linalg.norm(face_normal, axis=1)
    degenerate = double_area <= 2.0 * _AREA_EPS
    face_normal = np.where(degenerate[:, None], 0.0, face_normal)
    area = np.where(degenerate, 0.0, 0.5 * double_area)

    normal_acc = np.zeros((n, 3))
    ring = np.zeros(n)
    for k in range(3):
        np.add.at(normal_acc, tris[:, k], face_normal)
        np.add.at(ring, tris[:, k], area)

    if (ring <= 0.0).any():
        bad = int(np.flatnonzero(ring <= 0.0)[0])
        raise DegenerateGeometryError(
            f"vertex {bad} has no non-degenerate incident triangle"
        )
    norm_len = np.linalg.norm(normal_acc, axis=1)
    if (norm_len <= 0.0).any():
        bad = int(np.flatnonzero(norm_len <= 0.0)[0])
        raise DegenerateGeometryError(
            f"vertex {bad}: incident triangle normals cancel exactly"
        )
    normals = normal_acc / norm_len[:, None]

    # Uniform graph Laplacian of the positions: deg(v) * x_v - sum of neighbors.
    edges = mesh_edges(tris)
    lap = np.zeros((n, 3))
    deg = np.zeros(n)
    np.add.at(lap, edges[:, 0], pts[edges[:, 0]] - pts[edges[:, 1]])
    np.add.at(lap, edges[:, 1], pts[edges[:, 1]] - pts[edges[:, 0]])
    np.add.at(deg, edges[:, 0], 1.0)
    np.add.at(deg, edges[:, 1], 1.0)

    curvature = np.einsum("ij,ij->i", normals, lap) / ring
    return VertexAttributes(
        normals=normals,
        one_ring_area=ring,
        curvature=curvature,
        degenerate_triangles=int(degenerate.sum()),
    )


# --- model file format -----------------------------------------------------------
#
# Layout (little-endian throughout):
#   8 bytes   magic "MFIT0001" (4 magic + 4 version)
#   5 x u32   N, N_a, N_e, triangle count, landmark count
#   3 x u32   element strides of the tensor over (vertex-coord, identity, expression)
#   tensor    3N * N_a * N_e float64
#   topology  T * 3 int32
#   uv        N * 2 float64
#   semantic  N uint8
#   landmarks L int32
#   neutral   N_e float64


def save_model(model: BilinearModel, path) -> None:
    na, ne = model.n_identity, model.n_expression
    header = MODEL_MAGIC + MODEL_VERSION
    header += struct.pack(
        "<5I",
        model.n_vertices,
        na,
        ne,
        model.n_triangles,
        model.n_landmarks,
    )
    header += struct.pack("<3I", na * ne, ne, 1)
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(model.tensor, dtype="<f8").tobytes())
        f.write(np.ascontiguousarray(model.topology, dtype="<i4").tobytes())
        f.write(np.ascontiguousarray(model.uv, dtype="<f8").tobytes())
        f.write(np.ascontiguousarray(model.semantic, dtype="u1").tobytes())
        f.write(np.ascontiguousarray(model.landmark_indices, dtype="<i4").tobytes())
        f.write(np.ascontiguousarray(model.neutral_expression, dtype="<f8").tobytes())


def _take(buf: bytes, offset: int, count: int, dtype, what: str):
    nbytes = count * np.dtype(dtype).itemsize
    if offset + nbytes > len(buf):
        raise TruncatedFileError(f"model file truncated while reading {what}")
    arr = np.frombuffer(buf, dtype=dtype, count=count, offset=offset)
    return arr, offset + nbytes


def load_model(path) -> BilinearModel:
    with open(path, "rb") as f:
        buf = f.read()
    if len(buf) < 8:
        raise TruncatedFileError("model file shorter than its magic")
    if buf[:4] != MODEL_MAGIC:
        raise BadMagicError(f"bad magic {buf[:4]!r}, expected {MODEL_MAGIC!r}")
    if buf[4:8] != MODEL_VERSION:
        raise VersionMismatchError(
            f"unsupported model version {buf[4:8]!r}, expected {MODEL_VERSION!r}"
        )
    if len(buf) < 8 + 8 * 4:
        raise TruncatedFileError("model file truncated in the header")
    n, na, ne, nt, nl = struct.unpack_from("<5I", buf, 8)
    strides = struct.unpack_from("<3I", buf, 28)
    if strides != (na * ne, ne, 1):
        raise VersionMismatchError(f"unsupported tensor layout with strides {strides}")

    off = 40
    tensor, off = _take(buf, off, 3 * n * na * ne, "<f8", "tensor")
    topology, off = _take(buf, off, nt * 3, "<i4", "topology")
    uv, off = _take(buf, off, n * 2, "<f8", "uv")
    semantic, off = _take(buf, off, n, "u1", "semantic labels")
    landmarks, off = _take(buf, off, nl, "<i4", "landmark indices")
    neutral, off = _take(buf, off, ne, "<f8", "neutral expression")
    if off != len(buf):
        raise TruncatedFileError(
            f"model file has {len(buf) - off} trailing bytes after the payload"
        )
    return BilinearModel(
        tensor=tensor.reshape(3 * n, na, ne),
        topology=topology.reshape(nt, 3),
        uv=uv.reshape(n, 2),
        semantic=semantic,
        landmark_indices=landmarks,
        neutral_expression=neutral,
    )
