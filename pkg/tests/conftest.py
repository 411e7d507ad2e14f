"""Shared fixtures: one full-size synthetic model and a small fast variant."""

import numpy as np
import pytest

from morphfit import (
    BilinearModel,
    SyntheticSpec,
    basis_for_model,
    make_synthetic_model,
)

SMALL_SPEC = SyntheticSpec(
    seed=1,
    n_vertices=120,
    n_identity=6,
    n_expression=5,
    n_landmarks=20,
    mode_band=20,
    identity_amplitude=4.0,
    expression_amplitude=6.0,
)


@pytest.fixture(scope="session")
def model() -> BilinearModel:
    """Full default synthetic model (N=1220, N_a=50, N_e=46)."""
    return make_synthetic_model()


@pytest.fixture(scope="session")
def small_model() -> BilinearModel:
    """Small synthetic model for tests that do not need paper-scale sizes."""
    return make_synthetic_model(SMALL_SPEC)


@pytest.fixture(scope="session")
def small_basis(small_model):
    return basis_for_model(small_model, k=30)


def make_mesh_model(points: np.ndarray, topology: np.ndarray,
                    uv: np.ndarray | None = None,
                    semantic: np.ndarray | None = None,
                    landmarks: np.ndarray | None = None) -> BilinearModel:
    """Wrap a bare mesh in a 1x1 bilinear model so mesh utilities can run on it."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = pts.shape[0]
    if uv is None:
        uv = np.zeros((n, 2))
    if semantic is None:
        semantic = np.zeros(n, dtype=np.uint8)
    if landmarks is None:
        landmarks = np.array([0], dtype=np.int32)
    return BilinearModel(
        tensor=pts.reshape(-1)[:, None, None],
        topology=np.asarray(topology, dtype=np.int32),
        uv=uv,
        semantic=semantic,
        landmark_indices=landmarks,
        neutral_expression=np.array([1.0]),
    )


def grid_mesh(rows: int, cols: int, z_of=None):
    """Regular grid mesh in the unit square, optional height function z(x, y)."""
    xs = np.linspace(0.0, 1.0, cols)
    ys = np.linspace(0.0, 1.0, rows)
    xx, yy = np.meshgrid(xs, ys)
    if z_of is None:
        zz = np.zeros_like(xx)
    else:
        zz = z_of(xx, yy)
    points = np.stack([xx, yy, zz], axis=-1).reshape(-1, 3)
    tris = []
    for i in range(rows - 1):
        for j in range(cols - 1):
            v00 = i * cols + j
            v01 = i * cols + j + 1
            v10 = (i + 1) * cols + j
            v11 = (i + 1) * cols + j + 1
            tris.append((v00, v01, v11))
            tris.append((v00, v11, v10))
    return points, np.asarray(tris, dtype=np.int32)
