"""Weak-perspective camera estimation and alternating bilinear model fitting.

The camera is scaled-orthographic: p = scale * R[:2] @ x + t with R a rotation,
scale in px/mm, t in pixels. Fitting alternates camera estimation, a ridge solve for
identity, and a box-constrained ridge solve for expression against 2-D landmarks.
Joint fitting shares one identity across several images by summing the per-image
normal equations. Refinement solves a Laplacian-regularized displacement toward a
depth cloud or toward the landmarks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.optimize import lsq_linear
from scipy.sparse.linalg import factorized, spsolve
from scipy.spatial import cKDTree

from .errors import DegenerateGeometryError, RegularizationError, SizingError
from .model import (
    BilinearModel,
    Coefficients,
    Shape,
    expression_basis,
    identity_basis,
)
from .spectral import graph_laplacian


@dataclass
class CameraPose:
    """Scaled-orthographic camera: p = scale * rotation[:2] @ x + translation."""

    rotation: np.ndarray     # (3, 3), orthonormal, det +1
    scale: float             # px/mm, > 0
    translation: np.ndarray  # (2,) pixels

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.scale = float(self.scale)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(2)

    def projection_rows(self) -> np.ndarray:
        """(2, 3) matrix mapping mm offsets to pixel offsets."""
        return self.scale * self.rotation[:2]


@dataclass
class FitConfig:
    """Knobs for the alternating fit and the refinement solves."""

    max_outer_iterations: int = 20     # alternation rounds
    convergence_tol: float = 1e-6      # relative landmark-SSE decrease to stop
    identity_ridge: float = 1e-4       # Tikhonov weight shrinking identity toward 0
    expression_ridge: float = 1e-4     # same for expression
    expression_bounds: tuple = (0.0, 1.0)
    bound_solver_tol: float = 1e-12    # optimality tolerance of the box solve
    gauge_normalize: bool = True       # rescale coefficients to unit sums at the end
    depth_iterations: int = 5          # closest-point rounds in refine_with_depth
    displacement_regularization: float = 1.0  # w on ||L D||^2 in both refines


@dataclass
class FitResult:
    """Per-image outcome of a fit."""

    pose: CameraPose
    coefficients: Coefficients
    landmark_rmse: float  # px over landmarks
    iterations: int
    converged: bool


@dataclass
class JointFitResult:
    """Shared identity plus the per-image fits that produced it."""

    identity: np.ndarray
    fits: list
    total_rmse: float


@dataclass
class DepthCloud:
    """Unordered 3-D points (mm) co-framed with the shape they refine."""

    points: np.ndarray  # (M, 3)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if self.points.shape[0] == 0:
            raise SizingError("depth cloud is empty")


# --- projection and camera estimation ---------------------------------------------


def project(pose: CameraPose, shape: Shape) -> np.ndarray:
    """Project all vertices to pixel coordinates, (N, 2)."""
    return shape.as_points() @ pose.projection_rows().T + pose.translation


def _project_points(pose: CameraPose, points: np.ndarray) -> np.ndarray:
    return points @ pose.projection_rows().T + pose.translation


def estimate_camera(points3d: np.ndarray, points2d: np.ndarray) -> CameraPose:
    """Closed-form weak-perspective pose from 3D-2D correspondences.

    Affine least squares first, then the 2x3 linear block is orthonormalized with an
    SVD polar step, scale is the mean row norm of the affine block, the third
    rotation row comes from the cross product, and one refinement pass re-solves
    scale and translation with the rotation fixed (so the residual never increases
    against the orthonormalized solution).

    Fewer than 4 correspondences or a coplanar point set raises
    DegenerateGeometryError.
    """
    pts3 = np.asarray(points3d, dtype=np.float64).reshape(-1, 3)
    pts2 = np.asarray(points2d, dtype=np.float64).reshape(-1, 2)
    if pts3.shape[0] != pts2.shape[0]:
        raise SizingError("points3d and points2d must pair up")
    m = pts3.shape[0]
    if m < 4:
        raise DegenerateGeometryError("camera estimation needs at least 4 points")
    if np.ptp(pts2[:, 0]) == 0.0 and np.ptp(pts2[:, 1]) == 0.0:
        # Without this guard the affine solve returns a roundoff-scale block that
        # can slip past the positive-scale checks as a spurious tiny fit.
        raise DegenerateGeometryError("constant observations carry no pose information")

    design = np.hstack([pts3, np.ones((m, 1))])
    if np.linalg.matrix_rank(design) < 4:
        raise DegenerateGeometryError(
            "3-D points are coplanar; weak-perspective pose is not recoverable"
        )
    sol, _, _, _ = np.linalg.lstsq(design, pts2, rcond=None)
    affine = sol[:3].T  # (2, 3) linear block

    scale = float(np.mean(np.linalg.norm(affine, axis=1)))
    if scale <= 0.0:
        raise DegenerateGeometryError("affine camera block vanished")
    u, _, vt = np.linalg.svd(affine, full_matrices=False)
    r2 = u @ vt  # nearest matrix with orthonormal rows
    r3 = np.cross(r2[0], r2[1])
    rotation = np.vstack([r2, r3])

    # Refinement: rotation fixed, re-solve scale and translation in closed form.
    q = pts3 @ r2.T  # (m, 2)
    a = np.zeros((2 * m, 3))
    a[0::2, 0] = q[:, 0]
    a[1::2, 0] = q[:, 1]
    a[0::2, 1] = 1.0
    a[1::2, 2] = 1.0
    b = pts2.reshape(-1)
    st, _, _, _ = np.linalg.lstsq(a, b, rcond=None)
    if st[0] <= 0.0:
        raise DegenerateGeometryError("refined weak-perspective scale is non-positive")
    return CameraPose(rotation=rotation, scale=st[0], translation=st[1:])


# --- ridge systems over model bases ------------------------------------------------


def _landmark_system(model: BilinearModel, basis_3n: np.ndarray, pose: CameraPose,
                     landmarks2d: np.ndarray):
    """Linear system J c = y mapping coefficients to landmark pixel residuals.

    basis_3n is (3N, n_coeff); rows are restricted to landmark vertices and pushed
    through the pose's 2x3 projection.
    """
    lm = model.landmark_indices
    n_coeff = basis_3n.shape[1]
    per_vertex = basis_3n.reshape(model.n_vertices, 3, n_coeff)[lm]  # (L, 3, C)
    p2 = pose.projection_rows()
    jac = np.einsum("ab,lbc->lac", p2, per_vertex).reshape(-1, n_coeff)  # (2L, C)
    rhs = (np.asarray(landmarks2d, float).reshape(-1, 2) - pose.translation).reshape(-1)
    return jac, rhs


def _check_landmarks(model: BilinearModel, landmarks2d: np.ndarray) -> np.ndarray:
    arr = np.asarray(landmarks2d, dtype=np.float64)
    if arr.shape != (model.n_landmarks, 2):
        raise SizingError(
            f"expected {model.n_landmarks} landmarks of dim 2, got {arr.shape}"
        )
    return arr


def _ridge_normal_equations(jac: np.ndarray, rhs: np.ndarray, ridge: float, what: str):
    if ridge < 0:
        raise RegularizationError(f"{what} ridge must be non-negative")
    if ridge == 0.0 and np.linalg.matrix_rank(jac) < jac.shape[1]:
        raise RegularizationError(
            f"{what} normal equations are singular; set a positive {what} ridge"
        )
    hess = jac.T @ jac + ridge * np.eye(jac.shape[1])
    grad = jac.T @ rhs
    return hess, grad


def solve_identity(model: BilinearModel, expression: np.ndarray, pose: CameraPose,
                   landmarks2d: np.ndarray, ridge: float = 1e-4) -> np.ndarray:
    """Ridge least-squares identity given pose and expression."""
    landmarks2d = _check_landmarks(model, landmarks2d)
    jac, rhs = _landmark_system(model, identity_basis(model, expression), pose, landmarks2d)
    hess, grad = _ridge_normal_equations(jac, rhs, ridge, "identity")
    return np.linalg.solve(hess, grad)


def _solve_box_ridge(jac: np.ndarray, rhs: np.ndarray, ridge: float, bounds: tuple,
                     tol: float) -> np.ndarray:
    """Ridge least squares clamped to a box, exact in both regimes.

    The unconstrained ridge solution is returned directly when it already lies
    inside the box; otherwise bounded-variable least squares on ridge-augmented
    rows is solved to KKT optimality. The ridge makes the quadratic strictly
    convex, so the box minimizer is unique and the result is deterministic."""
    if not (bounds[0] < bounds[1]):
        raise SizingError("expression bounds must satisfy lo < hi")
    hess, grad = _ridge_normal_equations(jac, rhs, ridge, "expression")
    unconstrained = np.linalg.solve(hess, grad)
    if (unconstrained >= bounds[0]).all() and (unconstrained <= bounds[1]).all():
        return unconstrained
    n = jac.shape[1]
    aug = np.vstack([jac, np.sqrt(ridge) * np.eye(n)])
    target = np.concatenate([rhs, np.zeros(n)])
    solution = lsq_linear(aug, target, bounds=bounds, method="bvls", tol=tol).x
    # The BVLS iterate can sit a few ulps outside the box; project it back on.
    return np.clip(solution, bounds[0], bounds[1])


def solve_expression(model: BilinearModel, identity: np.ndarray, pose: CameraPose,
                     landmarks2d: np.ndarray, ridge: float = 1e-4,
                     bounds: tuple = (0.0, 1.0), tol: float = 1e-12) -> np.ndarray:
    """Box-constrained ridge least-squares expression given pose and identity."""
    landmarks2d = _check_landmarks(model, landmarks2d)
    jac, rhs = _landmark_system(model, expression_basis(model, identity), pose, landmarks2d)
    return _solve_box_ridge(jac, rhs, ridge, bounds, tol)


# --- alternating fit ----------------------------------------------------------------


def _normalize_gauge(identity: np.ndarray, expressions: list, poses: list,
                     bounds: tuple):
    """Move a fit onto the unit-sum coefficient chart without changing projections.

    The scaled-orthographic projection of a bilinear shape is invariant under
    (a, e, s) -> (a/ga, e/ge, s*ga*ge), while the 3-D shape itself rescales by
    1/(ga*ge). Landmarks alone therefore cannot pin the object's metric size; the
    model's convention that coefficient vectors are unit-sum weights supplies the
    missing constraint. Rescaling an expression by a positive sum can never leave
    non-negative bounds (entries are <= their sum), but custom bounds are still
    checked and an infeasible rescale is skipped for that image.
    """
    ga = float(identity.sum())
    if not (ga > 1e-9):
        ga = 1.0
    new_identity = identity / ga
    new_expressions, new_poses = [], []
    lo, hi = bounds
    for expr, pose in zip(expressions, poses):
        ge = float(expr.sum())
        rescaled = expr / ge if ge > 1e-9 else None
        if rescaled is None or not ((rescaled >= lo).all() and (rescaled <= hi).all()):
            ge, rescaled = 1.0, expr.copy()
        new_expressions.append(rescaled)
        new_poses.append(
            CameraPose(pose.rotation.copy(), pose.scale * ga * ge, pose.translation.copy())
        )
    return new_identity, new_expressions, new_poses


def _alternate(model: BilinearModel, landmark_sets, config: FitConfig):
    """Shared-identity alternation over one or more landmark sets.

    Per outer iteration: re-estimate each pose (keeping the previous pose if the
    candidate raises that image's SSE), solve the shared identity from summed normal
    equations, then solve each expression. An iteration that would raise the total
    SSE is reverted, which makes the objective non-increasing by construction.
    All alternation algebra runs on the landmark-row restriction of the tensor;
    the full mesh is never contracted here.
    """
    sets = [_check_landmarks(model, s) for s in landmark_sets]
    if not sets:
        raise SizingError("need at least one landmark set")
    n_img = len(sets)
    n_a, n_e = model.n_identity, model.n_expression
    lm = model.landmark_indices
    n_lm = lm.shape[0]
    lm_tensor = (
        model.tensor.reshape(model.n_vertices, 3, n_a, n_e)[lm]
        .reshape(3 * n_lm, n_a, n_e)
    )

    def lm_points(identity_, expression_):
        return (np.tensordot(lm_tensor, expression_, axes=([2], [0])) @ identity_).reshape(-1, 3)

    def sse_one(pose_, identity_, expression_, obs):
        pred = _project_points(pose_, lm_points(identity_, expression_))
        return float(np.sum((pred - obs) ** 2))

    def restricted_system(basis, pose_, obs):
        per_vertex = basis.reshape(n_lm, 3, -1)
        jac = np.einsum("ab,lbc->lac", pose_.projection_rows(), per_vertex).reshape(2 * n_lm, -1)
        rhs = (obs - pose_.translation).reshape(-1)
        return jac, rhs

    neutral_pts = model.neutral_shape().as_points()[lm]
    poses = [estimate_camera(neutral_pts, s) for s in sets]
    expressions = [model.neutral_expression.copy() for _ in range(n_img)]
    # The reference identity only seeds the initial objective and pose; the first
    # identity solve below starts from scratch.
    identity = model.reference_identity()

    def total_sse(poses_, identity_, expressions_):
        return sum(sse_one(poses_[i], identity_, expressions_[i], sets[i]) for i in range(n_img))

    prev_obj = total_sse(poses, identity, expressions)
    iterations = 0
    converged = False
    for outer in range(config.max_outer_iterations):
        new_poses = list(poses)
        if outer > 0:
            for i in range(n_img):
                try:
                    cand = estimate_camera(lm_points(identity, expressions[i]), sets[i])
                except DegenerateGeometryError:
                    continue
                old = sse_one(poses[i], identity, expressions[i], sets[i])
                new = sse_one(cand, identity, expressions[i], sets[i])
                if new <= old:
                    new_poses[i] = cand

        # Shared identity: sum per-image normal equations, one ridge term.
        hess = config.identity_ridge * np.eye(n_a)
        grad = np.zeros(n_a)
        for i in range(n_img):
            basis = np.tensordot(lm_tensor, expressions[i], axes=([2], [0]))
            jac, rhs = restricted_system(basis, new_poses[i], sets[i])
            if config.identity_ridge == 0.0 and np.linalg.matrix_rank(jac) < n_a:
                raise RegularizationError(
                    "identity normal equations are singular; set a positive identity ridge"
                )
            hess += jac.T @ jac
            grad += jac.T @ rhs
        new_identity = np.linalg.solve(hess, grad)

        new_expressions = []
        for i in range(n_img):
            basis = np.tensordot(lm_tensor, new_identity, axes=([1], [0]))
            jac, rhs = restricted_system(basis, new_poses[i], sets[i])
            new_expressions.append(
                _solve_box_ridge(
                    jac, rhs, config.expression_ridge, config.expression_bounds,
                    config.bound_solver_tol,
                )
            )

        obj = total_sse(new_poses, new_identity, new_expressions)
        if obj > prev_obj + 1e-9:
            converged = True  # stationary: the full sweep cannot improve
            break
        poses, identity, expressions = new_poses, new_identity, new_expressions
        iterations += 1
        if prev_obj - obj <= config.convergence_tol * max(prev_obj, 1e-30):
            converged = True
            break
        prev_obj = obj

    if config.gauge_normalize:
        identity, expressions, poses = _normalize_gauge(
            identity, expressions, poses, config.expression_bounds
        )

    fits = []
    total_sse_final = 0.0
    for i in range(n_img):
        sse = sse_one(poses[i], identity, expressions[i], sets[i])
        total_sse_final += sse
        fits.append(
            FitResult(
                pose=poses[i],
                coefficients=Coefficients(identity.copy(), expressions[i].copy()),
                landmark_rmse=float(np.sqrt(sse / sets[i].shape[0])),
                iterations=iterations,
                converged=converged,
            )
        )
    total = float(np.sqrt(total_sse_final / sum(s.shape[0] for s in sets)))
    return JointFitResult(identity=identity, fits=fits, total_rmse=total)


def fit_image(model: BilinearModel, landmarks2d: np.ndarray,
              config: FitConfig | None = None) -> FitResult:
    """Fit pose, identity, and expression to one landmark set."""
    config = config or FitConfig()
    return _alternate(model, [landmarks2d], config).fits[0]


def fit_joint(model: BilinearModel, landmark_sets, config: FitConfig | None = None) -> JointFitResult:
    """Fit several images of one subject with a shared identity.

    With a single landmark set this is exactly fit_image (same code path)."""
    config = config or FitConfig()
    return _alternate(model, landmark_sets, config)


# --- Laplacian-regularized refinement -----------------------------------------------


def _laplacian_quadratic(model: BilinearModel) -> sp.csr_matrix:
    lap = graph_laplacian(model.topology, model.n_vertices)
    return (lap.T @ lap).tocsr()


def refine_with_depth(model: BilinearModel, shape: Shape, depth: DepthCloud,
                      config: FitConfig | None = None) -> Shape:
    """Pull a shape toward a depth cloud with a smooth displacement field.

    Iterates closest-point correspondences and, per round, solves
    min_D ||(X + D) - targets||^2 + w ||L D||^2 from the original X, one axis at a
    time. The objective under current correspondences never increases round over
    round. Shape and cloud must be co-framed.
    """
    config = config or FitConfig()
    if shape.n_vertices != model.n_vertices:
        raise SizingError("shape vertex count does not match the model")
    w = config.displacement_regularization
    if w < 0:
        raise RegularizationError("displacement regularization must be non-negative")

    x = shape.as_points()
    n = x.shape[0]
    tree = cKDTree(depth.points)
    disp = np.zeros_like(x)

    if w > 0:
        system = (sp.eye(n) + w * _laplacian_quadratic(model)).tocsc()
        solve = factorized(system)
        lap = graph_laplacian(model.topology, n)
    else:
        solve = None  # data term alone pins every vertex: D = targets - X
        lap = None

    prev_obj = np.inf
    for _ in range(max(1, config.depth_iterations)):
        _, idx = tree.query(x + disp)
        targets = depth.points[idx]
        residual = targets - x
        if solve is None:
            new_disp = residual.copy()
        else:
            new_disp = np.column_stack([solve(residual[:, ax]) for ax in range(3)])
        obj = float(np.sum((x + new_disp - targets) ** 2))
        if lap is not None:
            obj += w * float(np.sum((lap @ new_disp) ** 2))
        if obj > prev_obj + 1e-9:
            break  # correspondence flip-flop; keep the better displacement
        disp = new_disp
        prev_obj = obj
    return Shape((x + disp).reshape(-1))


def refine_with_landmarks(model: BilinearModel, shape: Shape, pose: CameraPose,
                          landmarks2d: np.ndarray,
                          config: FitConfig | None = None) -> Shape:
    """Laplacian-regularized displacement reducing landmark reprojection error.

    Solves min_D sum_l ||P (x_l + D_l) + t - p_l||^2 + w ||L D||^2 in one sparse
    solve; the projection is linear, so the output reprojection RMSE never exceeds
    the input's. w = 0 leaves non-landmark vertices unconstrained and raises."""
    config = config or FitConfig()
    landmarks2d = _check_landmarks(model, landmarks2d)
    if shape.n_vertices != model.n_vertices:
        raise SizingError("shape vertex count does not match the model")
    w = config.displacement_regularization
    if w <= 0:
        raise RegularizationError(
            "landmark refinement with w = 0 is under-constrained away from landmarks; "
            "set a positive displacement regularization"
        )

    n = model.n_vertices
    quad = _laplacian_quadratic(model)
    system = sp.kron(sp.eye(3), w * quad, format="lil")

    p2 = pose.projection_rows()
    block = p2.T @ p2  # (3, 3) coupling the axes of each landmark vertex
    rhs = np.zeros(3 * n)
    x = shape.as_points()
    proj = _project_points(pose, x[model.landmark_indices])
    residual = landmarks2d - proj  # (L, 2)
    for l, v in enumerate(model.landmark_indices):
        for ai in range(3):
            for aj in range(3):
                system[ai * n + v, aj * n + v] += block[ai, aj]
        rv = p2.T @ residual[l]
        for ai in range(3):
            rhs[ai * n + v] += rv[ai]

    disp = spsolve(system.tocsr(), rhs).reshape(3, n).T
    return Shape((x + disp).reshape(-1))


def landmark_rmse(model: BilinearModel, shape: Shape, pose: CameraPose,
                  landmarks2d: np.ndarray) -> float:
    """Pixel RMSE between projected landmark vertices and observed landmarks."""
    landmarks2d = _check_landmarks(model, landmarks2d)
    pred = _project_points(pose, shape.as_points()[model.landmark_indices])
    return float(np.sqrt(np.mean(np.sum((pred - landmarks2d) ** 2, axis=1))))
