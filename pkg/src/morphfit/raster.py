"""Deterministic software rasterization in UV and image space.

Coverage samples pixel centers (col + 0.5, row + 0.5) with a top-left fill rule so a
pixel center exactly on a shared edge is claimed by exactly one triangle. Attribute
interpolation is barycentric; image-space rasterization z-buffers on camera-space
depth (larger depth is closer, ties keep the lower triangle index). Texture lookups
are bilinear with border clamping.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SizingError, UvLayoutError
from .fileio import load_bundle, save_bundle
from .model import BilinearModel, SEMANTIC_LEGEND, Shape, vertex_attributes


@dataclass
class Image:
    """Float pixel data in [0, 1], always (h, w, c)."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim == 2:
            self.data = self.data[:, :, None]
        if self.data.ndim != 3:
            raise SizingError("image data must be (h, w) or (h, w, c)")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass
class Texture:
    """A UV-space color map plus a per-texel validity mask."""

    image: Image
    valid: np.ndarray  # (res, res) bool

    def __post_init__(self):
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.valid.shape != self.image.data.shape[:2]:
            raise SizingError("texture validity mask must match the image extent")

    @property
    def resolution(self) -> int:
        return self.image.data.shape[0]


@dataclass
class RasterGrid:
    """Per-pixel triangle assignment of one rasterization pass."""

    triangle: np.ndarray     # (h, w) int32, -1 where uncovered
    barycentric: np.ndarray  # (h, w, 3) in original corner order
    mask: np.ndarray         # (h, w) bool
    depth: np.ndarray | None = None  # (h, w) z-buffer, -inf where uncovered

    # Flattened gather views over covered pixels, filled by finalize().
    rows: np.ndarray | None = None
    cols: np.ndarray | None = None
    corners: np.ndarray | None = None  # (P, 3) vertex ids
    weights: np.ndarray | None = None  # (P, 3)

    def finalize(self, topology: np.ndarray):
        self.rows, self.cols = np.nonzero(self.mask)
        tri = self.triangle[self.rows, self.cols]
        self.corners = topology[tri]
        self.weights = self.barycentric[self.rows, self.cols]
        return self

    def interpolate(self, vertex_values: np.ndarray, fill: float = 0.0) -> np.ndarray:
        """Barycentric interpolation of per-vertex values over covered pixels."""
        vals = np.asarray(vertex_values, dtype=np.float64)
        squeeze = vals.ndim == 1
        if squeeze:
            vals = vals[:, None]
        gathered = vals[self.corners]  # (P, 3, C)
        out_flat = np.einsum("pk,pkc->pc", self.weights, gathered)
        h, w = self.mask.shape
        out = np.full((h, w, vals.shape[1]), fill, dtype=np.float64)
        out[self.rows, self.cols] = out_flat
        return out[:, :, 0] if squeeze else out


# Barycentric weight below which a double-claimed pixel counts as a shared-edge
# rounding tie rather than a genuine overlap. Roundoff ties sit near 1e-16 of the
# triangle scale; real folds claim pixels with interior weights many orders above.
_OVERLAP_TOL = 1e-9


def _edge_accepts_boundary(ax, ay, bx, by) -> bool:
    # Top-left rule for positively-oriented triangles in y-down pixel coords:
    # an edge owns its boundary pixels iff it heads upward (dy < 0) or is a
    # rightward horizontal (top) edge. A shared edge is traversed in opposite
    # directions by its two triangles, so exactly one side owns it.
    dy = by - ay
    dx = bx - ax
    return dy < 0 or (dy == 0 and dx > 0)


def _pixel_span(lo: float, hi: float, size: int):
    first = int(np.ceil(lo - 0.5))
    last = int(np.floor(hi - 0.5))
    return max(first, 0), min(last, size - 1)


def rasterize_mesh(points2: np.ndarray, topology: np.ndarray, width: int, height: int,
                   depth_values: np.ndarray | None = None,
                   detect_overlap: bool = False) -> RasterGrid:
    """Rasterize projected triangles onto a pixel grid.

    points2: (N, 2) pixel coordinates. With depth_values, occlusion is resolved by
    keeping the strictly larger interpolated depth (lower triangle index on exact
    ties). Without depth, detect_overlap=True raises UvLayoutError listing triangle
    pairs that claim one pixel twice.
    """
    pts = np.asarray(points2, dtype=np.float64)
    tris = np.asarray(topology, dtype=np.int64)
    tri_map = np.full((height, width), -1, dtype=np.int32)
    bary_map = np.zeros((height, width, 3))
    zbuf = np.full((height, width), -np.inf) if depth_values is not None else None
    overlaps = []

    for t in range(tris.shape[0]):
        i0, i1, i2 = tris[t]
        p0, p1, p2 = pts[i0], pts[i1], pts[i2]
        area2 = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p1[1] - p0[1]) * (p2[0] - p0[0])
        swapped = False
        if area2 == 0.0:
            continue  # degenerate projection covers nothing
        if area2 < 0.0:
            p1, p2 = p2, p1
            area2 = -area2
            swapped = True

        xs0, xs1 = _pixel_span(min(p0[0], p1[0], p2[0]), max(p0[0], p1[0], p2[0]), width)
        ys0, ys1 = _pixel_span(min(p0[1], p1[1], p2[1]), max(p0[1], p1[1], p2[1]), height)
        if xs0 > xs1 or ys0 > ys1:
            continue
        px = np.arange(xs0, xs1 + 1) + 0.5
        py = (np.arange(ys0, ys1 + 1) + 0.5)[:, None]

        e0 = (p2[0] - p1[0]) * (py - p1[1]) - (p2[1] - p1[1]) * (px - p1[0])
        e1 = (p0[0] - p2[0]) * (py - p2[1]) - (p0[1] - p2[1]) * (px - p2[0])
        e2 = (p1[0] - p0[0]) * (py - p0[1]) - (p1[1] - p0[1]) * (px - p0[0])
        in0 = (e0 > 0) | ((e0 == 0) & _edge_accepts_boundary(p1[0], p1[1], p2[0], p2[1]))
        in1 = (e1 > 0) | ((e1 == 0) & _edge_accepts_boundary(p2[0], p2[1], p0[0], p0[1]))
        in2 = (e2 > 0) | ((e2 == 0) & _edge_accepts_boundary(p0[0], p0[1], p1[0], p1[1]))
        inside = in0 & in1 & in2
        if not inside.any():
            continue

        sub_r, sub_c = np.nonzero(inside)
        rows = sub_r + ys0
        cols = sub_c + xs0
        w0 = e0[sub_r, sub_c] / area2
        w1 = e1[sub_r, sub_c] / area2
        w2 = e2[sub_r, sub_c] / area2
        if swapped:
            w1, w2 = w2, w1  # report weights in original corner order

        if zbuf is not None:
            dv = np.asarray(depth_values, dtype=np.float64)
            z = w0 * dv[i0] + w1 * dv[i1] + w2 * dv[i2]
            take = z > zbuf[rows, cols]
            rows, cols = rows[take], cols[take]
            w0, w1, w2, z = w0[take], w1[take], w2[take], z[take]
            zbuf[rows, cols] = z
        elif detect_overlap:
            prior = tri_map[rows, cols]
            claimed = prior >= 0
            if claimed.any():
                # A pixel center a few ulps from a shared edge can pass the
                # strict e > 0 test in both triangles because each evaluates the
                # edge from differently rounded endpoints. Such ties have a
                # near-zero barycentric weight on at least one side; only claims
                # interior on both sides mark a genuine fold.
                new_min = np.minimum(np.minimum(w0, w1), w2)
                prior_min = bary_map[rows, cols].min(axis=1)
                genuine = claimed & (new_min > _OVERLAP_TOL) & (prior_min > _OVERLAP_TOL)
                for other in np.unique(prior[genuine]):
                    overlaps.append((int(other), t))

        tri_map[rows, cols] = t
        bary_map[rows, cols, 0] = w0
        bary_map[rows, cols, 1] = w1
        bary_map[rows, cols, 2] = w2

    if overlaps:
        raise UvLayoutError(
            f"UV layout is not an embedding; overlapping triangle pairs: {overlaps}",
            pairs=overlaps,
        )
    grid = RasterGrid(triangle=tri_map, barycentric=bary_map, mask=tri_map >= 0, depth=zbuf)
    return grid.finalize(tris)


# --- UV layout (cached) -------------------------------------------------------------

_LAYOUT_CACHE: dict = {}


def uv_layout(model: BilinearModel, resolution: int) -> RasterGrid:
    """Rasterization of the model's UV atlas, cached per (uv_hash, resolution).

    Raises UvLayoutError if UV triangles overlap anywhere on the grid."""
    if resolution <= 0:
        raise SizingError("resolution must be positive")
    key = (model.uv_hash(), resolution)
    if key not in _LAYOUT_CACHE:
        pix = model.uv * resolution
        _LAYOUT_CACHE[key] = rasterize_mesh(
            pix, model.topology, resolution, resolution, detect_overlap=True
        )
    return _LAYOUT_CACHE[key]


def rasterize_uv(model: BilinearModel, vertex_values: np.ndarray, resolution: int):
    """Interpolate per-vertex values over the UV atlas.

    Returns (map, mask); map is (res, res) or (res, res, C) matching the input."""
    vals = np.asarray(vertex_values, dtype=np.float64)
    if vals.shape[0] != model.n_vertices:
        raise SizingError("vertex value count does not match the model")
    layout = uv_layout(model, resolution)
    return layout.interpolate(vals), layout.mask.copy()


# --- sampling -----------------------------------------------------------------------


def bilinear_sample(data: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Bilinear lookup at pixel coordinates with border clamping.

    Coordinates follow the pixel-center convention: (c + 0.5, r + 0.5) hits texel
    (r, c) exactly."""
    arr = np.asarray(data, dtype=np.float64)
    squeeze = arr.ndim == 2
    if squeeze:
        arr = arr[:, :, None]
    h, w = arr.shape[:2]
    fx = np.clip(np.asarray(xs, dtype=np.float64) - 0.5, 0.0, w - 1.0)
    fy = np.clip(np.asarray(ys, dtype=np.float64) - 0.5, 0.0, h - 1.0)
    x0 = np.floor(fx).astype(np.int64)
    y0 = np.floor(fy).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    wx = (fx - x0)[..., None]
    wy = (fy - y0)[..., None]
    top = arr[y0, x0] * (1 - wx) + arr[y0, x1] * wx
    bot = arr[y1, x0] * (1 - wx) + arr[y1, x1] * wx
    out = top * (1 - wy) + bot * wy
    return out[..., 0] if squeeze else out


def _sample_support_valid(valid: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """True where all four bilinear support texels are valid."""
    v = np.asarray(valid, dtype=np.float64)
    return bilinear_sample(v, xs, ys) >= 1.0 - 1e-12


# --- image-space render ---------------------------------------------------------------


@dataclass
class RenderResult:
    image: Image                  # (h, w, 3); background pixels untouched
    coverage: np.ndarray          # geometry hit AND texture sample valid
    geometry_mask: np.ndarray     # raw rasterization coverage
    depth: np.ndarray             # camera-space z-buffer, -inf where uncovered
    scalar_plane: np.ndarray | None = None  # interpolated per-vertex scalar


def camera_space(pose, shape: Shape) -> np.ndarray:
    """Vertices rotated into camera coordinates (mm); z grows toward the viewer."""
    return shape.as_points() @ pose.rotation.T


def render(shape: Shape, texture: Texture, pose, model: BilinearModel,
           size, vertex_scalar: np.ndarray | None = None,
           background: np.ndarray | None = None) -> RenderResult:
    """Rasterize a posed shape with bilinear texture lookup per covered pixel."""
    if shape.n_vertices != model.n_vertices:
        raise SizingError("shape vertex count does not match the model")
    if isinstance(size, int):
        width = height = size
    else:
        width, height = size
    cam = camera_space(pose, shape)
    proj = pose.scale * cam[:, :2] + pose.translation
    grid = rasterize_mesh(proj, model.topology, width, height, depth_values=cam[:, 2])

    if background is not None:
        canvas = np.array(background, dtype=np.float64, copy=True)
        if canvas.shape != (height, width, 3):
            raise SizingError("background must be (h, w, 3)")
    else:
        canvas = np.zeros((height, width, 3))

    coverage = np.zeros((height, width), dtype=bool)
    if grid.rows.size:
        uv_at = np.einsum("pk,pkc->pc", grid.weights, model.uv[grid.corners])
        sx = uv_at[:, 0] * texture.resolution
        sy = uv_at[:, 1] * texture.resolution
        colors = bilinear_sample(texture.image.data, sx, sy)
        valid = _sample_support_valid(texture.valid, sx, sy)
        rows = grid.rows[valid]
        cols = grid.cols[valid]
        canvas[rows, cols] = np.clip(colors[valid], 0.0, 1.0)
        coverage[rows, cols] = True

    scalar_plane = None
    if vertex_scalar is not None:
        scalar = np.asarray(vertex_scalar, dtype=np.float64).reshape(-1)
        if scalar.shape[0] != model.n_vertices:
            raise SizingError("vertex scalar length does not match the model")
        scalar_plane = grid.interpolate(scalar)

    return RenderResult(
        image=Image(canvas),
        coverage=coverage,
        geometry_mask=grid.mask.copy(),
        depth=grid.depth,
        scalar_plane=scalar_plane,
    )


# --- texture extraction ----------------------------------------------------------------


def extract_texture(image: Image, shape: Shape, pose, model: BilinearModel,
                    resolution: int) -> Texture:
    """Back-project an image onto the UV atlas.

    Every UV-covered texel is carried to its 3-D surface point, projected, and
    bilinearly sampled from the image. A texel is invalid if it projects outside the
    image, belongs to a back-facing triangle, or loses the z-buffer test against a
    render of the same shape at the same pose (depth tolerance is 1e-3 of the
    shape's camera-space depth range).
    """
    if shape.n_vertices != model.n_vertices:
        raise SizingError("shape vertex count does not match the model")
    layout = uv_layout(model, resolution)
    height, width = image.height, image.width

    cam = camera_space(pose, shape)
    proj = pose.scale * cam[:, :2] + pose.translation
    depth = cam[:, 2]
    screen = rasterize_mesh(proj, model.topology, width, height, depth_values=depth)
    zbuf = screen.depth

    pts = cam[model.topology]  # (T, 3 corners, 3)
    face_normal_z = np.cross(pts[:, 1] - pts[:, 0], pts[:, 2] - pts[:, 0])[:, 2]
    front_facing = face_normal_z > 0.0

    tex_data = np.zeros((resolution, resolution, 3))
    tex_valid = np.zeros((resolution, resolution), dtype=bool)
    if layout.rows.size == 0:
        return Texture(Image(tex_data), tex_valid)

    tri = layout.triangle[layout.rows, layout.cols]
    px = np.einsum("pk,pk->p", layout.weights, proj[:, 0][layout.corners])
    py = np.einsum("pk,pk->p", layout.weights, proj[:, 1][layout.corners])
    pz = np.einsum("pk,pk->p", layout.weights, depth[layout.corners])

    inside = (px >= 0.0) & (px <= width) & (py >= 0.0) & (py <= height)
    facing = front_facing[tri]
    depth_tol = 1e-3 * max(float(depth.max() - depth.min()), 1e-12)
    ix = np.clip(np.floor(px).astype(np.int64), 0, width - 1)
    iy = np.clip(np.floor(py).astype(np.int64), 0, height - 1)
    visible = pz >= zbuf[iy, ix] - depth_tol

    ok = inside & facing & visible
    colors = bilinear_sample(image.data, px[ok], py[ok])
    tex_data[layout.rows[ok], layout.cols[ok]] = colors
    tex_valid[layout.rows[ok], layout.cols[ok]] = True
    return Texture(Image(tex_data), tex_valid)


# --- semantic map -------------------------------------------------------------------


@dataclass
class SemanticMap:
    """Integer region labels per UV texel; -1 outside coverage."""

    labels: np.ndarray
    legend: tuple = SEMANTIC_LEGEND


def semantic_map(model: BilinearModel, resolution: int) -> SemanticMap:
    """Majority label of each covered texel's triangle corners (lowest id on ties)."""
    layout = uv_layout(model, resolution)
    labels = np.full((resolution, resolution), -1, dtype=np.int16)
    if layout.rows.size:
        corner_labels = np.sort(model.semantic[layout.corners].astype(np.int16), axis=1)
        a, b, c = corner_labels[:, 0], corner_labels[:, 1], corner_labels[:, 2]
        majority = np.where(b == c, b, a)  # covers 2-of-3 and all-distinct cases
        labels[layout.rows, layout.cols] = majority
    return SemanticMap(labels=labels)


# --- conditioning stack ----------------------------------------------------------------

CHANNEL_LAYOUT = (
    ("texture", 3),
    ("normals", 3),
    ("area_ratio", 1),
    ("curvature", 1),
    ("normal_diff", 3),
    ("position_diff", 3),
    ("noise", 1),
)


@dataclass
class ConditioningStack:
    """Fixed-order UV-space conditioning channels for an external texture network.

    Channel order: source texture (3), target object-space normals (3), one-ring
    area deformation ratio target/neutral (1), target curvature (1), normal
    difference (3), position difference over position_scale (3), seeded noise (1),
    then optionally the semantic plane.
    """

    planes: np.ndarray  # (res, res, 15) or (res, res, 16)
    mask: np.ndarray
    seed: int
    position_scale: float
    include_semantic: bool
    channel_names: tuple

    @property
    def resolution(self) -> int:
        return self.planes.shape[0]

    def channel(self, name: str) -> np.ndarray:
        start = 0
        for cname, width in CHANNEL_LAYOUT:
            if cname == name:
                return self.planes[:, :, start : start + width]
            start += width
        if name == "semantic" and self.include_semantic:
            return self.planes[:, :, start : start + 1]
        raise KeyError(name)

    def save(self, path) -> None:
        planes = {}
        start = 0
        for cname, width in CHANNEL_LAYOUT:
            arr = self.planes[:, :, start : start + width].astype(np.float32)
            planes[cname] = arr[:, :, 0] if width == 1 else arr
            start += width
        if self.include_semantic:
            planes["semantic"] = self.planes[:, :, start].astype(np.float32)
        planes["mask"] = self.mask.astype(np.float32)
        save_bundle(
            path,
            planes,
            meta={
                "channel_order": list(self.channel_names),
                "seed": int(self.seed),
                "position_scale": float(self.position_scale),
                "include_semantic": bool(self.include_semantic),
            },
        )

    @classmethod
    def load(cls, path) -> "ConditioningStack":
        planes, meta = load_bundle(path)
        parts = []
        for cname in meta["channel_order"]:
            arr = planes[cname].astype(np.float64)
            parts.append(arr[:, :, None] if arr.ndim == 2 else arr)
        stacked = np.concatenate(parts, axis=2)
        return cls(
            planes=stacked,
            mask=planes["mask"] >= 0.5,
            seed=int(meta["seed"]),
            position_scale=float(meta["position_scale"]),
            include_semantic=bool(meta["include_semantic"]),
            channel_names=tuple(meta["channel_order"]),
        )


def conditioning_stack(model: BilinearModel, shape_src: Shape, shape_tgt: Shape,
                       texture_src: Texture, expression_src: np.ndarray,
                       expression_tgt: np.ndarray, resolution: int, seed: int,
                       include_semantic: bool = False,
                       position_scale: float = 10.0) -> ConditioningStack:
    """Assemble the fixed-order conditioning channels in UV space.

    The area deformation ratio is one_ring(target) / one_ring(neutral) against the
    model's canonical neutral shape; position differences are (target - source) in
    mm divided by position_scale; the noise plane is a pure function of (seed,
    resolution).
    """
    if texture_src.resolution != resolution:
        raise SizingError("source texture resolution must match the stack resolution")
    layout = uv_layout(model, resolution)

    attrs_src = vertex_attributes(model, shape_src)
    attrs_tgt = vertex_attributes(model, shape_tgt)
    attrs_neutral = vertex_attributes(model, model.neutral_shape())

    ratio = attrs_tgt.one_ring_area / attrs_neutral.one_ring_area
    pos_diff = (shape_tgt.as_points() - shape_src.as_points()) / position_scale
    normal_diff = attrs_tgt.normals - attrs_src.normals

    n_channels = 15 + (1 if include_semantic else 0)
    planes = np.zeros((resolution, resolution, n_channels))
    planes[:, :, 0:3] = texture_src.image.data
    planes[:, :, 3:6] = layout.interpolate(attrs_tgt.normals)
    planes[:, :, 6] = layout.interpolate(ratio)
    planes[:, :, 7] = layout.interpolate(attrs_tgt.curvature)
    planes[:, :, 8:11] = layout.interpolate(normal_diff)
    planes[:, :, 11:14] = layout.interpolate(pos_diff)
    planes[:, :, 14] = np.random.default_rng(seed).random((resolution, resolution))
    names = [name for name, _ in CHANNEL_LAYOUT]
    if include_semantic:
        planes[:, :, 15] = semantic_map(model, resolution).labels.astype(np.float64)
        names.append("semantic")

    return ConditioningStack(
        planes=planes,
        mask=layout.mask.copy(),
        seed=seed,
        position_scale=position_scale,
        include_semantic=include_semantic,
        channel_names=tuple(names),
    )
