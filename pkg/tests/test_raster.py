"""Rasterizer against a point-in-triangle oracle, sampling, render/extract, stacks."""

import numpy as np
import pytest

from morphfit import (
    CameraPose,
    ConditioningStack,
    Image,
    SizingError,
    Texture,
    UvLayoutError,
    bilinear_sample,
    conditioning_stack,
    extract_texture,
    make_synthetic_model,
    render,
    sample_scene,
    semantic_map,
)
from morphfit.raster import CHANNEL_LAYOUT, rasterize_mesh, rasterize_uv, uv_layout
from morphfit.synthetic import _rodrigues, procedural_texture

from conftest import SMALL_SPEC, make_mesh_model


def strict_inside(px: float, py: float, a, b, c) -> bool:
    """Sign-consistent point-in-triangle test; the rasterizer coverage oracle."""
    d0 = (b[0] - a[0]) * (py - a[1]) - (b[1] - a[1]) * (px - a[0])
    d1 = (c[0] - b[0]) * (py - b[1]) - (c[1] - b[1]) * (px - b[0])
    d2 = (a[0] - c[0]) * (py - c[1]) - (a[1] - c[1]) * (px - c[0])
    return (d0 > 0 and d1 > 0 and d2 > 0) or (d0 < 0 and d1 < 0 and d2 < 0)


class TestRasterizeMesh:
    def test_coverage_matches_point_in_triangle_oracle_50_triangles(self):
        rng = np.random.default_rng(100)
        size = 48
        for _ in range(50):
            corners = rng.uniform(-6.0, size + 6.0, size=(3, 2))
            grid = rasterize_mesh(corners, np.array([[0, 1, 2]]), size, size)
            oracle = np.zeros((size, size), dtype=bool)
            for r in range(size):
                for c in range(size):
                    oracle[r, c] = strict_inside(c + 0.5, r + 0.5, *corners)
            np.testing.assert_array_equal(grid.mask, oracle)

    def test_shared_edge_pixels_claimed_exactly_once(self):
        # Square with corners on pixel centers; the diagonal passes through centers.
        quad = np.array([[1.5, 1.5], [9.5, 1.5], [9.5, 9.5], [1.5, 9.5]])
        tris = np.array([[0, 1, 2], [0, 2, 3]])
        grid = rasterize_mesh(quad, tris, 12, 12, detect_overlap=True)
        # Top-left ownership: left/top boundary centers covered, right/bottom not.
        assert int(grid.mask.sum()) == 64
        covered_rows, covered_cols = np.nonzero(grid.mask)
        assert covered_cols.min() == 1 and covered_cols.max() == 8
        assert covered_rows.min() == 1 and covered_rows.max() == 8
        # Pixel centers on the shared diagonal belong to exactly one triangle.
        diag = [grid.triangle[k, k] for k in range(1, 9)]
        assert all(t in (0, 1) for t in diag)

    def test_zbuffer_keeps_strictly_larger_depth(self):
        pts = np.array([[0.0, 0.0], [12.0, 0.0], [0.0, 12.0],
                        [0.0, 0.0], [12.0, 0.0], [0.0, 12.0]])
        tris = np.array([[0, 1, 2], [3, 4, 5]])
        near_second = rasterize_mesh(pts, tris, 8, 8,
                                     depth_values=np.array([1, 1, 1, 5, 5, 5.0]))
        assert np.all(near_second.triangle[near_second.mask] == 1)
        near_first = rasterize_mesh(pts, tris, 8, 8,
                                    depth_values=np.array([5, 5, 5, 1, 1, 1.0]))
        assert np.all(near_first.triangle[near_first.mask] == 0)

    def test_zbuffer_tie_keeps_lower_triangle_index(self):
        pts = np.array([[0.0, 0.0], [12.0, 0.0], [0.0, 12.0],
                        [0.0, 0.0], [12.0, 0.0], [0.0, 12.0]])
        tris = np.array([[0, 1, 2], [3, 4, 5]])
        grid = rasterize_mesh(pts, tris, 8, 8, depth_values=np.ones(6))
        assert np.all(grid.triangle[grid.mask] == 0)

    def test_barycentric_reproduces_linear_functions_both_windings(self):
        rng = np.random.default_rng(101)
        alpha, beta, gamma = 0.7, -1.3, 4.2
        corners = np.array([[2.0, 3.0], [30.0, 5.0], [10.0, 28.0]])
        for order in ([0, 1, 2], [0, 2, 1]):  # positive and negative orientation
            pts = corners[order]
            vals = alpha * pts[:, 0] + beta * pts[:, 1] + gamma
            grid = rasterize_mesh(pts, np.array([[0, 1, 2]]), 32, 32)
            assert grid.mask.any()
            interp = grid.interpolate(vals)
            rows, cols = np.nonzero(grid.mask)
            want = alpha * (cols + 0.5) + beta * (rows + 0.5) + gamma
            np.testing.assert_allclose(interp[rows, cols], want, rtol=0, atol=1e-9)

    def test_degenerate_triangle_covers_nothing(self):
        pts = np.array([[1.0, 1.0], [9.0, 9.0], [5.0, 5.0]])  # collinear
        grid = rasterize_mesh(pts, np.array([[0, 1, 2]]), 12, 12)
        assert not grid.mask.any()

    def test_offscreen_triangle_covers_nothing(self):
        pts = np.array([[-30.0, -30.0], [-20.0, -30.0], [-30.0, -20.0]])
        grid = rasterize_mesh(pts, np.array([[0, 1, 2]]), 12, 12)
        assert not grid.mask.any()

    def test_overlap_detection_raises_with_pairs(self):
        pts = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0],
                        [1.0, 1.0], [9.0, 1.0], [1.0, 9.0]])
        tris = np.array([[0, 1, 2], [3, 4, 5]])
        with pytest.raises(UvLayoutError) as err:
            rasterize_mesh(pts, tris, 12, 12, detect_overlap=True)
        assert (0, 1) in err.value.pairs


class TestBilinearSample:
    def test_pixel_center_returns_texel_exactly(self):
        rng = np.random.default_rng(102)
        data = rng.random((6, 7))
        got = bilinear_sample(data, np.array([3.5]), np.array([2.5]))
        assert got[0] == data[2, 3]

    def test_edge_midpoint_averages_two_texels(self):
        rng = np.random.default_rng(103)
        data = rng.random((4, 4))
        got = bilinear_sample(data, np.array([2.0]), np.array([1.5]))
        assert got[0] == pytest.approx((data[1, 1] + data[1, 2]) / 2.0, rel=1e-15)

    def test_border_clamp(self):
        data = np.arange(12, dtype=np.float64).reshape(3, 4)
        got = bilinear_sample(data, np.array([-9.0, 100.0]), np.array([-9.0, 100.0]))
        assert got[0] == data[0, 0]
        assert got[1] == data[-1, -1]

    def test_reproduces_bilinear_functions_exactly(self):
        h, w = 8, 9
        cols, rows = np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5)
        data = 2.0 * cols - 3.0 * rows + 1.0
        rng = np.random.default_rng(104)
        xs = rng.uniform(0.5, w - 0.5, size=40)
        ys = rng.uniform(0.5, h - 0.5, size=40)
        got = bilinear_sample(data, xs, ys)
        np.testing.assert_allclose(got, 2.0 * xs - 3.0 * ys + 1.0, rtol=0, atol=1e-12)

    def test_multichannel_shape(self):
        data = np.random.default_rng(105).random((5, 5, 3))
        got = bilinear_sample(data, np.array([2.5, 3.0]), np.array([2.5, 3.0]))
        assert got.shape == (2, 3)
        np.testing.assert_array_equal(got[0], data[2, 2])


class TestUvLayout:
    def test_layout_is_cached_per_uv_hash_and_resolution(self, small_model):
        first = uv_layout(small_model, 64)
        again = uv_layout(small_model, 64)
        assert first is again
        other_res = uv_layout(small_model, 32)
        assert other_res is not first
        rebuilt = make_synthetic_model(SMALL_SPEC)
        assert uv_layout(rebuilt, 64) is first

    def test_overlapping_uv_atlas_raises(self):
        points = np.zeros((6, 3))
        points[:, 0] = np.arange(6)
        topology = [[0, 1, 2], [3, 4, 5]]
        uv = np.array([[0.1, 0.1], [0.9, 0.1], [0.1, 0.9],
                       [0.15, 0.15], [0.85, 0.15], [0.15, 0.85]])
        m = make_mesh_model(points, topology, uv=uv)
        with pytest.raises(UvLayoutError):
            uv_layout(m, 32)

    def test_nonpositive_resolution_raises(self, small_model):
        with pytest.raises(SizingError):
            uv_layout(small_model, 0)

    def test_rasterize_uv_interpolates_vertex_values(self, small_model):
        vals = np.linspace(0.0, 1.0, small_model.n_vertices)
        plane, mask = rasterize_uv(small_model, vals, 64)
        assert plane.shape == (64, 64) and mask.shape == (64, 64)
        assert mask.any()
        covered = plane[mask]
        assert covered.min() >= vals.min() - 1e-12
        assert covered.max() <= vals.max() + 1e-12

    def test_rasterize_uv_wrong_length_raises(self, small_model):
        with pytest.raises(SizingError):
            rasterize_uv(small_model, np.zeros(small_model.n_vertices + 1), 32)


class TestRenderExtract:
    def test_roundtrip_median_error_under_two_ticks(self, small_model):
        scene = sample_scene(small_model, seed=110, with_image=True,
                             image_size=192, texture_resolution=128)
        extracted = extract_texture(scene.image, scene.shape, scene.pose,
                                    small_model, 128)
        both = extracted.valid & scene.texture.valid
        assert both.sum() > 100
        err = np.abs(extracted.image.data[both] - scene.texture.image.data[both])
        assert np.median(err) < 2.0 / 255.0

    def test_background_outside_coverage_is_bit_identical(self, small_model):
        scene = sample_scene(small_model, seed=111, with_image=False)
        texture = procedural_texture(small_model, 64, seed=0)
        rng = np.random.default_rng(112)
        background = rng.random((128, 128, 3))
        result = render(scene.shape, texture, scene.pose, small_model,
                        128, background=background)
        outside = ~result.coverage
        np.testing.assert_array_equal(result.image.data[outside], background[outside])
        assert result.coverage.any()

    def test_scalar_plane_matches_depth_buffer(self, small_model):
        scene = sample_scene(small_model, seed=113, with_image=False)
        texture = procedural_texture(small_model, 64, seed=0)
        cam_z = (scene.shape.as_points() @ scene.pose.rotation.T)[:, 2]
        result = render(scene.shape, texture, scene.pose, small_model, 128,
                        vertex_scalar=cam_z)
        mask = result.geometry_mask
        np.testing.assert_allclose(result.scalar_plane[mask], result.depth[mask],
                                   rtol=0, atol=1e-9)

    def test_back_facing_view_extracts_nothing(self, small_model):
        shape = small_model.neutral_shape()
        flipped = _rodrigues(np.array([1.0, 0.0, 0.0]), np.pi)
        pose = CameraPose(rotation=flipped, scale=1.2, translation=np.array([64.0, 64.0]))
        img = Image(np.full((128, 128, 3), 0.5))
        extracted = extract_texture(img, shape, pose, small_model, 64)
        assert extracted.valid.sum() == 0

    def test_render_size_tuple_gives_rectangular_canvas(self, small_model):
        scene = sample_scene(small_model, seed=114, with_image=False)
        texture = procedural_texture(small_model, 64, seed=0)
        result = render(scene.shape, texture, scene.pose, small_model, (100, 80))
        assert result.image.data.shape == (80, 100, 3)

    def test_vertex_count_mismatch_raises(self, small_model):
        scene = sample_scene(small_model, seed=115, with_image=False)
        texture = procedural_texture(small_model, 64, seed=0)
        from morphfit import Shape
        with pytest.raises(SizingError):
            render(Shape(np.zeros(9)), texture, scene.pose, small_model, 64)


class TestSemanticMap:
    def _one_triangle_model(self, labels):
        points = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        uv = np.array([[0.05, 0.05], [0.95, 0.05], [0.05, 0.95]])
        return make_mesh_model(points, [[0, 1, 2]], uv=uv,
                               semantic=np.array(labels, dtype=np.uint8))

    def test_two_of_three_majority(self):
        m = self._one_triangle_model([2, 2, 5])
        labels = semantic_map(m, 16).labels
        assert set(labels[labels >= 0]) == {2}

    def test_majority_pair_wins_regardless_of_position(self):
        m = self._one_triangle_model([1, 4, 4])
        labels = semantic_map(m, 16).labels
        assert set(labels[labels >= 0]) == {4}

    def test_all_distinct_takes_lowest_label(self):
        m = self._one_triangle_model([3, 1, 2])
        labels = semantic_map(m, 16).labels
        assert set(labels[labels >= 0]) == {1}

    def test_uncovered_texels_are_minus_one(self, small_model):
        sm = semantic_map(small_model, 32)
        layout = uv_layout(small_model, 32)
        assert np.all(sm.labels[~layout.mask] == -1)
        assert np.all(sm.labels[layout.mask] >= 0)


class TestConditioningStack:
    RES = 64

    def _stack(self, model, shape_src, shape_tgt, seed=7, **kw):
        texture = procedural_texture(model, self.RES, seed=0)
        return conditioning_stack(model, shape_src, shape_tgt, texture,
                                  model.neutral_expression, model.neutral_expression,
                                  self.RES, seed, **kw)

    def test_identity_pair_gives_unit_ratio_and_zero_diffs(self, small_model):
        neutral = small_model.neutral_shape()
        stack = self._stack(small_model, neutral, neutral)
        mask = stack.mask
        ratio = stack.channel("area_ratio")[:, :, 0]
        np.testing.assert_allclose(ratio[mask], 1.0, rtol=0, atol=1e-6)
        assert np.abs(stack.channel("normal_diff")[mask]).max() <= 1e-6
        assert np.abs(stack.channel("position_diff")[mask]).max() <= 1e-6

    def test_uniform_double_scale_gives_ratio_four(self, small_model):
        from morphfit import Shape
        neutral = small_model.neutral_shape()
        doubled = Shape(neutral.positions * 2.0)
        stack = self._stack(small_model, neutral, doubled)
        ratio = stack.channel("area_ratio")[:, :, 0]
        np.testing.assert_allclose(ratio[stack.mask], 4.0, rtol=0, atol=1e-6)

    def test_channel_count_and_layout(self, small_model):
        neutral = small_model.neutral_shape()
        stack = self._stack(small_model, neutral, neutral)
        assert stack.planes.shape == (self.RES, self.RES, 15)
        assert sum(w for _, w in CHANNEL_LAYOUT) == 15
        with_sem = self._stack(small_model, neutral, neutral, include_semantic=True)
        assert with_sem.planes.shape == (self.RES, self.RES, 16)
        assert with_sem.channel_names[-1] == "semantic"

    def test_noise_plane_is_pure_function_of_seed(self, small_model):
        neutral = small_model.neutral_shape()
        st1 = self._stack(small_model, neutral, neutral, seed=21)
        st2 = self._stack(small_model, neutral, neutral, seed=21)
        st3 = self._stack(small_model, neutral, neutral, seed=22)
        np.testing.assert_array_equal(st1.channel("noise"), st2.channel("noise"))
        assert not np.array_equal(st1.channel("noise"), st3.channel("noise"))
        want = np.random.default_rng(21).random((self.RES, self.RES))
        np.testing.assert_array_equal(st1.channel("noise")[:, :, 0], want)

    def test_position_diff_respects_position_scale(self, small_model):
        from morphfit import Shape
        neutral = small_model.neutral_shape()
        shifted = Shape(neutral.positions + np.tile([5.0, 0.0, 0.0],
                                                    small_model.n_vertices))
        stack = self._stack(small_model, neutral, shifted)
        diff_x = stack.channel("position_diff")[:, :, 0]
        np.testing.assert_allclose(diff_x[stack.mask], 0.5, rtol=0, atol=1e-9)

    def test_texture_channel_is_passthrough(self, small_model):
        neutral = small_model.neutral_shape()
        texture = procedural_texture(small_model, self.RES, seed=0)
        stack = conditioning_stack(small_model, neutral, neutral, texture,
                                   small_model.neutral_expression,
                                   small_model.neutral_expression, self.RES, 7)
        np.testing.assert_array_equal(stack.channel("texture"), texture.image.data)

    def test_save_load_roundtrip(self, small_model, tmp_path):
        neutral = small_model.neutral_shape()
        stack = self._stack(small_model, neutral, neutral, include_semantic=True)
        stack.save(tmp_path / "stack")
        loaded = ConditioningStack.load(tmp_path / "stack")
        assert loaded.planes.shape == stack.planes.shape
        np.testing.assert_allclose(loaded.planes, stack.planes, rtol=0, atol=1e-6)
        np.testing.assert_array_equal(loaded.mask, stack.mask)
        assert loaded.seed == stack.seed
        assert loaded.position_scale == stack.position_scale
        assert loaded.channel_names == stack.channel_names

    def test_unknown_channel_raises(self, small_model):
        neutral = small_model.neutral_shape()
        stack = self._stack(small_model, neutral, neutral)
        with pytest.raises(KeyError):
            stack.channel("does-not-exist")
        with pytest.raises(KeyError):
            stack.channel("semantic")  # not included by default

    def test_texture_resolution_mismatch_raises(self, small_model):
        neutral = small_model.neutral_shape()
        texture = procedural_texture(small_model, 32, seed=0)
        with pytest.raises(SizingError):
            conditioning_stack(small_model, neutral, neutral, texture,
                               small_model.neutral_expression,
                               small_model.neutral_expression, self.RES, 7)
