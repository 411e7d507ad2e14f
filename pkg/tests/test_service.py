"""HTTP session service: fit once, then deterministic re-renders per session."""

import base64
import threading

import numpy as np
import pytest
from fastapi.testclient import TestClient

from morphfit import (
    Coefficients,
    FitConfig,
    SyntheticSpec,
    make_synthetic_model,
    sample_scene,
    save_model,
)
from morphfit.fileio import png_bytes
from morphfit.model import SEMANTIC_LEGEND
from morphfit.service import create_app

SPEC = SyntheticSpec(seed=9, n_vertices=120, n_identity=6, n_expression=5,
                     n_landmarks=20, mode_band=20, identity_amplitude=4.0,
                     expression_amplitude=6.0)


@pytest.fixture(scope="module")
def studio(tmp_path_factory):
    """TestClient over a service hosting a small model file as its default."""
    root = tmp_path_factory.mktemp("service")
    model = make_synthetic_model(SPEC)
    path = root / "small.mfm"
    save_model(model, path)
    app = create_app(model_path=str(path), resolution=48,
                     fit_config=FitConfig(max_outer_iterations=40))
    return TestClient(app), model


def neutral_session(client, model, seed=50):
    """Open a session fitted to a neutral-expression scene of the hosted model."""
    pinned = Coefficients(model.reference_identity(), model.neutral_expression.copy())
    scene = sample_scene(model, seed=seed, with_image=False, image_size=96,
                         coefficients=pinned)
    response = client.post("/sessions", json={"landmarks": scene.landmarks.tolist()})
    assert response.status_code == 201
    return response.json()


class TestModelMeta:
    def test_meta_reports_model_dimensions(self, studio):
        client, model = studio
        meta = client.get("/model/meta")
        assert meta.status_code == 200
        body = meta.json()
        assert body["model"] == "small"
        assert body["n_vertices"] == SPEC.n_vertices
        assert body["n_identity"] == SPEC.n_identity
        assert body["n_expression"] == SPEC.n_expression
        assert body["n_landmarks"] == SPEC.n_landmarks
        assert body["expression_bounds"] == [0.0, 1.0]
        assert body["semantic_legend"] == list(SEMANTIC_LEGEND)

    def test_expression_groups_cover_every_unit(self, studio):
        client, _ = studio
        body = client.get("/model/meta").json()
        groups = body["expression_groups"]
        assert len(groups) == SPEC.n_expression
        assert set(groups) <= set(SEMANTIC_LEGEND)

    def test_builtin_synthetic_model_is_registered(self, studio):
        client, _ = studio
        body = client.get("/model/meta", params={"model": "synthetic"}).json()
        assert body["n_expression"] == 46
        assert body["n_identity"] == 50

    def test_unknown_model_404(self, studio):
        client, _ = studio
        assert client.get("/model/meta", params={"model": "nope"}).status_code == 404


class TestSessions:
    def test_create_returns_fit_summary(self, studio):
        client, model = studio
        body = neutral_session(client, model)
        assert body["session"].startswith("s")
        assert body["landmark_rmse"] < 0.05
        assert len(body["identity"]) == SPEC.n_identity
        assert len(body["expression"]) == SPEC.n_expression
        assert abs(sum(body["identity"]) - 1.0) < 1e-9

    def test_missing_landmarks_400(self, studio):
        client, _ = studio
        assert client.post("/sessions", json={}).status_code == 400

    def test_unknown_model_404(self, studio):
        client, _ = studio
        response = client.post("/sessions", json={
            "model": "nope", "landmarks": [[0.0, 0.0]] * SPEC.n_landmarks})
        assert response.status_code == 404

    def test_degenerate_landmarks_422(self, studio):
        client, _ = studio
        response = client.post("/sessions", json={
            "landmarks": [[5.0, 5.0]] * SPEC.n_landmarks})
        assert response.status_code == 422

    def test_session_with_uploaded_image(self, studio):
        client, model = studio
        scene = sample_scene(model, seed=60, image_size=48, texture_resolution=48)
        encoded = base64.b64encode(png_bytes(scene.image.data)).decode()
        response = client.post("/sessions", json={
            "landmarks": scene.landmarks.tolist(), "image_png": encoded})
        assert response.status_code == 201
        sid = response.json()["session"]
        render = client.post(f"/sessions/{sid}/render",
                             json={"expression": response.json()["expression"]})
        assert render.status_code == 200
        assert render.content[:8] == b"\x89PNG\r\n\x1a\n"

    def test_bad_base64_image_400(self, studio):
        client, model = studio
        scene = sample_scene(model, seed=61, with_image=False)
        response = client.post("/sessions", json={
            "landmarks": scene.landmarks.tolist(), "image_png": "@@not-base64@@"})
        assert response.status_code == 400


class TestRender:
    def test_png_with_metric_headers(self, studio):
        client, model = studio
        session = neutral_session(client, model, seed=51)
        response = client.post(f"/sessions/{session['session']}/render",
                               json={"expression": session["expression"]})
        assert response.status_code == 200
        assert response.headers["content-type"] == "image/png"
        assert response.content[:8] == b"\x89PNG\r\n\x1a\n"
        assert float(response.headers["X-Render-Millis"]) > 0
        assert float(response.headers["X-Max-Displacement-Mm"]) < 1e-6

    def test_metric_headers_exposed_to_cross_origin_scripts(self, studio):
        client, model = studio
        session = neutral_session(client, model, seed=58)
        response = client.post(f"/sessions/{session['session']}/render",
                               json={"expression": session["expression"]},
                               headers={"Origin": "http://localhost:5173"})
        assert response.status_code == 200
        exposed = response.headers.get("access-control-expose-headers", "")
        assert "X-Max-Displacement-Mm" in exposed
        assert "X-Render-Millis" in exposed

    def test_identical_requests_are_byte_identical(self, studio):
        client, model = studio
        session = neutral_session(client, model, seed=52)
        sid = session["session"]
        e = list(session["expression"])
        e[2] = 0.8
        first = client.post(f"/sessions/{sid}/render", json={"expression": e})
        second = client.post(f"/sessions/{sid}/render", json={"expression": e})
        assert first.content == second.content

    def test_sweep_gives_distinct_images_and_monotone_displacement(self, studio):
        client, model = studio
        session = neutral_session(client, model, seed=53)
        sid = session["session"]
        base = np.asarray(session["expression"], dtype=float)
        images = []
        displacements = []
        for t in (0.0, 0.25, 0.5, 0.75, 1.0):
            e = base.copy()
            e[1] = t
            response = client.post(f"/sessions/{sid}/render",
                                   json={"expression": np.clip(e, 0, 1).tolist()})
            assert response.status_code == 200
            images.append(response.content)
            displacements.append(float(response.headers["X-Max-Displacement-Mm"]))
        assert len(set(images)) == 5
        assert all(b > a for a, b in zip(displacements, displacements[1:]))

    def test_blend_options_change_the_bytes(self, studio):
        client, model = studio
        session = neutral_session(client, model, seed=54)
        sid = session["session"]
        e = list(session["expression"])
        e[3] = 1.0
        plain = client.post(f"/sessions/{sid}/render", json={"expression": e})
        flipped = client.post(f"/sessions/{sid}/render", json={
            "expression": e, "blend": {"alpha_weights_input": False}})
        assert plain.status_code == flipped.status_code == 200
        assert plain.content != flipped.content

    def test_unknown_session_404(self, studio):
        client, _ = studio
        response = client.post("/sessions/s999999/render",
                               json={"expression": [0.0] * SPEC.n_expression})
        assert response.status_code == 404

    def test_out_of_bounds_expression_422(self, studio):
        client, model = studio
        session = neutral_session(client, model, seed=55)
        sid = session["session"]
        too_big = [2.0] + [0.0] * (SPEC.n_expression - 1)
        assert client.post(f"/sessions/{sid}/render",
                           json={"expression": too_big}).status_code == 422
        negative = [-0.1] + [0.0] * (SPEC.n_expression - 1)
        assert client.post(f"/sessions/{sid}/render",
                           json={"expression": negative}).status_code == 422

    def test_wrong_expression_length_422(self, studio):
        client, model = studio
        session = neutral_session(client, model, seed=56)
        response = client.post(f"/sessions/{session['session']}/render",
                               json={"expression": [0.5, 0.5]})
        assert response.status_code == 422

    def test_concurrent_renders_on_one_session_all_succeed(self, studio):
        client, model = studio
        session = neutral_session(client, model, seed=57)
        sid = session["session"]
        e = list(session["expression"])
        e[4] = 0.6
        results = []

        def hit():
            results.append(client.post(f"/sessions/{sid}/render",
                                       json={"expression": e}))

        threads = [threading.Thread(target=hit) for _ in range(4)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert all(r.status_code == 200 for r in results)
        assert len({r.content for r in results}) == 1

    def test_sessions_are_isolated(self, studio):
        client, model = studio
        first = neutral_session(client, model, seed=58)
        second = neutral_session(client, model, seed=59)
        assert first["session"] != second["session"]
        e = [0.0] * SPEC.n_expression
        e[0] = 1.0
        a = client.post(f"/sessions/{first['session']}/render",
                        json={"expression": e})
        b = client.post(f"/sessions/{second['session']}/render",
                        json={"expression": e})
        assert a.status_code == b.status_code == 200
        # Different fitted poses: same coefficients render differently per session.
        assert a.content != b.content
