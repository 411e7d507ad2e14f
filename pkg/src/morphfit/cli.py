"""Command-line pipeline: fit -> texture -> conditioning -> deformation -> blend.

Every command is a deterministic function of its input files and seeds; reports
never embed timestamps or host paths, so reruns are bit-identical. Exit codes:
0 ok, 2 bad arguments, 3 missing input file, 4 malformed input, 5 numerical
failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .compositor import BlendConfig, blend, vertex_distance_plane
from .errors import (
    EXIT_MALFORMED_INPUT,
    EXIT_MISSING_INPUT,
    EXIT_OK,
    FileFormatError,
    MorphfitError,
    SizingError,
)
from .fileio import load_bundle, read_png, save_bundle, save_obj, write_pfm, write_png
from .fitting import (
    CameraPose,
    DepthCloud,
    FitConfig,
    fit_image,
    refine_with_depth,
    refine_with_landmarks,
)
from .losses import (
    DiscriminatorOutputs,
    LossWeights,
    generator_objective,
    l1_loss,
    loss_gan,
    loss_iden,
    loss_pair,
    loss_real,
)
from .model import BilinearModel, Coefficients, Shape, contract_bilinear, load_model, save_model
from .raster import Image, Texture, conditioning_stack, extract_texture, render
from .shape_branch import MlpParams, TrainConfig, predict_deformation, train_shape_branch
from .spectral import basis_for_model
from .synthetic import (
    NonlinearDeformer,
    SyntheticSpec,
    _draw_regression_set,
    benchmark_shape_branch,
    make_synthetic_model,
    sample_scene,
)

FIT_KIND = "morphfit-fit"
FIT_VERSION = 1


# --- configuration -------------------------------------------------------------------


@dataclass
class PipelineConfig:
    """End-to-end knobs shared by the fit and transfer commands."""

    model: str | None = None        # model file path
    resolution: int = 256           # texture / conditioning-map side length
    k: int = 100                    # spectral basis size for shape corrections
    shape_params: str | None = None  # trained deformation-network file
    fit: FitConfig = field(default_factory=FitConfig)
    blend: BlendConfig = field(default_factory=BlendConfig)


def load_pipeline_config(path) -> PipelineConfig:
    """Read a PipelineConfig from JSON; absent keys keep their defaults."""
    raw = _read_json(path)
    if not isinstance(raw, dict):
        raise FileFormatError(f"{path}: config must be a JSON object")
    config = PipelineConfig()
    known = {"model", "resolution", "k", "shape_params", "fit", "blend"}
    unknown = set(raw) - known
    if unknown:
        raise FileFormatError(f"{path}: unknown config keys {sorted(unknown)}")
    if "model" in raw:
        config.model = str(raw["model"])
    if "resolution" in raw:
        config.resolution = int(raw["resolution"])
    if "k" in raw:
        config.k = int(raw["k"])
    if "shape_params" in raw:
        config.shape_params = str(raw["shape_params"])
    if "fit" in raw:
        fit_kwargs = dict(raw["fit"])
        if "expression_bounds" in fit_kwargs:
            fit_kwargs["expression_bounds"] = tuple(fit_kwargs["expression_bounds"])
        try:
            config.fit = FitConfig(**fit_kwargs)
        except TypeError as exc:
            raise FileFormatError(f"{path}: bad fit config ({exc})") from exc
    if "blend" in raw:
        try:
            config.blend = BlendConfig(**raw["blend"])
        except TypeError as exc:
            raise FileFormatError(f"{path}: bad blend config ({exc})") from exc
    return config


def _config_from_args(args) -> PipelineConfig:
    """Defaults < config file < explicit flags."""
    config = load_pipeline_config(args.config) if getattr(args, "config", None) else PipelineConfig()
    if getattr(args, "model", None):
        config.model = args.model
    if getattr(args, "resolution", None):
        config.resolution = args.resolution
    if getattr(args, "k", None):
        config.k = args.k
    if getattr(args, "shape_params", None):
        config.shape_params = args.shape_params
    if getattr(args, "blend_sigma2", None) is not None:
        config.blend = replace(config.blend, sigma2=args.blend_sigma2)
    if getattr(args, "blend_kernel", None) is not None:
        config.blend = replace(config.blend, kernel_size=args.blend_kernel)
    if getattr(args, "attention_orientation", None):
        config.blend = replace(
            config.blend, alpha_weights_input=args.attention_orientation == "input"
        )
    return config


# --- small file helpers ----------------------------------------------------------------


def _read_json(path):
    with open(path) as f:
        try:
            return json.load(f)
        except json.JSONDecodeError as exc:
            raise FileFormatError(f"{path}: invalid JSON ({exc})") from exc


def _write_json(path, payload) -> None:
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def _load_landmarks(path) -> np.ndarray:
    raw = _read_json(path)
    pts = raw.get("points") if isinstance(raw, dict) else None
    if pts is None:
        raise FileFormatError(f"{path}: expected a JSON object with a 'points' array")
    arr = np.asarray(pts, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise FileFormatError(f"{path}: 'points' must be an (L, 2) array")
    return arr


def _load_expression(path, model: BilinearModel, bounds=(0.0, 1.0)) -> np.ndarray:
    raw = _read_json(path)
    vec = raw.get("expression") if isinstance(raw, dict) else None
    if vec is None:
        raise FileFormatError(f"{path}: expected a JSON object with an 'expression' array")
    arr = np.asarray(vec, dtype=np.float64).reshape(-1)
    if arr.shape[0] != model.n_expression:
        raise SizingError(
            f"{path}: expression length {arr.shape[0]} != model's {model.n_expression}"
        )
    if np.any(arr < bounds[0]) or np.any(arr > bounds[1]):
        raise SizingError(f"{path}: expression coefficients outside {bounds}")
    return arr


def _load_image(path) -> Image:
    if not Path(path).exists():
        raise FileNotFoundError(path)
    return Image(read_png(path))


def _pose_to_json(pose: CameraPose) -> dict:
    return {
        "rotation": pose.rotation.tolist(),
        "scale": pose.scale,
        "translation": pose.translation.tolist(),
    }


def _pose_from_json(raw: dict) -> CameraPose:
    try:
        return CameraPose(
            rotation=np.asarray(raw["rotation"], dtype=np.float64),
            scale=float(raw["scale"]),
            translation=np.asarray(raw["translation"], dtype=np.float64),
        )
    except (KeyError, TypeError) as exc:
        raise FileFormatError(f"bad pose record ({exc})") from exc


def _save_texture(texture: Texture, path) -> None:
    save_bundle(
        path,
        {
            "color": texture.image.data.astype(np.float32),
            "valid": texture.valid,
        },
        meta={"resolution": texture.resolution},
    )


def _load_texture(path) -> Texture:
    planes, _ = load_bundle(path)
    if "color" not in planes or "valid" not in planes:
        raise FileFormatError(f"{path}: texture bundle needs 'color' and 'valid' planes")
    return Texture(Image(planes["color"].astype(np.float64)), planes["valid"].astype(bool))


def _load_fit(path):
    raw = _read_json(path)
    if not isinstance(raw, dict) or raw.get("kind") != FIT_KIND:
        raise FileFormatError(f"{path}: not a fit record")
    if raw.get("version") != FIT_VERSION:
        raise FileFormatError(f"{path}: unsupported fit record version {raw.get('version')}")
    return raw


def _resolve(base_dir: Path, name: str) -> Path:
    """Artifact names inside a fit record are relative to the record's directory."""
    p = Path(name)
    return p if p.is_absolute() else base_dir / p


# --- fit -------------------------------------------------------------------------------


def cmd_fit(args) -> int:
    config = _config_from_args(args)
    if config.model is None:
        raise FileFormatError("fit needs --model (flag or config file)")
    model = load_model(config.model)
    image = _load_image(args.image)
    landmarks = _load_landmarks(args.landmarks)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    result = fit_image(model, landmarks, config.fit)
    shape = contract_bilinear(model, result.coefficients)

    refined = False
    if args.depth and not args.no_depth_refine:
        cloud = DepthCloud(np.load(args.depth))
        shape = refine_with_depth(model, shape, cloud, config.fit)
        shape = refine_with_landmarks(model, shape, result.pose, landmarks, config.fit)
        refined = True
        np.save(out / "shape_refined.npy", shape.positions)

    texture = extract_texture(image, shape, result.pose, model, config.resolution)
    _save_texture(texture, out / "texture")
    write_png(out / "texture.png", texture.image.data)

    rendered = render(shape, texture, result.pose, model,
                      (image.width, image.height), background=image.data)
    write_png(out / "render.png", rendered.image.data)
    save_obj(out / "geometry.obj", shape.as_points(), model.topology, model.uv)

    record = {
        "kind": FIT_KIND,
        "version": FIT_VERSION,
        "model": str(config.model),
        "resolution": config.resolution,
        "pose": _pose_to_json(result.pose),
        "identity": result.coefficients.identity.tolist(),
        "expression": result.coefficients.expression.tolist(),
        "landmark_rmse": result.landmark_rmse,
        "iterations": result.iterations,
        "converged": result.converged,
        "refined": refined,
        "texture": "texture",
    }
    _write_json(out / "fit.json", record)
    print(f"fit: rmse={result.landmark_rmse:.6g} px, "
          f"iterations={result.iterations}, converged={result.converged}")
    return EXIT_OK


# --- transfer ---------------------------------------------------------------------------


def transfer_once(model: BilinearModel, fit_record: dict, texture: Texture,
                  expression_tgt: np.ndarray, config: PipelineConfig,
                  seed: int, params: MlpParams | None = None,
                  include_semantic: bool = False,
                  source_image: Image | None = None):
    """Shared transfer core: target geometry, conditioning stack, render, blend.

    Returns (composite Image, dict of intermediates)."""
    identity = np.asarray(fit_record["identity"], dtype=np.float64)
    expression_src = np.asarray(fit_record["expression"], dtype=np.float64)
    pose = _pose_from_json(fit_record["pose"])

    shape_src = contract_bilinear(model, Coefficients(identity, expression_src))
    shape_tgt = contract_bilinear(model, Coefficients(identity, expression_tgt))
    if params is not None:
        basis = basis_for_model(model, config.k)
        correction = predict_deformation(params, identity, expression_src,
                                         expression_tgt, basis)
        shape_tgt = Shape(shape_tgt.positions + correction.vectors.reshape(-1))

    stack = conditioning_stack(
        model, shape_src, shape_tgt, texture, expression_src, expression_tgt,
        resolution=texture.resolution, seed=seed, include_semantic=include_semantic,
    )

    if source_image is None:
        side = max(64, config.resolution)
        source_image = Image(np.zeros((side, side, 3)))
    size = (source_image.width, source_image.height)
    rendered = render(shape_tgt, texture, pose, model, size,
                      background=source_image.data)
    plane, plane_cov = vertex_distance_plane(model, shape_src, shape_tgt, pose, size)
    distance = np.where(plane_cov, plane, 0.0)
    composite = blend(rendered.image, source_image, rendered.coverage,
                      distance, config.blend)

    intermediates = {
        "stack": stack,
        "rendered": rendered,
        "distance": distance,
        "coverage": rendered.coverage,
        "shape_src": shape_src,
        "shape_tgt": shape_tgt,
    }
    return composite, intermediates


def cmd_transfer(args) -> int:
    config = _config_from_args(args)
    fit_record = _load_fit(args.fit)
    fit_dir = Path(args.fit).parent
    model_path = config.model or fit_record["model"]
    model = load_model(model_path)
    texture = _load_texture(_resolve(fit_dir, fit_record["texture"]))
    expression_tgt = _load_expression(args.target_expression, model,
                                      config.fit.expression_bounds)
    params = MlpParams.load(config.shape_params) if config.shape_params else None

    source_image = None
    if args.image:
        source_image = _load_image(args.image)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    composite, parts = transfer_once(
        model, fit_record, texture, expression_tgt, config, seed=args.seed,
        params=params, include_semantic=args.include_semantic,
        source_image=source_image,
    )

    write_png(out / "output.png", composite.data)
    write_png(out / "render_raw.png", parts["rendered"].image.data)
    write_png(out / "coverage.png", parts["coverage"].astype(np.float64))
    write_pfm(out / "distance.pfm", parts["distance"].astype(np.float32))
    parts["stack"].save(out / "stack")
    np.save(out / "shape_target.npy", parts["shape_tgt"].positions)
    np.save(out / "shape_source.npy", parts["shape_src"].positions)

    displacement = np.linalg.norm(
        parts["shape_tgt"].as_points() - parts["shape_src"].as_points(), axis=1
    )
    report = {
        "expression_source": fit_record["expression"],
        "expression_target": expression_tgt.tolist(),
        "max_vertex_displacement_mm": float(displacement.max()),
        "mean_vertex_displacement_mm": float(displacement.mean()),
        "blend": {
            "kernel_size": config.blend.kernel_size,
            "sigma2": config.blend.sigma2,
            "alpha_weights_input": config.blend.alpha_weights_input,
        },
        "seed": args.seed,
        "shape_correction": bool(params is not None),
    }
    _write_json(out / "transfer.json", report)
    print(f"transfer: max displacement {displacement.max():.3f} mm, "
          f"output {out / 'output.png'}")
    return EXIT_OK


# --- synthetic data -----------------------------------------------------------------------


def cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    spec = SyntheticSpec(seed=args.seed)
    model = make_synthetic_model(spec)
    save_model(model, out / "model.mfm")

    for i in range(args.scenes):
        scene_dir = out / f"scene_{i:03d}"
        scene_dir.mkdir(exist_ok=True)
        scene = sample_scene(model, seed=args.seed + 1000 * (i + 1),
                             image_size=args.resolution,
                             with_depth=args.with_depth)
        write_png(scene_dir / "image.png", scene.image.data)
        _write_json(scene_dir / "landmarks.json",
                    {"points": scene.landmarks.tolist()})
        if scene.depth is not None:
            np.save(scene_dir / "depth.npy", scene.depth.points)
        _write_json(scene_dir / "truth.json", {
            "identity": scene.coefficients.identity.tolist(),
            "expression": scene.coefficients.expression.tolist(),
            "pose": _pose_to_json(scene.pose),
            "seed": scene.seed,
        })
    print(f"synth: model + {args.scenes} scenes under {out}")
    return EXIT_OK


# --- shape-branch training and evaluation ----------------------------------------------------


def _model_and_basis(args, config: PipelineConfig):
    if config.model:
        model = load_model(config.model)
    else:
        model = make_synthetic_model(SyntheticSpec(seed=0))
    return model, basis_for_model(model, config.k)


def cmd_train_shape(args) -> int:
    config = _config_from_args(args)
    model, basis = _model_and_basis(args, config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    deformer = NonlinearDeformer.build(
        basis, model.n_identity, model.n_expression,
        seed=10_000 + args.seed, amplitude=args.amplitude,
    )
    rng = np.random.default_rng(args.seed)
    xs, ys = _draw_regression_set(rng, model, deformer, args.n_train)
    train_config = TrainConfig(
        learning_rate=args.learning_rate, epochs=args.epochs,
        batch_size=args.batch_size, hidden=tuple(args.hidden), seed=args.seed,
    )
    params, history = train_shape_branch(xs, ys, train_config)
    params.save(out / "shape_params.npz", meta={"k": basis.k, "seed": args.seed})
    _write_json(out / "training.json", {
        "epochs": train_config.epochs,
        "final_loss": history[-1],
        "first_loss": history[0],
        "history": history,
        "n_train": args.n_train,
        "seed": args.seed,
        "hidden": list(train_config.hidden),
    })
    print(f"train-shape: loss {history[0]:.6g} -> {history[-1]:.6g} "
          f"over {train_config.epochs} epochs")
    return EXIT_OK


def cmd_eval(args) -> int:
    config = _config_from_args(args)
    model, basis = _model_and_basis(args, config)
    train_config = TrainConfig(
        learning_rate=args.learning_rate, epochs=args.epochs,
        batch_size=args.batch_size, hidden=tuple(args.hidden), seed=args.seed,
    )
    report = benchmark_shape_branch(
        model, basis, n_train=args.n_train, n_test=args.n_test,
        seeds=range(args.seeds), train_config=train_config,
    )
    print("seed  rmse-without  rmse-with  improved")
    for seed, without, with_ in zip(report.seeds, report.rmse_without, report.rmse_with):
        print(f"{seed:4d}  {without:12.4f}  {with_:9.4f}  {'yes' if with_ < without else 'no'}")
    print(f"mean  {np.mean(report.rmse_without):12.4f}  {np.mean(report.rmse_with):9.4f}")
    print(f"improved on {report.improved_fraction:.0%} of seeds "
          f"in {report.runtime_seconds:.1f} s")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "benchmark.json", "w") as f:
            f.write(report.to_json())
            f.write("\n")
    return EXIT_OK


# --- loss arithmetic demo ---------------------------------------------------------------------


def cmd_losses(args) -> int:
    rng = np.random.default_rng(args.seed)
    shape = (args.batch,)
    outputs = DiscriminatorOutputs(
        real_on_real=rng.random(shape),
        real_on_fake=rng.random(shape),
        pair_matched_real=rng.random(shape),
        pair_matched_fake=rng.random(shape),
        pair_mismatched_real=rng.random(shape),
        iden_matched_real=rng.random(shape),
        iden_matched_fake=rng.random(shape),
        iden_mismatched_real=rng.random(shape),
    )
    a = rng.random((16, 16, 3))
    b = rng.random((16, 16, 3))
    l1 = l1_loss(a, b)
    weights = LossWeights()
    payload = {
        "seed": args.seed,
        "batch": args.batch,
        "loss_real": loss_real(outputs),
        "loss_pair": loss_pair(outputs),
        "loss_iden": loss_iden(outputs),
        "loss_gan": loss_gan(outputs),
        "l1_sample": l1,
        "generator_objective": generator_objective(loss_gan(outputs), l1, 0.0, weights),
        "weights": {"l1": weights.l1, "perceptual": weights.perceptual},
    }
    text = json.dumps(payload, indent=2, sort_keys=True)
    print(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "losses.json", "w") as f:
            f.write(text)
            f.write("\n")
    return EXIT_OK


# --- service ------------------------------------------------------------------------------------


def cmd_serve(args) -> int:
    import os

    import uvicorn

    from .service import create_app

    port = args.port or int(os.environ.get("MORPHFIT_PORT", "8000"))
    app = create_app(model_path=args.model, ui_dir=args.ui)
    uvicorn.run(app, host=args.host, port=port)
    return EXIT_OK


# --- parser -------------------------------------------------------------------------------------


def _add_common(parser, *, model=True, config=True, out_required=True):
    if model:
        parser.add_argument("--model", help="model file path")
    if config:
        parser.add_argument("--config", help="pipeline config JSON")
    parser.add_argument("--out", required=out_required, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="morphfit",
        description="Deterministic 3D-guided face manipulation pipeline.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit pose + coefficients to landmarks, extract texture")
    p.add_argument("image", help="input PNG")
    p.add_argument("landmarks", help="landmark JSON ({'points': [[x, y], ...]})")
    p.add_argument("--depth", help="optional (M, 3) .npy point cloud")
    p.add_argument("--no-depth-refine", action="store_true",
                   help="skip surface refinement even when --depth is given")
    p.add_argument("--resolution", type=int, help="texture side length")
    _add_common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("transfer", help="re-render a fitted face with a new expression")
    p.add_argument("fit", help="fit.json from a previous fit run")
    p.add_argument("--target-expression", required=True,
                   help="e.json ({'expression': [...]})")
    p.add_argument("--image", help="source image to composite into (defaults to black)")
    p.add_argument("--seed", type=int, default=0, help="noise-plane seed")
    p.add_argument("--k", type=int, help="spectral basis size for shape correction")
    p.add_argument("--shape-params", help="trained deformation network (.npz)")
    p.add_argument("--include-semantic", action="store_true",
                   help="append the semantic plane to the conditioning stack")
    p.add_argument("--blend-sigma2", type=float, help="alpha falloff (mm^2)")
    p.add_argument("--blend-kernel", type=int, help="dilation kernel size")
    p.add_argument("--attention-orientation", choices=("input", "render"),
                   help="which image the blend alpha weights")
    _add_common(p)
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("synth", help="write a synthetic model plus ground-truthed scenes")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scenes", type=int, default=3)
    p.add_argument("--resolution", type=int, default=256, help="scene image size")
    p.add_argument("--with-depth", action="store_true")
    _add_common(p, model=False, config=False)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train-shape", help="train the spectral deformation network")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--k", type=int, help="spectral basis size")
    p.add_argument("--n-train", type=int, default=300)
    p.add_argument("--epochs", type=int, default=150)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--learning-rate", type=float, default=2e-3)
    p.add_argument("--hidden", type=int, nargs="+", default=[64, 64])
    p.add_argument("--amplitude", type=float, default=1.5)
    _add_common(p)
    p.set_defaults(func=cmd_train_shape)

    p = sub.add_parser("eval", help="linear-vs-corrected reconstruction benchmark")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds", type=int, default=10, help="number of benchmark seeds")
    p.add_argument("--k", type=int, help="spectral basis size")
    p.add_argument("--n-train", type=int, default=300)
    p.add_argument("--n-test", type=int, default=50)
    p.add_argument("--epochs", type=int, default=150)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--learning-rate", type=float, default=2e-3)
    p.add_argument("--hidden", type=int, nargs="+", default=[64, 64])
    _add_common(p, out_required=False)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("losses", help="evaluate the adversarial loss arithmetic on a seeded batch")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--batch", type=int, default=8)
    _add_common(p, model=False, config=False, out_required=False)
    p.set_defaults(func=cmd_losses)

    p = sub.add_parser("serve", help="run the HTTP session service")
    p.add_argument("--model", help="model file (defaults to the built-in synthetic model)")
    p.add_argument("--port", type=int, help="overrides MORPHFIT_PORT")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--ui", help="directory of a built browser studio to mount at /ui")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"morphfit: missing input: {exc}", file=sys.stderr)
        return EXIT_MISSING_INPUT
    except IsADirectoryError as exc:
        print(f"morphfit: expected a file: {exc}", file=sys.stderr)
        return EXIT_MALFORMED_INPUT
    except MorphfitError as exc:
        print(f"morphfit: {exc}", file=sys.stderr)
        return exc.exit_code
    except (KeyError, ValueError) as exc:
        print(f"morphfit: malformed input: {exc!r}", file=sys.stderr)
        return EXIT_MALFORMED_INPUT


if __name__ == "__main__":
    sys.exit(main())
