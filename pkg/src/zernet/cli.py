"""Command-line interface: ``zernet <command> ...``.

Exit codes: 0 ok, 1 usage, 2 I/O or parse error, 3 geometry error,
4 data mismatch, 5 checkpoint mismatch, 6 verification failure.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import logging
import math
import os
import sys
import warnings
from contextlib import contextmanager
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .gradcheck import run_gradcheck
from .mesh import (
    DegenerateMeshError,
    MeshParseError,
    load_mesh,
    load_samples,
    map_back_to_vertices,
    normalize_area,
    read_scalar_field,
    sample_uniform,
    save_ply,
    save_samples,
    write_scalar_field,
)
from .metrics import UndefinedMetricError, evaluate, format_reports
from .network import (
    ArchitectureMismatch,
    ModelConfig,
    ZerNet,
    load_checkpoint,
    save_checkpoint,
)
from .patches import PatchError, PatchSet, SparsePatchWarning, build_patches
from .synthetic import SyntheticConfig, generate_synthetic
from .training import (
    DataMismatchError,
    Dataset,
    FoldError,
    PipelineConfig,
    TrainConfig,
    init_head_bias,
    linear_baseline_fit_predict,
    prepare_mesh,
    run_loocv,
    train_step,
    zernet_fit_predict,
)
from .zernike import RankDeficiencyWarning, UnderdeterminedError, ZernikeBasis

log = logging.getLogger("zernet")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_GEOMETRY, EXIT_DATA, EXIT_CHECKPOINT, EXIT_VERIFY = range(7)

CONFIG_VERSION = 1
DEFAULT_CONFIG = {
    "version": CONFIG_VERSION,
    "paths": {"manifest": None, "out": None, "checkpoint": None},
    "model": {
        "filters": [128, 512, 1024],
        "rotations": 16,
        "linear_width": 800,
        "relu_after_linear": True,
        "normalize_interior": True,
    },
    "patch": {
        "area_fraction": 0.01,
        "neighbor_k": 8,
        "max_order": 5,
        "n_samples": 8000,
        "sample_seed": 0,
        "input_scale": "radius",
    },
    "train": {
        "lr": 1e-3,
        "beta1": 0.9,
        "beta2": 0.999,
        "eps": 1e-8,
        "epochs": 10,
        "steps_per_epoch": 20,
        "seed": 0,
        "holdout": None,
    },
    "export": {"thresholds": [10.0, 20.0]},
}


class UsageError(Exception):
    pass


class InputError(Exception):
    """Unreadable or malformed input file (exit code 2)."""


# -- configuration -----------------------------------------------------------


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _merge(base: dict, update: dict, prefix: str = "") -> None:
    for key, value in update.items():
        if key not in base:
            raise UsageError(f"unknown config key {prefix}{key}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise UsageError(f"config key {prefix}{key} must be an object")
            _merge(base[key], value, f"{prefix}{key}.")
        else:
            base[key] = value


def load_config(path=None, overrides=()) -> dict:
    """Defaults, then the JSON file, then ``key.sub=value`` overrides."""
    config = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except OSError as exc:
            raise InputError(f"cannot read config {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: invalid JSON ({exc})") from None
        version = doc.get("version", CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise UsageError(f"{path}: unsupported config version {version}")
        _merge(config, doc)
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects key=value, got {item!r}")
        *parents, leaf = key.split(".")
        node = config
        for p in parents:
            if not isinstance(node.get(p), dict):
                raise UsageError(f"unknown config key {key}")
            node = node[p]
        if leaf not in node or isinstance(node[leaf], dict):
            raise UsageError(f"unknown config key {key}")
        node[leaf] = _parse_value(raw)
    return config


def model_config(config: dict) -> ModelConfig:
    m = config["model"]
    try:
        return ModelConfig(
            filters=tuple(m["filters"]),
            rotations=int(m["rotations"]),
            linear_width=int(m["linear_width"]),
            max_order=int(config["patch"]["max_order"]),
            relu_after_linear=bool(m["relu_after_linear"]),
            normalize_interior=bool(m["normalize_interior"]),
        )
    except (TypeError, ValueError) as exc:
        raise UsageError(f"model section: {exc}") from None


def pipeline_config(config: dict) -> PipelineConfig:
    p = config["patch"]
    if p["input_scale"] not in ("radius", "none"):
        raise UsageError("patch.input_scale must be 'radius' or 'none'")
    pipe = PipelineConfig(
        n_samples=int(p["n_samples"]),
        sample_seed=int(p["sample_seed"]),
        area_fraction=float(p["area_fraction"]),
        neighbor_k=int(p["neighbor_k"]),
        input_scale=p["input_scale"],
    )
    if pipe.n_samples < 1:
        raise UsageError("patch.n_samples must be >= 1")
    try:
        pipe.patch_config()
    except ValueError as exc:
        raise UsageError(f"patch section: {exc}") from None
    return pipe


def train_config(config: dict) -> TrainConfig:
    t = config["train"]
    tc = TrainConfig(lr=float(t["lr"]), beta1=float(t["beta1"]), beta2=float(t["beta2"]),
                     eps=float(t["eps"]), steps=int(t["epochs"]) * int(t["steps_per_epoch"]),
                     seed=int(t["seed"]))
    try:
        tc.optimizer()
    except ValueError as exc:
        raise UsageError(f"train section: {exc}") from None
    if int(t["epochs"]) < 1 or int(t["steps_per_epoch"]) < 1:
        raise UsageError("train.epochs and train.steps_per_epoch must be >= 1")
    return tc


def warn_large_patches(area_fraction: float) -> bool:
    """Warn when r0 exceeds half the radius of a sphere with the same area.

    The flat-disk radius ``sqrt(a*A/pi)`` then badly misjudges geodesic balls.
    """
    ratio = 2.0 * math.sqrt(area_fraction)  # r0 / sqrt(A / 4 pi)
    if ratio > 0.5:
        log.warning("area_fraction %g: r0 is %.2f x the equivalent-sphere radius; "
                    "the flat-disk radius approximation is poor at this size",
                    area_fraction, ratio)
        return True
    return False


# -- file helpers ------------------------------------------------------------


def _read(loader, path, what: str):
    path = Path(path)
    if not path.exists():
        raise InputError(f"{what} not found: {path}")
    try:
        return loader(path)
    except (MeshParseError, DegenerateMeshError):
        raise
    except (OSError, ValueError, UnicodeDecodeError) as exc:
        raise InputError(f"cannot read {what} {path}: {exc}") from None


def _load_mesh(path):
    return _read(load_mesh, path, "mesh")


def _load_field(path):
    return _read(read_scalar_field, path, "field")


@contextmanager
def output_lock(out_dir: Path):
    """Refuse to share an output directory between concurrent runs."""
    out_dir.mkdir(parents=True, exist_ok=True)
    lock = out_dir / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise InputError(f"{out_dir} is locked by another run (remove {lock} if stale)") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


def content_key(mesh_path, pipeline: PipelineConfig, max_order: int, seed_offset: int) -> str:
    h = hashlib.sha256()
    h.update(Path(mesh_path).read_bytes())
    h.update(json.dumps({"pipeline": asdict(pipeline), "max_order": max_order,
                         "seed_offset": seed_offset, "v": 1}, sort_keys=True).encode())
    return h.hexdigest()[:20]


def cached_prepare(mesh_path, target, pipeline, model: ModelConfig, seed_offset, cache_dir, tag):
    """``prepare_mesh`` with samples and patches cached by content hash."""
    mesh = _load_mesh(mesh_path)
    key = content_key(mesh_path, pipeline, model.max_order, seed_offset)
    s_path = Path(cache_dir) / f"samples-{key}.bin"
    p_path = Path(cache_dir) / f"patches-{key}.bin"
    samples = patches = None
    if s_path.exists() and p_path.exists():
        samples = _read(load_samples, s_path, "cached samples")
        patches = _read(PatchSet.load, p_path, "cached patches")
        log.info("cache hit %s", key)
    prepared = prepare_mesh(mesh, target, pipeline, model.max_order, model.normalize_interior,
                            seed_offset=seed_offset, patches=patches, tag=tag, samples=samples)
    if samples is None:
        Path(cache_dir).mkdir(parents=True, exist_ok=True)
        save_samples(prepared.samples, s_path)
        prepared.patches.save(p_path)
    return prepared


def color_ramp(values) -> tuple[np.ndarray, dict]:
    """Blue-to-red linear ramp; a constant field maps to the ramp midpoint."""
    values = np.asarray(values, dtype=float)
    lo, hi = float(values.min()), float(values.max())
    constant = hi == lo
    t = np.full(len(values), 0.5) if constant else (values - lo) / (hi - lo)
    rgb = np.stack([255 * t, np.zeros_like(t), 255 * (1 - t)], axis=1)
    return np.rint(rgb).astype(np.uint8), {"min": lo, "max": hi, "constant": constant}


# -- commands ----------------------------------------------------------------


def cmd_sample(args) -> int:
    if args.count < 1:
        raise UsageError(f"--count must be >= 1, got {args.count}")
    mesh = _load_mesh(args.mesh)
    unit, _ = normalize_area(mesh)
    points = sample_uniform(unit, args.count, args.seed)
    save_samples(points, args.out)
    print(f"V={mesh.n_vertices} F={mesh.n_faces} S={len(points)} area={mesh.area:.6g} "
          f"(sampled on the unit-area copy) -> {args.out}")
    return EXIT_OK


def cmd_patches(args) -> int:
    config = load_config(args.config, args.set)
    pipe = pipeline_config(config)
    warn_large_patches(pipe.area_fraction)
    points = _read(load_samples, args.samples, "sample set")
    area = 1.0 if args.mesh is None else normalize_area(_load_mesh(args.mesh))[0].area
    basis = ZernikeBasis(int(config["patch"]["max_order"]))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        patches = build_patches(points, pipe.patch_config(), basis, area)
    patches.save(args.out)
    summary = patches.summary()
    print(" ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}"
                   for k, v in summary.items()))
    counts, edges = np.histogram(patches.counts, bins=min(10, len(np.unique(patches.counts))))
    for c, lo, hi in zip(counts, edges[:-1], edges[1:]):
        print(f"  members {lo:7.1f}-{hi:7.1f}: {c}")
    sparse_n = getattr(patches, "sparse_count", 0)
    rank_n = getattr(patches, "rank_deficient_count", 0)
    valid = 100.0 * (1 - sparse_n / len(patches))
    print(f"sparse patches: {sparse_n}  rank-deficient fits: {rank_n}  "
          f"valid: {valid:.2f}%  warnings: {len(caught)}")
    return EXIT_OK


def _prepare_dataset(config, dataset: Dataset, model: ModelConfig, indices, cache_dir):
    pipe = pipeline_config(config)
    warn_large_patches(pipe.area_fraction)
    meshes = []
    for k in indices:
        entry = dataset.entries[k]
        target = _load_field(entry.field)
        mesh = _load_mesh(entry.mesh)
        if len(target) != mesh.n_vertices:
            raise DataMismatchError(k, f"{entry.field} has {len(target)} values, {entry.mesh} "
                                       f"has {mesh.n_vertices} vertices")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", SparsePatchWarning)
            warnings.simplefilter("ignore", RankDeficiencyWarning)
            meshes.append(cached_prepare(entry.mesh, target, pipe, model, k, cache_dir, tag=k))
    return meshes


def _load_dataset(path) -> Dataset:
    if path is None:
        raise UsageError("a dataset manifest is required (--manifest or paths.manifest)")
    try:
        return _read(Dataset.load, path, "manifest")
    except KeyError as exc:
        raise InputError(f"{path}: manifest entry missing {exc}") from None


def cmd_train(args) -> int:
    config = load_config(args.config, args.set)
    manifest = args.manifest or config["paths"]["manifest"]
    out = args.out or config["paths"]["out"]
    if out is None:
        raise UsageError("an output directory is required (--out or paths.out)")
    out = Path(out)
    model_cfg = model_config(config)
    tc = train_config(config)
    t = config["train"]
    dataset = _load_dataset(manifest)
    holdout = t["holdout"]
    indices = [k for k in range(len(dataset)) if k != holdout]
    if not indices:
        raise UsageError("no training entries left after the holdout")

    with output_lock(out):
        meshes = _prepare_dataset(config, dataset, model_cfg, indices, out / "cache")
        last = out / "last.ckpt"
        log_path = out / "loss.csv"
        if args.resume:
            if not last.exists():
                raise InputError(f"nothing to resume: {last} missing")
            model, opt, extra = load_checkpoint(last, expected=model_cfg)
            epoch0 = int(extra.get("epoch", 0))
        else:
            model = ZerNet(model_cfg, seed=tc.seed)
            opt = tc.optimizer()
            init_head_bias(model, meshes)
            epoch0 = 0
            with open(log_path, "w", newline="") as fh:
                csv.writer(fh).writerow(["epoch", "step", "train_mse"])
        extra = {"pipeline": asdict(pipeline_config(config)), "holdout": holdout}
        for epoch in range(epoch0, int(t["epochs"])):
            rows = []
            for _ in range(int(t["steps_per_epoch"])):
                loss = train_step(model, opt, meshes)
                rows.append([epoch + 1, opt.step_count, repr(loss)])
            with open(log_path, "a", newline="") as fh:
                csv.writer(fh).writerows(rows)
            extra["epoch"] = epoch + 1
            save_checkpoint(out / f"epoch{epoch + 1:04d}.ckpt", model, opt, extra)
            save_checkpoint(last, model, opt, extra)
            print(f"epoch {epoch + 1}: step {opt.step_count} train MSE {loss:.6g}", flush=True)
    return EXIT_OK


def _checkpoint(args, config_given: bool, config: dict):
    path = args.checkpoint or config["paths"]["checkpoint"]
    if path is None:
        raise UsageError("a checkpoint is required (--checkpoint or paths.checkpoint)")
    if not Path(path).exists():
        raise InputError(f"checkpoint not found: {path}")
    expected = model_config(config) if config_given else None
    try:
        model, _, extra = load_checkpoint(path, expected=expected)
    except (ValueError, KeyError, TypeError) as exc:
        if isinstance(exc, ArchitectureMismatch):
            raise
        raise InputError(f"cannot read checkpoint {path}: {exc}") from None
    pipe = PipelineConfig(**extra["pipeline"]) if "pipeline" in extra else pipeline_config(config)
    return model, pipe


def _predict(args, config_given, config, mesh_path):
    model, pipe = _checkpoint(args, config_given, config)
    mesh = _load_mesh(mesh_path)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SparsePatchWarning)
        warnings.simplefilter("ignore", RankDeficiencyWarning)
        prepared = prepare_mesh(mesh, None, pipe, model.config.max_order,
                                model.config.normalize_interior)
    pred, _ = model.forward(prepared.inputs)
    return map_back_to_vertices(prepared.samples, pred, prepared.mesh)


def _config_given(args) -> bool:
    return args.config is not None or bool(args.set)


def cmd_predict(args) -> int:
    config = load_config(args.config, args.set)
    values = _predict(args, _config_given(args), config, args.mesh)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_scalar_field(out.with_suffix(".txt"), values)
    write_scalar_field(out.with_suffix(".csv"), values, csv=True)
    print(f"{len(values)} vertex predictions -> {out.with_suffix('.txt')}, "
          f"{out.with_suffix('.csv')}")
    return EXIT_OK


def _write_reports(reports, json_path):
    print(format_reports(reports))
    if json_path:
        Path(json_path).write_text(
            json.dumps([r.to_dict() for r in reports], indent=2, sort_keys=True) + "\n")


def cmd_eval(args) -> int:
    config = load_config(args.config, args.set)
    thresholds = tuple(float(x) for x in config["export"]["thresholds"])
    if args.manifest:
        dataset = _load_dataset(args.manifest)
        model_cfg = model_config(config)
        out = Path(args.out or config["paths"]["out"] or "zernet-eval")
        with output_lock(out):
            meshes = _prepare_dataset(config, dataset, model_cfg, range(len(dataset)),
                                      out / "cache")
            folds = dataset.folds
            reports = run_loocv(meshes, zernet_fit_predict(model_cfg, train_config(config)),
                                folds, thresholds)
            baseline = run_loocv(meshes, linear_baseline_fit_predict, folds, thresholds)
        for r in baseline:
            r.name = f"linear-{r.name}"
        _write_reports(reports + baseline, args.json)
        return EXIT_OK
    if args.truth is None:
        raise UsageError("eval needs --truth (or --manifest for leave-one-out)")
    truth = _load_field(args.truth)
    if args.pred is not None:
        pred = _load_field(args.pred)
        name = Path(args.pred).stem
    elif args.mesh is not None:
        pred = _predict(args, _config_given(args), config, args.mesh)
        name = Path(args.mesh).stem
    else:
        raise UsageError("eval needs --pred FILE or --checkpoint/--mesh")
    if len(pred) != len(truth):
        raise DataMismatchError(0, f"{len(pred)} predictions vs {len(truth)} truth values")
    _write_reports([evaluate(pred, truth, thresholds, name=name)], args.json)
    return EXIT_OK


def cmd_export(args) -> int:
    config = load_config(args.config, args.set)
    mesh = _load_mesh(args.mesh)
    if args.field is not None:
        values = _load_field(args.field)
    else:
        values = _predict(args, _config_given(args), config, args.mesh)
    if len(values) != mesh.n_vertices:
        raise DataMismatchError(0, f"{len(values)} values for {mesh.n_vertices} vertices")
    colors, info = color_ramp(values)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_ply(out, mesh, quality=values, colors=colors)
    sidecar = out.with_suffix(".json")
    sidecar.write_text(json.dumps({**info, "ramp": "blue-red", "vertices": mesh.n_vertices},
                                  indent=2, sort_keys=True) + "\n")
    note = " (constant field: min == max)" if info["constant"] else ""
    print(f"range [{info['min']:.6g}, {info['max']:.6g}]{note} -> {out}, {sidecar}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    if args.scale < 8:
        raise UsageError("--scale must be >= 8 sample points")
    report = run_gradcheck(args.seed, n_points=args.scale, n_params=args.params,
                           corrupt=args.corrupt)
    print(report.format())
    return EXIT_OK if report.passed else EXIT_VERIFY


def cmd_synth(args) -> int:
    if args.count < 2:
        raise UsageError("--count must be >= 2")
    cfg = SyntheticConfig(level=args.level, amplitude=args.amplitude,
                          curvature_offset=args.offset)
    path = generate_synthetic(args.count, args.seed, args.out, cfg)
    print(f"{args.count} meshes -> {path}")
    return EXIT_OK


# -- entry point -------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_config(p):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config entry, e.g. model.filters=[16,32,64]")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="zernet", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("sample", help="uniformly sample points on a mesh")
    p.add_argument("mesh")
    p.add_argument("--count", type=int, default=8000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("patches", help="build geodesic patches and fit operators")
    p.add_argument("samples")
    p.add_argument("--mesh", help="mesh the samples came from (total area); default unit area")
    p.add_argument("--out", required=True)
    _add_config(p)
    p.set_defaults(func=cmd_patches)

    p = sub.add_parser("train", help="train on a dataset manifest")
    p.add_argument("--manifest")
    p.add_argument("--out")
    p.add_argument("--resume", action="store_true", help="continue from OUT/last.ckpt")
    _add_config(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="predict a per-vertex field with a checkpoint")
    p.add_argument("--checkpoint")
    p.add_argument("--mesh", required=True)
    p.add_argument("--out", required=True, help="output prefix; writes .txt and .csv")
    _add_config(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="MAPE / PCC / hit-rate reports")
    p.add_argument("--truth")
    p.add_argument("--pred")
    p.add_argument("--checkpoint")
    p.add_argument("--mesh")
    p.add_argument("--manifest", help="run leave-one-out over a dataset instead")
    p.add_argument("--out", help="work directory for --manifest runs")
    p.add_argument("--json", help="also write the reports as JSON")
    _add_config(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export", help="write a colored PLY of a per-vertex field")
    p.add_argument("--mesh", required=True)
    p.add_argument("--field")
    p.add_argument("--checkpoint")
    p.add_argument("--out", required=True)
    _add_config(p)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("gradcheck", help="finite-difference check of the backward pass")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scale", type=int, default=16, help="number of sample points")
    p.add_argument("--params", type=int, default=200, help="parameters to probe")
    p.add_argument("--corrupt", help=argparse.SUPPRESS)  # test hook: perturb one layer
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("synth", help="generate a synthetic bumpy-sphere dataset")
    p.add_argument("--count", type=int, default=6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--level", type=int, default=4)
    p.add_argument("--amplitude", type=float, default=SyntheticConfig.amplitude)
    p.add_argument("--offset", type=float, default=0.0, help="constant added to the curvature")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def _exit_code(exc: BaseException) -> int | None:
    if isinstance(exc, FoldError) and exc.__cause__ is not None:
        return _exit_code(exc.__cause__)
    if isinstance(exc, UsageError):
        return EXIT_USAGE
    if isinstance(exc, ArchitectureMismatch):
        return EXIT_CHECKPOINT
    if isinstance(exc, DataMismatchError):
        return EXIT_DATA
    if isinstance(exc, (DegenerateMeshError, PatchError, UnderdeterminedError)):
        return EXIT_GEOMETRY
    if isinstance(exc, (InputError, MeshParseError, OSError)):
        return EXIT_IO
    if isinstance(exc, UndefinedMetricError):
        return EXIT_DATA
    return None


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except Exception as exc:
        code = _exit_code(exc)
        if code is None:
            raise
        print(f"zernet: error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
