"""Dataset assembly, mesh preprocessing, training loop and leave-one-out evaluation."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .mesh import (
    SamplePointSet,
    TriangleMesh,
    load_mesh,
    map_back_to_vertices,
    normalize_area,
    read_scalar_field,
    sample_uniform,
    transfer_field,
)
from .metrics import EvalReport, evaluate
from .network import Adam, MeshInputs, ModelConfig, ZerNet, mse_loss
from .patches import PatchConfig, PatchSet, build_patches
from .zernike import ZernikeBasis

log = logging.getLogger(__name__)


class DataMismatchError(ValueError):
    def __init__(self, entry: int, message: str):
        super().__init__(f"entry {entry}: {message}")
        self.entry = entry


class FoldError(RuntimeError):
    def __init__(self, fold: int, cause: Exception):
        super().__init__(f"fold {fold}: {cause}")
        self.fold = fold


@dataclass
class DatasetEntry:
    mesh: Path
    field: Path
    patches: Path | None = None


@dataclass
class Dataset:
    entries: list
    folds: list
    root: Path | None = None

    def __len__(self) -> int:
        return len(self.entries)

    @classmethod
    def load(cls, manifest_path) -> "Dataset":
        """Read a JSON manifest; entry paths are relative to the manifest."""
        manifest_path = Path(manifest_path)
        doc = json.loads(manifest_path.read_text())
        root = manifest_path.parent
        entries = []
        for e in doc["entries"]:
            patches = e.get("patches")
            entries.append(DatasetEntry(root / e["mesh"], root / e["field"],
                                        root / patches if patches else None))
        folds = [int(f) for f in doc.get("folds", range(len(entries)))]
        for f in folds:
            if not 0 <= f < len(entries):
                raise ValueError(f"fold index {f} outside 0..{len(entries) - 1}")
        return cls(entries, folds, root)

    def validate(self) -> None:
        """Check every field file matches its mesh vertex count."""
        for k, entry in enumerate(self.entries):
            mesh = load_mesh(entry.mesh)
            values = read_scalar_field(entry.field)
            if len(values) != mesh.n_vertices:
                raise DataMismatchError(
                    k, f"{entry.field} has {len(values)} values, {entry.mesh} has "
                       f"{mesh.n_vertices} vertices")


@dataclass(frozen=True)
class PipelineConfig:
    n_samples: int = 8000
    sample_seed: int = 0
    area_fraction: float = 0.01
    neighbor_k: int = 8
    input_scale: str = "radius"  # "radius" divides aligned XYZ by r0; "none" keeps raw units

    def patch_config(self) -> PatchConfig:
        return PatchConfig(area_fraction=self.area_fraction, neighbor_k=self.neighbor_k)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    steps: int = 200
    seed: int = 0

    def optimizer(self) -> Adam:
        return Adam(lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps)


@dataclass
class PreparedMesh:
    """One area-normalized mesh with its samples, patches and network inputs."""

    mesh: TriangleMesh
    samples: SamplePointSet
    patches: PatchSet
    inputs: MeshInputs
    target_samples: np.ndarray | None = None
    target_vertices: np.ndarray | None = None
    scale: float = 1.0
    tag: object = None


def prepare_mesh(
    mesh: TriangleMesh,
    target=None,
    pipeline: PipelineConfig = PipelineConfig(),
    max_order: int = 5,
    normalize_interior: bool = True,
    seed_offset: int = 0,
    patches: PatchSet | None = None,
    tag=None,
    samples: SamplePointSet | None = None,
) -> PreparedMesh:
    """Normalize, sample, build patches and first-layer coefficients.

    Precomputed ``samples`` and ``patches`` (e.g. from a cache) skip the
    corresponding steps; they must refer to the area-normalized mesh.
    """
    mesh, scale = normalize_area(mesh)
    if samples is None:
        samples = sample_uniform(mesh, pipeline.n_samples, pipeline.sample_seed + seed_offset)
    basis = ZernikeBasis(max_order)
    if patches is None:
        patches = build_patches(samples, pipeline.patch_config(), basis, mesh.area)
    elif len(patches) != len(samples) or patches.max_order != max_order:
        raise ValueError("cached patches do not match the sample set or basis")
    scale_in = 1.0 / patches.r0 if pipeline.input_scale == "radius" else 1.0
    coeffs = patches.input_coefficients(samples.positions * scale_in)
    inputs = MeshInputs(coeffs, patches.extraction_operator(normalize_interior), tag=tag)
    prepared = PreparedMesh(mesh, samples, patches, inputs, scale=scale, tag=tag)
    if target is not None:
        target = np.asarray(target, dtype=float)
        if len(target) != mesh.n_vertices:
            raise ValueError(f"{len(target)} target values for {mesh.n_vertices} vertices")
        prepared.target_vertices = target
        prepared.target_samples = transfer_field(mesh, target, samples)
    return prepared


def prepare_entry(dataset: Dataset, k: int, pipeline: PipelineConfig, model: ModelConfig):
    entry = dataset.entries[k]
    mesh = load_mesh(entry.mesh)
    target = read_scalar_field(entry.field)
    if len(target) != mesh.n_vertices:
        raise DataMismatchError(k, f"{len(target)} values for {mesh.n_vertices} vertices")
    patches = PatchSet.load(entry.patches) if entry.patches and entry.patches.exists() else None
    return prepare_mesh(mesh, target, pipeline, model.max_order, model.normalize_interior,
                        seed_offset=k, patches=patches, tag=k)


def init_head_bias(model: ZerNet, meshes) -> None:
    """Start the regression bias at the mean training target."""
    model.params["head.bias"][:] = np.mean(np.concatenate([m.target_samples for m in meshes]))
    model.touch()


def train_step(model: ZerNet, optimizer: Adam, meshes) -> float:
    """One full-batch step: gradients averaged over meshes, then Adam.

    Returns the mean per-mesh MSE before the update.
    """
    total = None
    loss = 0.0
    for m in meshes:
        pred, cache = model.forward(m.inputs)
        value, dpred = mse_loss(pred, m.target_samples)
        loss += value
        grads = model.backward(cache, dpred)
        if total is None:
            total = grads
        else:
            for name in total:
                total[name] += grads[name]
    scale = 1.0 / len(meshes)
    for name in total:
        total[name] *= scale
    model.update(optimizer, total)
    return loss * scale


def train(
    model: ZerNet,
    meshes,
    config: TrainConfig,
    optimizer: Adam | None = None,
    callback: Callable[[int, float], None] | None = None,
):
    """Run ``config.steps`` Adam steps; returns ``(optimizer, loss history)``."""
    if optimizer is None:
        optimizer = config.optimizer()
        init_head_bias(model, meshes)
    history = []
    for _ in range(config.steps):
        loss = train_step(model, optimizer, meshes)
        history.append(loss)
        if callback is not None:
            callback(optimizer.step_count, loss)
    return optimizer, history


def predict_vertices(model: ZerNet, prepared: PreparedMesh) -> np.ndarray:
    pred, _ = model.forward(prepared.inputs)
    return map_back_to_vertices(prepared.samples, pred, prepared.mesh)


FitPredict = Callable[[list, PreparedMesh], np.ndarray]


def zernet_fit_predict(model_config: ModelConfig, train_config: TrainConfig, seen=None) -> FitPredict:
    """Factory for the default LOOCV predictor.

    ``seen`` (a set) collects the tag of every mesh that enters a gradient
    computation, for isolation checks.
    """

    def fit_predict(train_meshes, test_mesh):
        model = ZerNet(model_config, seed=train_config.seed)
        if seen is not None:
            model.instrument = seen.add
        train(model, train_meshes, train_config)
        return predict_vertices(model, test_mesh)

    return fit_predict


def linear_baseline_fit_predict(train_meshes, test_mesh) -> np.ndarray:
    """Per-point least-squares regression of the target on raw XYZ plus a constant."""
    X = np.concatenate([m.samples.positions for m in train_meshes])
    y = np.concatenate([m.target_samples for m in train_meshes])
    A = np.hstack([X, np.ones((len(X), 1))])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    pred = np.hstack([test_mesh.samples.positions, np.ones((len(test_mesh.samples), 1))]) @ coef
    return map_back_to_vertices(test_mesh.samples, pred, test_mesh.mesh)


def oracle_fit_predict(train_meshes, test_mesh) -> np.ndarray:
    return np.array(test_mesh.target_vertices, copy=True)


def run_loocv(
    meshes,
    fit_predict: FitPredict,
    folds=None,
    thresholds=(10.0, 20.0),
) -> list[EvalReport]:
    """Leave-one-out evaluation over prepared meshes.

    For each fold the held-out mesh is predicted by ``fit_predict`` trained
    on the others, and metrics are computed on its original vertices.
    """
    if len(meshes) < 2:
        raise ValueError("leave-one-out needs at least 2 meshes")
    folds = range(len(meshes)) if folds is None else folds
    reports = []
    for fold in folds:
        start = time.perf_counter()
        try:
            train_set = [m for k, m in enumerate(meshes) if k != fold]
            pred = fit_predict(train_set, meshes[fold])
            report = evaluate(pred, meshes[fold].target_vertices, thresholds, name=f"fold{fold}")
        except Exception as exc:
            raise FoldError(fold, exc) from exc
        log.info("fold %d: MAPE %.2f%% PCC %.3f (%.1fs)", fold, report.mape, report.pcc,
                 time.perf_counter() - start)
        reports.append(report)
    return reports
