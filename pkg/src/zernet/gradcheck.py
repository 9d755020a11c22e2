"""Central-difference verification of the hand-written backward pass."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .mesh import make_rng, mean_curvature, normalize_area, sample_uniform, transfer_field
from .network import MeshInputs, ModelConfig, ZerNet, mse_loss
from .patches import PatchConfig, SparsePatchWarning, build_patches
from .synthetic import SyntheticConfig, bumpy_sphere
from .zernike import RankDeficiencyWarning, ZernikeBasis

TOLERANCE = 1e-4

# 16 points cannot carry 21 coefficients per patch, so the toy drops to
# order 2 (N=6) with patches covering most of the surface.
TOY_MODEL = ModelConfig(filters=(4, 5, 6), rotations=4, linear_width=7, max_order=2)
TOY_PATCHES = PatchConfig(area_fraction=0.9, neighbor_k=15, min_patch_points=6)


@dataclass
class GradcheckReport:
    errors: dict = field(default_factory=dict)  # layer name -> max relative error
    checked: int = 0
    tolerance: float = TOLERANCE

    @property
    def passed(self) -> bool:
        return all(e < self.tolerance for e in self.errors.values())

    def format(self) -> str:
        lines = [f"{name:<8s} max rel err {err:.3e}  {'ok' if err < self.tolerance else 'FAIL'}"
                 for name, err in self.errors.items()]
        lines.append(f"{self.checked} parameters checked, tolerance {self.tolerance:g}: "
                     + ("PASS" if self.passed else "FAIL"))
        return "\n".join(lines)


def toy_problem(seed: int = 0, n_points: int = 16, config: ModelConfig = TOY_MODEL):
    """Tiny bumpy-sphere instance: ``(model, inputs, target)`` with random parameters."""
    rng = make_rng(seed)
    mesh, _ = normalize_area(bumpy_sphere(rng, SyntheticConfig(level=1)))
    samples = sample_uniform(mesh, n_points, seed)
    basis = ZernikeBasis(config.max_order)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SparsePatchWarning)
        warnings.simplefilter("ignore", RankDeficiencyWarning)
        patches = build_patches(samples, TOY_PATCHES, basis, mesh.area)
    coeffs = patches.input_coefficients(samples.positions / patches.r0)
    inputs = MeshInputs(coeffs, patches.extraction_operator(config.normalize_interior), tag="toy")
    target = transfer_field(mesh, mean_curvature(mesh), samples)
    model = ZerNet(config, seed=seed)
    # non-zero biases so every bias gradient is exercised away from ReLU kinks
    for name, value in model.params.items():
        value += rng.normal(0.0, 0.3, size=value.shape)
    model.touch()
    return model, inputs, target


def layer_of(name: str) -> str:
    return name.split(".")[0]


def check_gradients(model: ZerNet, inputs: MeshInputs, target, n_params: int = 200,
                    eps: float = 1e-5, seed: int = 0, corrupt: str | None = None) -> GradcheckReport:
    """Compare analytic gradients with central differences on random entries.

    ``corrupt`` names a layer whose analytic gradient is perturbed by 1%,
    a negative control for the checker itself.
    """
    pred, cache = model.forward(inputs)
    loss, dpred = mse_loss(pred, target)
    # central differences cannot resolve gradients below their roundoff level,
    # ~eps_machine*|L|/eps; smaller gradients are compared against that scale
    floor = 10 * np.finfo(float).eps * max(1.0, loss) / (eps * TOLERANCE)
    grads = model.backward(cache, dpred)
    if corrupt is not None:
        hit = [n for n in grads if layer_of(n) == corrupt]
        if not hit:
            raise ValueError(f"no layer named {corrupt!r}")
        for n in hit:
            grads[n] = grads[n] * 1.01

    names = list(model.params)
    sizes = np.array([model.params[n].size for n in names])
    rng = make_rng(seed)
    # every tensor gets at least one probe, the rest are spread by size
    picks = [(n, int(rng.integers(model.params[n].size))) for n in names]
    flat = rng.choice(sizes.sum(), size=max(n_params - len(names), 0), replace=False)
    bounds = np.cumsum(sizes)
    for f in np.sort(flat):
        k = int(np.searchsorted(bounds, f, side="right"))
        picks.append((names[k], int(f - (bounds[k] - sizes[k]))))

    report = GradcheckReport(errors={layer_of(n): 0.0 for n in names})
    for name, i in picks:
        p = model.params[name].reshape(-1)
        old = p[i]
        p[i] = old + eps
        model.touch()
        up = mse_loss(model.forward(inputs)[0], target)[0]
        p[i] = old - eps
        model.touch()
        down = mse_loss(model.forward(inputs)[0], target)[0]
        p[i] = old
        model.touch()
        numeric = (up - down) / (2 * eps)
        analytic = grads[name].reshape(-1)[i]
        err = abs(numeric - analytic) / max(abs(numeric), abs(analytic), floor)
        layer = layer_of(name)
        report.errors[layer] = max(report.errors[layer], err)
        report.checked += 1
    return report


def run_gradcheck(seed: int = 0, n_points: int = 16, n_params: int = 200,
                  corrupt: str | None = None) -> GradcheckReport:
    model, inputs, target = toy_problem(seed, n_points)
    return check_gradients(model, inputs, target, n_params=n_params, seed=seed, corrupt=corrupt)
