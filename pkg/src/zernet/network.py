"""ZerNet layers with hand-written reverse-mode gradients.

Pipeline for one mesh::

    input coeffs -> conv -> pool -> relu -> [extract -> conv -> pool -> relu]*
                 -> patch linear -> relu -> patch regression

Convolutions rotate each filter's coefficients by ``2*pi*q/Q`` and take
dot products with the patch coefficients; angular max-pooling keeps the
best rotation. Extraction is the fixed sparse patch-fit operator, so its
backward pass is a transpose product.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse

from .mesh import make_rng
from .zernike import ZernikeBasis

CHECKPOINT_MAGIC = b"ZNCKPT\x00\x00"
CHECKPOINT_VERSION = 1
# He-uniform gain: keeps activation scale roughly constant through ReLU layers
INIT_GAIN = math.sqrt(6.0)


class ShapeError(ValueError):
    pass


class StaleCacheError(RuntimeError):
    pass


class ArchitectureMismatch(ValueError):
    def __init__(self, expected: str, found: str):
        super().__init__(f"architecture mismatch:\n  expected {expected}\n  found    {found}")
        self.expected = expected
        self.found = found


@dataclass(frozen=True)
class ModelConfig:
    filters: tuple = (128, 512, 1024)
    rotations: int = 16
    linear_width: int = 800
    max_order: int = 5
    in_channels: int = 3
    relu_after_linear: bool = True
    normalize_interior: bool = True

    def __post_init__(self):
        object.__setattr__(self, "filters", tuple(int(p) for p in self.filters))
        if not self.filters or min(self.filters) < 1:
            raise ValueError("need at least one convolution layer with >= 1 filter")
        if self.rotations < 1:
            raise ValueError("rotations must be >= 1")
        if self.linear_width < 1:
            raise ValueError("linear_width must be >= 1")

    @property
    def n_basis(self) -> int:
        return (self.max_order + 1) * (self.max_order + 2) // 2

    def descriptor(self) -> str:
        d = asdict(self)
        d["filters"] = list(self.filters)
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_descriptor(cls, text: str) -> "ModelConfig":
        d = json.loads(text)
        d["filters"] = tuple(d["filters"])
        return cls(**d)

    def param_shapes(self) -> dict:
        N = self.n_basis
        shapes = {}
        c = self.in_channels
        for k, p in enumerate(self.filters):
            shapes[f"conv{k}.weight"] = (p, c, N)
            shapes[f"conv{k}.bias"] = (p,)
            c = p
        shapes["linear.weight"] = (self.linear_width, c)
        shapes["linear.bias"] = (self.linear_width,)
        shapes["head.weight"] = (1, self.linear_width)
        shapes["head.bias"] = (1,)
        return shapes


def rotation_stack(basis: ZernikeBasis, Q: int) -> np.ndarray:
    """Coefficient rotation matrices ``R(2*pi*q/Q)``, shape ``(Q, N, N)``."""
    return np.stack([basis.rotation_matrix(2.0 * math.pi * q / Q) for q in range(Q)])


def conv_forward(weight, bias, rotations, coeffs) -> np.ndarray:
    """Rotated-filter Zernike convolution.

    ``out[x, p, q] = sum_c <R_q w[p, c], a[x, c]> + bias[p]``.

    Parameters
    ----------
    weight : (P, C, N) array
    bias : (P,) array
    rotations : (Q, N, N) array
    coeffs : (S, C, N) array

    Returns
    -------
    (S, P, Q) array
    """
    P, C, N = weight.shape
    if coeffs.ndim != 3 or coeffs.shape[1:] != (C, N):
        raise ShapeError(f"expected coefficients (S, {C}, {N}), got {coeffs.shape}")
    rotated = np.einsum("qij,pcj->qpci", rotations, weight)
    Q = rotations.shape[0]
    out = coeffs.reshape(len(coeffs), C * N) @ rotated.reshape(Q * P, C * N).T
    out = out.reshape(-1, Q, P).transpose(0, 2, 1) + bias[None, :, None]
    return out


def conv_backward(weight, rotations, coeffs, dout):
    """Gradients of :func:`conv_forward` w.r.t. weight, bias and coefficients."""
    P, C, N = weight.shape
    Q = rotations.shape[0]
    S = len(coeffs)
    g = np.ascontiguousarray(dout.transpose(0, 2, 1)).reshape(S, Q * P)
    rotated = np.einsum("qij,pcj->qpci", rotations, weight).reshape(Q * P, C * N)
    d_rot = (g.T @ coeffs.reshape(S, C * N)).reshape(Q, P, C, N)
    d_weight = np.einsum("qij,qpci->pcj", rotations, d_rot)
    d_bias = dout.sum(axis=(0, 2))
    d_coeffs = (g @ rotated).reshape(S, C, N)
    return d_weight, d_bias, d_coeffs


def angular_max_pool(responses):
    """Max over the rotation axis; ties resolve to the lowest rotation index."""
    arg = np.argmax(responses, axis=2)
    pooled = np.take_along_axis(responses, arg[..., None], axis=2)[..., 0]
    return pooled, arg


def angular_max_pool_backward(dpooled, arg, Q: int) -> np.ndarray:
    S, P = dpooled.shape
    dresp = np.zeros((S, P, Q))
    np.put_along_axis(dresp, arg[..., None], dpooled[..., None], axis=2)
    return dresp


def patch_linear_forward(weight, bias, features) -> np.ndarray:
    if features.ndim != 2 or features.shape[1] != weight.shape[1]:
        raise ShapeError(f"expected features (S, {weight.shape[1]}), got {features.shape}")
    return features @ weight.T + bias


def relu(x):
    return np.maximum(x, 0.0)


def mse_loss(pred, target):
    """Mean squared error and its gradient with respect to ``pred``."""
    pred = np.asarray(pred, dtype=float).ravel()
    target = np.asarray(target, dtype=float).ravel()
    if pred.shape != target.shape:
        raise ShapeError(f"length mismatch: {pred.shape[0]} vs {target.shape[0]}")
    diff = pred - target
    return float(diff @ diff) / len(diff), 2.0 * diff / len(diff)


class MeshInputs:
    """Fixed per-mesh network inputs: first-layer coefficients and extraction map.

    Parameters
    ----------
    coeffs : (S, C_in, N) array
        Coefficients of the (aligned, normalized) input features.
    extraction : sparse (S*N, S) matrix
        Patch fit operator used before every interior convolution.
    """

    def __init__(self, coeffs, extraction, tag=None):
        self.coeffs = np.ascontiguousarray(coeffs, dtype=float)
        self.extraction = sparse.csr_matrix(extraction)
        self.extraction_t = self.extraction.T.tocsr()
        self.tag = tag
        S, _, N = self.coeffs.shape
        if self.extraction.shape != (S * N, S):
            raise ShapeError(
                f"extraction operator {self.extraction.shape} does not match (S*N, S)=({S * N}, {S})"
            )

    @property
    def n_points(self) -> int:
        return self.coeffs.shape[0]

    def extract(self, h):
        S, N = self.n_points, self.coeffs.shape[2]
        a = self.extraction @ h
        return np.ascontiguousarray(a.reshape(S, N, -1).transpose(0, 2, 1))

    def extract_backward(self, da):
        S, C, N = da.shape
        return self.extraction_t @ np.ascontiguousarray(da.transpose(0, 2, 1)).reshape(S * N, C)


@dataclass
class ForwardCache:
    version: int
    inputs: MeshInputs
    coeffs: list = field(default_factory=list)
    pooled: list = field(default_factory=list)
    argmax: list = field(default_factory=list)
    features: np.ndarray | None = None
    linear_out: np.ndarray | None = None
    hidden: np.ndarray | None = None


class ZerNet:
    """Parameter store plus forward/backward passes.

    Parameters are kept in a dict in declaration order (see
    :meth:`ModelConfig.param_shapes`), which fixes checkpoint layout.
    """

    def __init__(self, config: ModelConfig, seed: int = 0, params: dict | None = None):
        self.config = config
        self.basis = ZernikeBasis(config.max_order)
        self.rotations = rotation_stack(self.basis, config.rotations)
        self.shapes = config.param_shapes()
        self._version = 0
        if params is None:
            params = self._init_params(seed)
        self.params = {}
        for name, shape in self.shapes.items():
            value = np.array(params[name], dtype=float)
            if value.shape != shape:
                raise ShapeError(f"{name}: expected {shape}, got {value.shape}")
            self.params[name] = value
        self.instrument = None  # optional callable(tag) fired on each backward

    def _init_params(self, seed):
        rng = make_rng(seed)
        params = {}
        for name, shape in self.shapes.items():
            if name.endswith(".bias"):
                params[name] = np.zeros(shape)
                continue
            fan_in = int(np.prod(shape[1:]))
            bound = INIT_GAIN / math.sqrt(fan_in)
            params[name] = rng.uniform(-bound, bound, size=shape)
        return params

    def touch(self):
        """Mark parameters as modified; invalidates outstanding caches."""
        self._version += 1

    def update(self, optimizer: "Adam", grads: dict) -> None:
        optimizer.step(self.params, grads)
        self.touch()

    def n_parameters(self) -> int:
        return sum(int(np.prod(s)) for s in self.shapes.values())

    def forward(self, inputs: MeshInputs):
        """Predict the scalar field at every sample point.

        Returns
        -------
        (prediction, cache)
            ``prediction`` has shape ``(S,)``.
        """
        cfg, p = self.config, self.params
        cache = ForwardCache(self._version, inputs)
        a = inputs.coeffs
        if a.shape[1:] != (cfg.in_channels, cfg.n_basis):
            raise ShapeError(
                f"layer 0: expected input coefficients (S, {cfg.in_channels}, {cfg.n_basis}), "
                f"got {a.shape}"
            )
        h = None
        for k in range(len(cfg.filters)):
            if k > 0:
                a = inputs.extract(h)
            W, b = p[f"conv{k}.weight"], p[f"conv{k}.bias"]
            if a.shape[1] != W.shape[1]:
                raise ShapeError(f"layer {k}: {a.shape[1]} channels, weight expects {W.shape[1]}")
            pooled, arg = angular_max_pool(conv_forward(W, b, self.rotations, a))
            cache.coeffs.append(a)
            cache.pooled.append(pooled)
            cache.argmax.append(arg)
            h = relu(pooled)
        cache.features = h
        lin = patch_linear_forward(p["linear.weight"], p["linear.bias"], h)
        cache.linear_out = lin
        hidden = relu(lin) if cfg.relu_after_linear else lin
        cache.hidden = hidden
        out = patch_linear_forward(p["head.weight"], p["head.bias"], hidden)[:, 0]
        return out, cache

    def backward(self, cache: ForwardCache, dpred) -> dict:
        """Exact parameter gradients given ``dL/dprediction``."""
        if cache.version != self._version:
            raise StaleCacheError("parameters changed since this forward pass")
        cfg, p = self.config, self.params
        if self.instrument is not None:
            self.instrument(cache.inputs.tag)
        dpred = np.asarray(dpred, dtype=float).reshape(-1, 1)
        grads = {}
        grads["head.weight"] = dpred.T @ cache.hidden
        grads["head.bias"] = dpred.sum(axis=0)
        dh = dpred @ p["head.weight"]
        if cfg.relu_after_linear:
            dh = dh * (cache.linear_out > 0)
        grads["linear.weight"] = dh.T @ cache.features
        grads["linear.bias"] = dh.sum(axis=0)
        dh = dh @ p["linear.weight"]
        for k in reversed(range(len(cfg.filters))):
            dpooled = dh * (cache.pooled[k] > 0)
            dresp = angular_max_pool_backward(dpooled, cache.argmax[k], cfg.rotations)
            dW, db, da = conv_backward(p[f"conv{k}.weight"], self.rotations, cache.coeffs[k], dresp)
            grads[f"conv{k}.weight"] = dW
            grads[f"conv{k}.bias"] = db
            if k > 0:
                dh = cache.inputs.extract_backward(da)
        return {name: grads[name] for name in self.shapes}


@dataclass
class Adam:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("betas must lie in (0, 1)")

    def step(self, params: dict, grads: dict) -> None:
        """Bias-corrected Adam update, applied to ``params`` in place."""
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for name, g in grads.items():
            if params[name].shape != g.shape:
                raise ShapeError(f"{name}: gradient {g.shape} vs parameter {params[name].shape}")
            if name not in self.m:
                self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            elif self.m[name].shape != g.shape:
                raise ShapeError(f"{name}: moment shape {self.m[name].shape} vs {g.shape}")
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            params[name] -= self.lr * (self.m[name] / c1) / (np.sqrt(self.v[name] / c2) + self.eps)


def save_checkpoint(path, model: ZerNet, optimizer: Adam | None = None, extra: dict | None = None):
    """Write parameters and Adam moments as little-endian float64 in declaration order."""
    optimizer = optimizer or Adam()
    desc = model.config.descriptor().encode("utf-8")
    meta = json.dumps(extra or {}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(desc)))
        fh.write(desc)
        fh.write(struct.pack("<I", len(meta)))
        fh.write(meta)
        fh.write(struct.pack("<Q4d", optimizer.step_count, optimizer.lr, optimizer.beta1,
                             optimizer.beta2, optimizer.eps))
        has_moments = bool(optimizer.m)
        fh.write(struct.pack("<?", has_moments))
        for name in model.shapes:
            fh.write(np.ascontiguousarray(model.params[name], dtype="<f8").tobytes())
        if has_moments:
            for store in (optimizer.m, optimizer.v):
                for name in model.shapes:
                    fh.write(np.ascontiguousarray(store[name], dtype="<f8").tobytes())


def read_checkpoint_descriptor(path) -> str:
    data = Path(path).read_bytes()
    if data[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, n = struct.unpack_from("<II", data, 8)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    return data[16 : 16 + n].decode("utf-8")


def load_checkpoint(path, expected: ModelConfig | None = None):
    """Return ``(model, optimizer, extra)``; raise on architecture mismatch."""
    data = Path(path).read_bytes()
    desc = read_checkpoint_descriptor(path)
    if expected is not None and desc != expected.descriptor():
        raise ArchitectureMismatch(expected.descriptor(), desc)
    config = ModelConfig.from_descriptor(desc)
    off = 16 + len(desc.encode("utf-8"))
    (n_meta,) = struct.unpack_from("<I", data, off)
    off += 4
    extra = json.loads(data[off : off + n_meta].decode("utf-8"))
    off += n_meta
    step, lr, b1, b2, eps = struct.unpack_from("<Q4d", data, off)
    off += struct.calcsize("<Q4d")
    (has_moments,) = struct.unpack_from("<?", data, off)
    off += 1
    shapes = config.param_shapes()

    def read_store():
        nonlocal off
        store = {}
        for name, shape in shapes.items():
            count = int(np.prod(shape))
            store[name] = np.frombuffer(data, "<f8", count, off).reshape(shape).astype(float)
            off += 8 * count
        return store

    params = read_store()
    opt = Adam(lr=lr, beta1=b1, beta2=b2, eps=eps, step_count=step)
    if has_moments:
        opt.m = read_store()
        opt.v = read_store()
    if off != len(data):
        raise ValueError(f"{path}: {len(data) - off} trailing bytes")
    return ZerNet(config, params=params), opt, extra
