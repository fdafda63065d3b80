"""1D convolutional residual regressor.

    x0 = ReLU(conv1x1(x))                         channels-first, F filters
    xi = x(i-1) + dropout(ReLU(conv_k(x(i-1))))   i = 1..B
    z  = dropout(ReLU(GAP_time(xB)))
    y  = sigmoid(z W + b)
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass

import numpy as np

from ..errors import NumericError, StructuralError, ValidationError
from . import tensor as tn
from .tensor import Tensor

MODES = ("train", "mc", "eval")


@dataclass(frozen=True)
class ResNetConfig:
    F: int = 128
    k: int = 5
    B: int = 3
    p: float = 0.2
    d_in: int = 14
    d_out: int = 13
    T: int = 365

    def __post_init__(self):
        if min(self.F, self.k, self.d_out, self.d_in, self.T) < 1 or self.B < 0:
            raise ValidationError("ResNetConfig sizes must be positive")
        if not 0.0 <= self.p < 1.0:
            raise ValidationError("dropout rate must lie in [0, 1)")
        if self.k % 2 == 0:
            raise ValidationError("kernel size must be odd")

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def param_shapes(cfg: ResNetConfig) -> dict[str, tuple[int, ...]]:
    shapes = {"proj.weight": (cfg.F, cfg.d_in, 1), "proj.bias": (cfg.F,)}
    for i in range(1, cfg.B + 1):
        shapes[f"block{i}.weight"] = (cfg.F, cfg.F, cfg.k)
        shapes[f"block{i}.bias"] = (cfg.F,)
    shapes["head.weight"] = (cfg.F, cfg.d_out)
    shapes["head.bias"] = (cfg.d_out,)
    return shapes


def init_params(cfg: ResNetConfig, rng: np.random.Generator, dtype=np.float32) -> dict[str, np.ndarray]:
    """He-uniform weights, zero biases."""
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith("bias"):
            params[name] = np.zeros(shape, dtype=dtype)
            continue
        fan_in = shape[0] if name == "head.weight" else shape[1] * shape[2]
        bound = np.sqrt(6.0 / fan_in)
        params[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return params


def _check(t: Tensor, layer: str) -> Tensor:
    if not np.all(np.isfinite(t.data)):
        raise NumericError(f"non-finite activation after {layer}")
    return t


class ResNet1D:
    def __init__(self, cfg: ResNetConfig = ResNetConfig(), params: dict[str, np.ndarray] | None = None,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        self.cfg = cfg
        if params is None:
            params = init_params(cfg, rng if rng is not None else np.random.default_rng(0), dtype)
        shapes = param_shapes(cfg)
        if set(params) != set(shapes):
            raise StructuralError(f"parameter names do not match config: {sorted(set(params) ^ set(shapes))}")
        self.params: dict[str, Tensor] = {}
        for name, shape in shapes.items():
            arr = np.asarray(params[name])
            if arr.shape != shape:
                raise StructuralError(f"{name}: expected shape {shape}, got {arr.shape}")
            self.params[name] = Tensor(arr.astype(dtype, copy=True), requires_grad=True, name=name)

    @property
    def dtype(self):
        return self.params["head.bias"].data.dtype

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for k, v in state.items():
            self.params[k].data = np.asarray(v, dtype=self.dtype).copy()

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def forward(self, x, mode: str = "eval", rng: np.random.Generator | None = None) -> Tensor:
        """``x`` is (batch, T, d_in); dropout is active in "train" and "mc" modes."""
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        cfg = self.cfg
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=self.dtype))
        if x.data.ndim != 3 or x.shape[2] != cfg.d_in:
            raise StructuralError(f"expected input (batch, T, {cfg.d_in}), got {x.shape}")
        _check(x, "input")
        drop_rng = rng if mode in ("train", "mc") else None
        if drop_rng is None and mode != "eval" and cfg.p > 0:
            raise ValueError(f"mode {mode!r} needs an rng for dropout masks")
        P = self.params
        h = tn.permute(x, (0, 2, 1))
        h = _check(tn.relu(tn.conv1d(h, P["proj.weight"], P["proj.bias"])), "proj")
        for i in range(1, cfg.B + 1):
            r = tn.relu(tn.conv1d(h, P[f"block{i}.weight"], P[f"block{i}.bias"]))
            h = _check(h + tn.dropout(r, cfg.p, drop_rng), f"block{i}")
        z = tn.dropout(tn.relu(tn.mean_over_time(h)), cfg.p, drop_rng)
        return _check(tn.sigmoid(tn.linear(z, P["head.weight"], P["head.bias"])), "head")

    def predict(self, x, mode: str = "eval", rng: np.random.Generator | None = None,
                batch_size: int = 64) -> np.ndarray:
        x = np.asarray(x, dtype=self.dtype)
        out = []
        with tn.no_grad():
            for s in range(0, x.shape[0], batch_size):
                out.append(self.forward(x[s:s + batch_size], mode, rng).data)
        if not out:
            return np.zeros((0, self.cfg.d_out), dtype=self.dtype)
        return np.concatenate(out, axis=0)
