"""MLP encoder, projection head and bias-free linear classification heads."""
from __future__ import annotations

import dataclasses
import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .tensor import BatchNormState, Tensor

CHECKPOINT_MAGIC = b"SCCK"
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    input_dim: int
    encoder_layers: tuple[int, ...] = (64,)
    proj_hidden: int = 64
    proj_out: int = 16
    head_sizes: tuple[int, ...] = (4, 8, 16, 32)
    head_mode: str = "learnable"
    leaky_slope: float = 0.01
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5

    def __post_init__(self):
        self.encoder_layers = tuple(int(w) for w in self.encoder_layers)
        self.head_sizes = tuple(int(c) for c in self.head_sizes)
        if self.input_dim < 1:
            raise ConfigError("input_dim must be >= 1")
        if not self.head_sizes or min(self.head_sizes) < 2:
            raise ConfigError(f"head_sizes must be non-empty and all >= 2, got {self.head_sizes}")
        if self.proj_out < 2:
            raise ConfigError("proj_out must be >= 2")
        if self.proj_hidden < 0 or any(w < 1 for w in self.encoder_layers):
            raise ConfigError("layer widths must be positive (proj_hidden may be 0)")
        if self.head_mode not in ("learnable", "fixed"):
            raise ConfigError(f"head_mode must be 'learnable' or 'fixed', got {self.head_mode!r}")

    @classmethod
    def with_base_classes(cls, input_dim: int, base: int, **kw) -> "ModelConfig":
        """Heads of size C, 2C, 4C, 8C."""
        return cls(input_dim=input_dim, head_sizes=tuple(base * k for k in (1, 2, 4, 8)), **kw)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["encoder_layers"] = list(self.encoder_layers)
        d["head_sizes"] = list(self.head_sizes)
        return d


@dataclass
class ModelParams:
    """Named weights in declaration order plus batch-norm running statistics.

    Linear weights are stored ``fan_in x fan_out`` so a layer is ``x @ W``;
    head weights are stored ``C x proj_out`` and applied as ``z @ W.T``.
    """

    tensors: dict[str, Tensor] = field(default_factory=dict)
    bn: dict[str, BatchNormState] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def head_names(self) -> list[str]:
        return [k for k in self.tensors if k.startswith("head")]

    def arrays(self):
        """Yield ``(name, array)`` for every stored float array, in declaration order."""
        for name, t in self.tensors.items():
            yield name, t.data
            block = name.rsplit(".", 1)[0]
            if name.endswith(".beta") and block in self.bn:
                yield block + ".running_mean", self.bn[block].running_mean
                yield block + ".running_var", self.bn[block].running_var

    def copy(self) -> "ModelParams":
        tensors = {k: Tensor(t.data.copy(), requires_grad=t.requires_grad) for k, t in self.tensors.items()}
        bn = {k: dataclasses.replace(s, running_mean=s.running_mean.copy(), running_var=s.running_var.copy())
              for k, s in self.bn.items()}
        return ModelParams(tensors, bn)

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.zero_grad()


def _blocks(cfg: ModelConfig) -> list[tuple[str, int, int, bool]]:
    """(name, fan_in, fan_out, has_bn) for every linear layer before the heads."""
    out = []
    width = cfg.input_dim
    for i, w in enumerate(cfg.encoder_layers):
        out.append((f"enc{i}", width, w, True))
        width = w
    if cfg.proj_hidden:
        out.append(("proj_hidden", width, cfg.proj_hidden, True))
        width = cfg.proj_hidden
    out.append(("proj_out", width, cfg.proj_out, False))
    return out


def init(cfg: ModelConfig, seed: int | np.random.Generator) -> ModelParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, unit BN scale, zero BN shift."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    params = ModelParams()

    def uniform(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)

    for name, fan_in, fan_out, has_bn in _blocks(cfg):
        params.tensors[f"{name}.weight"] = uniform((fan_in, fan_out), fan_in)
        if has_bn:
            params.tensors[f"{name}.gamma"] = Tensor(np.ones((1, fan_out)), requires_grad=True)
            params.tensors[f"{name}.beta"] = Tensor(np.zeros((1, fan_out)), requires_grad=True)
            params.bn[name] = BatchNormState.create(fan_out, cfg.bn_momentum, cfg.bn_eps)
    for h, c in enumerate(cfg.head_sizes):
        params.tensors[f"head{h}.weight"] = uniform((c, cfg.proj_out), cfg.proj_out)
    return params


def embed(params: ModelParams, cfg: ModelConfig, x, mode: str = "train") -> Tensor:
    """Encoder and projection head; rows of the result have unit L2 norm."""
    if mode not in ("train", "eval"):
        raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")
    h = T.as_tensor(x)
    for name, _, _, has_bn in _blocks(cfg):
        h = T.matmul(h, params[f"{name}.weight"])
        if has_bn:
            h = T.batch_norm(h, params[f"{name}.gamma"], params[f"{name}.beta"],
                             params.bn[name], training=(mode == "train"))
            h = T.leaky_relu(h, cfg.leaky_slope)
    return T.l2_normalize_rows(h)


def head_logits(params: ModelParams, embedding) -> list[Tensor]:
    z = T.as_tensor(embedding)
    return [T.matmul(z, T.transpose(params[name])) for name in params.head_names()]


def forward(params: ModelParams, cfg: ModelConfig, x, mode: str = "train") -> tuple[Tensor, list[Tensor]]:
    z = embed(params, cfg, x, mode)
    return z, head_logits(params, z)


def trainable_parameters(params: ModelParams, cfg: ModelConfig) -> dict[str, Tensor]:
    """Everything the optimizer may update; fixed heads are left out."""
    return {
        k: t for k, t in params.tensors.items()
        if not (cfg.head_mode == "fixed" and k.startswith("head"))
    }


def adaptation_exempt(names) -> set[str]:
    """Batch-norm affine terms, which skip the trust ratio and weight decay."""
    return {n for n in names if n.endswith((".gamma", ".beta"))}


# -- checkpoints -------------------------------------------------------------


def save_checkpoint(path, params: ModelParams, cfg: ModelConfig, extra: dict | None = None) -> None:
    """Write ``SCCK`` | u32 version | u32 header length | JSON header | float64 LE arrays."""
    header = json.dumps({"model": cfg.to_dict(), "extra": extra or {}}, sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<II", CHECKPOINT_VERSION, len(header)))
    buf.write(header)
    for _, arr in params.arrays():
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path) -> tuple[ModelParams, ModelConfig, dict]:
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    version, hlen = struct.unpack_from("<II", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[12:12 + hlen])
    cfg = ModelConfig(**header["model"])
    params = init(cfg, 0)
    payload = np.frombuffer(raw, dtype="<f8", offset=12 + hlen)
    expected = sum(a.size for _, a in params.arrays())
    if payload.size != expected:
        raise ValueError(f"{path}: expected {expected} floats, found {payload.size}")
    pos = 0
    for name, arr in list(params.arrays()):
        chunk = payload[pos:pos + arr.size].reshape(arr.shape).astype(np.float64)
        pos += arr.size
        if name.endswith(".running_mean"):
            params.bn[name.rsplit(".", 1)[0]].running_mean = chunk
        elif name.endswith(".running_var"):
            params.bn[name.rsplit(".", 1)[0]].running_var = chunk
        else:
            params.tensors[name].data[...] = chunk
    return params, cfg, header.get("extra", {})
