"""FARE network: primary path (PP) for embeddings, six linear autoencoder intermediate paths (IPs)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor_core import Tensor, avgpool, avgpool2, concat, conv2d, flatten, linear, mae_loss, relu

# Sublayer each IP is attached to, in IP index order.
IP_KEYS: tuple[tuple[str, int], ...] = (("R", 1), ("R", 2), ("mR", 1), ("mR", 2), ("C", 3), ("C", 4))


@dataclass(frozen=True)
class ModelConfig:
    rdi_shape: tuple[int, int] = (32, 64)
    micro_rdi_shape: tuple[int, int] = (32, 512)
    layer1_channels: int = 8
    layer2_channels: int = 16
    layer3_channels: int = 32
    embedding_dim: int = 64
    ip_bottleneck_dims: tuple[int, ...] | None = None
    bottleneck_divisor: int = 8
    bottleneck_cap: int = 64
    margin: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "rdi_shape", tuple(self.rdi_shape))
        object.__setattr__(self, "micro_rdi_shape", tuple(self.micro_rdi_shape))
        counts = (self.layer1_channels, self.layer2_channels, self.layer3_channels, self.embedding_dim,
                  self.bottleneck_divisor, self.bottleneck_cap, *self.rdi_shape, *self.micro_rdi_shape)
        if any(int(c) <= 0 for c in counts):
            raise ValueError("all model counts and shapes must be positive")
        if self.margin < 0:
            raise ValueError("margin must be >= 0")
        h, w = self.rdi_shape
        mh, mw = self.micro_rdi_shape
        if h != mh:
            raise ValueError("RDI and micro-RDI must share the range axis")
        if h % 8 or w % 8 or mw % 8:
            raise ValueError("image dims must be divisible by 8 (three 2x2 poolings)")
        if mw % w:
            raise ValueError("micro-RDI Doppler axis must be a multiple of the RDI Doppler axis")
        if self.ip_bottleneck_dims is not None:
            dims = tuple(int(d) for d in self.ip_bottleneck_dims)
            object.__setattr__(self, "ip_bottleneck_dims", dims)
            if len(dims) != 6:
                raise ValueError("exactly six IP bottleneck dims are required")
            for d, size, key in zip(dims, self.feature_sizes(), IP_KEYS):
                if not 0 < d < size:
                    raise ValueError(f"bottleneck {d} for IP {key} must be in (0, {size})")

    def feature_shapes(self) -> list[tuple[int, ...]]:
        """Per-sample shapes of the six tapped sublayer outputs, IP order."""
        h, w = self.rdi_shape
        _, mw = self.micro_rdi_shape
        c1, c2, c3 = self.layer1_channels, self.layer2_channels, self.layer3_channels
        return [
            (c1, h // 2, w // 2),
            (c2, h // 4, w // 4),
            (c1, h // 2, mw // 2),
            (c2, h // 4, mw // 4),
            (c3, h // 8, w // 8),
            (self.embedding_dim,),
        ]

    def feature_sizes(self) -> list[int]:
        return [int(np.prod(s)) for s in self.feature_shapes()]

    def bottlenecks(self) -> tuple[int, ...]:
        if self.ip_bottleneck_dims is not None:
            return self.ip_bottleneck_dims
        return tuple(min(math.ceil(n / self.bottleneck_divisor), self.bottleneck_cap) for n in self.feature_sizes())


@dataclass
class ForwardTrace:
    embedding: Tensor
    intermediates: list[Tensor]  # IP order, see IP_KEYS

    def by_key(self) -> dict[tuple[str, int], Tensor]:
        return dict(zip(IP_KEYS, self.intermediates))


@dataclass
class FareModel:
    cfg: ModelConfig
    params: dict[str, Tensor] = field(default_factory=dict)
    frozen_pp: bool = False

    def pp_names(self) -> list[str]:
        return [n for n in self.params if n.startswith("pp.")]

    def ip_names(self, ip_index: int | None = None) -> list[str]:
        prefix = "ip" if ip_index is None else f"ip{ip_index}."
        return [n for n in self.params if n.startswith(prefix)]

    def p(self, name: str) -> Tensor:
        return self.params[name]


def _uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = math.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def build_model(cfg: ModelConfig, seed: int = 0) -> FareModel:
    """Initialise every weight uniformly in +-sqrt(1/fan_in), deterministically from ``seed``."""
    rng = np.random.default_rng(seed)
    c1, c2, c3 = cfg.layer1_channels, cfg.layer2_channels, cfg.layer3_channels
    params: dict[str, Tensor] = {}

    def conv(name, c_out, c_in):
        fan = c_in * 9
        params[f"pp.{name}.w"] = Tensor(_uniform(rng, (c_out, c_in, 3, 3), fan), requires_grad=True)
        params[f"pp.{name}.b"] = Tensor(_uniform(rng, (c_out,), fan), requires_grad=True)

    conv("R1", c1, 1)
    conv("R2", c2, c1)
    conv("mR1", c1, 1)
    conv("mR2", c2, c1)
    conv("C3", c3, 2 * c2)
    flat = cfg.feature_sizes()[4]
    params["pp.C4.w"] = Tensor(_uniform(rng, (flat, cfg.embedding_dim), flat), requires_grad=True)
    params["pp.C4.b"] = Tensor(_uniform(rng, (cfg.embedding_dim,), flat), requires_grad=True)

    for i, (size, k) in enumerate(zip(cfg.feature_sizes(), cfg.bottlenecks())):
        params[f"ip{i}.enc.w"] = Tensor(_uniform(rng, (size, k), size), requires_grad=True)
        params[f"ip{i}.enc.b"] = Tensor(_uniform(rng, (k,), size), requires_grad=True)
        params[f"ip{i}.dec.w"] = Tensor(_uniform(rng, (k, size), k), requires_grad=True)
        params[f"ip{i}.dec.b"] = Tensor(_uniform(rng, (size,), k), requires_grad=True)
    for name, t in params.items():
        t.name = name
    return FareModel(cfg=cfg, params=params)


def _as_input(x, shape: tuple[int, int], what: str) -> Tensor:
    t = x if isinstance(x, Tensor) else Tensor(x)
    if t.ndim == 3:
        t = Tensor(t.data[:, None])
    if t.ndim != 4 or t.shape[1] != 1 or t.shape[2:] != shape:
        raise ValueError(f"{what} batch must be [b, 1, {shape[0]}, {shape[1]}], got {t.shape}")
    return t


def pp_forward(model: FareModel, rdi, micro_rdi) -> ForwardTrace:
    """Run the primary path, returning the embedding and the six tapped sublayer outputs."""
    cfg, p = model.cfg, model.params
    x_r = _as_input(rdi, cfg.rdi_shape, "RDI")
    x_m = _as_input(micro_rdi, cfg.micro_rdi_shape, "micro-RDI")
    if x_r.shape[0] != x_m.shape[0]:
        raise ValueError("RDI and micro-RDI batch sizes differ")

    r1 = avgpool2(relu(conv2d(x_r, p["pp.R1.w"], p["pp.R1.b"], padding=1)))
    r2 = avgpool2(relu(conv2d(r1, p["pp.R2.w"], p["pp.R2.b"], padding=1)))
    m1 = avgpool2(relu(conv2d(x_m, p["pp.mR1.w"], p["pp.mR1.b"], padding=1)))
    m2 = avgpool2(relu(conv2d(m1, p["pp.mR2.w"], p["pp.mR2.b"], padding=1)))
    # bring the micro-RDI Doppler axis down to the RDI grid before merging
    merged = concat([r2, avgpool(m2, 1, m2.shape[3] // r2.shape[3])], axis=1)
    c3 = avgpool2(relu(conv2d(merged, p["pp.C3.w"], p["pp.C3.b"], padding=1)))
    emb = linear(flatten(c3), p["pp.C4.w"], p["pp.C4.b"])
    return ForwardTrace(embedding=emb, intermediates=[r1, r2, m1, m2, c3, emb])


def ip_reconstruct(model: FareModel, ip_index: int, feature: Tensor) -> Tensor:
    """Linear encoder then linear decoder on the flattened feature; no activation."""
    if not 0 <= ip_index < len(IP_KEYS):
        raise ValueError(f"ip_index must be in 0..5, got {ip_index}")
    size = model.cfg.feature_sizes()[ip_index]
    flat = flatten(feature) if feature.ndim > 2 else feature
    if flat.ndim != 2 or flat.shape[1] != size:
        raise ValueError(f"IP {ip_index} expects {size} features per sample, got shape {feature.shape}")
    p = model.params
    code = linear(flat, p[f"ip{ip_index}.enc.w"], p[f"ip{ip_index}.enc.b"])
    return linear(code, p[f"ip{ip_index}.dec.w"], p[f"ip{ip_index}.dec.b"])


def ip_forward(model: FareModel, ip_index: int, feature: Tensor) -> tuple[Tensor, float]:
    """Reconstruction and MAE reconstruction error of one IP."""
    rec = ip_reconstruct(model, ip_index, feature)
    flat = flatten(feature) if feature.ndim > 2 else feature
    return rec, mae_loss(flat, rec).item()


def ip_errors(model: FareModel, trace: ForwardTrace) -> np.ndarray:
    """Per-sample MAE reconstruction error of every IP, shape [b, 6]."""
    cols = []
    for i, feat in enumerate(trace.intermediates):
        flat = feat.data.reshape(feat.shape[0], -1)
        rec = ip_reconstruct(model, i, Tensor(flat)).data
        cols.append(np.abs(flat - rec).mean(axis=1))
    return np.stack(cols, axis=1)


def freeze_pp(model: FareModel) -> FareModel:
    """Stop gradient flow into PP parameters; optimizers then leave them untouched."""
    model.frozen_pp = True
    for name in model.pp_names():
        model.params[name].requires_grad = False
        model.params[name].grad = None
    return model
