"""Velocity-field backbone: a transformer over the canonical node sequence.

Tokens are per-node 4-vectors (current position, conditioning position) in
the canonical frame; the spectral sequence position drives rotary position
embeddings in attention. Flow time enters through adaptive layer norm: each
block's normalization is shifted/scaled/gated by vectors computed from the
time embedding. Gates and the output head are zero-initialized, so a fresh
model is the identity flow (zero velocity everywhere). Parameters are
float64 by default; checkpoints always store float64.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from .canon import apply_frame, canonical_frame
from .errors import ConfigError, NumericalError

CHECKPOINT_MAGIC = b"cycflow-checkpoint v1\n"
ROPE_BASE = 10000.0
TIME_FREQ_MAX = 1000.0
DIRECTION_EPS = 1e-12


@dataclass
class ModelConfig:
    dim: int = 128
    layers: int = 4
    heads: int = 8
    ff_mult: int = 4
    t_dim: int = 64
    seed: int = 0

    def validate(self) -> None:
        if min(self.dim, self.layers, self.heads, self.ff_mult, self.t_dim) < 1:
            raise ConfigError(f"all model dimensions must be positive: {self}")
        if self.dim % self.heads:
            raise ConfigError(f"dim {self.dim} is not divisible by heads {self.heads}")
        if (self.dim // self.heads) % 2:
            raise ConfigError(
                f"head width {self.dim // self.heads} must be even (RoPE pairs dimensions)"
            )
        if self.t_dim % 2:
            raise ConfigError(f"t_dim {self.t_dim} must be even")


_FREQ_CACHE: dict = {}
_ROPE_CACHE: dict = {}


def sinusoidal_features(t: torch.Tensor, t_dim: int) -> torch.Tensor:
    """Sinusoids of t at geometrically spaced frequencies in [1, TIME_FREQ_MAX]."""
    half = t_dim // 2
    key = (half, t.dtype)
    freqs = _FREQ_CACHE.get(key)
    if freqs is None:
        freqs = torch.exp(torch.linspace(0.0, math.log(TIME_FREQ_MAX), half, dtype=t.dtype))
        _FREQ_CACHE[key] = freqs
    angles = t[:, None] * freqs[None, :]
    return torch.cat([torch.cos(angles), torch.sin(angles)], dim=-1)


def _rope_tables(seq: int, hd: int, dtype: torch.dtype) -> tuple[torch.Tensor, torch.Tensor]:
    key = (seq, hd, dtype)
    tables = _ROPE_CACHE.get(key)
    if tables is None:
        half = hd // 2
        inv_freq = ROPE_BASE ** -(torch.arange(half, dtype=dtype) * (2.0 / hd))
        angles = torch.arange(seq, dtype=dtype)[:, None] * inv_freq[None, :]
        tables = (torch.cos(angles), torch.sin(angles))
        _ROPE_CACHE[key] = tables
    return tables


def _rope(x: torch.Tensor) -> torch.Tensor:
    """Rotate (q or k) coordinate pairs by position-dependent angles.

    x: (batch, heads, seq, head_dim) with even head_dim.
    """
    cos, sin = _rope_tables(x.shape[-2], x.shape[-1], x.dtype)
    x1, x2 = x[..., 0::2], x[..., 1::2]
    return torch.stack([x1 * cos - x2 * sin, x1 * sin + x2 * cos], dim=-1).flatten(-2)


class RopeAttention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.head_dim = dim // heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        b, n, d = h.shape
        qkv = self.qkv(h).reshape(b, n, 3, self.heads, self.head_dim)
        q, k, v = qkv.permute(2, 0, 3, 1, 4)
        q, k = _rope(q), _rope(k)
        att = torch.softmax(q @ k.transpose(-2, -1) / math.sqrt(self.head_dim), dim=-1)
        out = (att @ v).transpose(1, 2).reshape(b, n, d)
        return self.proj(out)


class Block(nn.Module):
    def __init__(self, dim: int, heads: int, ff_mult: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim, elementwise_affine=False)
        self.norm2 = nn.LayerNorm(dim, elementwise_affine=False)
        self.attn = RopeAttention(dim, heads)
        self.ff = nn.Sequential(
            nn.Linear(dim, ff_mult * dim), nn.GELU(), nn.Linear(ff_mult * dim, dim)
        )
        self.modulation = nn.Linear(dim, 6 * dim)

    def forward(self, h: torch.Tensor, c: torch.Tensor) -> torch.Tensor:
        mod = self.modulation(c).unsqueeze(1)
        shift_a, scale_a, gate_a, shift_f, scale_f, gate_f = mod.chunk(6, dim=-1)
        h = h + gate_a * self.attn(self.norm1(h) * (1 + scale_a) + shift_a)
        h = h + gate_f * self.ff(self.norm2(h) * (1 + scale_f) + shift_f)
        return h


class VelocityField(nn.Module):
    """v(t, x_t | x0) over clouds expressed in a shared canonical frame."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        config.validate()
        self.config = config
        self.input_proj = nn.Linear(4, config.dim)
        self.time_mlp = nn.Sequential(
            nn.Linear(config.t_dim, config.dim),
            nn.GELU(),
            nn.Linear(config.dim, config.dim),
        )
        self.blocks = nn.ModuleList(
            Block(config.dim, config.heads, config.ff_mult) for _ in range(config.layers)
        )
        self.head = nn.Linear(config.dim, 2)

    @property
    def dtype(self) -> torch.dtype:
        return self.head.weight.dtype

    def time_embedding(self, t: torch.Tensor) -> torch.Tensor:
        return self.time_mlp(sinusoidal_features(t, self.config.t_dim))

    def forward(self, t, x_t: torch.Tensor, x0: torch.Tensor) -> torch.Tensor:
        if x_t.ndim == 2:
            return self.forward(t, x_t[None], x0[None])[0]
        if torch.isnan(x_t).any() or torch.isnan(x0).any():
            raise NumericalError("NaN in velocity-field inputs")
        if not torch.is_tensor(t):
            t = torch.as_tensor(t, dtype=x_t.dtype, device=x_t.device)
        t = t.reshape(-1).expand(x_t.shape[0])
        h = self.input_proj(torch.cat([x_t, x0], dim=-1))
        c = self.time_embedding(t)
        for block in self.blocks:
            h = block(h, c)
        return self.head(h)


def init_params(config: ModelConfig) -> VelocityField:
    """Deterministic initialization; the fresh model outputs zero velocity."""
    config.validate()
    model = VelocityField(config).to(torch.float64)
    gen = torch.Generator().manual_seed(config.seed)
    with torch.no_grad():
        for name, p in model.named_parameters():
            if name.startswith("head.") or ".modulation." in name:
                p.zero_()
            elif p.ndim >= 2:
                p.normal_(0.0, 0.02, generator=gen)
            else:
                p.zero_()
    return model


def canonicalize_pair(pair) -> tuple[np.ndarray, np.ndarray]:
    """Canonical-frame copies of (x0, x1) using the frame computed from x0."""
    frame = canonical_frame(pair.x0)
    return apply_frame(frame, pair.x0), apply_frame(frame, pair.x1)


def flow_loss(
    model: VelocityField, x0_can: torch.Tensor, x1_can: torch.Tensor, t: torch.Tensor
) -> torch.Tensor:
    """Mean over batch and nodes of |v(t, x_t|x0) - (x1 - x0)|^2."""
    tt = t[:, None, None]
    x_t = (1.0 - tt) * x0_can + tt * x1_can
    v = model(t, x_t, x0_can)
    return ((v - (x1_can - x0_can)) ** 2).sum(dim=-1).mean()


def direct_loss(
    model: VelocityField, x0_can: torch.Tensor, x1_can: torch.Tensor
) -> torch.Tensor:
    """Squared chordal distance between predicted and target unit directions.

    The single-shot baseline: the backbone sees (x0, x0) at t = 0 and its
    head output is normalized to a direction per node.
    """
    t = torch.zeros(x0_can.shape[0], dtype=x0_can.dtype)
    out = model(t, x0_can, x0_can)
    pred = out / torch.sqrt((out**2).sum(dim=-1, keepdim=True) + DIRECTION_EPS)
    target = x1_can / torch.linalg.norm(x1_can, dim=-1, keepdim=True)
    return ((pred - target) ** 2).sum(dim=-1).mean()


def loss_and_grad(
    model: VelocityField, batch, objective: str = "flow"
) -> tuple[float, dict[str, torch.Tensor]]:
    """Loss and exact parameter gradients for a batch of (CoupledPair, t).

    Pairs are canonicalized with the frame of their own x0. The loss pools
    the per-node squared error over the whole batch; gradients come from
    reverse-mode differentiation of the forward computation.
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    model.zero_grad(set_to_none=True)
    total_se = 0.0
    total_nodes = 0
    for pair, t in batch:
        x0_can, x1_can = canonicalize_pair(pair)
        x0_t = torch.as_tensor(x0_can, dtype=model.dtype)[None]
        x1_t = torch.as_tensor(x1_can, dtype=model.dtype)[None]
        t_t = torch.as_tensor([float(t)], dtype=model.dtype)
        if objective == "flow":
            se = flow_loss(model, x0_t, x1_t, t_t) * pair.x0.shape[0]
        elif objective == "direct":
            se = direct_loss(model, x0_t, x1_t) * pair.x0.shape[0]
        else:
            raise ValueError(f"unknown objective {objective!r}")
        total_se = total_se + se
        total_nodes += pair.x0.shape[0]
    loss = total_se / total_nodes
    loss.backward()
    grads = {
        name: p.grad.detach().clone() for name, p in model.named_parameters()
    }
    value = float(loss.detach())
    if not math.isfinite(value):
        raise NumericalError(f"non-finite loss over batch of {len(batch)}")
    return value, grads


def save_checkpoint(path: str, model: VelocityField, metadata: dict | None = None) -> None:
    """Versioned binary container; see README for the exact byte layout."""
    tensors = []
    blobs = []
    offset = 0
    for name, p in model.state_dict().items():
        arr = np.ascontiguousarray(p.detach().cpu().numpy().astype("<f8"))
        blob = arr.tobytes()
        tensors.append(
            {"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(blob)}
        )
        blobs.append(blob)
        offset += len(blob)
    header = {
        "format_version": 1,
        "config": asdict(model.config),
        "metadata": metadata or {},
        "tensors": tensors,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("ascii")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<Q", len(header_bytes)))
        f.write(header_bytes)
        for blob in blobs:
            f.write(blob)


def load_checkpoint(path: str) -> tuple[VelocityField, dict]:
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ConfigError(f"{path}: not a checkpoint file (bad magic)")
        (header_len,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(header_len).decode("ascii"))
        if header.get("format_version") != 1:
            raise ConfigError(f"{path}: unsupported format version")
        data = f.read()
    model = VelocityField(ModelConfig(**header["config"])).to(torch.float64)
    state = {}
    for spec in header["tensors"]:
        arr = np.frombuffer(
            data, dtype="<f8", count=spec["nbytes"] // 8, offset=spec["offset"]
        ).reshape(spec["shape"])
        state[spec["name"]] = torch.from_numpy(arr.copy())
    model.load_state_dict(state)
    return model, header["metadata"]
