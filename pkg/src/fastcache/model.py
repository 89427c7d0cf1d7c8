"""Deterministic DiT-style toy stack and synthetic denoising schedules.

Blocks are pre-norm: h + Attn(LN(h)), then + MLP(LN(.)). Weights are float32,
drawn from seeded Philox streams so two builds with equal seeds are
bit-identical; schedules likewise. Desk-scale default shape is L=12, D=128,
heads=4, N=64, T=50.

Schedules control temporal redundancy:
  static       x_t constant
  low_motion   random walk, noise confined to a fixed motion_fraction subset
  high_motion  fresh tokens every step
  decaying     all-token walk whose step size shrinks geometrically
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import seeded_gaussian
from .traceio import read_container, write_container
from .validation import as_matrix, check_positive_int

__all__ = [
    "TransformerBlock",
    "ToyModel",
    "Schedule",
    "make_schedule",
    "block_flops",
    "linear_flops",
    "save_model",
    "load_model",
]

DECAY_RATIO = 0.9
_LN_EPS = 1e-5
# per-block weight order used by seeding streams and serialization
_TENSORS = ("wq", "wk", "wv", "wo", "w1", "w2")


def _layer_norm(h, scale, shift):
    mu = h.mean(axis=1, keepdims=True)
    var = h.var(axis=1, keepdims=True)
    return (h - mu) / np.sqrt(var + _LN_EPS) * scale + shift


def _gelu(x):
    # tanh approximation, computed in the input dtype
    inner = 0.7978845608028654 * (x + 0.044715 * x * x * x)
    return 0.5 * x * (1.0 + np.tanh(inner))


def _softmax(x):
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class TransformerBlock:
    """Pre-norm MHSA + MLP block over N x dim states."""

    dim: int
    heads: int
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    ln1_scale: np.ndarray
    ln1_shift: np.ndarray
    ln2_scale: np.ndarray
    ln2_shift: np.ndarray

    def __post_init__(self):
        if self.dim % self.heads != 0:
            raise ValueError(f"heads ({self.heads}) must divide dim ({self.dim})")

    def forward(self, h) -> np.ndarray:
        h = np.asarray(h)
        if h.ndim != 2 or h.shape[1] != self.dim:
            raise ValueError(f"expected N x {self.dim} input, got {h.shape}")
        n = h.shape[0]
        dh = self.dim // self.heads

        a = _layer_norm(h, self.ln1_scale, self.ln1_shift)
        q = (a @ self.wq.T).reshape(n, self.heads, dh).transpose(1, 0, 2)
        k = (a @ self.wk.T).reshape(n, self.heads, dh).transpose(1, 0, 2)
        v = (a @ self.wv.T).reshape(n, self.heads, dh).transpose(1, 0, 2)
        scores = q @ k.transpose(0, 2, 1) / np.sqrt(np.asarray(dh, dtype=h.dtype))
        ctx = _softmax(scores) @ v
        attn = ctx.transpose(1, 0, 2).reshape(n, self.dim) @ self.wo.T
        h = h + attn

        m = _layer_norm(h, self.ln2_scale, self.ln2_shift)
        u = _gelu(m @ self.w1.T + self.b1) @ self.w2.T + self.b2
        return h + u

    def weight_arrays(self) -> list:
        return [
            self.wq, self.wk, self.wv, self.wo,
            self.w1, self.b1, self.w2, self.b2,
            self.ln1_scale, self.ln1_shift, self.ln2_scale, self.ln2_shift,
        ]

    @classmethod
    def from_weight_arrays(cls, dim, heads, arrays) -> "TransformerBlock":
        (wq, wk, wv, wo, w1, b1, w2, b2, g1, s1, g2, s2) = arrays
        return cls(dim, heads, wq, wk, wv, wo, w1, b1, w2, b2, g1, s1, g2, s2)

    @classmethod
    def build(cls, dim, heads, seed, stream_base) -> "TransformerBlock":
        dim = check_positive_int(dim, "dim")
        heads = check_positive_int(heads, "heads")
        f32 = np.float32
        scale_in = dim**-0.5
        draws = {}
        shapes = {
            "wq": (dim, dim), "wk": (dim, dim), "wv": (dim, dim), "wo": (dim, dim),
            "w1": (4 * dim, dim), "w2": (dim, 4 * dim),
        }
        for i, name in enumerate(_TENSORS):
            g = seeded_gaussian(*shapes[name], seed, stream=stream_base + i, dtype=f32)
            draws[name] = g
        # output projections damped so residual increments stay modest deep in the stack
        return cls(
            dim, heads,
            wq=draws["wq"] * f32(scale_in),
            wk=draws["wk"] * f32(scale_in),
            wv=draws["wv"] * f32(scale_in),
            wo=draws["wo"] * f32(0.5 * scale_in),
            w1=draws["w1"] * f32(scale_in),
            b1=np.zeros(4 * dim, dtype=f32),
            w2=draws["w2"] * f32(0.5 * (4 * dim) ** -0.5),
            b2=np.zeros(dim, dtype=f32),
            ln1_scale=np.ones(dim, dtype=f32),
            ln1_shift=np.zeros(dim, dtype=f32),
            ln2_scale=np.ones(dim, dtype=f32),
            ln2_shift=np.zeros(dim, dtype=f32),
        )


def block_forward(block: TransformerBlock, h) -> np.ndarray:
    return block.forward(h)


@dataclass
class ToyModel:
    blocks: list
    dim: int
    heads: int
    seed: int

    @property
    def n_layers(self) -> int:
        return len(self.blocks)

    @classmethod
    def build(cls, layers=12, dim=128, heads=4, seed=0) -> "ToyModel":
        layers = check_positive_int(layers, "layers")
        blocks = [
            TransformerBlock.build(dim, heads, seed, stream_base=1 + l * len(_TENSORS))
            for l in range(layers)
        ]
        return cls(blocks, dim, heads, int(seed))

    def forward(self, h) -> np.ndarray:
        h = as_matrix(h, "h")
        for block in self.blocks:
            h = block.forward(h)
        return h

    def descriptor(self) -> dict:
        return {"layers": self.n_layers, "dim": self.dim, "heads": self.heads, "seed": self.seed}

    @classmethod
    def from_descriptor(cls, desc: dict) -> "ToyModel":
        return cls.build(desc["layers"], desc["dim"], desc["heads"], desc["seed"])


def block_flops(n_tokens: int, dim: int) -> float:
    """Matmul FLOPs of one block forward: QKV/O, attention, MLP (2mnk each)."""
    return 24.0 * n_tokens * dim * dim + 4.0 * n_tokens * n_tokens * dim


def linear_flops(n_tokens: int, dim: int) -> float:
    """Matmul FLOPs of one affine approximator application."""
    return 2.0 * n_tokens * dim * dim


def save_model(model: ToyModel, destination) -> int:
    header = {"kind": "model", **model.descriptor()}
    arrays = []
    for block in model.blocks:
        arrays.extend(block.weight_arrays())
    return write_container(destination, header, arrays)


def load_model(source) -> ToyModel:
    header, arrays = read_container(source)
    if header.get("kind") != "model":
        raise ValueError(f"expected a model container, got kind {header.get('kind')!r}")
    dim, heads, layers = header["dim"], header["heads"], header["layers"]
    per = 12
    blocks = [
        TransformerBlock.from_weight_arrays(dim, heads, arrays[l * per : (l + 1) * per])
        for l in range(layers)
    ]
    return ToyModel(blocks, dim, heads, header.get("seed", 0))


@dataclass(frozen=True)
class Schedule:
    kind: str
    timesteps: int
    n_tokens: int
    dim: int
    noise_scale: float = 0.1
    motion_fraction: float = 0.25

    def __post_init__(self):
        if self.kind not in ("static", "low_motion", "high_motion", "decaying"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        check_positive_int(self.timesteps, "timesteps")
        check_positive_int(self.n_tokens, "n_tokens")
        check_positive_int(self.dim, "dim")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be non-negative")
        if not 0.0 <= self.motion_fraction <= 1.0:
            raise ValueError("motion_fraction must lie in [0, 1]")

    def descriptor(self) -> dict:
        return {
            "kind": self.kind,
            "timesteps": self.timesteps,
            "n_tokens": self.n_tokens,
            "dim": self.dim,
            "noise_scale": self.noise_scale,
            "motion_fraction": self.motion_fraction,
        }


def _motion_subset(sched: Schedule, seed) -> np.ndarray:
    # fixed seeded subset; size rounds to the nearest integer token count
    k = int(round(sched.motion_fraction * sched.n_tokens))
    order = np.argsort(
        seeded_gaussian(sched.n_tokens, 1, seed, stream=10_000).ravel(), kind="stable"
    )
    return np.sort(order[:k])


def make_schedule(sched: Schedule, seed=0) -> list:
    """T model inputs (N x dim float32), bit-reproducible for equal seeds."""
    f32 = np.float32
    base = seeded_gaussian(sched.n_tokens, sched.dim, seed, stream=0, dtype=f32)
    steps = [base]
    if sched.kind == "static":
        steps = [base.copy() for _ in range(sched.timesteps)]
    elif sched.kind == "low_motion":
        subset = _motion_subset(sched, seed)
        for t in range(1, sched.timesteps):
            nxt = steps[-1].copy()
            if subset.size:
                noise = seeded_gaussian(subset.size, sched.dim, seed, stream=t, dtype=f32)
                nxt[subset] = nxt[subset] + f32(sched.noise_scale) * noise
            steps.append(nxt)
    elif sched.kind == "high_motion":
        for t in range(1, sched.timesteps):
            steps.append(seeded_gaussian(sched.n_tokens, sched.dim, seed, stream=t, dtype=f32))
    else:  # decaying
        for t in range(1, sched.timesteps):
            noise = seeded_gaussian(sched.n_tokens, sched.dim, seed, stream=t, dtype=f32)
            amp = f32(sched.noise_scale * DECAY_RATIO**t)
            steps.append(steps[-1] + amp * noise)
    return steps
