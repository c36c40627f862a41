"""SASRec-style next-item model with a pluggable positional scheme.

Each block is pre-norm::

    x = x + dropout(attention(layer_norm(x)))
    x = x + ffn(layer_norm(x))

followed by a final layer norm and logits against the item embedding
table itself (tied weights). Windows are left-padded with ``PAD = N``,
whose embedding is a constant zero row.
"""

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .attention import (
    CLASSIC,
    KERNEL,
    NOPE,
    ROPE_BASE,
    ROTARY,
    SCHEMES,
    AttentionWeights,
    causal_attention,
    kernel_attention,
)
from .errors import ConfigError, InputError
from .kernel import DEFAULT_MODE, KernelFactors, KernelMode
from .tensor import (
    Parameter,
    add,
    cross_entropy,
    dropout,
    embedding,
    layer_norm,
    matmul,
    no_grad,
    relu,
    transpose,
)


@dataclass(frozen=True)
class ModelConfig:
    N: int
    K: int = 20
    d: int = 32
    B: int = 2
    scheme: str = KERNEL
    kernel_mode: KernelMode = field(default=DEFAULT_MODE)
    dropout: float = 0.2
    seed: int = 0
    rope_base: float = ROPE_BASE

    def __post_init__(self):
        if self.N < 1:
            raise ConfigError("catalog size N must be >= 1")
        if self.K < 1:
            raise ConfigError("window K must be >= 1")
        if self.B < 1:
            raise ConfigError("block count B must be >= 1")
        if self.d < 1:
            raise ConfigError("embedding dim d must be >= 1")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown positional scheme {self.scheme!r}; expected one of {SCHEMES}")
        if self.scheme == ROTARY and self.d % 2:
            raise ConfigError("rotary scheme needs an even embedding dim")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")
        if isinstance(self.kernel_mode, dict):
            object.__setattr__(self, "kernel_mode", KernelMode.from_dict(self.kernel_mode))

    @property
    def pad(self):
        return self.N

    def to_dict(self):
        return {
            "N": self.N,
            "K": self.K,
            "d": self.d,
            "B": self.B,
            "scheme": self.scheme,
            "kernel_mode": self.kernel_mode.to_dict(),
            "dropout": self.dropout,
            "seed": self.seed,
            "rope_base": self.rope_base,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "kernel_mode" in d:
            d["kernel_mode"] = KernelMode.from_dict(d["kernel_mode"])
        return cls(**d)

    def replace(self, **changes):
        return replace(self, **changes)


class Block:
    def __init__(self, d, rng, prefix):
        self.ln1_gain = Parameter(np.ones(d), name=f"{prefix}.ln1.gain")
        self.ln1_bias = Parameter(np.zeros(d), name=f"{prefix}.ln1.bias")
        self.attn = AttentionWeights.init(d, rng, prefix=f"{prefix}.attn")
        self.ln2_gain = Parameter(np.ones(d), name=f"{prefix}.ln2.gain")
        self.ln2_bias = Parameter(np.zeros(d), name=f"{prefix}.ln2.bias")
        limit = np.sqrt(3.0 / d)
        self.W1 = Parameter(rng.uniform(-limit, limit, (d, d)), name=f"{prefix}.ffn.W1")
        self.b1 = Parameter(np.zeros(d), name=f"{prefix}.ffn.b1")
        self.W2 = Parameter(rng.uniform(-limit, limit, (d, d)), name=f"{prefix}.ffn.W2")
        self.b2 = Parameter(np.zeros(d), name=f"{prefix}.ffn.b2")

    def parameters(self):
        params = [self.ln1_gain, self.ln1_bias, *self.attn.parameters().values(),
                  self.ln2_gain, self.ln2_bias, self.W1, self.b1, self.W2, self.b2]
        return {p.name: p for p in params}


class Model:
    """Item embedding table ``M``, ``B`` blocks, optional ``P`` and kernel factors."""

    def __init__(self, config):
        self.config = config
        c = config
        rng = np.random.default_rng(c.seed)
        self.M = Parameter(rng.normal(0.0, 1.0 / np.sqrt(c.d), (c.N, c.d)), name="M")
        self.blocks = [Block(c.d, rng, f"block{b}") for b in range(c.B)]
        self.final_gain = Parameter(np.ones(c.d), name="final_ln.gain")
        self.final_bias = Parameter(np.zeros(c.d), name="final_ln.bias")
        # drawn last so M and block weights coincide across schemes for one seed
        self.P = None
        if c.scheme == CLASSIC:
            self.P = Parameter(rng.normal(0.0, 1.0 / np.sqrt(c.d), (c.K, c.d)), name="P")
        self.kernel = KernelFactors(c.B, c.K, c.kernel_mode) if c.scheme == KERNEL else None
        self.dropout_rng = np.random.default_rng([c.seed, 1])

    def parameters(self):
        params = {"M": self.M}
        if self.P is not None:
            params["P"] = self.P
        for block in self.blocks:
            params.update(block.parameters())
        params[self.final_gain.name] = self.final_gain
        params[self.final_bias.name] = self.final_bias
        if self.kernel is not None:
            params.update(self.kernel.parameters())
        return params

    def zero_grad(self):
        for p in self.parameters().values():
            p.zero_grad()

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.parameters().items()}

    def load_state_dict(self, state):
        params = self.parameters()
        if set(state) != set(params):
            missing = sorted(set(params) - set(state))
            extra = sorted(set(state) - set(params))
            raise ConfigError(f"state mismatch: missing {missing}, unexpected {extra}")
        for name, p in params.items():
            value = np.asarray(state[name], dtype=float)
            if value.shape != p.shape:
                raise ConfigError(f"shape mismatch for {name}: {value.shape} vs {p.shape}")
            p.data = value.copy()

    def _check_index(self, idx):
        idx = np.asarray(idx)
        if idx.ndim == 1:
            idx = idx[None, :]
        if idx.ndim != 2 or idx.shape[1] != self.config.K:
            raise InputError(f"expected windows of length K={self.config.K}, got shape {idx.shape}")
        if not np.issubdtype(idx.dtype, np.integer):
            raise InputError("item indices must be integers")
        if idx.size and (idx.min() < 0 or idx.max() > self.config.N):
            raise InputError(f"item index outside [0, {self.config.N}] (PAD = {self.config.N})")
        return idx

    def hidden(self, idx, training=False, return_attention=False):
        """Final per-position representations, shape ``(batch, K, d)``."""
        c = self.config
        idx = self._check_index(idx)
        x = embedding(self.M, idx, pad=c.pad)
        if self.P is not None:
            x = add(x, self.P)
        x = dropout(x, c.dropout, self.dropout_rng, training)
        maps = []
        for b, block in enumerate(self.blocks):
            h = layer_norm(x, block.ln1_gain, block.ln1_bias)
            if c.scheme == KERNEL:
                a, w = kernel_attention(h, block.attn, self.kernel.upper(b), self.kernel.lower(b),
                                        validate=False, return_weights=True)
            else:
                a, w = causal_attention(h, block.attn, scheme=c.scheme, rope_base=c.rope_base,
                                        return_weights=True)
            maps.append(w.data)
            x = add(x, dropout(a, c.dropout, self.dropout_rng, training))
            h = layer_norm(x, block.ln2_gain, block.ln2_bias)
            f = add(matmul(relu(add(matmul(h, block.W1), block.b1)), block.W2), block.b2)
            x = add(x, f)
        x = layer_norm(x, self.final_gain, self.final_bias)
        return (x, maps) if return_attention else x

    def forward(self, idx, training=False, return_attention=False):
        """Logits over the catalog at every position, shape ``(batch, K, N)``."""
        h, maps = self.hidden(idx, training, return_attention=True)
        logits = matmul(h, transpose(self.M))
        return (logits, maps) if return_attention else logits

    __call__ = forward

    def score_last(self, idx):
        """Last-position catalog scores as a plain array, no graph recorded."""
        with no_grad():
            h = self.hidden(idx)
            return h.data[:, -1, :] @ self.M.data.T

    def attention_maps(self, idx):
        with no_grad():
            _, maps = self.hidden(idx, return_attention=True)
        return maps


def ce_loss(logits, targets, pad):
    """Full-catalog cross-entropy averaged over positions whose target is not ``pad``."""
    targets = np.asarray(targets)
    return cross_entropy(logits, targets, targets != pad)


def pad_window(items, K, pad):
    """Last ``K`` entries of ``items``, left-padded with ``pad``."""
    items = list(items)[-K:] if K > 0 else []
    return np.array([pad] * (K - len(items)) + items, dtype=np.int64)


def rank_items(scores, k, exclude=()):
    """Top-``k`` item ids by score, ties broken by ascending id."""
    scores = np.array(scores, dtype=float)
    if len(exclude):
        scores[np.asarray(list(exclude), dtype=np.int64)] = -np.inf
    order = np.argsort(-scores, kind="stable")
    if len(exclude):
        order = order[np.isfinite(scores[order])]
    return order[:k]


def predict_topk(model, window, k, exclude_seen=False):
    """Rank the catalog for the next item after ``window``."""
    c = model.config
    if k > c.N:
        warnings.warn(f"k={k} exceeds catalog size {c.N}; clamping", stacklevel=2)
        k = c.N
    idx = pad_window(window, c.K, c.pad)
    scores = model.score_last(idx)[0]
    seen = sorted({int(i) for i in idx if i != c.pad}) if exclude_seen else ()
    return [int(i) for i in rank_items(scores, k, seen)]


def param_census(model):
    """Trainable parameter counts by group."""
    groups = {"embedding": 0, "positional": 0, "blocks": 0, "final_ln": 0, "kernel": 0}
    for name, p in model.parameters().items():
        if name == "M":
            groups["embedding"] += p.data.size
        elif name == "P":
            groups["positional"] += p.data.size
        elif name.startswith("block"):
            groups["blocks"] += p.data.size
        elif name.startswith("final_ln"):
            groups["final_ln"] += p.data.size
        else:
            groups["kernel"] += p.data.size
    groups["total"] = sum(groups.values())
    return groups
