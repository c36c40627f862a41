"""Single-head causal self-attention and its positional variants.

Four positional schemes share one attention core:

* ``nope``: content only, order reaches the block solely through the mask.
* ``classic``: learned absolute embeddings added to the input upstream.
* ``rotary``: queries and keys rotated by position before scoring.
* ``kernel``: logits right-multiplied by an upper-triangular ``U`` inside
  the softmax, values left-multiplied by a lower-triangular ``L``.

Shapes are ``(..., K, d)`` for sequences; weights are ``d x d``.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InputError
from .kernel import check_factors
from .tensor import (
    Parameter,
    as_tensor,
    causal_mask,
    masked_softmax_rows,
    matmul,
    mul,
    record,
    transpose,
)

NOPE = "nope"
CLASSIC = "classic"
ROTARY = "rotary"
KERNEL = "kernel"
SCHEMES = (NOPE, CLASSIC, ROTARY, KERNEL)
ROPE_BASE = 10000.0


@dataclass
class AttentionWeights:
    W_Q: Parameter
    W_K: Parameter
    W_V: Parameter

    @classmethod
    def init(cls, d, rng, prefix="attn"):
        # Xavier-uniform, as in most SASRec ports
        limit = np.sqrt(6.0 / (2 * d))
        return cls(*(
            Parameter(rng.uniform(-limit, limit, (d, d)), name=f"{prefix}.{n}")
            for n in ("W_Q", "W_K", "W_V")
        ))

    def parameters(self):
        return {p.name: p for p in (self.W_Q, self.W_K, self.W_V)}

    @property
    def d(self):
        return self.W_Q.shape[0]


def _check_one_hot(X):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or not np.isin(X, (0.0, 1.0)).all() or not (X.sum(axis=0) == 1).all():
        raise InputError("X must be an N x K matrix whose columns are one-hot")
    return X


def vanilla_qkv_oracle(X, M, W_Q, W_K, W_V):
    """Unnormalized, unmasked QKV block ``(X'M Wq Wk' M'X) X'M Wv`` for one-hot ``X``."""
    X = _check_one_hot(X)
    M, W_Q, W_K, W_V = (np.asarray(a, dtype=float) for a in (M, W_Q, W_K, W_V))
    E = X.T @ M
    return (E @ W_Q @ W_K.T @ E.T) @ E @ W_V


def sequence_response(X, W, M, C=None):
    """``Y(X, C) = (X' W X) C X' M`` with ``W`` an N x N item-level kernel.

    ``C=None`` gives the kernel-free response ``(X' W X) X' M``.
    """
    X = _check_one_hot(X)
    W, M = np.asarray(W, dtype=float), np.asarray(M, dtype=float)
    scores = X.T @ W @ X
    if C is not None:
        scores = scores @ np.asarray(C, dtype=float)
    return scores @ X.T @ M


def rope_rotate(x, base=ROPE_BASE):
    """Rotate each dimension pair ``(2i, 2i+1)`` of row ``p`` by ``p * base**(-2i/d)``."""
    x = as_tensor(x)
    K, d = x.shape[-2], x.shape[-1]
    if d % 2:
        raise ConfigError(f"rotary embeddings need an even width, got d={d}")
    freq = base ** (-np.arange(0, d, 2) / d)
    angle = np.arange(K)[:, None] * freq[None, :]
    cos, sin = np.cos(angle), np.sin(angle)
    even, odd = x.data[..., 0::2], x.data[..., 1::2]
    out = np.empty_like(x.data)
    out[..., 0::2] = even * cos - odd * sin
    out[..., 1::2] = even * sin + odd * cos

    def backward(g):
        ge, go = g[..., 0::2], g[..., 1::2]
        gx = np.empty_like(g)
        gx[..., 0::2] = ge * cos + go * sin
        gx[..., 1::2] = go * cos - ge * sin
        return (gx,)

    return record(out, (x,), backward)


def _attend(scores, values, d, mask_mode, return_weights):
    K = scores.shape[-1]
    weights = masked_softmax_rows(mul(scores, 1.0 / np.sqrt(d)), causal_mask(K), mode=mask_mode)
    out = matmul(weights, values)
    return (out, weights) if return_weights else out


def causal_attention(E, weights, scheme=NOPE, rope_base=ROPE_BASE, mask_mode="additive",
                     return_weights=False):
    """``softmax(Q K' / sqrt(d) + mask) V`` for the nope, classic and rotary schemes.

    For ``classic`` the caller has already added the positional table to
    ``E``; the attention itself is identical to ``nope``.
    """
    if scheme not in (NOPE, CLASSIC, ROTARY):
        raise ConfigError(f"causal_attention does not handle scheme {scheme!r}")
    E = as_tensor(E)
    Q = matmul(E, weights.W_Q)
    Kt = matmul(E, weights.W_K)
    V = matmul(E, weights.W_V)
    if scheme == ROTARY:
        Q, Kt = rope_rotate(Q, rope_base), rope_rotate(Kt, rope_base)
    scores = matmul(Q, transpose(Kt))
    return _attend(scores, V, weights.d, mask_mode, return_weights)


def kernel_attention(E, weights, U, L, validate=True, mask_mode="additive", return_weights=False):
    """``softmax((Q K' U) / sqrt(d) + mask) L V``.

    ``U`` mixes the raw score columns before scaling and masking; ``L`` mixes
    value rows after the softmax. ``validate=False`` skips the triangularity
    check so probes can feed deliberately corrupted factors.
    """
    if validate:
        check_factors(U, L)
    E = as_tensor(E)
    Q = matmul(E, weights.W_Q)
    Kt = matmul(E, weights.W_K)
    V = matmul(E, weights.W_V)
    scores = matmul(matmul(Q, transpose(Kt)), U)
    return _attend(scores, matmul(L, V), weights.d, mask_mode, return_weights)
