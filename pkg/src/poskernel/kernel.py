"""Triangular positional kernel factors.

The kernel over positions is ``C = U @ L`` with ``U`` upper triangular
(mixes attention logits) and ``L`` lower triangular (mixes value rows).
Each factor is either Toeplitz (one parameter per diagonal offset) or a
full triangle, and is either owned by every block or shared by all blocks.

Parameter layouts
-----------------
Toeplitz ``U``: ``diagonals[j]`` sits on every entry ``(i, i + j)``.
Toeplitz ``L``: ``diagonals[j]`` sits on every entry ``(i + j, i)``.
Full triangles are stored in row-major order over the nonzero pattern,
i.e. the order of ``np.triu_indices(K)`` / ``np.tril_indices(K)``.
"""

import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InvariantError
from .tensor import Parameter, as_tensor, matmul, take_masked

TOEPLITZ = "toeplitz"
FULL = "full"
_STRUCTURES = (TOEPLITZ, FULL)


@dataclass(frozen=True)
class KernelMode:
    upper: str = TOEPLITZ
    lower: str = FULL
    share_upper: bool = False
    share_lower: bool = True
    band: int | None = None  # upper Toeplitz band width; None means all K diagonals

    def __post_init__(self):
        if self.upper not in _STRUCTURES or self.lower not in _STRUCTURES:
            raise ConfigError(f"factor structures must be in {_STRUCTURES}")
        if self.upper == FULL and self.lower == FULL:
            raise ConfigError("full-full factorization is not a supported kernel mode")
        if self.band is not None:
            if self.upper != TOEPLITZ:
                raise ConfigError("band width applies only to a Toeplitz upper factor")
            if self.band < 1:
                raise ConfigError("band width must be >= 1")

    @property
    def label(self):
        short = {TOEPLITZ: "T", FULL: "F"}
        return f"{short[self.upper]}-{short[self.lower]}"

    def to_dict(self):
        return {
            "upper": self.upper,
            "lower": self.lower,
            "share_upper": self.share_upper,
            "share_lower": self.share_lower,
            "band": self.band,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


DEFAULT_MODE = KernelMode()

# The ablation grid: three structure pairs, each layer-wise (own U per block,
# one shared L) or fully shared (one U and one L for all blocks).
ABLATION_MODES = {
    f"{u[0].upper()}-{l[0].upper()}/{tag}": KernelMode(u, l, share_upper=shared, share_lower=True)
    for u, l in ((TOEPLITZ, TOEPLITZ), (TOEPLITZ, FULL), (FULL, TOEPLITZ))
    for tag, shared in (("per-layer", False), ("shared", True))
}


def triangle_size(K):
    return K * (K + 1) // 2


def factor_size(structure, K, band=None):
    if structure == TOEPLITZ:
        return K if band is None else min(band, K)
    if structure == FULL:
        return triangle_size(K)
    raise ConfigError(f"unknown factor structure {structure!r}")


def _layout(structure, K, upper, band=None):
    """Index map and nonzero mask placing a parameter vector into a K x K factor."""
    rows, cols = np.indices((K, K))
    offset = cols - rows if upper else rows - cols
    mask = offset >= 0
    if structure == TOEPLITZ:
        if band is not None:
            mask &= offset < band
        return np.where(mask, offset, 0), mask
    index = np.zeros((K, K), dtype=np.int64)
    tri = np.triu_indices(K) if upper else np.tril_indices(K)
    index[tri] = np.arange(triangle_size(K))
    return index, mask


def _materialize(params, K, structure, upper, band):
    params = as_tensor(params)
    expected = factor_size(structure, K, band)
    if params.shape != (expected,):
        side = "upper" if upper else "lower"
        raise ConfigError(
            f"{side} {structure} factor for K={K} needs {expected} parameters, got shape {params.shape}"
        )
    index, mask = _layout(structure, K, upper, band)
    return take_masked(params, index, mask)


def materialize_upper(params, K, structure=TOEPLITZ, band=None):
    """Expand upper-factor parameters into a K x K upper-triangular ``Tensor``."""
    return _materialize(params, K, structure, True, band)


def materialize_lower(params, K, structure=FULL):
    """Expand lower-factor parameters into a K x K lower-triangular ``Tensor``."""
    return _materialize(params, K, structure, False, None)


def is_upper_triangular(a):
    a = np.asarray(a)
    return bool((np.tril(a, -1) == 0).all())


def is_lower_triangular(a):
    a = np.asarray(a)
    return bool((np.triu(a, 1) == 0).all())


def check_factors(U, L):
    U_data, L_data = as_tensor(U).data, as_tensor(L).data
    if U_data.shape != L_data.shape or U_data.ndim != 2 or U_data.shape[0] != U_data.shape[1]:
        raise InvariantError(f"kernel factors must be square and equal-sized, got {U_data.shape} and {L_data.shape}")
    if not is_upper_triangular(U_data):
        raise InvariantError("U has nonzero entries below the main diagonal")
    if not is_lower_triangular(L_data):
        raise InvariantError("L has nonzero entries above the main diagonal")


def kernel_matrix(U, L):
    """The positional kernel ``C = U @ L`` (dense in general)."""
    check_factors(U, L)
    return matmul(U, L)


def extra_param_count(B, K, mode=DEFAULT_MODE):
    """Learnable parameters the kernel adds to a ``B``-block model with window ``K``.

    >>> extra_param_count(3, 10)
    85
    """
    n_upper = 1 if mode.share_upper else B
    n_lower = 1 if mode.share_lower else B
    return n_upper * factor_size(mode.upper, K, mode.band) + n_lower * factor_size(mode.lower, K)


def identity_params(structure, K, upper=True, band=None):
    """Parameter vector whose materialized factor is the identity."""
    vec = np.zeros(factor_size(structure, K, band))
    if structure == TOEPLITZ:
        vec[0] = 1.0
    else:
        r, c = np.triu_indices(K) if upper else np.tril_indices(K)
        vec[r == c] = 1.0
    return vec


class KernelFactors:
    """The U/L parameters of one model, laid out per ``mode``."""

    def __init__(self, n_blocks, K, mode=DEFAULT_MODE):
        self.n_blocks = n_blocks
        self.K = K
        self.mode = mode
        n_upper = 1 if mode.share_upper else n_blocks
        n_lower = 1 if mode.share_lower else n_blocks
        self.uppers = [
            Parameter(identity_params(mode.upper, K, True, mode.band), name=self._name("U", i, n_upper))
            for i in range(n_upper)
        ]
        self.lowers = [
            Parameter(identity_params(mode.lower, K, False), name=self._name("L", i, n_lower))
            for i in range(n_lower)
        ]

    @staticmethod
    def _name(kind, i, n):
        return f"kernel.{kind}" if n == 1 else f"kernel.{kind}.{i}"

    def parameters(self):
        return {p.name: p for p in self.uppers + self.lowers}

    def upper_param(self, block):
        return self.uppers[0 if self.mode.share_upper else block]

    def lower_param(self, block):
        return self.lowers[0 if self.mode.share_lower else block]

    def upper(self, block):
        return materialize_upper(self.upper_param(block), self.K, self.mode.upper, self.mode.band)

    def lower(self, block):
        return materialize_lower(self.lower_param(block), self.K, self.mode.lower)

    def perturb(self, rng, scale=0.3):
        """Add Gaussian noise to every factor parameter (used by probes)."""
        for p in self.uppers + self.lowers:
            p.data += scale * rng.standard_normal(p.shape)


def dump_factors(factors, out_dir):
    """Write each materialized U and L as a plain numeric CSV; returns the paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for kind, params, materialize in (
        ("U", factors.uppers, factors.upper),
        ("L", factors.lowers, factors.lower),
    ):
        for i, p in enumerate(params):
            suffix = "" if len(params) == 1 else f"_layer{i}"
            path = os.path.join(out_dir, f"{kind}{suffix}.csv")
            np.savetxt(path, materialize(i).data, delimiter=",", fmt="%.17g")
            paths.append(path)
    return paths
