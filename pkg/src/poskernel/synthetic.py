"""Synthetic interaction streams with patterns at three time scales.

The catalog is split into three pools::

    [0, series_pool)                          series items, grouped into chains
    [series_pool, series_pool + genre_pool)   genre items around a drifting center
    [series_pool + genre_pool, n_items)       personal periodic items

Each user stream is built step by step. At steps ``t`` with
``t % period == phase`` the user's periodic item is emitted. Otherwise, with
probability ``noise_prob`` a uniformly random catalog item is emitted.
Otherwise an active chain ``i -> i+1 -> ...`` continues; with no active
chain the user either starts a new chain (probability ``chain_prob``) or
picks a genre item near a center that moves ``drift_rate`` items per step.
Periodic and noise events do not interrupt a chain. ``period=0`` disables
the periodic component and ``drift_rate=0`` disables the genre component.
"""

import json
from dataclasses import asdict, dataclass

import numpy as np

from .data import Interaction, write_interactions
from .errors import ConfigError

STEP_SECONDS = 1000


@dataclass(frozen=True)
class SyntheticSpec:
    n_users: int = 500
    n_items: int = 200
    seq_len: int = 60
    short_chain_len: int = 3
    period: int = 7
    drift_rate: float = 0.1
    noise_prob: float = 0.1
    series_pool: int = 120
    genre_pool: int = 60
    chain_prob: float = 0.6
    genre_width: float = 2.0
    seed: int = 0

    def __post_init__(self):
        for name in ("noise_prob", "chain_prob"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {value}")
        if min(self.n_users, self.n_items, self.seq_len, self.short_chain_len) < 1:
            raise ConfigError("n_users, n_items, seq_len and short_chain_len must be >= 1")
        if self.period < 0 or self.drift_rate < 0 or self.genre_width < 0:
            raise ConfigError("period, drift_rate and genre_width must be non-negative")
        if self.series_pool < self.short_chain_len:
            raise ConfigError("series_pool must hold at least one chain")
        used = self.series_pool + self.genre_pool
        if used > self.n_items:
            raise ConfigError(f"series + genre pools ({used}) exceed n_items ({self.n_items})")
        if self.period > 0 and used == self.n_items:
            raise ConfigError("periodic component enabled but no items left for the periodic pool")
        if self.drift_rate > 0 and self.genre_pool < 1:
            raise ConfigError("genre component enabled but genre_pool is empty")

    @classmethod
    def from_json(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls(**json.load(fh))

    def to_dict(self):
        return asdict(self)


def _user_stream(spec, user):
    rng = np.random.default_rng([spec.seed, user])
    L = spec.short_chain_len
    n_chains = spec.series_pool // L
    periodic_base = spec.series_pool + spec.genre_pool
    phase = int(rng.integers(spec.period)) if spec.period else -1
    periodic_item = (
        periodic_base + int(rng.integers(spec.n_items - periodic_base)) if spec.period else None
    )
    center = rng.uniform(0, spec.genre_pool) if spec.genre_pool else 0.0
    offset = int(rng.integers(STEP_SECONDS))

    chain_next, chain_left = 0, 0
    stream = []
    for t in range(spec.seq_len):
        if spec.period and t % spec.period == phase:
            item = periodic_item
        elif rng.random() < spec.noise_prob:
            item = int(rng.integers(spec.n_items))
        elif chain_left > 0:
            item = chain_next
            chain_next, chain_left = chain_next + 1, chain_left - 1
        elif spec.drift_rate > 0 and rng.random() >= spec.chain_prob:
            pos = center + spec.drift_rate * t + spec.genre_width * rng.standard_normal()
            item = spec.series_pool + int(np.floor(pos)) % spec.genre_pool
        else:
            start = int(rng.integers(n_chains)) * L
            item = start
            chain_next, chain_left = start + 1, L - 1
        stream.append(Interaction(user, item, t * STEP_SECONDS + offset))
    return stream


def synth_generate(spec):
    """Interactions for every user, ordered by user then step; fully seeded."""
    out = []
    for user in range(spec.n_users):
        out.extend(_user_stream(spec, user))
    return out


def write_synthetic(spec, path):
    write_interactions(synth_generate(spec), path)
