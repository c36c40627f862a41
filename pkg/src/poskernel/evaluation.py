"""Next-item ranking metrics and the successive evaluation protocol."""

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .model import pad_window, rank_items


@dataclass(frozen=True)
class EvalRecord:
    user: int
    step: int
    target: int
    rank: int | None
    recommended: tuple


def _warn_empty(name):
    warnings.warn(f"{name} over zero records is defined as 0", stacklevel=3)
    return 0.0


def ndcg_at_k(records, k):
    """Mean single-target NDCG: ``1 / log2(rank + 1)`` for hits within ``k``, else 0."""
    if k < 1:
        raise ConfigError("k must be >= 1")
    if not records:
        return _warn_empty("NDCG")
    gains = [1.0 / math.log2(r.rank + 1) if r.rank is not None and r.rank <= k else 0.0
             for r in records]
    return sum(gains) / len(gains)


def hr_at_k(records, k):
    if k < 1:
        raise ConfigError("k must be >= 1")
    if not records:
        return _warn_empty("HR")
    return sum(r.rank is not None and r.rank <= k for r in records) / len(records)


def coverage_at_k(records, k, N):
    """Fraction of the catalog that appears in at least one top-``k`` list."""
    if N <= 0:
        raise ConfigError("catalog size N must be positive")
    if not records:
        return _warn_empty("COV")
    seen = set()
    for r in records:
        seen.update(r.recommended[:k])
    return len(seen) / N


@dataclass
class EvalResult:
    metrics: dict
    records: list


def phase_histories(split, phase):
    """Known history per user before ``phase`` starts (train, plus valid for test)."""
    before = split.train if phase == "valid" else split.train + split.valid
    hist = {}
    for x in before:
        hist.setdefault(x.user, []).append(x.item)
    return hist


def successive_evaluate(model, split, phase="test", k=10, exclude_seen=False, batch_size=512):
    """Step through each user's ``phase`` events, scoring before revealing each one.

    The input window at every step is the user's history truncated to the
    model's ``K``; after scoring, the true item is appended to the history.
    ``model`` needs ``config.K``, ``config.N``, ``config.pad`` and
    ``score_last(windows) -> (n, N) scores``. Its parameters are not touched.
    """
    if phase not in ("valid", "test"):
        raise ConfigError(f"phase must be 'valid' or 'test', got {phase!r}")
    c = model.config
    history = phase_histories(split, phase)
    events = split.sequences(phase)

    keys, windows = [], []
    for user in sorted(events):
        seq = list(history.get(user, []))
        for step, target in enumerate(events[user]):
            windows.append(pad_window(seq, c.K, c.pad))
            keys.append((user, step, target))
            seq.append(target)

    records = []
    for start in range(0, len(windows), batch_size):
        chunk = np.stack(windows[start:start + batch_size])
        scores = model.score_last(chunk)
        for row, window, (user, step, target) in zip(
            scores, chunk, keys[start:start + batch_size]
        ):
            seen = sorted({int(i) for i in window if i != c.pad}) if exclude_seen else ()
            top = tuple(int(i) for i in rank_items(row, k, seen))
            rank = top.index(target) + 1 if target in top else None
            records.append(EvalRecord(user, step, target, rank, top))

    if not records:
        warnings.warn(f"phase {phase!r} has no events to evaluate", stacklevel=2)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        metrics = {
            "phase": phase,
            "k": k,
            "ndcg": ndcg_at_k(records, k),
            "hr": hr_at_k(records, k),
            "cov": coverage_at_k(records, k, c.N),
            "n_records": len(records),
            "exclude_seen": exclude_seen,
        }
    return EvalResult(metrics, records)
