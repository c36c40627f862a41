"""Interaction logs: loading, k-core filtering, global temporal split, windows."""

import csv
import json
import math
import os
import warnings
from collections import Counter, defaultdict
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ParseError, SchemaError


@dataclass(frozen=True, slots=True)
class Interaction:
    user: object
    item: object
    timestamp: int


def load_interactions(path, user_col="user", item_col="item", time_col="timestamp", delimiter=","):
    """Parse a headered CSV into interactions, preserving file order.

    Raises
    ------
    SchemaError
        A required column is missing from the header.
    ParseError
        A row is malformed; ``err.line`` is the 1-based file line.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file, expected a header row") from None
        header = [h.strip() for h in header]
        missing = [c for c in (user_col, item_col, time_col) if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {missing}; header is {header}")
        ui, ii, ti = header.index(user_col), header.index(item_col), header.index(time_col)
        out = []
        for row in reader:
            line = reader.line_num
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", line)
            raw = row[ti].strip()
            try:
                ts = int(raw)
            except ValueError:
                raise ParseError(f"non-numeric timestamp {raw!r}", line) from None
            if ts < 0:
                raise ParseError(f"negative timestamp {ts}", line)
            user, item = row[ui].strip(), row[ii].strip()
            if not user or not item:
                raise ParseError("empty user or item id", line)
            out.append(Interaction(user, item, ts))
    return out


def write_interactions(interactions, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["user", "item", "timestamp"])
        for x in interactions:
            writer.writerow([x.user, x.item, x.timestamp])


def five_core_filter(interactions, k=5):
    """Drop users, then items, with fewer than ``k`` interactions until nothing changes."""
    current = list(interactions)
    while True:
        users = Counter(x.user for x in current)
        kept = [x for x in current if users[x.user] >= k]
        items = Counter(x.item for x in kept)
        kept = [x for x in kept if items[x.item] >= k]
        if len(kept) == len(current):
            return kept
        current = kept


def nearest_rank(sorted_values, p):
    """Nearest-rank empirical quantile: the ``ceil(p * n)``-th smallest value."""
    n = len(sorted_values)
    rank = max(1, math.ceil(p * n - 1e-9))
    return sorted_values[min(rank, n) - 1]


@dataclass
class SplitDataset:
    train: list
    valid: list
    test: list
    user_ids: list
    item_ids: list
    boundaries: tuple = (None, None)
    meta: dict = field(default_factory=dict)

    @property
    def n_users(self):
        return len(self.user_ids)

    @property
    def n_items(self):
        return len(self.item_ids)

    @property
    def pad(self):
        return self.n_items

    def sequences(self, phase):
        """Item sequences per user for one phase, in time order."""
        seqs = defaultdict(list)
        for x in getattr(self, phase):
            seqs[x.user].append(x.item)
        return dict(seqs)

    def all_interactions(self):
        return self.train + self.valid + self.test


def remap_ids(interactions):
    """Dense integer ids by first appearance; returns (remapped, user_ids, item_ids)."""
    users, items = {}, {}
    out = []
    for x in interactions:
        u = users.setdefault(x.user, len(users))
        i = items.setdefault(x.item, len(items))
        out.append(Interaction(u, i, x.timestamp))
    return out, list(users), list(items)


def temporal_split(interactions, p1=0.95, p2=0.97):
    """Remap ids densely, then split by global timestamp quantiles.

    Boundaries are nearest-rank quantiles ``b1``/``b2`` of all timestamps.
    An interaction goes to train if ``t < b1``, valid if ``b1 <= t < b2``
    and test otherwise, so ties at a boundary land in the later split.
    """
    if not interactions:
        raise ConfigError("cannot split an empty interaction list")
    if not 0.0 <= p1 <= p2 <= 1.0:
        raise ConfigError(f"need 0 <= p1 <= p2 <= 1, got {p1}, {p2}")
    remapped, user_ids, item_ids = remap_ids(interactions)
    ordered = sorted(remapped, key=lambda x: x.timestamp)
    stamps = [x.timestamp for x in ordered]
    b1, b2 = nearest_rank(stamps, p1), nearest_rank(stamps, p2)
    train = [x for x in ordered if x.timestamp < b1]
    valid = [x for x in ordered if b1 <= x.timestamp < b2]
    test = [x for x in ordered if x.timestamp >= b2]
    if not train:
        warnings.warn("temporal split left the training slice empty", stacklevel=2)
    return SplitDataset(train, valid, test, user_ids, item_ids, boundaries=(b1, b2))


@dataclass
class Windows:
    inputs: np.ndarray
    targets: np.ndarray
    users: np.ndarray

    def __len__(self):
        return len(self.users)


def _left_pad(seq, K, pad):
    seq = seq[-K:]
    return [pad] * (K - len(seq)) + list(seq)


def make_windows(split, K, mode="last"):
    """Training windows from each user's train sequence.

    ``mode="last"`` gives one window per user built from the most recent
    ``K + 1`` items: inputs are items ``[-K-1:-1]``, targets ``[-K:]``.
    ``mode="suffixes"`` gives one window per prefix end instead. Targets
    are the next item of each input position; PAD targets carry no loss.
    """
    if K < 1:
        raise ConfigError("window length K must be >= 1")
    if mode not in ("last", "suffixes"):
        raise ConfigError(f"unknown window mode {mode!r}")
    pad = split.pad
    inputs, targets, users = [], [], []
    for user, seq in sorted(split.sequences("train").items()):
        if len(seq) == 1:
            inputs.append(_left_pad(seq, K, pad))
            targets.append([pad] * K)
            users.append(user)
            continue
        ends = [len(seq) - 1] if mode == "last" else range(1, len(seq))
        for end in ends:
            inputs.append(_left_pad(seq[:end], K, pad))
            targets.append(_left_pad(seq[1:end + 1], K, pad))
            users.append(user)
    as_arr = lambda rows: np.array(rows, dtype=np.int64).reshape(len(rows), K)
    return Windows(as_arr(inputs), as_arr(targets), np.array(users, dtype=np.int64))


def dataset_stats(interactions):
    """Users, items, events, average sequence length and density."""
    users = {x.user for x in interactions}
    items = {x.item for x in interactions}
    n_u, n_i, n_e = len(users), len(items), len(interactions)
    return {
        "users": n_u,
        "items": n_i,
        "events": n_e,
        "avg_seq_len": n_e / n_u if n_u else 0.0,
        "density": n_e / (n_u * n_i) if n_u and n_i else 0.0,
    }


def save_prepared(split, out_dir, meta=None):
    os.makedirs(out_dir, exist_ok=True)
    for phase in ("train", "valid", "test"):
        write_interactions(getattr(split, phase), os.path.join(out_dir, f"{phase}.csv"))
    for name, ids in (("users", split.user_ids), ("items", split.item_ids)):
        with open(os.path.join(out_dir, f"{name}.csv"), "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["id", "original"])
            writer.writerows(enumerate(ids))
    info = {
        "n_users": split.n_users,
        "n_items": split.n_items,
        "boundaries": list(split.boundaries),
        **(meta or {}),
    }
    with open(os.path.join(out_dir, "meta.json"), "w", encoding="utf-8") as fh:
        json.dump(info, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_prepared(data_dir):
    def read_ids(name):
        with open(os.path.join(data_dir, f"{name}.csv"), newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))[1:]
        return [r[1] for r in rows]

    def read_phase(phase):
        raw = load_interactions(os.path.join(data_dir, f"{phase}.csv"))
        return [Interaction(int(x.user), int(x.item), x.timestamp) for x in raw]

    with open(os.path.join(data_dir, "meta.json"), encoding="utf-8") as fh:
        meta = json.load(fh)
    split = SplitDataset(
        read_phase("train"), read_phase("valid"), read_phase("test"),
        read_ids("users"), read_ids("items"),
        boundaries=tuple(meta.get("boundaries", (None, None))), meta=meta,
    )
    return split
