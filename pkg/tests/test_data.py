import warnings
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chisquare

from poskernel.data import (
    Interaction,
    SplitDataset,
    five_core_filter,
    load_interactions,
    load_prepared,
    make_windows,
    nearest_rank,
    save_prepared,
    temporal_split,
    write_interactions,
)
from poskernel.errors import ConfigError, ParseError, SchemaError
from poskernel.synthetic import SyntheticSpec, synth_generate, write_synthetic


def write_csv(path, text):
    path.write_text(text)
    return str(path)


def test_load_empty_file(tmp_path):
    with pytest.raises(SchemaError):
        load_interactions(write_csv(tmp_path / "e.csv", ""))


def test_load_header_only(tmp_path):
    assert load_interactions(write_csv(tmp_path / "h.csv", "user,item,timestamp\n")) == []


def test_load_three_rows_in_order(tmp_path):
    path = write_csv(tmp_path / "t.csv", "user,item,timestamp\nu1,a,5\nu2,b,3\nu1,c,9\n")
    assert load_interactions(path) == [
        Interaction("u1", "a", 5), Interaction("u2", "b", 3), Interaction("u1", "c", 9)]


def test_load_reports_bad_line_number(tmp_path):
    rows = ["user,item,timestamp"] + [f"u,i{n},{n}" for n in range(5)] + ["u,i9,abc"]
    with pytest.raises(ParseError) as err:
        load_interactions(write_csv(tmp_path / "bad.csv", "\n".join(rows) + "\n"))
    assert err.value.line == 7
    assert "line 7" in str(err.value)


def test_load_missing_column(tmp_path):
    with pytest.raises(SchemaError, match="timestamp"):
        load_interactions(write_csv(tmp_path / "m.csv", "user,item,time\nu,i,1\n"))


def test_load_custom_columns(tmp_path):
    path = write_csv(tmp_path / "c.csv", "ts;uid;iid\n4;x;y\n")
    assert load_interactions(path, "uid", "iid", "ts", ";") == [Interaction("x", "y", 4)]


def brute_k_core(rows, k=5):
    """Largest subset in which every user and item has >= k rows, by exhaustive peeling order."""
    current = set(range(len(rows)))
    changed = True
    while changed:
        changed = False
        users = Counter(rows[i].user for i in current)
        items = Counter(rows[i].item for i in current)
        for i in sorted(current):
            if users[rows[i].user] < k or items[rows[i].item] < k:
                current.discard(i)
                changed = True
                break  # one row at a time
    return [rows[i] for i in sorted(current)]


def grid(users, items, t0=0):
    return [Interaction(f"u{u}", f"i{i}", t0 + u * len(items) + n)
            for u in users for n, i in enumerate(items)]


def test_five_core_keeps_dense_block():
    rows = grid(range(5), range(5))
    assert five_core_filter(rows) == rows


def test_five_core_single_sparse_user():
    assert five_core_filter([Interaction("u", f"i{n}", n) for n in range(4)]) == []


def test_five_core_cascade():
    core = grid(range(6), range(6))
    # item R has 4 interactions; its users each have exactly 5 rows, so removing R cascades
    extra = []
    for u in range(4):
        extra.append(Interaction(f"x{u}", "R", 1000 + u))
        extra += [Interaction(f"x{u}", f"i{i}", 2000 + 10 * u + i) for i in range(4)]
    rows = core + extra
    assert five_core_filter(rows) == core
    assert five_core_filter(rows) == brute_k_core(rows)


@given(st.lists(st.tuples(st.integers(0, 7), st.integers(0, 7)), max_size=120), st.integers(2, 5))
@settings(max_examples=60, deadline=None)
def test_five_core_matches_oracle_and_is_idempotent(pairs, k):
    rows = [Interaction(u, i, n) for n, (u, i) in enumerate(pairs)]
    out = five_core_filter(rows, k)
    assert out == brute_k_core(rows, k)
    assert five_core_filter(out, k) == out
    users, items = Counter(x.user for x in out), Counter(x.item for x in out)
    assert all(v >= k for v in users.values()) and all(v >= k for v in items.values())


def test_nearest_rank():
    vals = list(range(1, 101))
    assert nearest_rank(vals, 0.95) == 95
    assert nearest_rank(vals, 0.97) == 97
    assert nearest_rank([7], 0.5) == 7


def test_split_hundred_timestamps():
    rows = [Interaction(f"u{t % 3}", f"i{t % 7}", t) for t in range(1, 101)]
    split = temporal_split(rows)
    assert [x.timestamp for x in split.train] == list(range(1, 95))
    assert [x.timestamp for x in split.valid] == [95, 96]
    assert [x.timestamp for x in split.test] == list(range(97, 101))
    assert split.boundaries == (95, 97)


def test_split_all_equal_timestamps_goes_to_test():
    rows = [Interaction(f"u{n}", "i", 5) for n in range(10)]
    with pytest.warns(UserWarning):
        split = temporal_split(rows)
    assert split.train == [] and split.valid == [] and len(split.test) == 10


def test_split_single_interaction():
    with pytest.warns(UserWarning):
        split = temporal_split([Interaction("u", "i", 1)])
    assert len(split.test) == 1


def test_split_remaps_by_first_appearance():
    rows = [Interaction("zed", "b", 3), Interaction("amy", "a", 1), Interaction("zed", "a", 2)]
    split = temporal_split(rows, 1.0, 1.0)
    assert split.user_ids == ["zed", "amy"] and split.item_ids == ["b", "a"]


@given(st.lists(st.integers(0, 30), min_size=1, max_size=200),
       st.floats(0, 1), st.floats(0, 1))
@settings(max_examples=60, deadline=None)
def test_split_is_a_temporal_partition(stamps, a, b):
    p1, p2 = sorted((a, b))
    rows = [Interaction(n % 4, n % 5, t) for n, t in enumerate(stamps)]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        split = temporal_split(rows, p1, p2)
    assert len(split.train) + len(split.valid) + len(split.test) == len(rows)
    key = lambda x: (x.user, x.item, x.timestamp)
    assert Counter(map(key, split.all_interactions())) == Counter(map(key, rows))
    if split.train and split.valid:
        assert max(x.timestamp for x in split.train) < min(x.timestamp for x in split.valid)
    if split.valid and split.test:
        assert max(x.timestamp for x in split.valid) < min(x.timestamp for x in split.test)
    if split.train and split.test:
        assert max(x.timestamp for x in split.train) < min(x.timestamp for x in split.test)


def test_split_rejects_bad_quantiles():
    with pytest.raises(ConfigError):
        temporal_split([Interaction(0, 0, 1)], 0.9, 0.5)


def split_of(train_seqs, n_items):
    train = [Interaction(u, i, t) for u, seq in enumerate(train_seqs) for t, i in enumerate(seq)]
    return SplitDataset(train, [], [], list(range(len(train_seqs))), list(range(n_items)))


def test_windows_single_item_sequence():
    w = make_windows(split_of([[3]], 5), K=4)
    np.testing.assert_array_equal(w.inputs, [[5, 5, 5, 3]])
    np.testing.assert_array_equal(w.targets, [[5, 5, 5, 5]])


def test_windows_exactly_k_plus_one():
    w = make_windows(split_of([[0, 1, 2, 3]], 5), K=3)
    np.testing.assert_array_equal(w.inputs, [[0, 1, 2]])
    np.testing.assert_array_equal(w.targets, [[1, 2, 3]])


def test_windows_length5_k3_enumeration():
    P = 9
    seq = [4, 1, 7, 2, 8]
    last = make_windows(split_of([seq], P), K=3)
    np.testing.assert_array_equal(last.inputs, [[1, 7, 2]])
    np.testing.assert_array_equal(last.targets, [[7, 2, 8]])
    sfx = make_windows(split_of([seq], P), K=3, mode="suffixes")
    np.testing.assert_array_equal(sfx.inputs, [[P, P, 4], [P, 4, 1], [4, 1, 7], [1, 7, 2]])
    np.testing.assert_array_equal(sfx.targets, [[P, P, 1], [P, 1, 7], [1, 7, 2], [7, 2, 8]])


@given(st.lists(st.lists(st.integers(0, 9), min_size=1, max_size=15), min_size=1, max_size=5),
       st.integers(1, 6), st.sampled_from(["last", "suffixes"]))
@settings(max_examples=50, deadline=None)
def test_windows_targets_are_next_items(seqs, K, mode):
    w = make_windows(split_of(seqs, 10), K, mode)
    for inp, tgt, user in zip(w.inputs, w.targets, w.users):
        seq = seqs[user]
        real = [(a, b) for a, b in zip(inp, tgt) if b != 10]
        for a, b in real:
            assert a != 10
        # every (input, target) pair is consecutive in the user's sequence
        pairs = set(zip(seq, seq[1:]))
        assert all(p in pairs for p in real)


def test_prepared_round_trip(tmp_path):
    rows = [Interaction(f"u{t % 3}", f"i{t % 7}", t) for t in range(1, 101)]
    split = temporal_split(rows)
    save_prepared(split, tmp_path)
    back = load_prepared(tmp_path)
    assert back.train == split.train and back.test == split.test
    assert back.user_ids == split.user_ids and back.item_ids == split.item_ids
    assert tuple(back.boundaries) == split.boundaries


def test_synth_deterministic_bytes(tmp_path):
    spec = SyntheticSpec(n_users=20, n_items=50, series_pool=30, genre_pool=10, seq_len=15, seed=3)
    write_synthetic(spec, tmp_path / "a.csv")
    write_synthetic(spec, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    other = SyntheticSpec(**{**spec.to_dict(), "seed": 4})
    write_synthetic(other, tmp_path / "c.csv")
    assert (tmp_path / "a.csv").read_bytes() != (tmp_path / "c.csv").read_bytes()


def test_synth_pure_noise_is_uniform():
    spec = SyntheticSpec(n_users=200, n_items=20, seq_len=50, period=0, drift_rate=0.0,
                         noise_prob=1.0, series_pool=3, genre_pool=0)
    counts = Counter(x.item for x in synth_generate(spec))
    observed = [counts[i] for i in range(20)]
    assert chisquare(observed).pvalue > 1e-3


def test_synth_pure_chains_are_perfectly_predictable():
    L = 3
    spec = SyntheticSpec(n_users=30, n_items=30, seq_len=21, short_chain_len=L, period=0,
                         drift_rate=0.0, noise_prob=0.0, series_pool=30, genre_pool=0)
    rows = synth_generate(spec)
    streams = {}
    for x in rows:
        streams.setdefault(x.user, []).append(x.item)
    hits = total = 0
    for seq in streams.values():
        for t in range(len(seq) - 1):
            assert (seq[t] % L == 0) == (t % L == 0)  # chains start on aligned steps
            if seq[t] % L != L - 1:
                total += 1
                hits += seq[t + 1] == seq[t] + 1  # the chain-aware predictor
    assert total > 0 and hits == total


def test_synth_periodic_item_recurs():
    spec = SyntheticSpec(n_users=10, n_items=40, seq_len=28, period=7, noise_prob=0.0,
                         series_pool=30, genre_pool=5)
    streams = {}
    for x in synth_generate(spec):
        streams.setdefault(x.user, []).append(x.item)
    for seq in streams.values():
        periodic = [i for i in seq if i >= 35]
        assert len(periodic) >= 4 and len(set(periodic)) == 1


def test_synth_timestamps_increase_per_user():
    rows = synth_generate(SyntheticSpec(n_users=5, n_items=50, series_pool=30, genre_pool=10, seq_len=10))
    for u in range(5):
        ts = [x.timestamp for x in rows if x.user == u]
        assert ts == sorted(ts) and len(set(ts)) == len(ts)


@pytest.mark.parametrize("kwargs", [
    {"series_pool": 150, "genre_pool": 60},
    {"series_pool": 140, "genre_pool": 60, "period": 7},
    {"noise_prob": 1.5},
    {"series_pool": 2, "short_chain_len": 3},
])
def test_synth_config_errors(kwargs):
    with pytest.raises(ConfigError):
        SyntheticSpec(**kwargs)


def test_write_interactions_round_trip(tmp_path):
    rows = [Interaction("a", "x", 1), Interaction("b", "y", 2)]
    write_interactions(rows, tmp_path / "r.csv")
    assert load_interactions(str(tmp_path / "r.csv")) == rows
