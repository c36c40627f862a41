import math
import warnings

import numpy as np
import pytest

from poskernel.attention import CLASSIC, KERNEL, NOPE, ROTARY
from poskernel.checkpoint import load_checkpoint, read_manifest, save_checkpoint
from poskernel.errors import ConfigError, InputError
from poskernel.kernel import ABLATION_MODES
from poskernel.model import Model, ModelConfig, ce_loss, pad_window, param_census, predict_topk
from poskernel.tensor import Tensor
from poskernel.verify import full_model_grad_check, future_violations, random_model

ALL_SCHEMES = [NOPE, CLASSIC, ROTARY, KERNEL]


def test_config_rejects_zero_blocks():
    with pytest.raises(ConfigError):
        ModelConfig(N=10, B=0)


def test_config_rejects_unknown_scheme():
    with pytest.raises(ConfigError):
        ModelConfig(N=10, scheme="alibi")


def test_config_round_trip():
    cfg = ModelConfig(N=7, K=5, d=4, B=3, scheme=KERNEL, kernel_mode=ABLATION_MODES["F-T/shared"])
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg


def test_ce_loss_uniform_logits():
    logits = Tensor(np.zeros((1, 1, 4)))
    assert abs(ce_loss(logits, np.array([[2]]), pad=4).data - math.log(4)) < 1e-12


def test_ce_loss_confident_correct():
    logits = np.zeros((1, 1, 4))
    logits[0, 0, 1] = 1000.0
    assert abs(float(ce_loss(Tensor(logits), np.array([[1]]), pad=4).data)) < 1e-12


def test_ce_loss_matches_log_sum_exp():
    rng = np.random.default_rng(0)
    z = rng.standard_normal((2, 3, 6)) * 3
    t = np.array([[0, 5, 6], [2, 6, 1]])  # 6 is PAD
    loss = float(ce_loss(Tensor(z), t, pad=6).data)
    terms = [np.log(np.exp(z[b, k]).sum()) - z[b, k, t[b, k]]
             for b in range(2) for k in range(3) if t[b, k] != 6]
    assert abs(loss - np.mean(terms)) < 1e-12


def test_all_pad_window_zero_loss_and_grad():
    model = Model(ModelConfig(N=5, K=3, d=4, B=1, dropout=0.0))
    pad = model.config.pad
    loss = ce_loss(model(np.full((2, 3), pad)), np.full((2, 3), pad), pad)
    loss.backward()
    assert float(loss.data) == 0.0
    assert all((p.grad == 0).all() for p in model.parameters().values())


def test_pad_embeds_to_zero_row():
    from poskernel.tensor import embedding
    table = np.arange(12, dtype=float).reshape(6, 2) + 1
    out = embedding(table, np.array([[6, 6, 2]]), pad=6).data
    np.testing.assert_array_equal(out[0], [[0, 0], [0, 0], table[2]])


def test_index_out_of_range():
    model = Model(ModelConfig(N=5, K=3, d=4, B=1))
    with pytest.raises(InputError):
        model(np.array([[0, 1, 6]]))
    with pytest.raises(InputError):
        model(np.array([[0, 1]]))


def _layer_norm(x, g, b, eps=1e-6):
    mu = x.mean()
    var = ((x - mu) ** 2).mean()
    return g * (x - mu) / np.sqrt(var + eps) + b


def test_single_item_k1_hand_oracle():
    model = random_model(NOPE, N=6, K=1, d=4, B=1, seed=3)
    p = {n: q.data for n, q in model.parameters().items()}
    item = 4
    e = p["M"][item]
    h = _layer_norm(e, p["block0.ln1.gain"], p["block0.ln1.bias"])
    x = e + h @ p["block0.attn.W_V"]  # one position: attention weight is 1
    h2 = _layer_norm(x, p["block0.ln2.gain"], p["block0.ln2.bias"])
    x = x + np.maximum(h2 @ p["block0.ffn.W1"] + p["block0.ffn.b1"], 0) @ p["block0.ffn.W2"] + p["block0.ffn.b2"]
    out = _layer_norm(x, p["final_ln.gain"], p["final_ln.bias"])
    np.testing.assert_allclose(model(np.array([[item]])).data[0, 0], out @ p["M"].T, rtol=1e-10, atol=1e-12)


def test_identity_kernel_matches_nope_end_to_end():
    idx = np.random.default_rng(0).integers(0, 30, size=(3, 8))
    idx[0, :3] = 30
    a = Model(ModelConfig(N=30, K=8, d=8, B=2, scheme=KERNEL, dropout=0.0, seed=5))(idx).data
    b = Model(ModelConfig(N=30, K=8, d=8, B=2, scheme=NOPE, dropout=0.0, seed=5))(idx).data
    assert np.abs(a - b).max() <= 1e-12


@pytest.mark.parametrize("scheme,mode", [(s, None) for s in (NOPE, CLASSIC, ROTARY)]
                         + [(KERNEL, m) for m in ABLATION_MODES])
def test_end_to_end_causality(scheme, mode):
    model = random_model(scheme, ABLATION_MODES[mode] if mode else ABLATION_MODES["T-F/per-layer"], N=12, K=6, seed=1)
    rng = np.random.default_rng(2)
    idx = rng.integers(0, 12, size=(3, 6))
    resample = lambda block, r: (block + r.integers(1, 12, size=block.shape)) % 12
    assert future_violations(lambda x: model(x).data, idx, rng, resample) == []


@pytest.mark.parametrize("scheme", ALL_SCHEMES)
def test_full_model_gradients(scheme):
    report = full_model_grad_check(scheme, seed=0)
    assert report.passed, report.summary()


def test_dropout_only_in_training():
    model = Model(ModelConfig(N=10, K=4, d=4, B=1, dropout=0.5))
    idx = np.array([[1, 2, 3, 4]])
    np.testing.assert_array_equal(model(idx).data, model(idx).data)
    assert not np.array_equal(model(idx, training=True).data, model(idx).data)


def test_pad_window():
    np.testing.assert_array_equal(pad_window([1, 2], 4, 9), [9, 9, 1, 2])
    np.testing.assert_array_equal(pad_window([1, 2, 3, 4, 5], 3, 9), [3, 4, 5])


def test_predict_topk_deterministic_and_complete():
    model = random_model(KERNEL, N=10, K=4, seed=2)
    a = predict_topk(model, [1, 2, 3], 5)
    assert a == predict_topk(model, [1, 2, 3], 5)
    assert len(set(a)) == 5
    assert sorted(predict_topk(model, [1, 2, 3], 10)) == list(range(10))


def test_predict_topk_exclude_seen():
    model = random_model(NOPE, N=10, K=4, seed=2)
    top = predict_topk(model, [1, 2, 3], 7, exclude_seen=True)
    assert not {1, 2, 3} & set(top)
    assert len(top) == 7


def test_predict_topk_k_above_catalog_warns():
    model = random_model(NOPE, N=6, K=3)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        top = predict_topk(model, [0], 20)
    assert len(top) == 6 and caught


def test_predict_topk_ties_ascending_id():
    model = Model(ModelConfig(N=5, K=2, d=4, B=1, dropout=0.0))
    model.M.data[:] = 0.0  # every score is 0
    assert predict_topk(model, [0, 1], 5) == [0, 1, 2, 3, 4]


def test_census_groups():
    N, K, d, B = 20, 6, 4, 2
    per_block = 3 * d * d + 2 * d * d + 2 * d + 4 * d
    classic = param_census(Model(ModelConfig(N=N, K=K, d=d, B=B, scheme=CLASSIC)))
    assert classic["embedding"] == N * d and classic["positional"] == K * d
    assert classic["blocks"] == B * per_block and classic["kernel"] == 0
    kernel = param_census(Model(ModelConfig(N=N, K=K, d=d, B=B, scheme=KERNEL)))
    assert kernel["kernel"] == B * K + K * (K + 1) // 2
    assert kernel["total"] - kernel["kernel"] == param_census(Model(ModelConfig(N=N, K=K, d=d, B=B, scheme=NOPE)))["total"]


@pytest.mark.parametrize("scheme", ALL_SCHEMES)
def test_checkpoint_round_trip_bit_exact(tmp_path, scheme):
    model = random_model(scheme, N=9, K=5, seed=4)
    save_checkpoint(model, str(tmp_path / "ck"), meta={"epoch": 3})
    loaded, meta = load_checkpoint(str(tmp_path / "ck"))
    assert meta == {"epoch": 3}
    assert loaded.config == model.config
    a, b = model.state_dict(), loaded.state_dict()
    assert a.keys() == b.keys()
    for name in a:
        assert a[name].tobytes() == b[name].tobytes()
    idx = np.array([[9, 1, 2, 3, 4]])
    assert model(idx).data.tobytes() == loaded(idx).data.tobytes()


def test_manifest_is_plain_key_value(tmp_path):
    model = Model(ModelConfig(N=4, K=2, d=2, B=1))
    path = save_checkpoint(model, str(tmp_path / "m"))
    manifest = read_manifest(path)
    assert manifest["format"] == "poskernel-checkpoint/1"
    assert manifest["param.M"].startswith("shape=4,2 offset=0 nbytes=64")
