"""Adam training with validation-driven early stopping."""

import json
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .checkpoint import save_checkpoint
from .data import make_windows
from .errors import ConfigError, TrainingError
from .evaluation import successive_evaluate
from .model import ce_loss
from .util import append_jsonl, config_hash

IMPROVEMENT_EPS = 1e-9


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 128
    max_epochs: int = 300
    patience: int = 10
    seed: int = 0
    clip_norm: float = 5.0
    window_mode: str = "last"
    eval_k: int = 10
    exclude_seen: bool = False

    def __post_init__(self):
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.lr < 0:
            raise ConfigError("learning rate must be non-negative")

    def to_dict(self):
        return asdict(self)


@dataclass
class AdamState:
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state, config):
    """One bias-corrected Adam update.

    ``params`` and ``grads`` map names to arrays. Returns the updated
    parameter arrays and the advanced state; inputs are not modified.
    """
    for name, g in grads.items():
        if not np.isfinite(g).all():
            bad = int((~np.isfinite(g)).sum())
            raise TrainingError(f"non-finite gradient for {name}: {bad} of {g.size} entries")
    t = state.t + 1
    b1, b2 = config.beta1, config.beta2
    new_params, m, v = {}, {}, {}
    for name, value in params.items():
        g = grads[name]
        m[name] = b1 * state.m.get(name, 0.0) + (1 - b1) * g
        v[name] = b2 * state.v.get(name, 0.0) + (1 - b2) * g * g
        m_hat = m[name] / (1 - b1**t)
        v_hat = v[name] / (1 - b2**t)
        new_params[name] = value - config.lr * m_hat / (np.sqrt(v_hat) + config.eps)
    return new_params, AdamState(t, m, v)


def clip_by_global_norm(grads, max_norm):
    norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if max_norm is None or norm <= max_norm:
        return grads, norm
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}, norm


@dataclass
class TrainResult:
    best_epoch: int
    best_ndcg: float
    history: list
    best_state: dict
    stopped_early: bool


def train_step(model, inputs, targets, state, config):
    params = model.parameters()
    model.zero_grad()
    loss = ce_loss(model(inputs, training=True), targets, model.config.pad)
    loss.backward()
    grads, _ = clip_by_global_norm({n: p.grad for n, p in params.items()}, config.clip_norm)
    new_values, state = adam_step({n: p.data for n, p in params.items()}, grads, state, config)
    for name, p in params.items():
        p.data = new_values[name]
    return float(loss.data), state


def run_config(model, config, extra=None):
    snapshot = {"model": model.config.to_dict(), "train": config.to_dict(), **(extra or {})}
    snapshot["config_hash"] = config_hash(snapshot)
    return snapshot


def train(model, split, config, run_dir=None, log=None, extra=None):
    """Fit ``model`` on ``split.train``; the model ends holding the best-validation weights.

    Each epoch shuffles the training windows with a seeded generator, takes
    one Adam step per mini-batch, then runs successive validation at
    ``config.eval_k``. Training stops after ``patience`` epochs without an
    improvement larger than 1e-9, or at ``max_epochs``.

    With ``run_dir`` set, writes ``config.json``, ``epochs.jsonl`` (fully
    deterministic), ``timing.jsonl`` (wall clock), and ``best``/``final``
    checkpoints. ``extra`` entries are stored in the config snapshot.
    """
    windows = make_windows(split, model.config.K, mode=config.window_mode)
    if len(windows) == 0:
        raise ConfigError("dataset has no training windows")
    if split.n_items != model.config.N:
        raise ConfigError(f"model catalog N={model.config.N} but dataset has {split.n_items} items")

    snapshot = run_config(model, config, extra)
    if run_dir is not None:
        os.makedirs(run_dir, exist_ok=True)
        with open(os.path.join(run_dir, "config.json"), "w", encoding="utf-8") as fh:
            json.dump(snapshot, fh, indent=2, sort_keys=True)
            fh.write("\n")
        for name in ("epochs.jsonl", "timing.jsonl"):
            open(os.path.join(run_dir, name), "w").close()

    rng = np.random.default_rng([config.seed, 2])
    state = AdamState()
    best_ndcg, best_epoch, best_state = -np.inf, 0, model.state_dict()
    history, bad_epochs, stopped_early = [], 0, False
    for epoch in range(1, config.max_epochs + 1):
        started = time.perf_counter()
        order = rng.permutation(len(windows))
        losses = []
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            loss, state = train_step(model, windows.inputs[batch], windows.targets[batch], state, config)
            losses.append(loss)
        ndcg = successive_evaluate(model, split, "valid", k=config.eval_k,
                                   exclude_seen=config.exclude_seen).metrics["ndcg"]
        entry = {"epoch": epoch, "train_loss": float(np.mean(losses)), "valid_ndcg10": ndcg}
        history.append(entry)
        if ndcg > best_ndcg + IMPROVEMENT_EPS:
            best_ndcg, best_epoch, best_state = ndcg, epoch, model.state_dict()
            bad_epochs = 0
        else:
            bad_epochs += 1
        if run_dir is not None:
            append_jsonl(os.path.join(run_dir, "epochs.jsonl"), entry)
            append_jsonl(os.path.join(run_dir, "timing.jsonl"),
                         {"epoch": epoch, "wall_time": time.perf_counter() - started})
        if log is not None:
            log(entry)
        if bad_epochs >= config.patience:
            stopped_early = True
            break

    if run_dir is not None:
        save_checkpoint(model, os.path.join(run_dir, "final"),
                        meta={"epoch": history[-1]["epoch"], "config_hash": snapshot["config_hash"]})
    model.load_state_dict(best_state)
    if run_dir is not None:
        save_checkpoint(model, os.path.join(run_dir, "best"),
                        meta={"epoch": best_epoch, "valid_ndcg10": best_ndcg,
                              "config_hash": snapshot["config_hash"]})
    return TrainResult(best_epoch, float(best_ndcg), history, best_state, stopped_early)
