"""Executable checks for the algebraic claims behind kernel attention.

Every check returns a :class:`CheckReport`. Tolerances are fixed constants;
they are not parameters on purpose.
"""

import itertools
import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.linalg import toeplitz

from .attention import (
    CLASSIC,
    KERNEL,
    NOPE,
    ROTARY,
    AttentionWeights,
    causal_attention,
    kernel_attention,
    rope_rotate,
    sequence_response,
    vanilla_qkv_oracle,
)
from .errors import InvariantError
from .kernel import (
    DEFAULT_MODE,
    FULL,
    ABLATION_MODES,
    TOEPLITZ,
    extra_param_count,
    materialize_lower,
    materialize_upper,
)
from .model import Model, ModelConfig, ce_loss, param_census
from .tensor import (
    Parameter,
    causal_mask,
    cross_entropy,
    embedding,
    grad_check,
    layer_norm,
    masked_softmax_rows,
    matmul,
    relu,
    mul,
    tsum,
)

EQUIVARIANCE_TOL = 1e-10
BREAK_MIN_GAP = 1e-6
MIN_NON_STABILIZING = 15
GRAD_TOL = 1e-4
GRAD_STEP = 1e-5


@dataclass
class CheckReport:
    name: str
    passed: bool
    details: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def line(self):
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}"


def _rel(a, b):
    scale = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), 1e-300)
    return float(np.abs(a - b).max(initial=0.0) / scale)


def random_one_hot(rng, N, K):
    X = np.zeros((N, K))
    X[rng.integers(N, size=K), np.arange(K)] = 1.0
    return X


def permutation_matrix(perm):
    """``R`` with ``(X @ R)[:, j] == X[:, perm[j]]``."""
    K = len(perm)
    R = np.zeros((K, K))
    R[np.asarray(perm), np.arange(K)] = 1.0
    return R


def random_permutation(rng, K, non_identity=True):
    while True:
        perm = rng.permutation(K)
        if not non_identity or K == 1 or (perm != np.arange(K)).any():
            return perm


def masked_response(X, M, W_Q, W_K, W_V):
    """Causal softmax attention on ``E = X'M``, no scaling; used for the mask counterexample."""
    E = X.T @ M
    scores = E @ W_Q @ W_K.T @ E.T
    return masked_softmax_rows(scores, causal_mask(X.shape[1])).data @ E @ W_V


def check_equivariance(seed=0, trials=20):
    """``Y(XR) == R' Y(X)`` without mask; a causal mask breaks it for some ``R``."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for t in range(trials):
        N, K, d = 30, int(rng.integers(3, 9)), 4
        X = random_one_hot(rng, N, K)
        M, W_Q, W_K, W_V = (rng.standard_normal(s) for s in ((N, d), (d, d), (d, d), (d, d)))
        R = np.eye(K) if t == 0 else permutation_matrix(random_permutation(rng, K))
        lhs = vanilla_qkv_oracle(X @ R, M, W_Q, W_K, W_V)
        rhs = R.T @ vanilla_qkv_oracle(X, M, W_Q, W_K, W_V)
        worst = max(worst, _rel(lhs, rhs))

    # under the causal mask, search all K=3 permutations for a counterexample
    N, K, d = 10, 3, 4
    X = np.zeros((N, K))
    X[[2, 5, 7], [0, 1, 2]] = 1.0
    M, W_Q, W_K, W_V = (rng.standard_normal(s) for s in ((N, d), (d, d), (d, d), (d, d)))
    counterexample = None
    for perm in itertools.permutations(range(K)):
        if perm == tuple(range(K)):
            continue
        R = permutation_matrix(perm)
        gap = np.abs(masked_response(X @ R, M, W_Q, W_K, W_V) - R.T @ masked_response(X, M, W_Q, W_K, W_V)).max()
        if gap > BREAK_MIN_GAP:
            counterexample = {"perm": list(perm), "gap": float(gap)}
            break

    passed = worst < EQUIVARIANCE_TOL and counterexample is not None
    return CheckReport(
        "equivariance",
        passed,
        {"trials": trials, "max_rel_deviation": worst, "tol": EQUIVARIANCE_TOL,
         "masked_counterexample": counterexample},
    )


def _kernel_trial(X, W, M, C, R):
    lhs = sequence_response(X @ R, W, M, C)
    equality = _rel(lhs, R.T @ sequence_response(X, W, M, R @ C @ R.T))
    gap = float(np.abs(lhs - R.T @ sequence_response(X, W, M, C)).max())
    stabilized = bool(np.allclose(R @ C @ R.T, C, rtol=0.0, atol=1e-14))
    return equality, gap, stabilized


def check_kernel_breaks_equivariance(seed=0, trials=20):
    """Both sides of ``Y(XR, C) = R' Y(X, RCR') != R' Y(X, C)``."""
    rng = np.random.default_rng(seed)
    N, d = 40, 4
    worst_eq, min_gap, non_stab, fails = 0.0, np.inf, 0, 0
    notes = []
    for t in range(trials):
        K = int(rng.integers(4, 9))
        X = np.zeros((N, K))
        X[rng.choice(N, size=K, replace=False), np.arange(K)] = 1.0
        M = rng.standard_normal((N, d))
        W = M @ rng.standard_normal((d, d)) @ rng.standard_normal((d, d)).T @ M.T
        U = np.triu(rng.standard_normal((K, K)))
        L = np.tril(rng.standard_normal((K, K)))
        C = U @ L
        R = permutation_matrix(random_permutation(rng, K))
        equality, gap, stabilized = _kernel_trial(X, W, M, C, R)
        worst_eq = max(worst_eq, equality)
        if stabilized:
            notes.append(f"trial {t}: R stabilizes C, inequality skipped")
            continue
        non_stab += 1
        min_gap = min(min_gap, gap)
        if not (equality <= EQUIVARIANCE_TOL and gap > BREAK_MIN_GAP):
            fails += 1

    # identity kernel: every R stabilizes it, so only the equality clause applies
    K = 5
    X = random_one_hot(rng, N, K)
    M = rng.standard_normal((N, d))
    W = M @ M.T
    R = permutation_matrix(random_permutation(rng, K))
    eq_i, _, stab_i = _kernel_trial(X, W, M, np.eye(K), R)
    identity_control = {"equality": eq_i, "inequality": "vacuous" if stab_i else "applies"}

    # symmetric Toeplitz kernel under position reversal: a nontrivial stabilizer
    C_sym = toeplitz(rng.standard_normal(K))
    _, _, stab_t = _kernel_trial(X, W, M, C_sym, permutation_matrix(np.arange(K)[::-1]))

    passed = (
        fails == 0
        and worst_eq <= EQUIVARIANCE_TOL
        and non_stab >= MIN_NON_STABILIZING
        and stab_i
        and eq_i <= EQUIVARIANCE_TOL
        and stab_t
    )
    return CheckReport(
        "kernel_breaks_equivariance",
        passed,
        {
            "trials": trials,
            "non_stabilizing_trials": non_stab,
            "failed_trials": fails,
            "max_equality_deviation": worst_eq,
            "min_inequality_gap": None if non_stab == 0 else min_gap,
            "identity_control": identity_control,
            "toeplitz_reversal_stabilizer_detected": stab_t,
        },
        notes,
    )


CAUSALITY_CONFIGS = [(NOPE, None), (CLASSIC, None), (ROTARY, None)] + [
    (KERNEL, name) for name in ABLATION_MODES
]


def random_model(scheme, mode=DEFAULT_MODE, N=15, K=6, d=4, B=2, seed=0, scale=0.3):
    """Dropout-free model with every parameter pushed to a generic random point."""
    model = Model(ModelConfig(N=N, K=K, d=d, B=B, scheme=scheme, kernel_mode=mode, dropout=0.0, seed=seed))
    rng = np.random.default_rng([seed, 7])
    for p in model.parameters().values():
        p.data = p.data + scale * rng.standard_normal(p.shape)
    return model


def future_violations(forward, inputs, rng, resample):
    """Positions ``k`` whose outputs change when every position after ``k`` is resampled."""
    base = forward(inputs)
    K = inputs.shape[1]
    bad = []
    for k in range(K - 1):
        changed = inputs.copy()
        changed[:, k + 1:] = resample(changed[:, k + 1:], rng)
        if not np.array_equal(forward(changed)[:, : k + 1], base[:, : k + 1]):
            bad.append(k)
    return bad


def _resample_items(N):
    def resample(block, rng):
        return (block + rng.integers(1, N, size=block.shape)) % N
    return resample


def _resample_rows(block, rng):
    return block + rng.standard_normal(block.shape)


def check_causality(seed=0, trials=10):
    """Future positions never change earlier logits, exactly, for every scheme and mode."""
    N, K = 15, 6
    per_config = {}
    for scheme, mode_name in CAUSALITY_CONFIGS:
        label = scheme if mode_name is None else f"kernel[{mode_name}]"
        violations = 0
        for s in range(seed, seed + trials):
            mode = ABLATION_MODES[mode_name] if mode_name else DEFAULT_MODE
            model = random_model(scheme, mode, N=N, K=K, seed=s)
            rng = np.random.default_rng([s, 11])
            idx = rng.integers(0, N, size=(4, K))
            idx[0, :2] = N  # one left-padded window
            forward = lambda x: model.forward(x).data
            violations += len(future_violations(forward, idx, rng, _resample_items(N)))
        per_config[label] = violations

    # negative controls at the attention level on random embeddings
    rng = np.random.default_rng([seed, 13])
    d = 4
    weights = AttentionWeights.init(d, rng)
    E = rng.standard_normal((3, K, d))
    U_bad = np.triu(rng.standard_normal((K, K)))
    U_bad[3, 1] = 1.0
    L = np.tril(rng.standard_normal((K, K)))
    corrupt = future_violations(
        lambda x: kernel_attention(x, weights, U_bad, L, validate=False).data, E, rng, _resample_rows)
    multiplicative = future_violations(
        lambda x: causal_attention(x, weights, mask_mode="multiplicative").data, E, rng, _resample_rows)
    try:
        kernel_attention(E, weights, U_bad, L)
        rejected = False
    except InvariantError:
        rejected = True

    clean = all(v == 0 for v in per_config.values())
    passed = clean and bool(corrupt) and bool(multiplicative) and rejected
    return CheckReport(
        "causality",
        passed,
        {
            "seeds": trials,
            "violations": per_config,
            "corrupted_U_control_violations": corrupt,
            "multiplicative_mask_control_violations": multiplicative,
            "corrupted_U_rejected_by_validation": rejected,
        },
    )


def check_param_count():
    """Registered kernel parameters match the closed-form count for each mode and (B, K)."""
    mismatches = []
    n_cases = 0
    for name, mode in ABLATION_MODES.items():
        for B in (1, 2, 3):
            for K in (1, 5, 32):
                n_cases += 1
                model = Model(ModelConfig(N=7, K=K, d=4, B=B, scheme=KERNEL, kernel_mode=mode, dropout=0.0))
                registered = sum(p.data.size for p in model.kernel.parameters().values())
                census = param_census(model)["kernel"]
                expected = extra_param_count(B, K, mode)
                if not registered == census == expected:
                    mismatches.append({"mode": name, "B": B, "K": K, "registered": registered,
                                       "expected": expected})
    default_ok = all(
        param_census(Model(ModelConfig(N=7, K=K, d=4, B=B, dropout=0.0)))["kernel"]
        == B * K + K * (K + 1) // 2
        for B in (1, 2, 3) for K in (1, 5, 32)
    )
    return CheckReport(
        "param_count",
        not mismatches and default_ok,
        {"cases": n_cases, "mismatches": mismatches, "default_formula_holds": default_ok},
    )


def _weighted_sum(out, rng):
    return tsum(mul(out, rng.standard_normal(out.shape)))


def _op_cases(rng):
    """(label, params, loss_fn) triples covering each differentiable op."""
    K, d, N = 6, 4, 12
    cases = []

    A, B_ = Parameter(rng.standard_normal((3, 5)), "A"), Parameter(rng.standard_normal((5, 2)), "B")
    G = rng.standard_normal((3, 2))
    cases.append(("matmul", [A, B_], lambda G=G: tsum(mul(matmul(A, B_), G))))

    x = Parameter(rng.standard_normal((2, K, d)), "x")
    gain, bias = Parameter(rng.standard_normal(d), "gain"), Parameter(rng.standard_normal(d), "bias")
    G = rng.standard_normal((2, K, d))
    cases.append(("layer_norm", [x, gain, bias], lambda G=G: tsum(mul(layer_norm(x, gain, bias), G))))

    z = Parameter(rng.standard_normal((2, K, K)), "logits")
    G = rng.standard_normal((2, K, K))
    cases.append(("masked_softmax_rows", [z],
                  lambda G=G: tsum(mul(masked_softmax_rows(z, causal_mask(K)), G))))

    r = Parameter(rng.uniform(0.1, 1.0, (4, 3)) * rng.choice([-1, 1], (4, 3)), "r")
    G = rng.standard_normal((4, 3))
    cases.append(("relu", [r], lambda G=G: tsum(mul(relu(r), G))))

    table = Parameter(rng.standard_normal((N, d)), "table")
    idx = rng.integers(0, N + 1, (3, K))
    G = rng.standard_normal((3, K, d))
    cases.append(("embedding", [table], lambda G=G: tsum(mul(embedding(table, idx, pad=N), G))))

    lg = Parameter(rng.standard_normal((3, K, N)), "logits")
    tg = rng.integers(0, N, (3, K))
    valid = rng.random((3, K)) < 0.7
    valid[0, 0] = True
    cases.append(("cross_entropy", [lg], lambda: cross_entropy(lg, tg, valid)))

    q = Parameter(rng.standard_normal((2, K, d)), "q")
    G = rng.standard_normal((2, K, d))
    cases.append(("rope_rotate", [q], lambda G=G: tsum(mul(rope_rotate(q), G))))

    for structure in (TOEPLITZ, FULL):
        size = K if structure == TOEPLITZ else K * (K + 1) // 2
        pu = Parameter(rng.standard_normal(size), "u")
        pl = Parameter(rng.standard_normal(size), "l")
        Gu, Gl = rng.standard_normal((K, K)), rng.standard_normal((K, K))
        cases.append((f"materialize_upper[{structure}]", [pu],
                      lambda pu=pu, Gu=Gu, s=structure: tsum(mul(materialize_upper(pu, K, s), Gu))))
        cases.append((f"materialize_lower[{structure}]", [pl],
                      lambda pl=pl, Gl=Gl, s=structure: tsum(mul(materialize_lower(pl, K, s), Gl))))

    w = AttentionWeights.init(d, rng, prefix="attn")
    E = Parameter(rng.standard_normal((2, K, d)), "E")
    G = rng.standard_normal((2, K, d))
    for scheme in (NOPE, ROTARY):
        cases.append((f"causal_attention[{scheme}]", [E, *w.parameters().values()],
                      lambda s=scheme, G=G: tsum(mul(causal_attention(E, w, scheme=s), G))))
    pu = Parameter(rng.standard_normal(K), "u")
    pl = Parameter(rng.standard_normal(K * (K + 1) // 2), "l")
    cases.append(("kernel_attention", [E, pu, pl, *w.parameters().values()],
                  lambda G=G: tsum(mul(kernel_attention(
                      E, w, materialize_upper(pu, K), materialize_lower(pl, K)), G))))
    return cases


def full_model_grad_check(scheme, seed, mode=DEFAULT_MODE):
    """Finite-difference check of the whole CE loss for a d=4, K=6, B=2, N=12 model."""
    N, K = 12, 6
    model = random_model(scheme, mode, N=N, K=K, d=4, B=2, seed=seed)
    rng = np.random.default_rng([seed, 17])
    idx = rng.integers(0, N, (3, K))
    idx[0, :2] = N
    targets = rng.integers(0, N, (3, K))
    targets[0, :2] = N
    return grad_check(lambda: ce_loss(model(idx), targets, N), model.parameters(),
                      step=GRAD_STEP, tol=GRAD_TOL)


def check_gradients(seed=0, trials=3):
    """Tape gradients against central differences for every op and the full model."""
    table = {}
    for s in range(seed, seed + trials):
        rng = np.random.default_rng([s, 19])
        for label, params, fn in _op_cases(rng):
            rep = grad_check(fn, params, step=GRAD_STEP, tol=GRAD_TOL)
            table[label] = max(table.get(label, 0.0), rep.max_deviation)
        for scheme in (NOPE, CLASSIC, ROTARY, KERNEL):
            rep = full_model_grad_check(scheme, s)
            key = f"model[{scheme}]"
            table[key] = max(table.get(key, 0.0), rep.max_deviation)
    worst = max(table.values())
    return CheckReport("gradients", worst < GRAD_TOL,
                       {"tol": GRAD_TOL, "step": GRAD_STEP, "seeds": trials,
                        "max_deviation": worst, "per_op": table})


CHECKS = {
    "causality": lambda seed: check_causality(seed),
    "equivariance": lambda seed: check_equivariance(seed),
    "gradients": lambda seed: check_gradients(seed),
    "kernel_breaks_equivariance": lambda seed: check_kernel_breaks_equivariance(seed),
    "param_count": lambda seed: check_param_count(),
}


def run_all(seed=0):
    return [CHECKS[name](seed) for name in sorted(CHECKS)]


def format_text(reports):
    lines = []
    for rep in reports:
        lines.append(rep.line())
        for key, value in rep.details.items():
            lines.append(f"    {key}: {value}")
        for note in rep.notes:
            lines.append(f"    note: {note}")
    ok = all(r.passed for r in reports)
    lines.append(f"{sum(r.passed for r in reports)}/{len(reports)} checks passed" + ("" if ok else " -- FAILURES"))
    return "\n".join(lines)


def to_json(reports):
    return json.dumps({"passed": all(r.passed for r in reports),
                       "checks": [asdict(r) for r in reports]}, indent=2, default=float)
