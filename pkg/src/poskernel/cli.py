"""Command-line entry point: ``poskernel <command> [options]``.

Exit codes: 0 ok, 1 usage error, 2 data or configuration error,
3 verification failure. Relative run directories are resolved against
``$POSKERNEL_RUN_ROOT`` when it is set.
"""

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import verify
from .checkpoint import load_checkpoint
from .data import (
    dataset_stats,
    five_core_filter,
    load_interactions,
    load_prepared,
    save_prepared,
    temporal_split,
)
from .errors import DataError, PosKernelError
from .evaluation import successive_evaluate
from .kernel import dump_factors
from .model import Model, ModelConfig, pad_window
from .synthetic import SyntheticSpec, write_synthetic
from .train import TrainConfig, train
from .util import append_jsonl, config_hash

log = logging.getLogger("poskernel")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_VERIFY = 0, 1, 2, 3
RUN_ROOT_ENV = "POSKERNEL_RUN_ROOT"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _run_path(path):
    root = os.environ.get(RUN_ROOT_ENV)
    if root and not os.path.isabs(path):
        return os.path.join(root, path)
    return path


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def cmd_prep(args):
    raw = load_interactions(args.input, args.user_col, args.item_col, args.time_col, args.sep)
    if not raw:
        raise DataError(f"{args.input}: no interactions")
    filtered = five_core_filter(raw, args.k_core)
    if not filtered:
        raise DataError(f"{args.input}: nothing survives {args.k_core}-core filtering")
    split = temporal_split(filtered, args.p1, args.p2)
    settings = {"input": os.path.basename(args.input), "k_core": args.k_core, "p1": args.p1, "p2": args.p2}
    stats = {
        "raw": dataset_stats(raw),
        "filtered": dataset_stats(filtered),
        "splits": {phase: len(getattr(split, phase)) for phase in ("train", "valid", "test")},
        "boundaries": list(split.boundaries),
    }
    save_prepared(split, args.out, meta={**settings, "config_hash": config_hash(settings)})
    _write_json(os.path.join(args.out, "stats.json"), stats)
    print(json.dumps(stats, indent=2, sort_keys=True))


def cmd_synth(args):
    spec = SyntheticSpec.from_json(args.spec) if args.spec else SyntheticSpec()
    if args.seed is not None:
        spec = SyntheticSpec(**{**spec.to_dict(), "seed": args.seed})
    write_synthetic(spec, args.out)
    digest = config_hash(spec.to_dict())
    _write_json(args.out + ".meta.json", {"spec": spec.to_dict(), "config_hash": digest})
    print(f"wrote {spec.n_users * spec.seq_len} interactions to {args.out} (config {digest})")


def _load_run_config(path):
    cfg = _read_json(path) if path else {}
    unknown = set(cfg) - {"model", "train"}
    if unknown:
        raise DataError(f"{path}: unknown top-level keys {sorted(unknown)}")
    return cfg.get("model", {}), cfg.get("train", {})


def cmd_train(args):
    split = load_prepared(args.data)
    model_cfg, train_cfg = _load_run_config(args.config)
    try:
        mconf = ModelConfig.from_dict({**model_cfg, "N": split.n_items})
        tconf = TrainConfig(**train_cfg)
    except TypeError as exc:
        raise DataError(f"bad config: {exc}") from None
    run_dir = _run_path(args.out)
    model = Model(mconf)
    result = train(model, split, tconf, run_dir=run_dir,
                   log=lambda e: log.info("epoch %(epoch)d loss %(train_loss).4f ndcg@10 %(valid_ndcg10).4f", e),
                   extra={"data": os.path.abspath(args.data)})
    print(json.dumps({"run": run_dir, "best_epoch": result.best_epoch,
                      "best_valid_ndcg10": result.best_ndcg, "epochs": len(result.history)}))


def _open_run(run):
    run_dir = _run_path(run)
    snapshot = _read_json(os.path.join(run_dir, "config.json"))
    model, meta = load_checkpoint(os.path.join(run_dir, "best"))
    return run_dir, snapshot, model, meta


def cmd_eval(args):
    run_dir, snapshot, model, _ = _open_run(args.run)
    split = load_prepared(snapshot["data"])
    result = successive_evaluate(model, split, args.phase, k=args.k, exclude_seen=args.exclude_seen)
    metrics = {**result.metrics, "config_hash": snapshot["config_hash"]}
    append_jsonl(os.path.join(run_dir, "metrics.jsonl"), metrics)
    print(json.dumps(metrics, sort_keys=True))


def cmd_verify(args):
    reports = verify.run_all(args.seed)
    print(verify.to_json(reports) if args.json else verify.format_text(reports))
    return EXIT_OK if all(r.passed for r in reports) else EXIT_VERIFY


def cmd_dump_kernel(args):
    run_dir, snapshot, model, _ = _open_run(args.run)
    if model.kernel is None:
        raise DataError(f"run {run_dir} uses scheme {model.config.scheme!r}, which has no kernel")
    paths = dump_factors(model.kernel, args.out)
    _write_json(os.path.join(args.out, "dump.json"),
                {"run": run_dir, "config_hash": snapshot["config_hash"], "files": [os.path.basename(p) for p in paths]})
    print("\n".join(paths))


def _resolve_user(split, user):
    if user in split.user_ids:
        return split.user_ids.index(user)
    raise DataError(f"unknown user {user!r}")


def cmd_dump_attention(args):
    run_dir, snapshot, model, _ = _open_run(args.run)
    split = load_prepared(snapshot["data"])
    uid = _resolve_user(split, args.user)
    history = [x.item for x in split.train if x.user == uid]
    window = pad_window(history, model.config.K, model.config.pad)
    maps = model.attention_maps(window)
    os.makedirs(args.out, exist_ok=True)
    files = []
    for b, weights in enumerate(maps):
        path = os.path.join(args.out, f"attention_block{b}.csv")
        np.savetxt(path, weights[0], delimiter=",", fmt="%.17g")
        files.append(os.path.basename(path))
    np.savetxt(os.path.join(args.out, "window.csv"), window[None, :], delimiter=",", fmt="%d")
    _write_json(os.path.join(args.out, "dump.json"),
                {"run": run_dir, "user": args.user, "config_hash": snapshot["config_hash"], "files": files})
    print("\n".join(os.path.join(args.out, f) for f in files))


def build_parser():
    parser = _Parser(prog="poskernel", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("prep", help="filter, remap and split an interaction CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k-core", type=int, default=5)
    p.add_argument("--p1", type=float, default=0.95)
    p.add_argument("--p2", type=float, default=0.97)
    p.add_argument("--user-col", default="user")
    p.add_argument("--item-col", default="item")
    p.add_argument("--time-col", default="timestamp")
    p.add_argument("--sep", default=",")
    p.set_defaults(func=cmd_prep)

    p = sub.add_parser("synth", help="generate a synthetic interaction CSV")
    p.add_argument("--spec", help="JSON file with SyntheticSpec fields")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model on a prepared dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--config", help='JSON with optional "model" and "train" sections')
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="successive evaluation of a run's best checkpoint")
    p.add_argument("--run", required=True)
    p.add_argument("--phase", choices=("valid", "test"), default="test")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--exclude-seen", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("verify", help="run the algebraic oracle suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("dump-kernel", help="write learned U and L factors as CSV")
    p.add_argument("--run", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dump_kernel)

    p = sub.add_parser("dump-attention", help="write per-block attention maps for one user")
    p.add_argument("--run", required=True)
    p.add_argument("--user", required=True, help="original user id")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dump_attention)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        code = args.func(args)
    except (PosKernelError, OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"poskernel {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK if code is None else code


if __name__ == "__main__":
    sys.exit(main())
