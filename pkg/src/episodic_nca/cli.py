"""Command-line driver.

Exit codes: 0 success, 2 usage or configuration error, 1 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from dataclasses import fields, replace
from pathlib import Path

from . import experiments as X
from .config import ConfigError, ExperimentConfig, load_config
from .data import SyntheticSpec, generate_synthetic, import_text, write_dataset
from .embed import config_dict, load_checkpoint, save_checkpoint, train
from .evaluation import pool_reports
from .pairs import (
    batch_size_table,
    check_inequalities,
    extra_pairs,
    nca_pair_counts,
    pn_pair_counts,
)
from .sampler import BatchShapeConfig, shape_to_episode

log = logging.getLogger("episodic_nca")


class UsageError(Exception):
    pass


def write_csv(path, rows: list[dict], config_hash: str | None = None) -> None:
    if not rows:
        raise RuntimeError("nothing to write")
    if config_hash is not None:
        rows = [{**r, "config_hash": config_hash} for r in rows]
    keys = list(rows[0])
    for r in rows[1:]:
        keys += [k for k in r if k not in keys]
    out = sys.stdout if str(path) == "-" else open(path, "w", newline="")
    try:
        w = csv.DictWriter(out, fieldnames=keys, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    finally:
        if out is not sys.stdout:
            out.close()


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if getattr(args, "seed", None):
        cfg = cfg.with_seeds(args.seed)
    if getattr(args, "n_episodes", None):
        cfg = X.with_eval(cfg, n_episodes=args.n_episodes)
        cfg = replace(cfg, sweep=replace(cfg.sweep, n_episodes=args.n_episodes))
    if getattr(args, "workers", None):
        cfg = X.with_eval(cfg, workers=args.workers)
    return cfg


# --------------------------------------------------------------------- commands

def cmd_gen_data(args) -> None:
    spec = _config(args).synthetic if args.config else SyntheticSpec()
    overrides = {f.name: getattr(args, f.name) for f in fields(SyntheticSpec)
                 if getattr(args, f.name, None) is not None}
    if args.seed:
        overrides["seed"] = args.seed[0]
    try:
        spec = replace(spec, **overrides)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    write_dataset(args.out, generate_synthetic(spec))
    log.info("wrote %s (%d classes)", args.out, spec.num_classes)


def cmd_import_data(args) -> None:
    write_dataset(args.out, import_text(args.input, args.val_classes, args.test_classes, args.delimiter))


def cmd_train(args) -> None:
    cfg = _config(args)
    data = cfg.load_data()
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for seed in cfg.seeds:
        t0 = time.perf_counter()
        params, tlog = train(data.split("train"), cfg.loss, cfg.batching, cfg.model, cfg.optimizer, seed)
        save_checkpoint(out / f"checkpoint_seed{seed}.json", params,
                        {**config_dict(cfg.loss, cfg.batching, cfg.model, cfg.optimizer),
                         "config_hash": cfg.config_hash()}, seed)
        rows.extend(tlog.rows())
        log.info("seed %d: loss %.4f -> %.4f in %.1fs", seed, tlog.epoch_loss[0],
                 tlog.epoch_loss[-1], time.perf_counter() - t0)
    write_csv(out / "train_log.csv", rows, cfg.config_hash())


def cmd_eval(args) -> None:
    cfg = _config(args)
    if args.adapt:
        cfg = X.with_eval(cfg, adapt=args.adapt)
    if args.classifiers:
        cfg = X.with_eval(cfg, classifiers=tuple(args.classifiers))
    if args.shots:
        cfg = X.with_eval(cfg, shots=tuple(args.shots))
    if cfg.eval.adapt != "none" and min(cfg.eval.shots) < 2:
        raise UsageError(f"--adapt {cfg.eval.adapt} needs at least 2 shots per class; "
                         "pass --shots or set [eval] shots accordingly")
    data = cfg.load_data()
    by_setting: dict = {}
    rows = []
    for ckpt in args.checkpoint:
        params, meta = load_checkpoint(ckpt)
        if params.dims[0] != data.dim:
            raise RuntimeError(f"{ckpt}: model expects {params.dims[0]} features, dataset has {data.dim}")
        seed = meta["seed"] if meta["seed"] is not None else 0
        for (clf, n), rep in X.evaluate_model(params, data, cfg, seed).items():
            rows.append({**rep.csv_row(), "adapt": cfg.eval.adapt, "checkpoint": Path(ckpt).name})
            by_setting.setdefault((clf, n), []).append(rep)
    if len(args.checkpoint) > 1:
        for reps in by_setting.values():
            rows.append({**pool_reports(reps).csv_row(), "adapt": cfg.eval.adapt, "checkpoint": "pooled"})
    write_csv(args.out, rows, cfg.config_hash())


def _pairs_rows(w: int, n: int, m: int, label: str) -> list[dict]:
    pn, nca = pn_pair_counts(w, n, m), nca_pair_counts(w, n, m)
    rep = check_inequalities(w, n, m)
    status = "ok" if rep.ok else "VIOLATED"
    if rep.positives_equal:
        status += " (positives equal)"
    common = {"setting": label, "w": w, "n": n, "m": m}
    return [
        {**common, "method": "PN", "positives": pn.positives, "negatives": pn.negatives,
         "total": pn.total, "extra_pairs": "", "inequalities": ""},
        {**common, "method": "NCA", "positives": nca.positives, "negatives": nca.negatives,
         "total": nca.total, "extra_pairs": extra_pairs(w, n, m), "inequalities": status},
    ]


def cmd_pairs(args) -> None:
    if args.mode == "table":
        if args.values:
            raise UsageError("table mode takes no values")
        rows = [
            {"rank": i + 1, "method": name, "positives": c.positives,
             "negatives": c.negatives, "total": c.total}
            for i, (name, c) in enumerate(batch_size_table(args.batch_size))
        ]
    else:
        if len(args.values) != 3:
            raise UsageError(f"{args.mode} mode needs exactly three integers")
        try:
            if args.mode == "wnm":
                w, n, m = args.values
                label = f"w={w} n={n} m={m}"
            else:
                n_, a, b = args.values
                ep = shape_to_episode(BatchShapeConfig(n_, a, b))
                w, n, m = ep.ways, ep.shots, ep.queries
                label = f"n={n_} a={a} b={b}"
            rows = _pairs_rows(w, n, m, label)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    if args.csv:
        write_csv("-", rows)
        return
    keys = list(rows[0])
    widths = [max(len(k), *(len(str(r[k])) for r in rows)) for k in keys]
    print("  ".join(k.rjust(wd) for k, wd in zip(keys, widths)))
    for r in rows:
        print("  ".join(str(r[k]).rjust(wd) for k, wd in zip(keys, widths)))


def cmd_ablate(args) -> None:
    cfg = _config(args)
    if args.family:
        cfg = replace(cfg, sweep=replace(cfg.sweep, family=args.family))
    rows = X.ablate(cfg, batch_sizes=args.batch_sizes)
    write_csv(args.out, rows, cfg.config_hash())


def cmd_sweep_batch(args) -> None:
    cfg = _config(args)
    write_csv(args.out, X.sweep_batch(cfg, batch_sizes=args.batch_sizes), cfg.config_hash())


def cmd_sweep_fraction(args) -> None:
    cfg = _config(args)
    if args.fractions and any(not 0 < f <= 1 for f in args.fractions):
        raise UsageError("fractions must lie in (0, 1]")
    if args.batch_size:
        cfg = replace(cfg, sweep=replace(cfg.sweep, fraction_batch_size=args.batch_size))
    write_csv(args.out, X.sweep_fraction(cfg, args.fractions), cfg.config_hash())


# ----------------------------------------------------------------------- parser

def _common(p, seeds=True, episodes=True):
    p.add_argument("--config", help="experiment config file (INI sections)")
    if seeds:
        p.add_argument("--seed", type=int, action="append",
                       help="seed; repeat for several (overrides [run] seeds)")
    if episodes:
        p.add_argument("--n-episodes", type=int, help="evaluation episodes per setting")
        p.add_argument("--workers", type=int, help="evaluation worker threads")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="episodic-nca", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic dataset file")
    _common(p, episodes=False)
    p.add_argument("--out", required=True)
    for f in fields(SyntheticSpec):
        if f.name != "seed":
            p.add_argument("--" + f.name.replace("_", "-"), dest=f.name,
                           type=int if f.type in ("int", int) else float)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("import-data", help="convert 'label,f1,...,fd' text to a dataset file")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--val-classes", type=int, default=0)
    p.add_argument("--test-classes", type=int, required=True)
    p.add_argument("--delimiter", default=",")
    p.set_defaults(func=cmd_import_data)

    p = sub.add_parser("train", help="train one model per seed")
    _common(p, episodes=False)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate checkpoints on few-shot episodes")
    _common(p, seeds=False)
    p.add_argument("--checkpoint", required=True, nargs="+")
    p.add_argument("--out", default="-")
    p.add_argument("--adapt", choices=("none", "support-finetune", "mahalanobis"))
    p.add_argument("--classifiers", nargs="+", choices=("centroid", "knn", "soft"))
    p.add_argument("--shots", type=int, nargs="+", help="shots per class (overrides [eval] shots)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pairs", help="positive/negative pair counts")
    p.add_argument("mode", choices=("table", "wnm", "shape"),
                   help="table: batch-size comparison; wnm: W N M; shape: N A B")
    p.add_argument("values", type=int, nargs="*")
    p.add_argument("--batch-size", type=int, default=512, help="table mode batch size")
    p.add_argument("--csv", action="store_true")
    p.set_defaults(func=cmd_pairs)

    p = sub.add_parser("ablate", help="ablation grid over batch sizes")
    _common(p)
    p.add_argument("--out", default="-")
    p.add_argument("--batch-sizes", type=int, nargs="+")
    p.add_argument("--family", choices=("proto", "matching"))
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sweep-batch", help="NCA vs episodic PN configurations per batch size")
    _common(p)
    p.add_argument("--out", default="-")
    p.add_argument("--batch-sizes", type=int, nargs="+")
    p.set_defaults(func=cmd_sweep_batch)

    p = sub.add_parser("sweep-fraction", help="NCA with a fraction of pairs, plus PN reference points")
    _common(p)
    p.add_argument("--out", default="-")
    p.add_argument("--fractions", type=float, nargs="+")
    p.add_argument("--batch-size", type=int)
    p.set_defaults(func=cmd_sweep_fraction)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"{parser.prog} {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.debug("failure", exc_info=True)
        print(f"{parser.prog} {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
