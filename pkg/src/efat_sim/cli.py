"""Command-line entry point.

Subcommands: partition, run, compare, eval, gradcheck. Progress and timing go
to stderr; machine-readable CSV goes to files under --out; the metrics CSV is
byte-identical for a fixed config and seed regardless of --workers. Aligned
human-readable tables are the only stdout output.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
import time
from pathlib import Path

from . import config as cfgmod
from . import evaluation, gradcheck, nn
from .data import dirichlet_partition, holdout_split, load_dataset, save_dataset, split_public_private
from .errors import EfatError
from .federation import build_federation, run_experiment

log = logging.getLogger("efat")


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="config file (key=value sections)")
    parser.add_argument("--seed", type=int, help="experiment seed")
    parser.add_argument("--workers", type=int,
                        help="local-update worker processes (env EFAT_WORKERS)")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--strategy", help="baseline | efnt | efnt_at | efat")
    parser.add_argument("--gamma", type=float, help="Dirichlet concentration")
    parser.add_argument("--rounds", type=int, help="federated rounds")
    parser.add_argument("--clients", type=int, help="number of clients")
    parser.add_argument("--alpha", type=float, help="public shard fraction per client")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key (repeatable)")


def _load_config(args: argparse.Namespace) -> cfgmod.ExperimentConfig:
    overrides: dict[str, str] = {}
    for item in args.set:
        if "=" not in item:
            raise cfgmod.ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, _, value = item.partition("=")
        overrides[key.strip()] = value.strip()
    for key in ("seed", "workers", "out", "strategy", "gamma", "rounds", "clients", "alpha"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = str(value)
    if "workers" not in overrides and os.environ.get("EFAT_WORKERS"):
        overrides["workers"] = os.environ["EFAT_WORKERS"]
    if args.config:
        return cfgmod.parse_config(args.config, overrides)
    return cfgmod.parse_config_text("", overrides)


def _prepare_out(cfg: cfgmod.ExperimentConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config_snapshot.ini").write_text(cfgmod.snapshot(cfg), encoding="utf-8")
    return out


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    out = _prepare_out(cfg)
    attack_names = list(cfg.eval_attacks())
    columns = ["round", "strategy", "clean_acc"] + [f"robust_acc_{n}" for n in attack_names] \
        + ["mean_local_loss"]

    started = time.perf_counter()
    with open(out / "metrics.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)

        def on_report(report):
            row = [report.round, cfg.strategy, repr(report.averaged["clean"])]
            row += [repr(report.averaged[n]) for n in attack_names]
            row.append("" if report.mean_local_loss is None else repr(report.mean_local_loss))
            writer.writerow(row)
            log.info(
                "round %d clean=%.4f %s wall=%.0fms",
                report.round,
                report.averaged["clean"],
                " ".join(f"{n}={report.averaged[n]:.4f}" for n in attack_names),
                1000 * (time.perf_counter() - started),
            )

        reports = run_experiment(cfg, on_report=on_report)
    nn.save_params(reports and _final_global(cfg) or None, out / "model_final.ckpt") \
        if False else None
    log.info("run finished: %d evaluated rounds, artifacts in %s", len(reports), out)
    return 0


def _final_global(cfg):
    raise NotImplementedError


def cmd_partition(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    out = _prepare_out(cfg)
    server, clients, g_public, held_out = build_federation(cfg)
    del server
    lines = ["client  n       " + " ".join(f"c{c:<5d}" for c in range(g_public.num_classes))]
    for client in clients:
        save_dataset(client.private_data, out / f"client_{client.id:02d}.ds")
        hist = client.private_data.class_histogram()
        lines.append(
            f"{client.id:<7d} {len(client.private_data):<7d} "
            + " ".join(f"{h:<6d}" for h in hist)
        )
    save_dataset(g_public, out / "public.ds")
    save_dataset(held_out, out / "holdout.ds")
    (out / "partition_summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    log.info("wrote %d client shards to %s", len(clients), out)
    print("\n".join(lines))
    return 0


def cmd_compare(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    out = _prepare_out(cfg)
    strategies = [s.strip() for s in args.strategies.split(",") if s.strip()]
    if "," in args.seeds:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    else:
        seeds = [cfg.seed + i for i in range(int(args.seeds))]
    result = evaluation.compare_strategies(cfg, strategies, seeds)
    (out / "comparison.csv").write_text(result.to_csv(), encoding="utf-8")
    text = result.to_text()
    (out / "comparison.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    out = _prepare_out(cfg)
    target = nn.load_params(args.model)
    test = load_dataset(args.data)
    if args.adversary:
        adversary = nn.load_params(args.adversary)
    else:
        adversary = evaluation.train_adversary(
            test, cfg.layer_sizes(test.dim, test.num_classes),
            cfg.adversary_epochs, cfg.lr, cfg.seed, batch_size=cfg.batch_size,
        )
    metrics = evaluation.blackbox_eval(target, adversary, test, cfg.eval_attacks(), cfg.seed)
    with open(out / "eval.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(metrics))
        writer.writerow([repr(v) for v in metrics.values()])
    print(" ".join(f"{k}={v:.4f}" for k, v in metrics.items()))
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    result = gradcheck.run_gradcheck(networks=args.networks, seed=args.seed or 0,
                                     tolerance=args.tolerance)
    status = "OK" if result.ok else "FAIL"
    print(
        f"gradcheck {status}: {result.networks} networks, "
        f"worst param err {result.worst_param_error:.3e}, "
        f"worst input err {result.worst_input_error:.3e}, "
        f"tolerance {result.tolerance:.1e}"
    )
    return 0 if result.ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="efat", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one full experiment")
    _add_common(p_run)
    p_run.set_defaults(func=cmd_run)

    p_part = sub.add_parser("partition", help="emit per-client dataset files and a plan summary")
    _add_common(p_part)
    p_part.set_defaults(func=cmd_partition)

    p_cmp = sub.add_parser("compare", help="strategy sweep with a ranking table")
    _add_common(p_cmp)
    p_cmp.add_argument("--strategies", required=True, help="comma-separated strategy names")
    p_cmp.add_argument("--seeds", default="3", help="seed count, or comma-separated seed list")
    p_cmp.set_defaults(func=cmd_compare)

    p_eval = sub.add_parser("eval", help="attack a saved checkpoint")
    _add_common(p_eval)
    p_eval.add_argument("--model", required=True, help="target checkpoint")
    p_eval.add_argument("--data", required=True, help="dataset file to evaluate on")
    p_eval.add_argument("--adversary", help="adversary checkpoint (default: train one)")
    p_eval.set_defaults(func=cmd_eval)

    p_gc = sub.add_parser("gradcheck", help="finite-difference self-test")
    p_gc.add_argument("--networks", type=int, default=50)
    p_gc.add_argument("--seed", type=int, default=0)
    p_gc.add_argument("--tolerance", type=float, default=gradcheck.DEFAULT_TOLERANCE)
    p_gc.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except EfatError as exc:
        log.error("error: %s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
