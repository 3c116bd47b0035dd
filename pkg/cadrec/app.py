"""Command-line entry point: train, eval, split, synth, diagnose and sweep."""

import argparse
import logging
import sys
from pathlib import Path

from cadrec.core.config import (
    ABLATIONS,
    RunConfig,
    SynthConfig,
    load_run_config,
    load_synth_config,
    settings,
)
from cadrec.core.error_handler import EXIT_OK, ConfigError, exit_code_for
from cadrec.data.interactions import save_interactions
from cadrec.data.persistence import write_config_snapshot, write_ground_truth
from cadrec.services import pipeline
from cadrec.services.synth import generate, generate_sweep

logger = logging.getLogger(__name__)


def configure_logging(level: str | None = None) -> None:
    """Root logger setup; verbosity from CADREC_LOG unless given."""
    name = (level or settings.log_level).upper()
    logging.basicConfig(
        level=getattr(logging, name, logging.INFO),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )


def _parse_assignments(pairs: list[str] | None, flag: str) -> dict[str, str]:
    values: dict[str, str] = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigError(f"{flag} expects key=value, got '{pair}'", field=pair)
        key, value = (part.strip() for part in pair.split("=", 1))
        values[key] = value
    return values


def _run_config(args: argparse.Namespace) -> RunConfig:
    overrides: dict = _parse_assignments(args.set, "--set")
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "data", None):
        overrides["data_path"] = args.data
    if getattr(args, "ablate", None):
        overrides["ablations"] = args.ablate
    return load_run_config(args.config, overrides)


def _out_dir(args: argparse.Namespace, config_out: str | None = None) -> Path:
    if args.out:
        return Path(args.out)
    if config_out:
        return Path(config_out)
    return Path(settings.default_out_dir) / args.command


def cmd_train(args: argparse.Namespace) -> int:
    config = _run_config(args)
    out = _out_dir(args, config.out_dir)
    result = pipeline.train(config, out_dir=out, threads=args.threads)
    report = result.summary.test_report
    logger.info(
        f"Training finished: best epoch {result.summary.best_epoch}, "
        f"val N@{pipeline.log_k(config)}={result.summary.best_val_ndcg:.4f}, outputs in {out}"
    )
    if report is not None:
        for row in report.metrics:
            print(f"recall@{row.k}={row.recall:.6f} ndcg@{row.k}={row.ndcg:.6f}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    config = _run_config(args)
    out = _out_dir(args, config.out_dir)
    report = pipeline.evaluate_checkpoint(config, args.checkpoint, out, args.split, args.threads)
    for row in report.metrics:
        print(f"recall@{row.k}={row.recall:.6f} ndcg@{row.k}={row.ndcg:.6f}")
    return EXIT_OK


def cmd_split(args: argparse.Namespace) -> int:
    config = _run_config(args)
    out = _out_dir(args, config.out_dir)
    data = pipeline.prepare_split(config, out)
    print(f"users={len(data.split)} items={data.split.num_items} train_events={data.split.train_events}")
    return EXIT_OK


def _write_corpus(cfg: SynthConfig, log, truth, target: Path) -> None:
    save_interactions(log, target / "interactions.tsv")
    write_ground_truth(truth, target / "ground_truth.txt")
    write_config_snapshot(cfg, target)


def cmd_synth(args: argparse.Namespace) -> int:
    overrides: dict = _parse_assignments(args.set, "--set")
    if args.seed is not None:
        overrides["seed"] = args.seed
    cfg = load_synth_config(args.config, overrides)
    out = _out_dir(args)
    if args.alpha:
        for alpha, log, truth in generate_sweep(cfg, args.alpha):
            target = out / f"alpha_{alpha:g}"
            _write_corpus(cfg.model_copy(update={"alpha_pop": alpha}), log, truth, target)
            print(f"alpha_pop={alpha:g} events={log.num_events} -> {target}")
        return EXIT_OK
    log, truth = generate(cfg)
    _write_corpus(cfg, log, truth, out)
    print(f"events={log.num_events} -> {out}")
    return EXIT_OK


def cmd_diagnose(args: argparse.Namespace) -> int:
    config = _run_config(args)
    out = _out_dir(args, config.out_dir)
    result = pipeline.diagnose(config, args.checkpoint, args.compare, out, args.threads)
    for row in result.report.diagnostics:
        print(f"{row.k},{row.sd_top:.6f},{row.sd_bottom:.6f}")
    if result.report.pop_correlation is not None:
        print(f"pop_correlation={result.report.pop_correlation.rho:.6f}")
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    config = _run_config(args)
    out = _out_dir(args, config.out_dir)
    grid: dict[str, list[float]] = {}
    for name, values in _parse_assignments(args.grid, "--grid").items():
        try:
            grid[name] = [float(v) for v in values.split(",") if v.strip()]
        except ValueError as e:
            raise ConfigError(f"--grid {name}: values must be numbers", field=name) from e
    if not grid:
        raise ConfigError("sweep needs at least one --grid name=v1,v2,...", field="grid")
    rows = pipeline.sweep(config, grid, out, args.threads)
    for row in rows:
        print(f"{row.params} recall={row.recall:.6f} ndcg={row.ndcg:.6f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cadrec",
        description="Hypergraph recommender with popularity and individual-bias disentanglement",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument(
        "--threads", type=int, default=settings.threads, help="worker threads (default: CPU count)"
    )
    common.add_argument("--out", help="output directory")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")

    run = argparse.ArgumentParser(add_help=False, parents=[common])
    run.add_argument("--data", help="interaction file (overrides data_path)")
    run.add_argument("--ablate", action="append", choices=ABLATIONS, help="apply an ablation")

    commands = parser.add_subparsers(dest="command", required=True)

    train = commands.add_parser("train", parents=[run], help="train and evaluate a model")
    train.set_defaults(handler=cmd_train)

    evaluate = commands.add_parser("eval", parents=[run], help="evaluate a checkpoint")
    evaluate.add_argument("--checkpoint", required=True)
    evaluate.add_argument("--split", choices=["val", "test"], default="test")
    evaluate.set_defaults(handler=cmd_eval)

    split = commands.add_parser("split", parents=[run], help="write the split manifest and graph")
    split.set_defaults(handler=cmd_split)

    synth = commands.add_parser("synth", parents=[common], help="generate a synthetic corpus")
    synth.add_argument("--alpha", type=float, action="append", help="alpha_pop sweep value")
    synth.set_defaults(handler=cmd_synth)

    diagnose = commands.add_parser("diagnose", parents=[run], help="popularity-bias diagnostics")
    diagnose.add_argument("--checkpoint", required=True)
    diagnose.add_argument("--compare", help="second checkpoint for a paired sd_gap table")
    diagnose.set_defaults(handler=cmd_diagnose)

    sweep = commands.add_parser("sweep", parents=[run], help="train over a parameter grid")
    sweep.add_argument("--grid", action="append", metavar="NAME=V1,V2", help="grid axis")
    sweep.set_defaults(handler=cmd_sweep)
    return parser


def main(argv: list[str] | None = None) -> int:
    configure_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except Exception as e:
        return exit_code_for(e, context=args.command)


if __name__ == "__main__":
    sys.exit(main())
