"""Command-line driver for data generation, training, evaluation and reporting.

Output layout under ``--out`` (default: the config's ``out_dir``)::

    data/                      corpora, dev.trials, eval.trials
    pretrained/asv.ckpt        pre-trained sub-systems
    pretrained/cm.ckpt
    runs/<mode>_<cond>/<seed>/ config.txt, bundle/, scores.txt, report.txt, ...
    report.txt                 seed-averaged table
    report.kv                  the same numbers as flat key = value lines
    plots/                     images written by ``plot``
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

from . import __version__
from .bundle import load_asv, load_bundle, load_cm, save_asv, save_cm
from .config import ConfigError, ExperimentConfig, load_config, save_config
from .evaluation import EvalReport, evaluate, read_scores, report_table, write_sidecar
from .training import (
    OptimisationMode,
    TrainingCondition,
    evaluate_bundle,
    experiment_name,
    generate_data,
    load_data,
    pretrain_asv,
    pretrain_cm,
    run_experiment,
    write_report_kv,
)

log = logging.getLogger("sasv")

MODES = [m.value for m in OptimisationMode]
CONDITIONS = [c.value for c in TrainingCondition]


class CLIError(Exception):
    pass


def _parse_seeds(text: str) -> tuple:
    try:
        seeds = tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed list {text!r}") from None
    if not seeds:
        raise argparse.ArgumentTypeError("seed list must not be empty")
    if len(set(seeds)) != len(seeds):
        raise argparse.ArgumentTypeError("seed list contains duplicates")
    return seeds


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sasv", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file (defaults apply when omitted)")
    common.add_argument("--out", help="output directory (overrides out_dir from the config)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress at INFO level")
    select = argparse.ArgumentParser(add_help=False)
    select.add_argument("--seeds", type=_parse_seeds, help="comma-separated seed list (overrides the config)")
    select.add_argument("--mode", choices=MODES, help="restrict to one optimisation mode")
    select.add_argument("--condition", choices=CONDITIONS, help="restrict to one training condition")

    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    sub.add_parser("generate-data", parents=[common], help="write synthetic corpora and trial lists")
    sub.add_parser("pretrain", parents=[common], help="pre-train the ASV and CM sub-systems")
    sub.add_parser("train", parents=[common, select], help="train SASV systems and score the eval trials")
    sub.add_parser("evaluate", parents=[common, select], help="re-score eval trials with trained bundles")
    sub.add_parser("report", parents=[common], help="write the seed-averaged report table")
    sub.add_parser("reproduce-all", parents=[common, select], help="run every step end to end")
    plot = sub.add_parser("plot", parents=[common], help="score histograms and FAR/FRR curves")
    plot.add_argument("scores", nargs="*", help="score files (default: every run under --out)")
    return parser


class Context:
    def __init__(self, args):
        self.cfg = load_config(args.config) if args.config else ExperimentConfig()
        self.out = Path(args.out if args.out else self.cfg.out_dir)
        self.seeds = tuple(sorted(getattr(args, "seeds", None) or self.cfg.seeds))
        mode = getattr(args, "mode", None)
        cond = getattr(args, "condition", None)
        self.modes = [OptimisationMode(mode)] if mode else list(OptimisationMode)
        self.conditions = [TrainingCondition(cond)] if cond else list(TrainingCondition)

    @property
    def data_dir(self) -> Path:
        return self.out / "data"

    @property
    def pretrained_dir(self) -> Path:
        return self.out / "pretrained"

    @property
    def runs_dir(self) -> Path:
        return self.out / "runs"

    def grid(self):
        for cond in self.conditions:
            for mode in self.modes:
                yield mode, cond

    def data(self):
        return load_data(self.cfg, self.data_dir)

    def subsystems(self):
        asv_path = self.pretrained_dir / "asv.ckpt"
        cm_path = self.pretrained_dir / "cm.ckpt"
        for p in (asv_path, cm_path):
            if not p.exists():
                raise CLIError(f"missing pre-trained sub-system {p}; run pretrain first")
        return load_asv(asv_path), load_cm(cm_path)


def cmd_generate_data(ctx: Context) -> None:
    generate_data(ctx.cfg, ctx.data_dir)
    save_config(ctx.cfg, ctx.data_dir / "config.txt")
    print(f"wrote corpora and trial lists to {ctx.data_dir}")


def cmd_pretrain(ctx: Context) -> None:
    data = ctx.data()
    asv = pretrain_asv(data.pretrain, ctx.cfg.encoder, ctx.cfg.pretrain)
    save_asv(asv, ctx.pretrained_dir / "asv.ckpt")
    cm = pretrain_cm(data.base, ctx.cfg.encoder, ctx.cfg.pretrain)
    save_cm(cm, ctx.pretrained_dir / "cm.ckpt")
    save_config(ctx.cfg, ctx.pretrained_dir / "config.txt")
    print(f"wrote pre-trained sub-systems to {ctx.pretrained_dir}")


def cmd_train(ctx: Context) -> None:
    data = ctx.data()
    asv, cm = ctx.subsystems()
    for mode, cond in ctx.grid():
        start = time.perf_counter()
        summary = run_experiment(mode, cond, ctx.cfg, data, asv, cm, ctx.runs_dir, ctx.seeds)
        log.info("%s done in %.1fs", experiment_name(mode, cond), time.perf_counter() - start)
        print(f"{experiment_name(mode, cond)}: full SASV-EER {summary.get('full', 'sasv_eer'):.2f}%")


def cmd_evaluate(ctx: Context) -> None:
    bundles = {
        (mode, cond, seed): load_bundle(ctx.runs_dir / experiment_name(mode, cond) / str(seed) / "bundle")
        for mode, cond in ctx.grid() for seed in ctx.seeds
    }
    data = ctx.data()
    for mode, cond in ctx.grid():
        exp_dir = ctx.runs_dir / experiment_name(mode, cond)
        reports = []
        for seed in ctx.seeds:
            run_dir = exp_dir / str(seed)
            reports.append(evaluate_bundle(bundles[(mode, cond, seed)], data, run_dir))
        summary = EvalReport.mean(reports)
        write_report_kv(summary, exp_dir / "summary.txt")
        print(f"{experiment_name(mode, cond)}: full SASV-EER {summary.get('full', 'sasv_eer'):.2f}%")


def collect_reports(runs_dir: Path, seeds=None) -> dict:
    """Seed-averaged reports for every experiment directory with score files."""
    reports = {}
    for mode in OptimisationMode:
        for cond in TrainingCondition:
            exp_dir = runs_dir / experiment_name(mode, cond)
            if not exp_dir.is_dir():
                continue
            seed_dirs = sorted((d for d in exp_dir.iterdir() if d.is_dir() and d.name.isdigit()),
                               key=lambda d: int(d.name))
            if seeds is not None:
                seed_dirs = [d for d in seed_dirs if int(d.name) in seeds]
            per_seed = [evaluate(read_scores(d / "scores.txt")) for d in seed_dirs if (d / "scores.txt").exists()]
            if per_seed:
                reports[(mode.value, cond.value)] = EvalReport.mean(per_seed)
    return reports


def cmd_report(ctx: Context, seeds=None) -> None:
    reports = collect_reports(ctx.runs_dir, seeds)
    if not reports:
        raise CLIError(f"no score files under {ctx.runs_dir}; run train first")
    table = report_table(reports)
    (ctx.out / "report.txt").write_text(table, encoding="utf-8", newline="\n")
    write_sidecar(reports, ctx.out / "report.kv")
    sys.stdout.write(table)


def cmd_reproduce_all(ctx: Context) -> None:
    start = time.perf_counter()
    cmd_generate_data(ctx)
    cmd_pretrain(ctx)
    cmd_train(ctx)
    cmd_report(ctx, set(ctx.seeds))
    log.info("reproduce-all finished in %.1fs", time.perf_counter() - start)


def cmd_plot(ctx: Context, score_files) -> None:
    from .plots import emit_plots

    files = [Path(f) for f in score_files] or sorted(ctx.runs_dir.glob("*/*/scores.txt"))
    if not files:
        raise CLIError(f"no score files under {ctx.runs_dir}")
    for f in files:
        if not f.exists():
            raise CLIError(f"score file not found: {f}")
    written = emit_plots(files, ctx.out / "plots")
    print(f"wrote {len(written)} images to {ctx.out / 'plots'}")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        ctx = Context(args)
        if args.command == "generate-data":
            cmd_generate_data(ctx)
        elif args.command == "pretrain":
            cmd_pretrain(ctx)
        elif args.command == "train":
            cmd_train(ctx)
        elif args.command == "evaluate":
            cmd_evaluate(ctx)
        elif args.command == "report":
            cmd_report(ctx)
        elif args.command == "reproduce-all":
            cmd_reproduce_all(ctx)
        elif args.command == "plot":
            cmd_plot(ctx, args.scores)
    except (CLIError, ConfigError, FileNotFoundError, ValueError, KeyError, RuntimeError) as exc:
        message = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"sasv {args.command}: error: {message}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
