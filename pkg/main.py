"""
dopf — 分布式 AC-OPF 实验命令行
================================
ADMM / ALADIN 在分区 AC-OPF 上的收敛实验：运行、绘图、比较。

用法:
    dopf run --case data/case57.m --partition data/case57_4regions.txt \\
             --engine admm --init feasible --rho 1e4 --out runs/admm_1e4
    dopf plot runs/*/trace.csv --out figures/admm.svg
    dopf compare runs/*/trace.csv --out runs/summary

退出码: 0 正常终止, 2 未收敛, 3 求解失败, 4 输入错误, 1 其它错误。
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from pydantic import ValidationError

from config import DOPF_DEFAULT_CASE, DOPF_DEFAULT_PARTITION, DOPF_LOG_LEVEL, DOPF_WORKERS
from exceptions import DopfError, InputError
from schemas.config import ExperimentConfig
from tasks.compare import DEFAULT_THRESHOLDS, compare_report, write_summary
from tasks.experiment import load_traces, read_meta, run_experiment
from tasks.plotting import plot_traces

logger = logging.getLogger("dopf.main")


def _setup_logging(level: str) -> None:
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
    )


# ── 参数 ────────────────────────────────────────────────

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dopf", description="Distributed AC-OPF experiments (ADMM / ALADIN)")
    parser.add_argument("--log-level", default=DOPF_LOG_LEVEL, help="logging level (default from DOPF_LOG_LEVEL)")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment and write trace.csv / report.txt / meta.json")
    run.add_argument("--case", type=Path, default=DOPF_DEFAULT_CASE, help="MATPOWER case file")
    run.add_argument("--partition", type=Path, default=DOPF_DEFAULT_PARTITION, help="region partition file")
    run.add_argument("--engine", choices=("admm", "aladin"), default="admm")
    run.add_argument("--init", default="flat", help="flat | feasible | file:<path.npy>")
    run.add_argument("--rho", type=float, required=True)
    run.add_argument("--mu", type=float, default=None, help="ALADIN slack penalty (inf allowed)")
    run.add_argument("--sigma", choices=("identity", "paper-footnote"), default="identity")
    run.add_argument("--max-iter", type=int, default=None,
                     help="iteration limit (default 300 for ADMM, 50 for ALADIN)")
    run.add_argument("--min-iter", type=int, default=0, help="iterations before termination is checked")
    run.add_argument("--eps", type=float, default=1e-6, help="termination tolerance")
    run.add_argument("--stall-window", type=int, default=10)
    run.add_argument("--stall-tol", type=float, default=1e-6)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--perturb", type=float, default=0.0, help="Gaussian perturbation of z0 (0 = none)")
    run.add_argument("--workers", type=int, default=DOPF_WORKERS, help="threads for region subproblems")
    run.add_argument("--no-timings", action="store_true", help="write 0.0 for local_ms / coord_ms")
    run.add_argument("--out", type=Path, required=True, help="output directory")

    plot = sub.add_parser("plot", help="render traces as a four-panel SVG")
    plot.add_argument("traces", nargs="+", type=Path)
    plot.add_argument("--labels", nargs="*", default=None)
    plot.add_argument("--out", type=Path, required=True, help="output SVG path")

    compare = sub.add_parser("compare", help="iterations-to-threshold table for several traces")
    compare.add_argument("traces", nargs="+", type=Path)
    compare.add_argument("--f-star", type=float, default=None, help="override the reference objective")
    compare.add_argument("--thresholds", type=float, nargs="+", default=list(DEFAULT_THRESHOLDS))
    compare.add_argument("--out", type=Path, required=True, help="output directory")
    return parser


# ── 子命令 ──────────────────────────────────────────────

def cmd_run(args: argparse.Namespace) -> int:
    max_iter = args.max_iter if args.max_iter is not None else (300 if args.engine == "admm" else 50)
    config = ExperimentConfig(
        case_path=args.case,
        partition_path=args.partition,
        engine=args.engine,
        init=args.init,
        rho=args.rho,
        mu=args.mu,
        sigma=args.sigma,
        max_iter=max_iter,
        min_iter=args.min_iter,
        termination_eps=args.eps,
        output_dir=args.out,
        seed=args.seed,
        perturb=args.perturb,
        stall_window=args.stall_window,
        stall_tol=args.stall_tol,
        timings=not args.no_timings,
        workers=args.workers,
    )
    result = run_experiment(config)
    print(f"{result.meta.label}: status={result.status} iterations={result.meta.iterations} "
          f"stalled={'n/a' if result.stall is None else str(result.stall.stalled).lower()} -> {args.out}")
    return result.exit_code


def cmd_plot(args: argparse.Namespace) -> int:
    traces = load_traces(args.traces)
    path = plot_traces(traces, args.out, labels=args.labels or None)
    print(path)
    return 0


def cmd_compare(args: argparse.Namespace) -> int:
    traces = load_traces(args.traces)
    metas = [read_meta(path) for path in args.traces]
    summary = compare_report(traces, metas, f_star=args.f_star, thresholds=args.thresholds)
    out = write_summary(summary, args.out)
    print((out / "summary.txt").read_text(encoding="utf-8"), end="")
    return 0


_COMMANDS = {"run": cmd_run, "plot": cmd_plot, "compare": cmd_compare}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging(args.log_level)
    try:
        return _COMMANDS[args.command](args)
    except ValidationError as e:
        logger.error("invalid configuration: %s", e)
        return InputError.exit_code
    except DopfError as e:
        logger.error("%s: %s", e.error_code, e)
        return e.exit_code
    except Exception:
        logger.exception("unexpected error")
        return DopfError.exit_code


if __name__ == "__main__":
    sys.exit(main())
