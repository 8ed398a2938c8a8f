"""
实验流水线: 构建 OPF → 参考解 x* → 初始化 → 运行引擎 → 写出 trace.csv / report.txt / meta.json。

退出码
------
0  正常终止（收敛）
2  达到 max_iter 未收敛
3  求解失败（局部 NLP、协调 QP、初始化）
4  输入错误（算例、划分、配置、轨迹文件）
"""

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

import numpy as np

from exceptions import DopfError, InputError, TraceError
from schemas.config import AdmmConfig, AladinConfig, ExperimentConfig
from schemas.report import RunMeta
from schemas.trace import CSV_COLUMNS, ConvergenceTrace, StallReport, TraceRow
from services.admm import admm_run, detect_stall
from services.aladin import aladin_run
from services.engine import STATUS_CONVERGED, STATUS_FAILED, STATUS_MAX_ITER, EngineRun
from services.nlp import IterateState
from services.opf_model import OpfModel, feasible_init, load_opf_model
from tasks.cache import ReferenceSolution, reference_solution

logger = logging.getLogger("dopf.tasks.experiment")

EXIT_OK = 0
EXIT_MAX_ITER = 2

TRACE_FILE = "trace.csv"
REPORT_FILE = "report.txt"
META_FILE = "meta.json"

# 距离 x* 超过该值但 KKT 残差很小时，报告为另一个局部极小点
_ALTERNATIVE_DIST = 1e-4
_ALTERNATIVE_KKT = 1e-6


# ── trace.csv ───────────────────────────────────────────

def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    return repr(float(value))


def write_trace_csv(trace: ConvergenceTrace, path, timings: bool = True) -> Path:
    """浮点数按 repr 写出（最短可精确回读）；缺失的参考距离为空单元。"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in trace.rows:
            values = row.model_dump(include=set(CSV_COLUMNS))
            if not timings:
                values["local_ms"] = values["coord_ms"] = 0.0
            writer.writerow([_cell(values[name]) for name in CSV_COLUMNS])
    return path


def read_trace_csv(path, label: Optional[str] = None) -> ConvergenceTrace:
    path = Path(path)
    if not path.is_file():
        raise TraceError(f"trace file not found: {path}")
    with path.open(newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
            raise TraceError(f"{path}: header must be {','.join(CSV_COLUMNS)}")
        rows = []
        for lineno, record in enumerate(reader, start=2):
            try:
                rows.append(TraceRow(
                    k=int(record["k"]),
                    consensus_gap=float(record["consensus_gap"]),
                    objective=float(record["objective"]),
                    dist_to_ref=float(record["dist_to_ref"]) if record["dist_to_ref"] else None,
                    violation=float(record["violation"]),
                    primal_gap=float(record["primal_gap"]),
                    local_ms=float(record["local_ms"]),
                    coord_ms=float(record["coord_ms"]),
                ))
            except (TypeError, ValueError) as e:
                raise TraceError(f"{path}: malformed row at line {lineno}: {e}")
    if not rows:
        raise TraceError(f"{path}: trace is empty")
    try:
        return ConvergenceTrace(label=label if label is not None else path.parent.name, rows=rows)
    except ValueError as e:
        raise TraceError(f"{path}: {e}")


def read_meta(csv_path) -> Optional[RunMeta]:
    """读取 trace.csv 同目录的 meta.json，不存在时返回 None。"""
    meta_path = Path(csv_path).with_name(META_FILE)
    if not meta_path.is_file():
        return None
    try:
        return RunMeta.model_validate_json(meta_path.read_text(encoding="utf-8"))
    except ValueError as e:
        raise TraceError(f"{meta_path}: {e}")


# ── 实验 ────────────────────────────────────────────────

@dataclass
class ExperimentResult:
    trace: ConvergenceTrace
    status: str
    exit_code: int
    meta: RunMeta
    stall: Optional[StallReport] = None
    reference: Optional[ReferenceSolution] = None
    error: Optional[DopfError] = None


def experiment_label(config: ExperimentConfig) -> str:
    label = f"{config.engine} rho={config.rho:g}"
    if config.engine == "aladin":
        label += f" mu={config.mu:g}"
    init = "file" if config.init_file is not None else config.init
    return f"{label} init={init}"


def _initial_state(model: OpfModel, config: ExperimentConfig) -> IterateState:
    problem = model.problem
    if config.init == "flat":
        state = model.flat_start(config.engine)
    elif config.init == "feasible":
        state = feasible_init(model, config.engine)
    else:
        z_full = np.load(config.init_file, allow_pickle=False)
        if z_full.shape != (problem.n_x,):
            raise InputError(f"init file holds shape {z_full.shape}, expected ({problem.n_x},)")
        state = IterateState.initial(problem, problem.split(z_full), config.engine)

    if config.perturb > 0:
        rng = np.random.default_rng(config.seed)
        z = []
        for region, zi in zip(problem.regions, state.z):
            noisy = zi + config.perturb * rng.standard_normal(zi.size)
            z.append(np.clip(noisy, region.lower, region.upper))
        state = IterateState.initial(problem, z, config.engine)
    return state


def _engine_config(config: ExperimentConfig):
    common = dict(
        rho=config.rho,
        max_iter=config.max_iter,
        termination_eps=config.termination_eps,
        workers=config.workers,
    )
    if config.engine == "admm":
        # 停滞检测需要完整窗口
        min_iter = min(config.max_iter, max(config.min_iter, config.stall_window))
        if min_iter > config.min_iter:
            logger.info("[%s] min_iter raised from %d to %d so stall detection sees a full window",
                        experiment_label(config), config.min_iter, min_iter)
        return AdmmConfig(**common, min_iter=min_iter, stall_window=config.stall_window,
                          stall_tol=config.stall_tol)
    return AladinConfig(**common, mu=config.mu, min_iter=config.min_iter)


def _stall_report(trace: ConvergenceTrace, config: ExperimentConfig) -> Optional[StallReport]:
    if len(trace) < config.stall_window:
        return None
    window = AdmmConfig(rho=config.rho, stall_window=config.stall_window, stall_tol=config.stall_tol)
    return detect_stall(trace, window)


def _fmt(value) -> str:
    if value is None:
        return "n/a"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def render_report(meta: RunMeta, trace: ConvergenceTrace, stall: Optional[StallReport],
                  reference: Optional[ReferenceSolution]) -> str:
    """report.txt：每行 key=value，便于脚本读取。"""
    last = trace.rows[-1] if len(trace) else None
    lines = [
        ("label", meta.label),
        ("engine", meta.engine),
        ("init", meta.init),
        ("sigma", meta.sigma),
        ("rho", meta.rho),
        ("mu", meta.mu),
        ("fingerprint", meta.fingerprint),
        ("status", meta.status),
        ("exit_code", meta.exit_code),
        ("error_code", meta.error_code),
        ("error_message", meta.error_message),
        ("iterations", meta.iterations),
        ("f_star", meta.f_star),
        ("reference_kkt", meta.reference_kkt),
        ("final_objective", None if last is None else last.objective),
        ("objective_gap", None if last is None or meta.f_star is None else abs(last.objective - meta.f_star)),
        ("final_consensus_gap", None if last is None else last.consensus_gap),
        ("final_primal_gap", None if last is None else last.primal_gap),
        ("final_violation", None if last is None else last.violation),
        ("final_dist_to_ref", None if last is None else last.dist_to_ref),
        ("final_stationarity", None if last is None else last.stationarity),
        ("stalled", None if stall is None else stall.stalled),
        ("stall_since", None if stall is None else stall.since_iter),
        ("stall_max_step", None if stall is None else stall.max_step),
        ("stall_stationarity", None if stall is None else stall.stationarity),
        ("stall_objective_drift", None if stall is None else stall.objective_drift),
    ]
    text = "".join(f"{key}={_fmt(value)}\n" for key, value in lines)
    if (last is not None and reference is not None and last.dist_to_ref is not None
            and last.dist_to_ref > _ALTERNATIVE_DIST and last.stationarity is not None
            and last.stationarity <= _ALTERNATIVE_KKT and last.violation <= _ALTERNATIVE_KKT):
        text += "note=KKT-certified local minimizer different from the centralized reference\n"
    return text


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """
    执行一次实验并写出 trace.csv / report.txt / meta.json。
    DopfError 不向外抛出：写入报告的 error_code，并体现在退出码中。
    """
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    label = experiment_label(config)
    logger.info("[%s] starting experiment, output in %s", label, out_dir)

    trace = ConvergenceTrace(label=label)
    fingerprint = ""
    reference: Optional[ReferenceSolution] = None
    stall: Optional[StallReport] = None
    run: Optional[EngineRun] = None
    error: Optional[DopfError] = None

    try:
        model = load_opf_model(config.case_path, config.partition_path, config.sigma)
        fingerprint = model.fingerprint
        try:
            reference = reference_solution(model)
        except DopfError as e:
            logger.warning("[%s] centralized reference solve failed, distances unavailable: %s", label, e)

        initial = _initial_state(model, config)
        engine_config = _engine_config(config)
        ref_x = None if reference is None else reference.x
        if config.engine == "admm":
            run = admm_run(model.problem, initial, engine_config, reference=ref_x, label=label)
        else:
            run = aladin_run(model.problem, initial, engine_config, reference=ref_x, label=label)
        trace = run.trace
        error = run.error
        stall = _stall_report(trace, config)
    except DopfError as e:
        logger.error("[%s] experiment failed: %s", label, e, exc_info=True)
        error = e

    if error is not None:
        status, exit_code = STATUS_FAILED, error.exit_code
    elif run is not None and run.status == STATUS_CONVERGED:
        status, exit_code = STATUS_CONVERGED, EXIT_OK
    else:
        status, exit_code = STATUS_MAX_ITER, EXIT_MAX_ITER

    meta = RunMeta(
        label=label,
        engine=config.engine,
        init="file" if config.init_file is not None else config.init,
        sigma=config.sigma,
        rho=config.rho,
        mu=config.mu if config.engine == "aladin" else None,
        fingerprint=fingerprint,
        f_star=None if reference is None else reference.objective,
        reference_kkt=None if reference is None else reference.kkt_max,
        status=status,
        exit_code=exit_code,
        error_code=None if error is None else error.error_code,
        error_message=None if error is None else " ".join(str(error).split()),
        iterations=len(trace),
        stall=stall,
    )

    write_trace_csv(trace, out_dir / TRACE_FILE, timings=config.timings)
    (out_dir / REPORT_FILE).write_text(render_report(meta, trace, stall, reference), encoding="utf-8")
    (out_dir / META_FILE).write_text(meta.model_dump_json(indent=2) + "\n", encoding="utf-8")
    logger.info("[%s] finished: status=%s iterations=%d exit_code=%d%s", label, status, len(trace), exit_code,
                "" if stall is None else f" stalled={stall.stalled}")
    return ExperimentResult(trace=trace, status=status, exit_code=exit_code, meta=meta,
                            stall=stall, reference=reference, error=error)


def load_traces(paths: List[Path]) -> List[ConvergenceTrace]:
    """读取多个 trace.csv，标签优先取 meta.json 中的 label。"""
    traces = []
    for path in paths:
        meta = read_meta(path)
        traces.append(read_trace_csv(path, label=meta.label if meta is not None else None))
    return traces

