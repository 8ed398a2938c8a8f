"""
集中式参考解 x* 的磁盘缓存，以算例 + 划分文本的指纹为键。
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from config import DOPF_CACHE_DIR
from schemas.config import LocalSolverOptions
from services.opf_model import OpfModel, solve_reference

logger = logging.getLogger("dopf.tasks.cache")


@dataclass(frozen=True, eq=False)
class ReferenceSolution:
    x: np.ndarray
    objective: float
    # 全问题 KKT 残差的最大分量
    kkt_max: float
    fingerprint: str
    cached: bool = False


def cache_path(fingerprint: str, cache_dir: Optional[Path] = None) -> Path:
    return Path(cache_dir or DOPF_CACHE_DIR) / f"{fingerprint}.npz"


def load_reference(model: OpfModel, cache_dir: Optional[Path] = None) -> Optional[ReferenceSolution]:
    path = cache_path(model.fingerprint, cache_dir)
    if not path.is_file():
        return None
    try:
        with np.load(path, allow_pickle=False) as data:
            x = np.array(data["x"], dtype=float)
            objective = float(data["objective"])
            kkt_max = float(data["kkt_max"])
            fingerprint = str(data["fingerprint"])
    except (OSError, KeyError, ValueError) as e:
        logger.warning("[%s] ignoring unreadable reference cache %s: %s", model.fingerprint[:12], path, e)
        return None
    if fingerprint != model.fingerprint or x.shape != (model.problem.n_x,):
        logger.warning("[%s] stale reference cache %s, recomputing", model.fingerprint[:12], path)
        return None
    return ReferenceSolution(x=x, objective=objective, kkt_max=kkt_max, fingerprint=fingerprint, cached=True)


def store_reference(solution: ReferenceSolution, cache_dir: Optional[Path] = None) -> Path:
    path = cache_path(solution.fingerprint, cache_dir)
    path.parent.mkdir(parents=True, exist_ok=True)
    # 先写临时文件再替换，避免并发运行读到半个文件
    tmp = path.with_name(path.stem + ".tmp.npz")
    np.savez(tmp, x=solution.x, objective=solution.objective, kkt_max=solution.kkt_max,
             fingerprint=solution.fingerprint)
    tmp.replace(path)
    return path


def reference_solution(
    model: OpfModel,
    options: Optional[LocalSolverOptions] = None,
    cache_dir: Optional[Path] = None,
    use_cache: bool = True,
) -> ReferenceSolution:
    """读取缓存的 x*；没有或指纹不符时集中式求解并写回缓存。"""
    if use_cache:
        hit = load_reference(model, cache_dir)
        if hit is not None:
            logger.info("[%s] reference x* loaded from cache (f*=%.10g)", model.fingerprint[:12], hit.objective)
            return hit

    sol = solve_reference(model, options)
    ref = ReferenceSolution(x=sol.x, objective=sol.objective, kkt_max=sol.kkt.max(),
                            fingerprint=model.fingerprint)
    if use_cache:
        path = store_reference(ref, cache_dir)
        logger.info("[%s] reference x* cached at %s", model.fingerprint[:12], path)
    return ref
