"""
dopf 配置：全部来自环境变量，可由 .env.<APP_ENV>（缺省 development）或 .env 覆盖。
模块目录优先于上级目录；都没有时只用进程环境。
"""

import os
import sys
from pathlib import Path
from dotenv import load_dotenv

APP_ENV = os.getenv("APP_ENV", "development")

_this_dir = Path(__file__).resolve().parent


def _load_env_files() -> bool:
    for name in (f".env.{APP_ENV}", ".env"):
        for base in (_this_dir, _this_dir.parent):
            if (base / name).is_file():
                load_dotenv(base / name, override=True)
                return True
    return False


if not _load_env_files():
    print(f"[dopf] no .env file found for APP_ENV={APP_ENV}, using process environment", file=sys.stderr)

# ── 日志 ────────────────────────────────────────────────
DOPF_LOG_LEVEL = os.getenv("DOPF_LOG_LEVEL", "INFO").upper()

# ── 数据与缓存 ──────────────────────────────────────────
DATA_DIR = _this_dir / "data"
DOPF_DEFAULT_CASE = Path(os.getenv("DOPF_DEFAULT_CASE", str(DATA_DIR / "case57.m")))
DOPF_DEFAULT_PARTITION = Path(
    os.getenv("DOPF_DEFAULT_PARTITION", str(DATA_DIR / "case57_4regions.txt"))
)
# x* 缓存目录，可用 DOPF_CACHE_DIR 覆盖
DOPF_CACHE_DIR = Path(
    os.getenv("DOPF_CACHE_DIR", str(Path.home() / ".cache" / "dopf"))
).expanduser()

# ── 局部 NLP 求解器 ─────────────────────────────────────
DOPF_IPM_MAX_ITER = int(os.getenv("DOPF_IPM_MAX_ITER", "200"))
DOPF_IPM_TOL = float(os.getenv("DOPF_IPM_TOL", "1e-8"))
DOPF_LSQ_TOL = float(os.getenv("DOPF_LSQ_TOL", "1e-8"))
# 活跃约束判定阈值（ALADIN 灵敏度）
DOPF_ACTIVE_TOL = float(os.getenv("DOPF_ACTIVE_TOL", "1e-6"))
# Hessian 特征值下限
DOPF_HESSIAN_FLOOR = float(os.getenv("DOPF_HESSIAN_FLOOR", "1e-6"))

# ── 并发 ────────────────────────────────────────────────
# 区域子问题并行线程数，1 表示顺序执行
DOPF_WORKERS = int(os.getenv("DOPF_WORKERS", "1"))
