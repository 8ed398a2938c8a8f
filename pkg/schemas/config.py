"""
求解器、协调引擎与实验的 Pydantic 配置模型。
"""

import math
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, Field, field_validator, model_validator

from config import (
    DOPF_ACTIVE_TOL,
    DOPF_HESSIAN_FLOOR,
    DOPF_IPM_MAX_ITER,
    DOPF_IPM_TOL,
    DOPF_WORKERS,
)


class LocalSolverOptions(BaseModel):
    """原始-对偶内点法参数。"""
    max_iter: int = DOPF_IPM_MAX_ITER
    tol: float = DOPF_IPM_TOL
    mu_init: float = 0.1
    mu_divisor: float = 10.0
    kappa_eps: float = 10.0
    bound_push: float = 1e-2
    bound_frac: float = 1e-2
    tau_min: float = 0.99
    max_inertia_corrections: int = 40
    # 原始不可行度连续 stall_iters 次未下降 1% 且步长极小 → infeasible-detected
    stall_iters: int = 25
    verbose: bool = False

    @field_validator("max_iter", "max_inertia_corrections", "stall_iters")
    @classmethod
    def validate_positive_int(cls, v: int) -> int:
        if v < 1:
            raise ValueError("must be >= 1")
        return v

    @field_validator("tol", "mu_init", "bound_push", "bound_frac")
    @classmethod
    def validate_positive(cls, v: float) -> float:
        if not v > 0:
            raise ValueError("must be > 0")
        return v

    @field_validator("mu_divisor")
    @classmethod
    def validate_divisor(cls, v: float) -> float:
        if not v > 1:
            raise ValueError("mu_divisor must be > 1")
        return v


class _EngineConfig(BaseModel):
    rho: float
    max_iter: int = 300
    termination_eps: float = 1e-6
    active_tol: float = DOPF_ACTIVE_TOL
    # 至少迭代 min_iter 次才检查终止条件（停滞检测需要完整窗口）
    min_iter: int = 0
    workers: int = DOPF_WORKERS
    # 每次迭代用最小二乘乘子估计全问题平稳性残差（停滞检测需要）
    track_stationarity: bool = True
    solver: LocalSolverOptions = Field(default_factory=LocalSolverOptions)

    @field_validator("rho", "termination_eps", "active_tol")
    @classmethod
    def validate_positive(cls, v: float) -> float:
        if not (v > 0 and math.isfinite(v)):
            raise ValueError("must be finite and > 0")
        return v

    @field_validator("max_iter", "workers")
    @classmethod
    def validate_positive_int(cls, v: int) -> int:
        if v < 1:
            raise ValueError("must be >= 1")
        return v

    @field_validator("min_iter")
    @classmethod
    def validate_min_iter(cls, v: int) -> int:
        if v < 0:
            raise ValueError("min_iter must be >= 0")
        return v


class AdmmConfig(_EngineConfig):
    """ADMM 参数（ρ 全程固定）。"""
    stall_window: int = 10
    stall_tol: float = 1e-6

    @field_validator("stall_window")
    @classmethod
    def validate_window(cls, v: int) -> int:
        if v < 1:
            raise ValueError("stall_window must be >= 1")
        return v

    @field_validator("stall_tol")
    @classmethod
    def validate_stall_tol(cls, v: float) -> float:
        if not v > 0:
            raise ValueError("stall_tol must be > 0")
        return v


class AladinConfig(_EngineConfig):
    """全步长 ALADIN 参数。mu 可取 inf（松弛变量 s 固定为 0）。"""
    mu: float
    max_iter: int = 50
    hessian_floor: float = DOPF_HESSIAN_FLOOR

    @field_validator("mu")
    @classmethod
    def validate_mu(cls, v: float) -> float:
        if not v > 0:
            raise ValueError("mu must be > 0")
        return v

    @field_validator("hessian_floor")
    @classmethod
    def validate_floor(cls, v: float) -> float:
        if not v > 0:
            raise ValueError("hessian_floor must be > 0")
        return v


class ExperimentConfig(BaseModel):
    """`dopf run` 的一次实验配置。"""
    case_path: Path
    partition_path: Path
    engine: Literal["admm", "aladin"] = "admm"
    init: str = "flat"
    rho: float
    mu: Optional[float] = None
    sigma: Literal["identity", "paper-footnote"] = "identity"
    max_iter: int = 300
    termination_eps: float = 1e-6
    output_dir: Path
    seed: int = 0
    # 初始点扰动幅度（配合 seed 做扰动实验，0 表示不扰动）
    perturb: float = 0.0
    stall_window: int = 10
    stall_tol: float = 1e-6
    min_iter: int = 0
    timings: bool = True
    workers: int = DOPF_WORKERS

    @field_validator("case_path", "partition_path")
    @classmethod
    def validate_exists(cls, v: Path) -> Path:
        if not Path(v).is_file():
            raise ValueError(f"file not found: {v}")
        return Path(v)

    @field_validator("init")
    @classmethod
    def validate_init(cls, v: str) -> str:
        if v in ("flat", "feasible"):
            return v
        if v.startswith("file:"):
            path = Path(v[len("file:"):])
            if not path.is_file():
                raise ValueError(f"init file not found: {path}")
            return v
        raise ValueError("init must be one of flat, feasible, file:<path>")

    @field_validator("rho", "termination_eps", "stall_tol")
    @classmethod
    def validate_positive(cls, v: float) -> float:
        if not (v > 0 and math.isfinite(v)):
            raise ValueError("must be finite and > 0")
        return v

    @field_validator("max_iter", "stall_window", "workers")
    @classmethod
    def validate_positive_int(cls, v: int) -> int:
        if v < 1:
            raise ValueError("must be >= 1")
        return v

    @field_validator("min_iter")
    @classmethod
    def validate_min_iter(cls, v: int) -> int:
        if v < 0:
            raise ValueError("min_iter must be >= 0")
        return v

    @field_validator("perturb")
    @classmethod
    def validate_perturb(cls, v: float) -> float:
        if v < 0:
            raise ValueError("perturb must be >= 0")
        return v

    @model_validator(mode="after")
    def validate_engine_params(self) -> "ExperimentConfig":
        if self.engine == "aladin":
            if self.mu is None:
                raise ValueError("aladin requires mu")
            if not self.mu > 0:
                raise ValueError("mu must be > 0")
        return self

    @property
    def init_file(self) -> Optional[Path]:
        if self.init.startswith("file:"):
            return Path(self.init[len("file:"):])
        return None
