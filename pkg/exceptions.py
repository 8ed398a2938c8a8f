"""
dopf — 自定义异常
"""

from typing import Optional


class DopfError(Exception):
    """求解器工具箱错误基类。"""

    exit_code = 1
    error_code = "dopf_error"


class InputError(DopfError):
    """输入不合法（维度不匹配、分区无效等）。不可重试。"""

    exit_code = 4
    error_code = "input_error"


class CaseParseError(InputError):
    """MATPOWER 算例文件解析失败，携带行号。"""

    error_code = "case_parse_error"

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(f"{prefix}{message}")


class UnsupportedFeatureError(InputError):
    """算例使用了不支持的特性（例如分段线性成本）。"""

    error_code = "unsupported_feature"


class ModelBuildError(InputError):
    """分区 OPF 模型构建失败（区域不连通、发电机位置非法）。"""

    error_code = "model_build_error"


class PoisonedEvaluationError(DopfError):
    """回调函数返回 NaN/Inf。"""

    exit_code = 3
    error_code = "poisoned_evaluation"

    def __init__(self, message: str, region: Optional[int] = None):
        self.region = region
        prefix = f"[region {region}] " if region is not None else ""
        super().__init__(f"{prefix}{message}")


class LocalSolveError(DopfError):
    """区域子问题求解失败，携带区域序号与求解状态。"""

    exit_code = 3
    error_code = "local_solve_failed"

    def __init__(self, message: str, region: Optional[int] = None, status: Optional[str] = None):
        self.region = region
        self.status = status
        prefix = f"[region {region}] " if region is not None else ""
        super().__init__(f"{prefix}{message}")


class CoordinationError(DopfError):
    """协调 QP 的 KKT 系统奇异或不相容。"""

    exit_code = 3
    error_code = "coordination_failed"


class InitializationError(DopfError):
    """可行初始化（约束非线性最小二乘）未收敛，携带最优残差。"""

    exit_code = 3
    error_code = "initialization_failed"

    def __init__(self, message: str, best_residual: float = float("nan")):
        self.best_residual = best_residual
        super().__init__(f"{message} (best residual {best_residual:.3e})")


class TraceError(DopfError):
    """收敛轨迹读写或比较失败。"""

    exit_code = 4
    error_code = "trace_error"
