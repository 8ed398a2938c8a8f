from .matpower import CaseData, load_case, parse_case
from .opf_model import OpfModel, build_opf_model, feasible_init, load_opf_model, solve_reference
from .admm import admm_run, detect_stall
from .aladin import aladin_run

__all__ = [
    "CaseData",
    "load_case",
    "parse_case",
    "OpfModel",
    "build_opf_model",
    "feasible_init",
    "load_opf_model",
    "solve_reference",
    "admm_run",
    "detect_stall",
    "aladin_run",
]
