from .experiment import load_traces, run_experiment
from .plotting import plot_traces
from .compare import compare_report, write_summary

__all__ = ["load_traces", "run_experiment", "plot_traces", "compare_report", "write_summary"]
