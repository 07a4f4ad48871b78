from .config import SweepConfig, dump_config, parse_config, parse_config_dict
from .report import ExperimentReport, Verdict, csv_text, emit_report, recompute_verdicts
from .sweeps import compute_verdicts, harmonic_profile, run_experiment

__all__ = ["ExperimentReport", "SweepConfig", "Verdict", "compute_verdicts", "csv_text", "dump_config",
           "emit_report", "harmonic_profile", "parse_config", "parse_config_dict", "recompute_verdicts",
           "run_experiment"]
