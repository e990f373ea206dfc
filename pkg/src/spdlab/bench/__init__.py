from .analytic import analytic_speedup, expected_tokens_per_block, monte_carlo_speedup
from .harness import (BenchCell, BenchConfig, BenchReport, CellResult, emit_report, environment_fingerprint,
                      format_table, run_bench, validate_cost_ratio)

__all__ = [
    "BenchCell", "BenchConfig", "BenchReport", "CellResult", "analytic_speedup", "emit_report",
    "environment_fingerprint", "expected_tokens_per_block", "format_table", "monte_carlo_speedup", "run_bench",
    "validate_cost_ratio",
]
