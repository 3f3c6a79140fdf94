"""Seeded simulation scenarios and the experiment runner.

Usage:
    from flam.simulation import ExperimentRunner, ScenarioSpec

    runner = ExperimentRunner(threads=4)
    rows = runner.scenario_experiment(ScenarioSpec(scenario=1, n=100), n_reps=10)
"""

from flam.simulation.runner import ExperimentRunner, summarize_optimal, write_rows_csv
from flam.simulation.scenarios import ScenarioSpec, SimulatedData, generate, generate_logistic

__all__ = [
    "ExperimentRunner",
    "summarize_optimal",
    "write_rows_csv",
    "ScenarioSpec",
    "SimulatedData",
    "generate",
    "generate_logistic",
]
