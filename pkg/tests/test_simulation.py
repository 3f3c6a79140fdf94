import numpy as np
import pandas as pd
import pytest
from scipy.integrate import quad

from flam.errors import InvalidArgumentError, OutputError
from flam.simulation.runner import ExperimentRunner, summarize_optimal, write_rows_csv
from flam.simulation.scenarios import (
    DOMAIN,
    SCENARIOS,
    ScenarioSpec,
    generate,
    generate_logistic,
)


@pytest.mark.parametrize("scenario", sorted(SCENARIOS))
def test_signals_are_normalized(scenario):
    for f in SCENARIOS[scenario]:
        points = list(f.breakpoints) or None
        lo, hi = DOMAIN
        first = quad(lambda x: float(f(np.array([x]))[0]), lo, hi, points=points, limit=400)[0]
        second = quad(lambda x: float(f(np.array([x]))[0]) ** 2, lo, hi, points=points, limit=400)[0]
        assert abs(first) < 1e-6, f.name
        assert abs(second - 1.0) < 1e-6, f.name


def test_generation_is_a_function_of_the_seed():
    spec = ScenarioSpec(scenario=3, n=25, p_total=6, n_signal=4, seed=11)
    a, b = generate(spec), generate(spec)
    assert np.array_equal(a.data.y, b.data.y)
    assert np.array_equal(a.data.X, b.data.X)
    assert not np.array_equal(a.data.y, generate(spec.with_seed(12)).data.y)


def test_truth_is_centered_and_null_features_are_zero():
    sim = generate(ScenarioSpec(scenario=1, n=50, p_total=5, n_signal=2, seed=0))
    assert np.allclose(sim.true_thetas.sum(axis=0), 0.0)
    assert np.all(sim.true_thetas[:, 2:] == 0.0)
    assert np.allclose(sim.mu - sim.mu.mean(), sim.true_thetas.sum(axis=1))


def test_fixed_design_is_used():
    spec = ScenarioSpec(scenario=2, n=10, p_total=2, n_signal=2, seed=0)
    design = np.linspace(-2, 2, 20).reshape(10, 2)
    assert np.array_equal(generate(spec, design).data.X, design)
    with pytest.raises(InvalidArgumentError):
        generate(spec, design[:5])


@pytest.mark.parametrize(
    "fields",
    [dict(scenario=5), dict(n=1), dict(n_signal=3, p_total=2), dict(noise_sd=-1.0)],
)
def test_invalid_specs(fields):
    with pytest.raises(InvalidArgumentError):
        ScenarioSpec(**fields)


def test_logistic_generation():
    sim = generate_logistic(ScenarioSpec(scenario=1, n=40, p_total=3, n_signal=2, seed=4))
    assert set(np.unique(sim.data.y)) <= {0.0, 1.0}
    assert np.all((sim.mu > 0) & (sim.mu < 1))
    with pytest.raises(InvalidArgumentError):
        generate_logistic(ScenarioSpec(n=40, p_total=4, n_signal=4))


def test_scenario_experiment_rows():
    runner = ExperimentRunner()
    spec = ScenarioSpec(scenario=1, n=30, p_total=4, n_signal=2, seed=1)
    rows = runner.scenario_experiment(spec, alphas=(0.5, 1.0), n_lambda=5, n_reps=2)
    assert len(rows) == 2 * 2 * 5
    frame = pd.DataFrame(rows)
    assert (frame.groupby(["replicate", "alpha"])["optimal"].sum() == 1).all()
    summary = summarize_optimal(rows)
    assert [row["alpha"] for row in summary] == [0.5, 1.0]
    assert all(row["replicates"] == 2 for row in summary)


def test_experiments_do_not_depend_on_threads():
    spec = ScenarioSpec(scenario=1, n=20, p_total=3, n_signal=2, seed=5)
    serial = ExperimentRunner(threads=1).scenario_experiment(spec, alphas=(1.0,), n_lambda=4, n_reps=3)
    threaded = ExperimentRunner(threads=3).scenario_experiment(spec, alphas=(1.0,), n_lambda=4, n_reps=3)
    pd.testing.assert_frame_equal(pd.DataFrame(serial), pd.DataFrame(threaded))


def test_df_experiment_rows():
    phases = []
    runner = ExperimentRunner(progress_callback=lambda phase, message: phases.append(phase))
    rows = runner.df_experiment(
        n=15, p=3, n_signal=2, alphas=(0.5, 1.0), lambda_fractions=(0.5, 0.2), n_reps=5, seed=2
    )
    assert len(rows) == 4
    assert "df" in phases
    for row in rows:
        assert row["mean_df_flam"] >= 1.0 - 1e-9
        if row["alpha"] == 1.0:
            assert row["epsilon"] == 0.0
            assert row["knot_identity_holds"] == row["full_rank_fits"]


def test_consistency_experiment_rows():
    rows = ExperimentRunner().consistency_experiment(n_grid=(30,), p=2, n_reps=3, n_signal=2, seed=1)
    (row,) = rows
    assert row["n"] == 30
    assert 0 <= row["violations"] <= 3
    assert np.isclose(row["lambda_fit"], 30 * row["lambda_bound"])


def test_logistic_experiment_rows():
    rows = ExperimentRunner().logistic_experiment(n=40, n_reps=2, n_lambda=5, grid_size=10, seed=3)
    assert len(rows) == 2
    for row in rows:
        assert -1.0 <= row["correlation"] <= 1.0
        assert 0.0 <= row["test_misclassification"] <= 1.0


def test_write_rows_csv(tmp_path):
    path = tmp_path / "rows.csv"
    write_rows_csv([{"a": 1, "b": 2.5}], path)
    assert path.read_text().splitlines() == ["a,b", "1,2.5"]
    with pytest.raises(OutputError):
        write_rows_csv([{"a": 1}], tmp_path / "missing" / "rows.csv")


def test_signal_scale_multiplies_the_signals():
    spec = ScenarioSpec(scenario=2, n=30, p_total=4, n_signal=2, seed=5)
    plain, scaled = generate(spec), generate(spec.model_copy(update={"signal_scale": 2.0}))
    assert np.array_equal(plain.data.X, scaled.data.X)
    assert np.allclose(scaled.true_thetas, 2.0 * plain.true_thetas)
    assert np.allclose(scaled.data.y - scaled.mu, plain.data.y - plain.mu)


def test_signal_scale_must_be_positive():
    with pytest.raises(ValueError):
        ScenarioSpec(scenario=1, n=10, p_total=2, n_signal=2, signal_scale=0.0)


def test_logistic_rows_share_the_averaged_surface_correlation():
    rows = ExperimentRunner().logistic_experiment(n=40, n_reps=3, n_lambda=5, grid_size=10, seed=4)
    averaged = {row["mean_surface_correlation"] for row in rows}
    assert len(averaged) == 1
    assert -1.0 <= averaged.pop() <= 1.0
    assert all(row["signal_scale"] == 3.0 for row in rows)


def test_consistency_rows_count_active_features():
    (row,) = ExperimentRunner().consistency_experiment(n_grid=(60,), p=2, n_reps=3, n_signal=2, seed=2)
    assert row["sigma"] == 0.2
    assert 0 <= row["null_fits"] <= 3
    assert row["mean_active_features"] > 0
