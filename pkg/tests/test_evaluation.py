import numpy as np
import pytest
from hypothesis import given, strategies as st

from lscopt.agent import Episode, StepRecord
from lscopt.baselines import two_opt
from lscopt.env import ProtocolError, SeqSwap, TspTour, make_state, Problem
from lscopt.evaluation import (
    RESULT_COLUMNS, ExperimentConfig, Trace, approx_ratio, evaluate_instance,
    expected_reserve_fraction, fan_out, held_out_instances, run_generalization,
    run_quality_experiment, run_tradeoff, run_trajectory_experiment, stats_rows, to_csv,
    trace_from_episode, trace_from_search, trajectory_stats, worker_count,
)
from lscopt.graphs import GenSpec, generate
from lscopt.networks import ModelParams


def test_ratio_examples():
    assert approx_ratio(4.16, 4.0) == pytest.approx(1.04)
    assert approx_ratio(3.0, 3.0, "smaller") == 1.0
    assert approx_ratio(0.0, 0.0) == 1.0
    with pytest.raises(ValueError):
        approx_ratio(1, 1, "up")


@given(st.floats(0.1, 10), st.floats(0.1, 10), st.floats(0.01, 1))
def test_ratio_moves_towards_one(ref, frac, step):
    # larger-better: an achieved value below ref that improves gets closer to 1
    lo = ref * frac / (1 + frac)
    better = min(ref, lo + step)
    assert abs(1 - approx_ratio(better, ref)) <= abs(1 - approx_ratio(lo, ref)) + 1e-12
    # smaller-better: a length above ref that shrinks gets closer to 1
    hi = ref * (1 + frac)
    shorter = max(ref, hi - step)
    assert abs(approx_ratio(shorter, ref, "smaller") - 1) <= abs(approx_ratio(hi, ref, "smaller") - 1)


def _trace(ratios, greedy=None, local=None):
    n = len(ratios)
    return Trace(np.array(ratios, dtype=float),
                 np.ones(n, bool) if greedy is None else np.array(greedy),
                 np.zeros(n, bool) if local is None else np.array(local))


def test_all_greedy_frequency_one():
    stats = trajectory_stats([_trace([0.5, 0.7, 0.9]), _trace([0.6, 0.8])])
    assert np.all(stats["greedy_frequency"] == 1.0) and len(stats["time"]) == 100


def test_single_step_episode_maps_to_its_step():
    stats = trajectory_stats([_trace([0.8], local=[True])])
    assert np.all(stats["approx_ratio"] == 0.8) and np.all(stats["local_min_frequency"] == 1)


def test_last_bucket_is_final_ratio():
    traces = [_trace(np.linspace(0.5, 0.9, n)) for n in (3, 7, 11)]
    stats = trajectory_stats(traces)
    assert stats["approx_ratio"][-1] == pytest.approx(0.9)


def test_nearest_step_assignment():
    stats = trajectory_stats([_trace([1.0, 2.0, 3.0, 4.0])], points=5)
    # grid 0, .25, .5, .75, 1 -> steps 1(clipped), 1, 2, 3, 4
    assert stats["approx_ratio"].tolist() == [1.0, 1.0, 2.0, 3.0, 4.0]


def test_empty_episode_set_is_protocol_error():
    with pytest.raises(ProtocolError):
        trajectory_stats([])
    with pytest.raises(ProtocolError):
        trajectory_stats([_trace([])])


def test_two_opt_terminal_flagged_local_minimum(unit_square):
    res = two_opt(unit_square, [0, 2, 1, 3])
    tr = trace_from_search(res, unit_square, Problem.tsp(), 4.0)
    assert tr.local_min.tolist() == [True] and tr.ratios[-1] == pytest.approx(1.0)


def test_episode_trace_truncates_at_best(unit_square):
    s0 = make_state(unit_square, Problem.tsp(), TspTour([0, 1, 2, 3]))
    recs = [StepRecord(SeqSwap(1, 2), -0.8, 4.83, False, False),
            StepRecord(SeqSwap(1, 2), 0.8, 4.0, True, True)]
    ep = Episode(s0, s0, s0.solution, 4.0, 0, recs)
    assert len(trace_from_episode(ep, unit_square, Problem.tsp(), 4.0)) == 0
    full = trace_from_episode(ep, unit_square, Problem.tsp(), 4.0, truncate_at_best=False)
    assert full.greedy.tolist() == [False, True]


def test_reserve_fraction_arithmetic():
    assert expected_reserve_fraction(0.1, 1225) / expected_reserve_fraction(1.0, 1225) == \
        pytest.approx(0.1, abs=1 / 1225)


def test_tradeoff_forward_ratio():
    cfg = ExperimentConfig(problem="tsp", n=50, n_test=2, restarts=1, d=4, seed=0)
    params = ModelParams(Problem.tsp(), d=4, seed=0)
    rows = run_tradeoff(cfg, [1.0, 0.1], params=params)
    assert rows[0]["q_evals_per_decision"] == 1225
    assert rows[1]["relative_forward"] == pytest.approx(123 / 1225)
    assert rows[1]["wall_ms"] is None and rows[1]["relative_time"] is None


def test_quality_rows_and_methods():
    cfg = ExperimentConfig(problem="tsp", n=6, n_test=3, restarts=2, d=4, seed=1)
    rows = run_quality_experiment(cfg, ModelParams(Problem.tsp(), d=4))
    assert [r["method"] for r in rows[:4]] == ["lsdqn", "two-opt", "farthest", "random"]
    assert all(r["reference_kind"] == "exact" and r["approx_ratio"] >= 1 - 1e-12 for r in rows)
    assert all(r["wall_ms"] is None for r in rows)
    assert [r["instance_id"] for r in rows] == sorted(r["instance_id"] for r in rows)


def test_generalization_without_retraining():
    cfg = ExperimentConfig(problem="maxcut", n=10, n_test=2, test_sizes=(20, 30), restarts=2,
                           epochs=3, batch=4, d=4, seed=0)
    rows = run_generalization(cfg)
    assert {r["test_size"] for r in rows} == {20, 30}
    assert all(r["reference_kind"] == "best_of_greedy" for r in rows)
    assert all(np.isfinite(r["approx_ratio"]) for r in rows)


def test_kcut_generalization_scales_sizes():
    cfg = ExperimentConfig(problem="kcut", k=2, m=3, n_test=1, test_sizes=(8,), restarts=1,
                           epochs=2, batch=4, d=4, seed=0)
    assert cfg.problem_for(8).sizes == (4, 4)
    rows = run_generalization(cfg)
    assert rows[0]["test_size"] == 8


def test_trajectory_experiment_on_greedy():
    cfg = ExperimentConfig(problem="tsp", n=7, n_test=4, restarts=1, d=4, seed=0)
    stats = run_trajectory_experiment(cfg, ModelParams(Problem.tsp(), d=4))
    g = stats["greedy"]
    assert np.all(g["greedy_frequency"] == 1) and g["local_min_frequency"][-1] == 1
    rows = stats_rows(stats)
    assert {r["method"] for r in rows} <= {"lsdqn", "greedy"}


def test_threads_do_not_change_results(monkeypatch):
    cfg = ExperimentConfig(problem="maxcut", n=8, n_test=4, restarts=2, d=4, seed=3)
    params = ModelParams(Problem.maxcut(), d=4)
    monkeypatch.setenv("LSCOPT_THREADS", "1")
    one = run_quality_experiment(cfg, params)
    monkeypatch.setenv("LSCOPT_THREADS", "3")
    assert worker_count() == 3
    assert run_quality_experiment(cfg, params) == one


def test_fan_out_preserves_order(monkeypatch):
    monkeypatch.setenv("LSCOPT_THREADS", "4")
    assert fan_out(lambda x: x * x, list(range(10))) == [x * x for x in range(10)]


def test_held_out_instances_reproducible():
    cfg = ExperimentConfig(n=7, seed=2)
    a, b = held_out_instances(cfg, 7, 3), held_out_instances(cfg, 7, 3)
    assert all(x == y for x, y in zip(a, b))


def test_csv_format():
    text = to_csv([{"a": 1, "b": 0.1, "c": None}], ["a", "b", "c"])
    assert text == "a,b,c\n1,0.1,\n"
    assert to_csv([]) == ""


def test_evaluate_instance_unknown_method():
    g = generate(GenSpec(n=5, seed=0))
    with pytest.raises(ValueError):
        evaluate_instance(None, g, Problem.maxcut(), 0, np.random.default_rng(0),
                          ExperimentConfig(restarts=1), ["magic"])


def test_result_columns():
    assert RESULT_COLUMNS[:4] == ["instance_id", "method", "objective", "approx_ratio"]
