"""End-to-end smoke tests for the python bindings and the CLI binary."""

import json
import math
import os
import subprocess

import numpy as np
import pytest

import sbmhe


def test_version():
    assert sbmhe.__version__ == "0.1.0"


def test_matrix_exp_rotation():
    A = np.array([[0.0, 1.0], [-1.0, 0.0]])
    for t in (0.3, 1.2):
        want = np.array([[math.cos(t), math.sin(t)], [-math.sin(t), math.cos(t)]])
        assert np.max(np.abs(sbmhe.matrix_exp(A, t) - want)) < 1e-12


def test_weighted_norm():
    P = np.array([[2.0, 0.0], [0.0, 3.0]])
    n = sbmhe.WeightedNorm(P)
    x = np.array([1.0, -2.0])
    assert n.norm_sq(x) == pytest.approx(2.0 + 12.0, rel=1e-14)
    assert sbmhe.generalized_eig_max(P, np.eye(2)) == pytest.approx(3.0, rel=1e-12)


def test_schedule_design_and_observability():
    A = np.array([[0.0, 1.0], [-1.0, 0.0]])
    C = np.array([[1.0, 0.0]])
    assert sbmhe.zero_count_bound(A, 2.0 * math.pi) == pytest.approx(3.0, abs=1e-9)

    design = sbmhe.design_schedule(A, C, 2.0 * math.pi, 0.5)
    assert design.samples_per_window == 4
    assert design.sigma_floor > 0.1

    rank, sigma = sbmhe.observability_certificate(A, C, design.offsets)
    assert rank == 2 and sigma > 0.1
    rank_bad, _ = sbmhe.observability_certificate(A, C, [math.pi / 2, 3 * math.pi / 2])
    assert rank_bad < 2


def test_estimator_round_trip():
    A = np.array([[0.0, 1.0], [-1.0, 0.0]])
    C = np.array([[1.0, 0.0]])
    sys = sbmhe.LinearSystemModel(A, np.zeros((2, 0)), C, np.zeros((1, 0))).to_system()

    dt, t_end = 0.05, 6.0
    cells = round(t_end / dt)
    u = sbmhe.Signal.zero(0, dt, cells)
    w = sbmhe.Signal.zero(2, dt, cells)
    v = sbmhe.Signal.zero(1, dt, cells)
    truth = sbmhe.integrate(sys, np.array([1.0, -0.5]), u, w, t_end, dt)

    cfg = sbmhe.MheConfig(
        horizon=2.0, eta=0.5, P2=np.eye(2), Qw=np.eye(2),
        Qv=10.0 * np.eye(1), R=10.0 * np.eye(1), dt=dt,
    )
    run = sbmhe.run_estimator(
        sys, [0.5, 1.0, 2.0, 3.5, 4.0, 5.5], u, truth, w, v, cfg, np.zeros(2)
    )
    assert all(rec.converged for rec in run.records)
    # Six solves with the prior discounted by e^{-eta M} contract the error by
    # roughly 0.4 per solve; demand a factor of 50 overall.
    errs = run.error_norms()
    assert errs[-1] < 0.02 * errs[0]

    params = sbmhe.ExponentialIiossParams(
        P1=np.eye(2), P2=np.eye(2), Qw=np.eye(2), Qv=np.eye(1), R=np.eye(1), eta=0.5
    )
    report = sbmhe.verify_rges_bound(run, params, 0.25)
    assert report.fitted_decay_rate > 0.0


def test_certificate_check():
    A = np.array([[-1.0]])
    C = np.array([[1.0]])
    sys = sbmhe.LinearSystemModel(A, np.zeros((1, 0)), C, np.zeros((1, 0))).to_system()

    dt, t_end = 0.01, 2.0
    cells = round(t_end / dt)
    u = sbmhe.Signal(np.zeros((0, 1)), dt)
    w = sbmhe.generate_noise(sbmhe.Box.symmetric(np.array([0.3])), dt, cells, 5)
    zero = sbmhe.Signal.zero(1, dt, cells)
    pair = sbmhe.simulate_pair(
        sys, u, np.array([0.8]), w, zero, np.array([-0.4]), zero, zero,
        [0.5, 1.0], t_end, dt,
    )
    params = sbmhe.ExponentialIiossParams(
        P1=np.eye(1), P2=np.eye(1), Qw=2.0 * np.eye(1), Qv=np.eye(1), R=np.eye(1), eta=1.0
    )
    report = sbmhe.check_exp_iioss_sampled(pair, params)
    assert report.holds
    lhs, rhs = sbmhe.eval_exp_iioss_at(pair, params, 1.0)
    assert lhs <= rhs + 1e-9 + 1e-6 * abs(rhs)


def test_benchmark_model():
    bench = sbmhe.make_benchmark6d()
    assert bench.model.state_dim == 6
    assert bench.relative_error(bench.x0_prior, bench.x0_true) > 0.1
    assert bench.default_config().horizon == pytest.approx(5.0)


@pytest.fixture()
def cli():
    path = os.environ.get("SBMHE_CLI")
    if not path or not os.path.exists(path):
        pytest.skip("SBMHE_CLI not set")
    return path


CONFIG = {
    "model": {
        "type": "linear",
        "A": [[0.0, 1.0], [-1.0, 0.0]],
        "C": [[1.0, 0.0]],
    },
    "schedule": {"instants": [0.5, 1.0, 2.0]},
    "sim": {"dt": 0.05, "t_end": 3.0, "x0": [1.0, -0.5]},
    "estimator": {
        "horizon": 1.0, "eta": 0.5,
        "P2": {"identity": 2}, "Qw": {"identity": 2},
        "Qv": {"scaled_identity": [1, 10.0]}, "R": {"scaled_identity": [1, 10.0]},
        "x0_hat": [0.0, 0.0],
    },
    "seed": 3,
}


def test_cli_simulate_and_estimate(cli, tmp_path):
    config = tmp_path / "config.json"
    config.write_text(json.dumps(CONFIG))

    out = tmp_path / "sim"
    proc = subprocess.run(
        [cli, "simulate", "--config", str(config), "--out", str(out), "--quiet"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    side = json.loads((out / "run.json").read_text())
    assert side["command"] == "simulate"
    assert side["seed"] == 3

    out2 = tmp_path / "est"
    proc = subprocess.run(
        [cli, "estimate", "--config", str(config), "--out", str(out2), "--quiet", "--strict"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert (out2 / "estimate.csv").exists()
    assert (out2 / "diagnostics.csv").exists()


def test_cli_exit_codes(cli, tmp_path):
    proc = subprocess.run(
        [cli, "simulate", "--config", str(tmp_path / "absent.json"), "--quiet"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 2

    bad = dict(CONFIG)
    del bad["estimator"]
    config = tmp_path / "no_est.json"
    config.write_text(json.dumps(bad))
    proc = subprocess.run(
        [cli, "estimate", "--config", str(config), "--out", str(tmp_path / "o"), "--quiet"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 2
    assert "estimator" in proc.stderr
