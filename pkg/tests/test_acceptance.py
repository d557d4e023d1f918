"""Acceptance criteria, one test per numbered criterion.

Each test records its measured values; the terminal summary prints one
PASS/FAIL line per criterion after the run.  Seeds below were fixed before
the tests were first run.
"""

import io
import math

import numpy as np
import pytest
from scipy.linalg import expm

from conftest import random_generator, random_modes
from regenstab.cli import main
from regenstab.mlift import induced_matrix, infinitesimal_lift, lift_vector
from regenstab.models import DiscreteFinite, MJLSModel, ModeSet, SemiMarkovKernel, SemiMarkovModel
from regenstab.montecarlo import empirical_lift_propagation, estimate_cycle_matrix, estimate_moments
from regenstab.stability import (
    analyze,
    find_crossing,
    mjls_sampled_matrix,
    sweep_growth_rate,
)


def _rel(lhs, rhs):
    return float(np.linalg.norm(lhs - rhs) / max(np.linalg.norm(rhs), np.finfo(float).tiny))


@pytest.mark.acceptance(1, "stability threshold in h lies in [0.168, 0.170]")
def test_criterion_1_threshold(economy, record):
    grid = [round(0.001 * k, 3) for k in range(1, 301)]
    rows = sweep_growth_rate(economy, 2, grid)
    lo, hi = find_crossing(rows)
    record(f"rho crosses 1 between h={lo} and h={hi}")
    assert 0.168 <= lo and hi <= 0.170


@pytest.mark.acceptance(2, "small-h growth rate and continuous-observation abscissa near -0.250")
def test_criterion_2_small_h_limit(economy, record):
    rate = sweep_growth_rate(economy, 2, [0.001])[0].growth_rate
    abscissa = analyze(economy.continuous_observation()).decisive_value
    record(f"h^-1 log rho at h=0.001: {rate:.5f}; abscissa: {abscissa:.5f}")
    assert -0.255 <= rate <= -0.245
    assert -0.255 <= abscissa <= -0.245
    assert abs(rate - abscissa) <= 0.005


@pytest.mark.acceptance(3, "lift identities over 1000+ random draws")
def test_criterion_3_lift_identities(record):
    rng = np.random.default_rng(3)
    worst = dict(norm=0.0, vector=0.0, product=0.0, exponential=0.0)
    draws = 1200
    for _ in range(draws):
        n, m = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        A, B = rng.standard_normal((n, n)), rng.standard_normal((n, n))
        x = rng.standard_normal(n)
        t = rng.uniform(0.0, 2.0)
        xm = lift_vector(x, m)
        Am = induced_matrix(A, m)
        worst["norm"] = max(worst["norm"],
                            abs(np.linalg.norm(xm) - np.linalg.norm(x) ** m) / np.linalg.norm(x) ** m)
        worst["vector"] = max(worst["vector"], _rel(Am @ xm, lift_vector(A @ x, m)))
        worst["product"] = max(worst["product"], _rel(Am @ induced_matrix(B, m),
                                                      induced_matrix(A @ B, m)))
        worst["exponential"] = max(worst["exponential"], _rel(expm(infinitesimal_lift(A, m) * t),
                                                              induced_matrix(expm(A * t), m)))
    record(f"{draws} draws, worst relative errors: "
           + ", ".join(f"{k} {v:.1e}" for k, v in worst.items()))
    assert worst["norm"] <= 1e-12
    assert worst["vector"] <= 1e-10
    assert worst["product"] <= 1e-10
    assert worst["exponential"] <= 1e-9


@pytest.mark.slow
@pytest.mark.acceptance(4, "sampled MJLS transition blocks match exp(B h) within 3 SE")
def test_criterion_4_sampled_mjls(record):
    rng = np.random.default_rng(2024)
    Q = random_generator(rng, 3)
    model = MJLSModel(ModeSet.from_list(random_modes(rng, 3, 2)), Q)
    h = 0.2
    exact = mjls_sampled_matrix(Q, model.modes, 2, h).matrix
    est = estimate_cycle_matrix(model, 2, path_count=100_000, seed=0, h=h)
    z = np.abs(est.mean - exact) / np.where(est.stderr > 0, est.stderr, np.inf)
    record(f"{exact.size} entries, max |diff|/SE = {z.max():.2f}")
    assert np.all(np.abs(est.mean - exact) <= 3 * est.stderr)


@pytest.mark.slow
@pytest.mark.acceptance(5, "one-step lifted moment of a discrete semi-Markov model within 3 SE")
def test_criterion_5_one_step_propagation(record):
    rng = np.random.default_rng(5)
    modes = ModeSet.from_list(random_modes(rng, 2, 2))
    P = np.array([[0.3, 0.7], [0.6, 0.4]])
    holding = {(i, j): DiscreteFinite((0.2 + 0.1 * i, 0.5 + 0.2 * j), (0.5, 0.5))
               for i in range(2) for j in range(2)}
    model = SemiMarkovModel(modes, SemiMarkovKernel(P, holding))
    x0, theta0 = np.array([0.8, -0.6]), 0
    F = analyze(model).matrix
    start = np.zeros(F.shape[0])
    start[:3] = lift_vector(x0, 2)
    est = empirical_lift_propagation(model, 2, path_count=100_000, steps=1, seed=0, x0=x0,
                                     theta0=theta0)
    diff, se = np.abs(est.mean[1] - F @ start), est.stderr[1]
    record(f"max |diff|/SE = {np.max(diff / se):.2f} over {diff.size} entries")
    assert np.all(diff <= 3 * se)


def _random_mjls_models(seed=20260101, count=10, lo=0.05, hi=1.0):
    """First ``count`` stable and unstable random models with lo <= |rate| <= hi."""
    rng = np.random.default_rng(seed)
    out = {"stable": [], "unstable": []}
    while min(len(v) for v in out.values()) < count:
        N, n = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        Q = random_generator(rng, N, rng.uniform(0.5, 2.0)) if N > 1 else np.zeros((1, 1))
        mats = random_modes(rng, N, n, scale=rng.uniform(0.3, 1.0), shift=rng.uniform(-0.3, 1.0))
        model = MJLSModel(ModeSet.from_list(mats), Q, 2)
        rep = analyze(model)
        if lo <= abs(rep.growth_rate) <= hi and len(out[rep.verdict]) < count:
            out[rep.verdict].append((model, rep.growth_rate))
    return out


@pytest.mark.slow
@pytest.mark.acceptance(6, "empirical growth-rate sign matches the verdict on 20 random models")
def test_criterion_6_sign_agreement(economy, record):
    models = _random_mjls_models()
    mismatches = []
    for verdict, lst in models.items():
        for k, (model, rate) in enumerate(lst):
            # long enough for about 8 e-foldings, at least 10 time units
            T = min(max(8 / abs(rate), 10.0), 100.0)
            ens = estimate_moments(model, 2, "sphere", 1000, T, T / 100, seed=k)
            if np.sign(ens.empirical_growth_rate) != np.sign(rate):
                mismatches.append((verdict, k, rate, ens.empirical_growth_rate))

    # case study, 100 paths from the unit sphere with a uniform initial mode
    trend = {}
    for h in (0.1, 0.3):
        ens = estimate_moments(economy.with_period(h), 2, "sphere", 100, 2.0, 0.01, seed=1)
        slope = np.polyfit(ens.time_grid, ens.log_moment_mean, 1)[0]
        trend[h] = (slope, ens.moment_mean[-1] - ens.moment_mean[0])
    record(f"sign mismatches: {len(mismatches)}/20; case-study log-mean slopes "
           f"h=0.1: {trend[0.1][0]:.3f}, h=0.3: {trend[0.3][0]:.3f}")
    assert not mismatches, mismatches
    assert trend[0.1][0] < 0 and trend[0.1][1] < 0
    assert trend[0.3][0] > 0 and trend[0.3][1] > 0


@pytest.mark.acceptance(7, "simulate output is byte-identical across runs and worker counts")
def test_criterion_7_determinism(tmp_path, record):
    base = ["simulate", "--model", "example", "--paths", "24", "--horizon", "2", "--seed", "99"]
    blobs = []
    for k, workers in enumerate(["1", "1", "2", "4"]):
        moments, per_path = tmp_path / f"m{k}.csv", tmp_path / f"p{k}.csv"
        code = main(base + ["--workers", workers, "--out", str(moments), "--per-path", str(per_path)],
                    io.StringIO(), io.StringIO())
        assert code == 0
        blobs.append(moments.read_bytes() + b"\0" + per_path.read_bytes())
    record(f"{len(blobs)} runs (workers 1, 1, 2, 4), {len(set(blobs))} distinct outputs")
    assert len(set(blobs)) == 1
    assert math.isfinite(float(blobs[0].split(b"\n")[1].split(b",")[1]))
