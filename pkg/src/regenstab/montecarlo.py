"""Monte Carlo simulation of switching signals, states and lifted moments.

Random streams
--------------
Path ``k`` of a run with seed ``s`` draws from
``numpy.random.Generator(PCG64(SeedSequence(s, spawn_key=(k,))))``.  Streams
are independent per path and do not depend on how paths are distributed over
workers, so ensemble output is bit-identical for any ``workers`` setting.
Within a path the draw order is fixed: initial state, initial vector, then the
switching signal.

Norms are propagated in log space (unit direction plus log-scale), so
strongly unstable systems do not overflow before the ensemble average; the
average itself is saturated at the float range and the first saturated grid
time is reported.
"""

from __future__ import annotations

import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Hashable

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import logsumexp

from .mlift import induced_matrix, lift_vector, lifted_dimension
from .models import (
    MJLSModel,
    ModeSet,
    PeriodicObservationModel,
    RegenerativeModel,
    SemiMarkovModel,
    SwitchedSystemModel,
)
from .numkernel import expm

__all__ = [
    "SamplePath",
    "TrajectoryEnsemble",
    "LiftEstimate",
    "X0Policy",
    "path_rng",
    "time_grid",
    "sample_switching",
    "propagate_state",
    "propagate_log",
    "estimate_moments",
    "empirical_lift_propagation",
    "estimate_cycle_matrix",
    "regeneration_step",
    "moments_to_csv",
    "per_path_to_csv",
    "switching_to_csv",
]

_LOG_MAX = math.log(np.finfo(np.float64).max)
_MAX_EXPONENT = 50.0  # bound on ||A dt||_1 per propagator step


def path_rng(seed: int, index: int) -> np.random.Generator:
    """Independent generator for path ``index`` of a run seeded with ``seed``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(index,))))


def time_grid(horizon: float, step: float) -> NDArray[np.float64]:
    """Uniform grid ``0, step, ..., horizon`` (``horizon`` rounded to whole steps)."""
    if not horizon > 0 or not step > 0:
        raise ValueError("horizon and step must be > 0")
    count = max(1, int(round(horizon / step)))
    return np.linspace(0.0, count * step, count + 1)


@dataclass(frozen=True, eq=False)
class SamplePath:
    """Piecewise-constant switching signal on ``[0, horizon]``.

    ``times[k]`` is when ``labels[k]`` becomes active; ``times[0] == 0``.
    ``regen_times``/``regen_states`` hold the embedded renewal sequence, and
    ``sampling_instants`` the observation times of periodic models.
    """

    times: NDArray[np.float64]
    labels: tuple[Hashable, ...]
    horizon: float
    seed: int | None = None
    regen_times: NDArray[np.float64] = field(default_factory=lambda: np.zeros(1))
    regen_states: tuple[int, ...] = (0,)
    sampling_instants: NDArray[np.float64] | None = None

    def label_at(self, t: float) -> Hashable:
        k = int(np.searchsorted(self.times, t, side="right")) - 1
        return self.labels[max(k, 0)]

    def segments(self):
        """Yield ``(label, start, end)`` for each constant piece."""
        ends = list(self.times[1:]) + [self.horizon]
        for lab, a, b in zip(self.labels, self.times, ends):
            yield lab, float(a), float(b)


class _PathBuilder:
    def __init__(self):
        self.times: list[float] = []
        self.labels: list = []
        self.regen_times: list[float] = []
        self.regen_states: list[int] = []

    def event(self, t: float, label):
        if self.labels and self.labels[-1] == label:
            return
        self.times.append(t)
        self.labels.append(label)

    def regen(self, t: float, state: int):
        self.regen_times.append(t)
        self.regen_states.append(state)

    def build(self, horizon, seed, sampling=None) -> SamplePath:
        return SamplePath(
            times=np.array(self.times),
            labels=tuple(self.labels),
            horizon=float(horizon),
            seed=seed,
            regen_times=np.array(self.regen_times),
            regen_states=tuple(self.regen_states),
            sampling_instants=sampling,
        )


def _ctmc_segments(Q: NDArray, state: int, duration: float, rng: np.random.Generator):
    """Run a Markov chain with generator ``Q`` for ``duration`` time units.

    Returns the list of ``(state, dwell)`` pieces and the final state.  Rows
    with zero exit rate are absorbing.
    """
    pieces = []
    t = 0.0
    N = Q.shape[0]
    while True:
        rate = -Q[state, state]
        if rate <= 0:
            pieces.append((state, duration - t))
            return pieces, state
        dwell = rng.exponential(1.0 / rate)
        if t + dwell >= duration:
            pieces.append((state, duration - t))
            return pieces, state
        pieces.append((state, dwell))
        t += dwell
        w = np.clip(Q[state], 0.0, None)
        w[state] = 0.0
        state = int(rng.choice(N, p=w / w.sum()))


def _draw_initial_state(model: SwitchedSystemModel, rng) -> int:
    return int(rng.integers(model.num_states))


def sample_switching(
    model: SwitchedSystemModel,
    horizon: float,
    seed: int | None = None,
    rng: np.random.Generator | None = None,
    initial_state: int | None = None,
) -> SamplePath:
    """Draw one switching signal of ``model`` on ``[0, horizon]``.

    Either ``seed`` (path 0 of that seed) or an explicit ``rng`` is used.  The
    initial embedded state is uniform unless given.
    """
    if not horizon > 0:
        raise ValueError(f"horizon must be > 0, got {horizon}")
    if rng is None:
        rng = path_rng(0 if seed is None else seed, 0)
    if initial_state is None:
        initial_state = _draw_initial_state(model, rng)
    if not 0 <= initial_state < model.num_states:
        raise ValueError(f"initial state {initial_state} out of range")
    b = _PathBuilder()

    if isinstance(model, MJLSModel):
        labels = model.modes.labels
        t, s = 0.0, initial_state
        pieces, _ = _ctmc_segments(model.generator, s, horizon, rng)
        for state, dwell in pieces:
            b.event(t, labels[state])
            b.regen(t, state)
            t += dwell
        return b.build(horizon, seed)

    if isinstance(model, SemiMarkovModel):
        P, hold, mos = model.kernel.P, model.kernel.holding, model.mode_of_state
        N = model.num_states
        t, s = 0.0, initial_state
        while t < horizon:
            b.event(t, mos[s])
            b.regen(t, s)
            nxt = int(rng.choice(N, p=P[s]))
            t += hold[(s, nxt)].sample(rng)
            s = nxt
        return b.build(horizon, seed)

    if isinstance(model, RegenerativeModel):
        probs = np.array([c.prob for c in model.cycles])
        t = 0.0
        while t < horizon:
            b.regen(t, 0)
            cyc = model.cycles[int(rng.choice(len(probs), p=probs))]
            for lab, dur in cyc.schedule:
                if t >= horizon:
                    break
                b.event(t, lab)
                t += dur
        return b.build(horizon, seed)

    if isinstance(model, PeriodicObservationModel):
        h = model.h
        r = initial_state
        k = 0
        while k * h < horizon:
            t0 = k * h
            q = r
            b.regen(t0, r)
            pieces, r = _ctmc_segments(model.generator, r, min(h, horizon - t0), rng)
            t = t0
            for state, dwell in pieces:
                b.event(t, (state, q))
                t += dwell
            k += 1
        sampling = np.arange(k) * h
        return b.build(horizon, seed, sampling)

    raise TypeError(f"unsupported model type {type(model).__name__}")


def propagate_log(
    path: SamplePath, modes: ModeSet, x0: ArrayLike, time_grid: ArrayLike
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Exact piecewise propagation of ``dx/dt = A_sigma x`` in log space.

    Returns ``(log_norms, directions)`` on ``time_grid``: ``x(t)`` equals
    ``exp(log_norms[k]) * directions[k]``.
    """
    grid = np.asarray(time_grid, dtype=np.float64)
    if grid.ndim != 1 or grid.size == 0:
        raise ValueError("time grid must be a non-empty 1-d array")
    if np.any(np.diff(grid) < 0) or grid[0] < 0 or grid[-1] > path.horizon * (1 + 1e-12):
        raise ValueError("time grid must be sorted and inside [0, horizon]")
    for lab in set(path.labels):
        if lab not in modes.matrices:
            raise KeyError(f"mode {lab!r} missing from mode set")
    x = np.array(x0, dtype=np.float64)
    n = modes.n
    if x.shape != (n,):
        raise ValueError(f"x0 must have shape ({n},), got {x.shape}")
    nrm = float(np.linalg.norm(x))
    if nrm == 0:
        return np.full(grid.size, -np.inf), np.zeros((grid.size, n))
    u = x / nrm
    logn = math.log(nrm)

    cache: dict = {}
    norms = {lab: float(np.linalg.norm(modes[lab], 1)) for lab in set(path.labels)}

    def advance(lab, dt):
        nonlocal u, logn
        if dt <= 0:
            return
        # split long segments so a single propagator cannot overflow
        pieces = max(1, math.ceil(norms[lab] * dt / _MAX_EXPONENT))
        sub = dt / pieces
        key = (lab, sub)
        E = cache.get(key)
        if E is None:
            E = expm(modes[lab] * sub)
            if len(cache) < 4096:
                cache[key] = E
        for _ in range(pieces):
            u = E @ u
            s = float(np.linalg.norm(u))
            if s == 0:
                logn = -math.inf
                u = np.zeros(n)
                return
            u /= s
            logn += math.log(s)

    log_out = np.empty(grid.size)
    dir_out = np.empty((grid.size, n))
    times = path.times
    seg = 0
    t = 0.0
    for g, tg in enumerate(grid):
        while seg + 1 < len(times) and times[seg + 1] <= tg:
            advance(path.labels[seg], times[seg + 1] - t)
            t = times[seg + 1]
            seg += 1
        advance(path.labels[seg], tg - t)
        t = tg
        log_out[g] = logn
        dir_out[g] = u
        if logn == -math.inf:
            log_out[g:] = -math.inf
            dir_out[g:] = 0.0
            break
    return log_out, dir_out


def propagate_state(
    path: SamplePath, modes: ModeSet, x0: ArrayLike, time_grid: ArrayLike
) -> NDArray[np.float64]:
    """States ``x(t)`` at each grid instant (may overflow to inf when unstable)."""
    logn, dirs = propagate_log(path, modes, x0, time_grid)
    with np.errstate(over="ignore", invalid="ignore"):
        out = np.exp(logn)[:, None] * dirs
    out[np.isneginf(logn)] = 0.0
    return out


# ----------------------------------------------------------------------
# Moment ensembles
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class X0Policy:
    """Initial conditions: ``"sphere"`` draws ``x0`` uniformly on the unit sphere.

    With ``kind="fixed"`` the vector ``x0`` is used for every path.  ``state``
    fixes the initial embedded state; otherwise it is uniform.
    """

    kind: str = "sphere"
    x0: tuple[float, ...] | None = None
    state: int | None = None

    def __post_init__(self):
        if self.kind not in ("sphere", "fixed"):
            raise ValueError(f"unknown x0 policy {self.kind!r}")
        if self.kind == "fixed" and self.x0 is None:
            raise ValueError("fixed x0 policy needs x0")
        if self.x0 is not None:
            object.__setattr__(self, "x0", tuple(float(v) for v in self.x0))

    @classmethod
    def fixed(cls, x0: ArrayLike, state: int | None = None) -> "X0Policy":
        return cls("fixed", tuple(np.ravel(x0)), state)

    def draw(self, n: int, num_states: int, rng) -> tuple[int, NDArray[np.float64]]:
        state = int(rng.integers(num_states)) if self.state is None else self.state
        if self.kind == "fixed":
            return state, np.array(self.x0)
        while True:
            v = rng.standard_normal(n)
            s = np.linalg.norm(v)
            if s > 0:
                return state, v / s


@dataclass(frozen=True, eq=False)
class TrajectoryEnsemble:
    """Ensemble estimate of ``E ||x(t)||^m`` on a time grid."""

    time_grid: NDArray[np.float64]
    moment_mean: NDArray[np.float64]
    log_moment_mean: NDArray[np.float64]
    path_count: int
    m: int
    empirical_growth_rate: float
    saturation_time: float | None = None
    per_path_log_moments: NDArray[np.float64] | None = field(default=None, repr=False)

    @property
    def per_path_norms(self) -> NDArray[np.float64] | None:
        """``||x(t)||^m`` per path and grid instant, if retained."""
        if self.per_path_log_moments is None:
            return None
        with np.errstate(over="ignore"):
            return np.exp(self.per_path_log_moments)


def _as_policy(x0_policy) -> X0Policy:
    if isinstance(x0_policy, X0Policy):
        return x0_policy
    if isinstance(x0_policy, str):
        return X0Policy(x0_policy)
    return X0Policy.fixed(x0_policy)


def _simulate_chunk(model, m, policy, horizon, grid, seed, indices):
    rows = np.empty((len(indices), grid.size))
    modes = model.modes
    for r, k in enumerate(indices):
        rng = path_rng(seed, k)
        state, x0 = policy.draw(modes.n, model.num_states, rng)
        path = sample_switching(model, horizon, seed=seed, rng=rng, initial_state=state)
        logn, _ = propagate_log(path, modes, x0, grid)
        rows[r] = m * logn
    return rows


def fit_growth_rate(t: ArrayLike, log_values: ArrayLike) -> float:
    """Least-squares slope of ``log_values`` against ``t`` over the second half."""
    t = np.asarray(t, dtype=np.float64)
    y = np.asarray(log_values, dtype=np.float64)
    tail = t >= t[0] + 0.5 * (t[-1] - t[0])
    t, y = t[tail], y[tail]
    ok = np.isfinite(y)
    if ok.sum() < 2:
        return math.nan
    slope, _ = np.polyfit(t[ok], y[ok], 1)
    return float(slope)


def estimate_moments(
    model: SwitchedSystemModel,
    m: int | None = None,
    x0_policy: X0Policy | str | ArrayLike = "sphere",
    path_count: int = 100,
    horizon: float = 10.0,
    grid: ArrayLike | float = 0.01,
    seed: int = 0,
    workers: int = 1,
    keep_paths: bool = False,
) -> TrajectoryEnsemble:
    """Estimate ``E ||x(t)||^m`` from ``path_count`` independent paths.

    ``grid`` is either an explicit time grid or a step for :func:`time_grid`.
    Results are identical for every ``workers`` value.
    """
    if path_count < 1:
        raise ValueError("path_count must be >= 1")
    m = model.m if m is None else int(m)
    policy = _as_policy(x0_policy)
    if np.ndim(grid) == 0:
        grid = time_grid(horizon, float(grid))
    grid = np.asarray(grid, dtype=np.float64)
    horizon = max(float(horizon), float(grid[-1]))

    indices = list(range(path_count))
    if workers and workers > 1 and path_count > 1:
        chunks = np.array_split(np.array(indices), min(workers, path_count))
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futs = [
                pool.submit(_simulate_chunk, model, m, policy, horizon, grid, seed, list(c))
                for c in chunks
            ]
            logm = np.concatenate([f.result() for f in futs])
    else:
        logm = _simulate_chunk(model, m, policy, horizon, grid, seed, indices)

    log_mean = logsumexp(logm, axis=0) - math.log(path_count)
    with np.errstate(over="ignore"):
        mean = np.exp(log_mean)
    sat = np.flatnonzero(log_mean > _LOG_MAX)
    return TrajectoryEnsemble(
        time_grid=grid,
        moment_mean=mean,
        log_moment_mean=log_mean,
        path_count=path_count,
        m=m,
        empirical_growth_rate=fit_growth_rate(grid, log_mean),
        saturation_time=float(grid[sat[0]]) if sat.size else None,
        per_path_log_moments=logm if keep_paths else None,
    )


# ----------------------------------------------------------------------
# Lifted moments at regeneration times
# ----------------------------------------------------------------------
def _segments_transition(modes: ModeSet, pieces) -> NDArray[np.float64]:
    Phi = np.eye(modes.n)
    for lab, dt in pieces:
        if dt > 0:
            Phi = expm(modes[lab] * dt) @ Phi
    return Phi


def regeneration_step(
    model: SwitchedSystemModel, state: int, rng: np.random.Generator, h: float | None = None
) -> tuple[int, NDArray[np.float64]]:
    """Draw ``(theta_1, Phi(tau_1; 0))`` given ``theta_0 = state``.

    Markov jump systems regenerate at every multiple of ``h`` (required for
    that class); periodic models use their own period.
    """
    if isinstance(model, MJLSModel):
        if h is None or not h > 0:
            raise ValueError("Markov jump systems need a sampling period h > 0")
        pieces, nxt = _ctmc_segments(model.generator, state, h, rng)
        labels = model.modes.labels
        return nxt, _segments_transition(model.modes, [(labels[s], d) for s, d in pieces])
    if isinstance(model, PeriodicObservationModel):
        pieces, nxt = _ctmc_segments(model.generator, state, model.h, rng)
        return nxt, _segments_transition(model.modes, [((s, state), d) for s, d in pieces])
    if isinstance(model, SemiMarkovModel):
        nxt = int(rng.choice(model.num_states, p=model.kernel.P[state]))
        tau = model.kernel.holding[(state, nxt)].sample(rng)
        return nxt, expm(model.modes[model.mode_of_state[state]] * tau)
    if isinstance(model, RegenerativeModel):
        probs = np.array([c.prob for c in model.cycles])
        cyc = model.cycles[int(rng.choice(len(probs), p=probs))]
        return 0, _segments_transition(model.modes, cyc.schedule)
    raise TypeError(f"unsupported model type {type(model).__name__}")


@dataclass(frozen=True, eq=False)
class LiftEstimate:
    """Monte Carlo mean and standard error of a lifted moment quantity."""

    mean: NDArray[np.float64]
    stderr: NDArray[np.float64]
    path_count: int


def empirical_lift_propagation(
    model: SwitchedSystemModel,
    m: int | None = None,
    path_count: int = 10_000,
    steps: int = 1,
    seed: int = 0,
    x0: ArrayLike | None = None,
    theta0: int = 0,
    h: float | None = None,
) -> LiftEstimate:
    """Estimate ``E[e_theta_k (x) x_d(k)^[m]]`` for ``k = 0..steps``.

    ``x_d(k)`` is the state at the ``k``-th regeneration time, started from
    deterministic ``(theta0, x0)``.  Rows of the result are indexed by ``k``.
    """
    if path_count < 1:
        raise ValueError("path_count must be >= 1")
    m = model.m if m is None else int(m)
    n, N = model.modes.n, model.num_states
    nm = lifted_dimension(n, m)
    x0 = np.ones(n) / math.sqrt(n) if x0 is None else np.asarray(x0, dtype=np.float64)
    # sums are taken about the first path's value so constant data has zero variance
    shift = None
    s1 = np.zeros((steps + 1, N * nm))
    s2 = np.zeros((steps + 1, N * nm))
    for k in range(path_count):
        rng = path_rng(seed, k)
        x, th = x0.copy(), theta0
        row = np.zeros((steps + 1, N * nm))
        for step in range(steps + 1):
            if step:
                th, Phi = regeneration_step(model, th, rng, h)
                x = Phi @ x
            row[step, th * nm:(th + 1) * nm] = lift_vector(x, m)
        if shift is None:
            shift = row
        d = row - shift
        s1 += d
        s2 += d * d
    mean_d = s1 / path_count
    var = np.maximum(s2 / path_count - mean_d**2, 0.0) * path_count / max(path_count - 1, 1)
    return LiftEstimate(shift + mean_d, np.sqrt(var / path_count), path_count)


def estimate_cycle_matrix(
    model: SwitchedSystemModel,
    m: int | None = None,
    path_count: int = 10_000,
    seed: int = 0,
    h: float | None = None,
) -> LiftEstimate:
    """Monte Carlo estimate of the one-cycle matrix with blocks
    ``p_ji E[Phi^[m] | theta_0 = j, theta_1 = i]``.

    Column block ``j`` uses ``path_count`` cycles started from ``theta_0 = j``
    (path index ``j * path_count + k``).
    """
    m = model.m if m is None else int(m)
    n, N = model.modes.n, model.num_states
    nm = lifted_dimension(n, m)
    mean = np.zeros((N * nm, N * nm))
    err = np.zeros_like(mean)
    for j in range(N):
        targets = np.empty(path_count, dtype=np.int64)
        Phis = np.empty((path_count, n, n))
        for k in range(path_count):
            rng = path_rng(seed, j * path_count + k)
            targets[k], Phis[k] = regeneration_step(model, j, rng, h)
        lifts = induced_matrix(Phis, m)
        cols = slice(j * nm, (j + 1) * nm)
        for i in range(N):
            sample = np.where((targets == i)[:, None, None], lifts, 0.0)
            rows = slice(i * nm, (i + 1) * nm)
            mean[rows, cols] = sample.mean(axis=0)
            err[rows, cols] = sample.std(axis=0, ddof=1) / math.sqrt(path_count)
    return LiftEstimate(mean, err, path_count)


# ----------------------------------------------------------------------
# CSV output
# ----------------------------------------------------------------------
def _fmt(v: float) -> str:
    return repr(float(v))


def _label_str(lab) -> str:
    if isinstance(lab, tuple):
        return ":".join(str(v) for v in lab)
    return str(lab)


def moments_to_csv(ens: TrajectoryEnsemble) -> str:
    buf = io.StringIO()
    buf.write("t,moment_mean\n")
    for t, v in zip(ens.time_grid, ens.moment_mean):
        buf.write(f"{_fmt(t)},{_fmt(v)}\n")
    return buf.getvalue()


def per_path_to_csv(ens: TrajectoryEnsemble) -> str:
    norms = ens.per_path_norms
    if norms is None:
        raise ValueError("ensemble was computed without keep_paths=True")
    buf = io.StringIO()
    buf.write("t,path_id,norm_m\n")
    for g, t in enumerate(ens.time_grid):
        for k in range(norms.shape[0]):
            buf.write(f"{_fmt(t)},{k},{_fmt(norms[k, g])}\n")
    return buf.getvalue()


def switching_to_csv(path: SamplePath) -> str:
    """``time,mode`` rows; pair labels ``(r, q)`` are written as ``r:q``."""
    buf = io.StringIO()
    buf.write("time,mode\n")
    for t, lab in zip(path.times, path.labels):
        buf.write(f"{_fmt(t)},{_label_str(lab)}\n")
    return buf.getvalue()
