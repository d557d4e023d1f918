"""Lifted stability matrices and spectral verdicts for each switching class.

Every construction acts on the stacked lifted moment vector
``E[e_theta (x) x^[m]]`` (block ``j`` belongs to embedded state ``j``):

* Schur test on the one-cycle matrix whose ``(i, j)`` block is
  ``p_ji E[Phi^[m] | theta_0 = j, theta_1 = i]`` for sampled classes;
* Hurwitz test on ``Q^T (x) I + blockdiag((A_i)_[m])`` for Markov switching.
"""

from __future__ import annotations

import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Hashable, Iterable, Literal, Mapping, NamedTuple, Sequence

import numpy as np
import scipy.linalg
from numpy.typing import ArrayLike, NDArray

from .mlift import induced_matrix, infinitesimal_lift, lifted_dimension
from .models import (
    AssumptionError,
    Cycle,
    MJLSModel,
    ModeSet,
    ModelError,
    PeriodicObservationModel,
    RegenerativeModel,
    SemiMarkovKernel,
    SemiMarkovModel,
    SwitchedSystemModel,
    validate_generator,
    validate_stochastic,
)
from .numkernel import SpectralSummary, expm, spectral_summary

__all__ = [
    "MARGINAL_TOL",
    "StabilityReport",
    "SweepRow",
    "lifted_generator",
    "mjls_matrix",
    "mjls_sampled_matrix",
    "semimarkov_matrix",
    "regenerative_matrix",
    "cycle_transition",
    "periodic_observation_matrix",
    "periodic_block_generators",
    "discrete_semimarkov_matrix",
    "transition_expectation_matrix",
    "sweep_growth_rate",
    "find_crossing",
    "analyze",
    "sweep_to_csv",
    "report_to_text",
]

MARGINAL_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class StabilityReport:
    """A constructed test matrix with its decisive spectral value and verdict.

    ``growth_rate`` is ``log(rho) / h`` for classes sampled at a fixed period
    ``h``, the spectral abscissa for the Hurwitz test, and ``log(rho)`` per
    regeneration step otherwise.
    """

    kind: str
    matrix: NDArray[np.float64] = field(repr=False)
    test: Literal["schur", "hurwitz"]
    decisive_value: float
    verdict: Literal["stable", "unstable", "marginal"]
    growth_rate: float
    h: float | None = None
    assumptions: Mapping[str, Any] = field(default_factory=dict)
    spectrum: SpectralSummary | None = field(default=None, repr=False)

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    @property
    def stable(self) -> bool:
        return self.verdict == "stable"

    def to_dict(self) -> dict:
        out = {
            "class": self.kind,
            "test": self.test,
            "dimension": self.dimension,
            "decisive_value": self.decisive_value,
            "verdict": self.verdict,
            "growth_rate": self.growth_rate,
        }
        if self.h is not None:
            out["h"] = self.h
        return out


def _verdict(test: str, value: float, tol: float) -> str:
    edge = 1.0 if test == "schur" else 0.0
    if value < edge - tol:
        return "stable"
    if value > edge + tol:
        return "unstable"
    return "marginal"


def _log(x: float) -> float:
    return math.log(x) if x > 0 else -math.inf


def _report(kind, matrix, test, h=None, assumptions=None, tol=MARGINAL_TOL, per_step=False):
    spec = spectral_summary(matrix)
    if test == "hurwitz":
        value = spec.spectral_abscissa
        rate = value
    else:
        value = spec.spectral_radius
        rate = _log(value) if h is None or per_step else _log(value) / h
    return StabilityReport(
        kind=kind,
        matrix=matrix,
        test=test,
        decisive_value=value,
        verdict=_verdict(test, value, tol),
        growth_rate=rate,
        h=h,
        assumptions=dict(assumptions or {}),
        spectrum=spec,
    )


def _require_a1(mats: Iterable[NDArray], m: int, what: str = "modes") -> str:
    if m % 2 == 0:
        return "m even"
    if all(np.all(A[~np.eye(A.shape[0], dtype=bool)] >= 0) for A in mats):
        return f"all {what} Metzler"
    raise AssumptionError(
        f"assumption (A1) unsatisfied: m={m} is odd and not all {what} are Metzler"
    )


# ----------------------------------------------------------------------
# Markov switching
# ----------------------------------------------------------------------
def lifted_generator(Q: ArrayLike, mats: Sequence[ArrayLike], m: int) -> NDArray[np.float64]:
    """``Q^T (x) I_{n_m} + blockdiag((A_1)_[m], ..., (A_N)_[m])``."""
    Q = np.asarray(Q, dtype=np.float64)
    lifted = [infinitesimal_lift(A, m) for A in mats]
    if len(lifted) != Q.shape[0]:
        raise ModelError(f"{len(lifted)} mode matrices for a {Q.shape[0]}-state generator")
    nm = lifted[0].shape[0]
    return np.kron(Q.T, np.eye(nm)) + scipy.linalg.block_diag(*lifted)


def mjls_matrix(Q: ArrayLike, modes: ModeSet, m: int, tol: float = MARGINAL_TOL) -> StabilityReport:
    """Hurwitz test for a Markov jump linear system with generator ``Q``.

    State ``i`` of ``Q`` runs mode ``modes.labels[i]``.
    """
    Q = validate_generator(Q)
    mats = modes.as_list()
    a1 = _require_a1(mats, m)
    B = lifted_generator(Q, mats, m)
    return _report("mjls", B, "hurwitz", assumptions={"A1": a1, "A2": None}, tol=tol)


def mjls_sampled_matrix(
    Q: ArrayLike, modes: ModeSet, m: int, h: float, tol: float = MARGINAL_TOL
) -> StabilityReport:
    """Schur test on ``expm(B h)``, the Markov system sampled every ``h``."""
    Q = validate_generator(Q)
    mats = modes.as_list()
    a1 = _require_a1(mats, m)
    A_h = expm(lifted_generator(Q, mats, m) * h)
    return _report("mjls_sampled", A_h, "schur", h=h, assumptions={"A1": a1, "A2": h}, tol=tol)


# ----------------------------------------------------------------------
# Semi-Markov and generic one-cycle expectations
# ----------------------------------------------------------------------
def semimarkov_matrix(
    kernel: SemiMarkovKernel,
    modes: ModeSet,
    mode_of_state: Sequence[Hashable] | None,
    m: int,
    tol: float = MARGINAL_TOL,
    quad_tol: float = 1e-10,
) -> StabilityReport:
    """Schur test for a semi-Markov jump linear system.

    Block ``(i, j)`` is ``p_ji E[expm((A_j)_[m] tau)]`` with ``tau`` drawn from
    the holding distribution of the transition ``j -> i``.
    """
    if mode_of_state is None:
        mode_of_state = modes.labels
    N = kernel.N
    if len(mode_of_state) != N:
        raise ModelError(f"mode_of_state has {len(mode_of_state)} entries for {N} states")
    mats = [modes[lab] for lab in mode_of_state]
    a1 = _require_a1(mats, m)
    bound = kernel.support_bound
    if not math.isfinite(bound):
        raise AssumptionError("assumption (A2) unsatisfied: holding support is unbounded")
    lifted = [infinitesimal_lift(A, m) for A in mats]
    nm = lifted[0].shape[0]
    out = np.zeros((N * nm, N * nm))
    for j in range(N):
        L = lifted[j]
        for i in range(N):
            p = kernel.P[j, i]
            if p == 0:
                continue
            block = kernel.holding[(j, i)].expect(lambda t, L=L: expm(L * t), tol=quad_tol)
            out[i * nm:(i + 1) * nm, j * nm:(j + 1) * nm] = p * block
    return _report(
        "semi_markov", out, "schur", assumptions={"A1": a1, "A2": bound}, tol=tol, per_step=True
    )


def transition_expectation_matrix(
    N: int,
    transitions: Mapping[int, Sequence[tuple[float, int, ArrayLike]]],
    m: int,
    tol: float = MARGINAL_TOL,
    kind: str = "markov_regenerative",
) -> StabilityReport:
    """Schur test from finite joint laws of ``(theta_1, Phi)`` given ``theta_0``.

    ``transitions[j]`` lists atoms ``(prob, i, Phi)`` with
    ``prob = P(theta_1 = i, Phi(tau_1; 0) = Phi | theta_0 = j)``; the atoms of
    each start state must carry total mass one.  Block ``(i, j)`` becomes the
    sum of ``prob * Phi^[m]`` over atoms of ``j`` landing in ``i``.
    """
    atoms = []
    for j in range(N):
        row = list(transitions.get(j, ()))
        if not row:
            raise ModelError(f"no transitions given for state {j}")
        mass = math.fsum(float(p) for p, _, _ in row)
        if abs(mass - 1.0) > 1e-12:
            raise ModelError(f"transition atoms of state {j} sum to {mass!r}, not 1")
        for p, i, Phi in row:
            if p < 0:
                raise ModelError(f"negative atom probability {p} for state {j}")
            if not 0 <= int(i) < N:
                raise ModelError(f"atom target {i} out of range")
            atoms.append((float(p), int(i), j, np.asarray(Phi, dtype=np.float64)))
    if m % 2:
        if not all(np.all(Phi >= 0) for _, _, _, Phi in atoms):
            raise AssumptionError(
                f"assumption (A1) unsatisfied: m={m} is odd and some transition matrices "
                "have negative entries"
            )
        a1 = "all transition matrices nonnegative"
    else:
        a1 = "m even"
    n = atoms[0][3].shape[0]
    nm = lifted_dimension(n, m)
    out = np.zeros((N * nm, N * nm))
    lifts = induced_matrix(np.stack([a[3] for a in atoms]), m)
    for (p, i, j, _), L in zip(atoms, lifts):
        out[i * nm:(i + 1) * nm, j * nm:(j + 1) * nm] += p * L
    return _report(kind, out, "schur", assumptions={"A1": a1}, tol=tol, per_step=True)


def discrete_semimarkov_matrix(
    P: ArrayLike,
    F_dist: Mapping[tuple[int, int], Sequence[tuple[float, ArrayLike]]],
    m: int,
    tol: float = MARGINAL_TOL,
) -> StabilityReport:
    """Schur test for ``x(k+1) = F_k x(k)`` driven by a Markov chain ``theta``.

    ``F_dist[(j, i)]`` is the finite law ``[(prob, F), ...]`` of ``F_k`` given
    ``theta_k = j`` and ``theta_{k+1} = i``; every transition with
    ``p_ji > 0`` needs one, with atom probabilities summing to one.
    """
    P = validate_stochastic(P)
    N = P.shape[0]
    transitions: dict[int, list] = {j: [] for j in range(N)}
    for j in range(N):
        for i in range(N):
            if P[j, i] == 0:
                continue
            if (j, i) not in F_dist:
                raise ModelError(f"no distribution of F for transition ({j}, {i})")
            law = list(F_dist[(j, i)])
            mass = math.fsum(float(q) for q, _ in law)
            if abs(mass - 1.0) > 1e-12:
                raise ModelError(f"atoms for transition ({j}, {i}) sum to {mass!r}, not 1")
            transitions[j].extend((P[j, i] * float(q), i, F) for q, F in law)
    return transition_expectation_matrix(N, transitions, m, tol=tol, kind="discrete_semi_markov")


# ----------------------------------------------------------------------
# Regenerative switching
# ----------------------------------------------------------------------
def cycle_transition(schedule: Sequence[tuple[Hashable, float]], modes: ModeSet) -> NDArray[np.float64]:
    """State transition matrix of a schedule; the first segment acts first.

    For ``[(a, 1), (b, 1)]`` this is ``expm(A_b) @ expm(A_a)``.
    """
    Phi = np.eye(modes.n)
    for lab, dur in schedule:
        Phi = expm(modes[lab] * dur) @ Phi
    return Phi


def regenerative_matrix(
    cycles: Sequence[Cycle], modes: ModeSet, m: int, tol: float = MARGINAL_TOL
) -> StabilityReport:
    """Schur test on ``E[Phi(R_1; 0)^[m]]`` over a finite set of cycle scenarios."""
    cycles = list(cycles)
    if not cycles:
        raise ModelError("empty scenario list")
    total = math.fsum(c.prob for c in cycles)
    if abs(total - 1.0) > 1e-12:
        raise ModelError(f"scenario probabilities sum to {total!r}, not 1")
    used = {lab for c in cycles for lab, _ in c.schedule}
    a1 = _require_a1([modes[lab] for lab in used], m)
    Phis = np.stack([cycle_transition(c.schedule, modes) for c in cycles])
    lifts = induced_matrix(Phis, m)
    out = sum(c.prob * L for c, L in zip(cycles, lifts))
    bound = max(c.duration for c in cycles if c.prob > 0)
    return _report(
        "regenerative", out, "schur", assumptions={"A1": a1, "A2": bound}, tol=tol, per_step=True
    )


# ----------------------------------------------------------------------
# Periodic mode observation
# ----------------------------------------------------------------------
def periodic_block_generators(model: PeriodicObservationModel, m: int | None = None) -> list:
    """``B_j = Q^T (x) I + blockdiag_i((A_(i,j))_[m])`` for each held mode ``j``."""
    m = model.m if m is None else m
    N = model.num_states
    modes = model.modes
    return [
        lifted_generator(model.generator, [modes[(i, j)] for i in range(N)], m) for j in range(N)
    ]


def _assemble_periodic(Bs: Sequence[NDArray], h: float) -> NDArray[np.float64]:
    N = len(Bs)
    nm = Bs[0].shape[0] // N
    out = np.empty_like(Bs[0])
    for j, B in enumerate(Bs):
        cols = slice(j * nm, (j + 1) * nm)
        out[:, cols] = expm(B * h)[:, cols]
    return out


def periodic_observation_matrix(
    model: PeriodicObservationModel,
    m: int | None = None,
    h: float | None = None,
    tol: float = MARGINAL_TOL,
    _generators: Sequence[NDArray] | None = None,
) -> StabilityReport:
    """Schur test for feedback on periodically sampled Markov modes.

    Column block ``j`` of the result is column block ``j`` of
    ``expm(B_j h)``, i.e. the sum over ``j`` of ``expm(B_j h) (e_j e_j^T (x) I)``.
    """
    m = model.m if m is None else m
    h = model.h if h is None else float(h)
    if m % 2:
        raise AssumptionError(f"periodic observation requires even m, got {m}")
    if not math.isfinite(h) or h <= 0:
        raise ModelError(f"sampling period must be > 0, got {h}")
    Bs = _generators if _generators is not None else periodic_block_generators(model, m)
    A_h = _assemble_periodic(Bs, h)
    return _report("periodic", A_h, "schur", h=h, assumptions={"A1": "m even", "A2": h}, tol=tol)


class SweepRow(NamedTuple):
    h: float
    rho: float
    growth_rate: float


def sweep_growth_rate(
    model: PeriodicObservationModel,
    m: int | None,
    h_grid: Iterable[float],
    workers: int | None = None,
) -> list[SweepRow]:
    """Evaluate ``rho(A_h)`` and ``log(rho(A_h)) / h`` along ``h_grid``.

    Rows come back in grid order regardless of ``workers``.
    """
    m = model.m if m is None else m
    grid = [float(h) for h in h_grid]
    if any(not (math.isfinite(h) and h > 0) for h in grid):
        raise ModelError("all grid periods must be > 0")
    Bs = periodic_block_generators(model, m)

    def one(h):
        rep = periodic_observation_matrix(model, m, h, _generators=Bs)
        return SweepRow(h, rep.decisive_value, rep.growth_rate)

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, grid))
    return [one(h) for h in grid]


def find_crossing(rows: Sequence[SweepRow]) -> tuple[float, float] | None:
    """First consecutive pair of grid points bracketing ``rho = 1`` from below."""
    for a, b in zip(rows, rows[1:]):
        if a.rho < 1.0 <= b.rho:
            return a.h, b.h
    return None


# ----------------------------------------------------------------------
# Dispatch and output
# ----------------------------------------------------------------------
def analyze(
    model: SwitchedSystemModel, m: int | None = None, h: float | None = None
) -> StabilityReport:
    """Build the stability matrix appropriate to the model class."""
    m = model.m if m is None else m
    if isinstance(model, PeriodicObservationModel):
        return periodic_observation_matrix(model, m, h)
    if isinstance(model, MJLSModel):
        if h is not None:
            return mjls_sampled_matrix(model.generator, model.modes, m, h)
        return mjls_matrix(model.generator, model.modes, m)
    if isinstance(model, SemiMarkovModel):
        return semimarkov_matrix(model.kernel, model.modes, model.mode_of_state, m)
    if isinstance(model, RegenerativeModel):
        return regenerative_matrix(model.cycles, model.modes, m)
    raise TypeError(f"unsupported model type {type(model).__name__}")


def _fmt(v: float) -> str:
    return repr(float(v))


def sweep_to_csv(rows: Iterable[SweepRow]) -> str:
    buf = io.StringIO()
    buf.write("h,rho,growth_rate\n")
    for r in rows:
        buf.write(f"{_fmt(r.h)},{_fmt(r.rho)},{_fmt(r.growth_rate)}\n")
    return buf.getvalue()


def report_to_text(report: StabilityReport) -> str:
    name = "spectral radius" if report.test == "schur" else "spectral abscissa"
    rows = [
        ("class", report.kind),
        ("test", f"{report.test} ({report.dimension}x{report.dimension})"),
        (name, f"{report.decisive_value:.10g}"),
        ("growth rate", f"{report.growth_rate:.10g}"),
    ]
    if report.h is not None:
        rows.append(("h", f"{report.h:.10g}"))
    a1 = report.assumptions.get("A1")
    if a1:
        rows.append(("assumption A1", a1))
    rows.append(("verdict", report.verdict))
    return "".join(f"{k + ':':<19}{v}\n" for k, v in rows)


def report_to_json(report: StabilityReport) -> str:
    return json.dumps(report.to_dict(), indent=2) + "\n"
