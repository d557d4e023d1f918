"""Switched-system model data and the JSON model-file format.

A model couples a set of mode matrices ``A_lambda`` with one of four
switching-process classes:

``mjls``
    Time-homogeneous Markov switching with generator ``Q`` (one mode per state).
``semi_markov``
    Embedded chain ``P`` with per-transition holding-time distributions.
``regenerative``
    I.i.d. cycles drawn from a finite list of piecewise-constant schedules.
``periodic``
    Markov plant mode ``r`` with state feedback ``u = K_q x`` where ``q``
    holds the value of ``r`` sampled every ``h`` time units.

Model file (version 1)::

    {"version": 1, "m": 2, "class": "mjls",
     "modes": [{"label": "a", "matrix": [[...], ...]}, ...],
     "generator": [[...], ...]}

Class-specific blocks are ``generator`` (mjls), ``kernel`` (semi_markov:
``{"P": ..., "holding": [{"from": i, "to": j, "dist": {...}}],
"mode_of_state": [...]}``), ``cycles`` (regenerative: ``[{"prob": p,
"schedule": [{"label": ..., "duration": d}]}]``) and ``periodic``
(``{"plant_A": ..., "plant_B": ..., "gains": ..., "generator": ..., "h": h}``).
State indices in the file are 0-based.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Any, ClassVar, Hashable, Mapping, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

__all__ = [
    "ModelError",
    "AssumptionError",
    "ModeSet",
    "HoldingDistribution",
    "Deterministic",
    "DiscreteFinite",
    "Uniform",
    "TruncatedExponential",
    "SemiMarkovKernel",
    "Cycle",
    "SwitchedSystemModel",
    "MJLSModel",
    "SemiMarkovModel",
    "RegenerativeModel",
    "PeriodicObservationModel",
    "check_metzler",
    "is_metzler",
    "closed_loop_modes",
    "validate_generator",
    "validate_stochastic",
    "parse_model",
    "load_model",
    "model_to_dict",
    "serialize_model",
    "holding_from_dict",
]

FILE_VERSION = 1
ROW_TOL = 1e-12


class ModelError(ValueError):
    """Invalid model data.  ``path`` names the offending field when known."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        prefix = ""
        if line is not None:
            prefix += f"line {line}: "
        if path:
            prefix += f"{path}: "
        super().__init__(prefix + message)
        self.message = message


class AssumptionError(ModelError):
    """The stability characterization does not apply to this model."""


def _readonly(a: ArrayLike) -> NDArray[np.float64]:
    arr = np.array(a, dtype=np.float64)
    arr.flags.writeable = False
    return arr


def is_metzler(A: ArrayLike) -> bool:
    A = np.asarray(A, dtype=np.float64)
    off = A[~np.eye(A.shape[0], dtype=bool)]
    return bool(np.all(off >= 0))


# ----------------------------------------------------------------------
# Modes
# ----------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class ModeSet:
    """Mode labels with their ``n x n`` system matrices."""

    labels: tuple[Hashable, ...]
    matrices: Mapping[Hashable, NDArray[np.float64]]

    def __post_init__(self):
        if not self.labels:
            raise ModelError("at least one mode is required", "modes")
        if len(set(self.labels)) != len(self.labels):
            raise ModelError("duplicate mode labels", "modes")
        mats = {}
        n = None
        for lab in self.labels:
            if lab not in self.matrices:
                raise ModelError(f"no matrix for mode {lab!r}", "modes")
            A = np.asarray(self.matrices[lab], dtype=np.float64)
            if A.ndim != 2 or A.shape[0] != A.shape[1]:
                raise ModelError(f"mode {lab!r} matrix must be square, got {A.shape}", "modes")
            if not np.all(np.isfinite(A)):
                raise ModelError(f"mode {lab!r} matrix has non-finite entries", "modes")
            if n is None:
                n = A.shape[0]
            elif A.shape[0] != n:
                raise ModelError(
                    f"mode {lab!r} has dimension {A.shape[0]}, expected {n}", "modes"
                )
            mats[lab] = _readonly(A)
        object.__setattr__(self, "matrices", mats)

    @classmethod
    def from_list(cls, matrices: Sequence[ArrayLike], labels: Sequence[Hashable] | None = None):
        if labels is None:
            labels = range(len(matrices))
        labels = tuple(labels)
        return cls(labels, dict(zip(labels, matrices)))

    @property
    def n(self) -> int:
        return next(iter(self.matrices.values())).shape[0]

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, label: Hashable) -> NDArray[np.float64]:
        try:
            return self.matrices[label]
        except KeyError:
            raise KeyError(f"mode {label!r} not in mode set") from None

    def __iter__(self):
        return iter(self.labels)

    def as_list(self) -> list[NDArray[np.float64]]:
        return [self.matrices[lab] for lab in self.labels]

    @property
    def metzler_flags(self) -> dict[Hashable, bool]:
        return check_metzler(self)

    def shifted(self, c: float) -> "ModeSet":
        """Return the mode set with every matrix replaced by ``A - c I``."""
        eye = np.eye(self.n)
        return ModeSet(self.labels, {lab: A - c * eye for lab, A in self.matrices.items()})

    def __eq__(self, other):
        if not isinstance(other, ModeSet):
            return NotImplemented
        return self.labels == other.labels and all(
            np.array_equal(self.matrices[lab], other.matrices[lab]) for lab in self.labels
        )


def check_metzler(modes: ModeSet) -> dict[Hashable, bool]:
    """Per-mode Metzler flags (all off-diagonal entries nonnegative).

    All flags true is sufficient, not necessary, for positivity of the
    switched system.
    """
    return {lab: is_metzler(modes[lab]) for lab in modes.labels}


# ----------------------------------------------------------------------
# Holding-time distributions
# ----------------------------------------------------------------------
class HoldingDistribution:
    """Bounded, almost surely positive holding-time distribution."""

    kind: ClassVar[str]

    @property
    def support_bound(self) -> float:
        raise NotImplementedError

    def sample(self, rng: np.random.Generator) -> float:
        raise NotImplementedError

    def expect(self, fn, tol: float = 1e-10) -> NDArray[np.float64]:
        """Return ``E[fn(tau)]`` for a matrix-valued ``fn``."""
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


def _positive(name: str, v: float) -> float:
    v = float(v)
    if not math.isfinite(v) or v <= 0:
        raise ModelError(f"{name} must be finite and > 0, got {v}")
    return v


@dataclass(frozen=True)
class Deterministic(HoldingDistribution):
    value: float
    kind: ClassVar[str] = "deterministic"

    def __post_init__(self):
        object.__setattr__(self, "value", _positive("deterministic holding time", self.value))

    @property
    def support_bound(self) -> float:
        return self.value

    def sample(self, rng):
        return self.value

    def expect(self, fn, tol=1e-10):
        return np.asarray(fn(self.value), dtype=np.float64)

    def to_dict(self):
        return {"type": self.kind, "value": self.value}


@dataclass(frozen=True)
class DiscreteFinite(HoldingDistribution):
    values: tuple[float, ...]
    probs: tuple[float, ...]
    kind: ClassVar[str] = "discrete"

    def __post_init__(self):
        values = tuple(_positive("discrete holding time", v) for v in self.values)
        probs = tuple(float(p) for p in self.probs)
        if not values or len(values) != len(probs):
            raise ModelError("discrete holding needs equal-length non-empty values/probs")
        if any(p < 0 or not math.isfinite(p) for p in probs):
            raise ModelError("discrete holding probabilities must be >= 0")
        if abs(math.fsum(probs) - 1.0) > ROW_TOL:
            raise ModelError(f"discrete holding probabilities sum to {math.fsum(probs)}, not 1")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "probs", probs)

    @property
    def support_bound(self):
        return max(v for v, p in zip(self.values, self.probs) if p > 0)

    def sample(self, rng):
        k = rng.choice(len(self.values), p=np.array(self.probs))
        return self.values[k]

    def expect(self, fn, tol=1e-10):
        out = None
        for v, p in zip(self.values, self.probs):
            if p == 0:
                continue
            term = p * np.asarray(fn(v), dtype=np.float64)
            out = term if out is None else out + term
        return out

    def to_dict(self):
        return {"type": self.kind, "values": list(self.values), "probs": list(self.probs)}


@dataclass(frozen=True)
class Uniform(HoldingDistribution):
    low: float
    high: float
    kind: ClassVar[str] = "uniform"

    def __post_init__(self):
        low, high = float(self.low), float(self.high)
        if not (math.isfinite(low) and math.isfinite(high)) or low < 0 or high <= low:
            raise ModelError(f"uniform holding needs 0 <= low < high < inf, got ({low}, {high})")
        object.__setattr__(self, "low", low)
        object.__setattr__(self, "high", high)

    @property
    def support_bound(self):
        return self.high

    def sample(self, rng):
        return float(rng.uniform(self.low, self.high))

    def expect(self, fn, tol=1e-10):
        from .numkernel import gauss_legendre_adaptive

        width = self.high - self.low
        return gauss_legendre_adaptive(lambda t: fn(t) / width, self.low, self.high, tol=tol)

    def to_dict(self):
        return {"type": self.kind, "low": self.low, "high": self.high}


@dataclass(frozen=True)
class TruncatedExponential(HoldingDistribution):
    """Exponential(rate) conditioned on ``tau <= cap``."""

    rate: float
    cap: float
    kind: ClassVar[str] = "truncated_exponential"

    def __post_init__(self):
        object.__setattr__(self, "rate", _positive("truncated exponential rate", self.rate))
        object.__setattr__(self, "cap", _positive("truncated exponential cap", self.cap))

    @property
    def support_bound(self):
        return self.cap

    @property
    def _mass(self) -> float:
        return -math.expm1(-self.rate * self.cap)

    def sample(self, rng):
        u = 1.0 - rng.random()  # in (0, 1]
        return float(-math.log1p(-u * self._mass) / self.rate)

    def expect(self, fn, tol=1e-10):
        from .numkernel import gauss_legendre_adaptive

        lam, z = self.rate, self._mass
        return gauss_legendre_adaptive(
            lambda t: (lam * math.exp(-lam * t) / z) * np.asarray(fn(t)), 0.0, self.cap, tol=tol
        )

    def to_dict(self):
        return {"type": self.kind, "rate": self.rate, "cap": self.cap}


_HOLDING_TYPES = {
    "deterministic": lambda d: Deterministic(d["value"]),
    "discrete": lambda d: DiscreteFinite(tuple(d["values"]), tuple(d["probs"])),
    "uniform": lambda d: Uniform(d["low"], d["high"]),
    "truncated_exponential": lambda d: TruncatedExponential(d["rate"], d["cap"]),
}


def holding_from_dict(d: Mapping[str, Any]) -> HoldingDistribution:
    if not isinstance(d, Mapping) or "type" not in d:
        raise ModelError("holding distribution must be an object with a 'type'")
    kind = d["type"]
    if kind not in _HOLDING_TYPES:
        raise ModelError(
            f"unknown holding type {kind!r}; expected one of {sorted(_HOLDING_TYPES)}"
        )
    try:
        return _HOLDING_TYPES[kind](d)
    except KeyError as exc:
        raise ModelError(f"{kind} holding is missing parameter {exc.args[0]!r}") from None
    except TypeError as exc:
        raise ModelError(f"bad {kind} holding parameters: {exc}") from None


# ----------------------------------------------------------------------
# Process structures
# ----------------------------------------------------------------------
def validate_generator(Q: ArrayLike, path: str = "generator") -> NDArray[np.float64]:
    """Check that ``Q`` is an infinitesimal generator and return it read-only."""
    Q = np.asarray(Q, dtype=np.float64)
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1] or Q.shape[0] == 0:
        raise ModelError(f"generator must be a non-empty square matrix, got shape {Q.shape}", path)
    if not np.all(np.isfinite(Q)):
        raise ModelError("generator has non-finite entries", path)
    off = Q[~np.eye(Q.shape[0], dtype=bool)]
    if np.any(off < 0):
        raise ModelError("generator has negative off-diagonal entries", path)
    sums = Q.sum(axis=1)
    bad = np.flatnonzero(np.abs(sums) > ROW_TOL)
    if bad.size:
        i = int(bad[0])
        raise ModelError(f"generator row {i} sums to {sums[i]:.6g}, not 0", path)
    return _readonly(Q)


def validate_stochastic(P: ArrayLike, path: str = "P") -> NDArray[np.float64]:
    """Check that ``P`` is row-stochastic and return it read-only."""
    P = np.asarray(P, dtype=np.float64)
    if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] == 0:
        raise ModelError(f"transition matrix must be non-empty square, got shape {P.shape}", path)
    if not np.all(np.isfinite(P)) or np.any(P < 0):
        raise ModelError("transition probabilities must be finite and >= 0", path)
    sums = P.sum(axis=1)
    bad = np.flatnonzero(np.abs(sums - 1.0) > ROW_TOL)
    if bad.size:
        i = int(bad[0])
        raise ModelError(f"transition row {i} sums to {sums[i]:.15g}, not 1", path)
    return _readonly(P)


@dataclass(frozen=True, eq=False)
class SemiMarkovKernel:
    """Kernel ``P(theta_1 = j, tau_1 <= t | theta_0 = i) = p_ij F_ij(t)``."""

    P: NDArray[np.float64]
    holding: Mapping[tuple[int, int], HoldingDistribution]

    def __post_init__(self):
        P = validate_stochastic(self.P, "kernel.P")
        N = P.shape[0]
        holding = {}
        for key, dist in self.holding.items():
            i, j = (int(k) for k in key)
            if not (0 <= i < N and 0 <= j < N):
                raise ModelError(f"holding entry ({i}, {j}) out of range", "kernel.holding")
            if not isinstance(dist, HoldingDistribution):
                raise ModelError(f"holding ({i}, {j}) is not a distribution", "kernel.holding")
            holding[(i, j)] = dist
        for i in range(N):
            for j in range(N):
                if P[i, j] > 0 and (i, j) not in holding:
                    raise ModelError(
                        f"no holding distribution for transition ({i}, {j}) with p > 0",
                        "kernel.holding",
                    )
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "holding", holding)

    @property
    def N(self) -> int:
        return self.P.shape[0]

    @property
    def support_bound(self) -> float:
        return max(
            self.holding[(i, j)].support_bound
            for i in range(self.N)
            for j in range(self.N)
            if self.P[i, j] > 0
        )

    def __eq__(self, other):
        if not isinstance(other, SemiMarkovKernel):
            return NotImplemented
        return np.array_equal(self.P, other.P) and self.holding == other.holding


@dataclass(frozen=True)
class Cycle:
    """One regeneration-cycle scenario: a probability and a mode schedule."""

    prob: float
    schedule: tuple[tuple[Hashable, float], ...]

    def __post_init__(self):
        prob = float(self.prob)
        if not (0 <= prob <= 1):
            raise ModelError(f"cycle probability must be in [0, 1], got {prob}", "cycles")
        sched = tuple((lab, _positive("schedule duration", d)) for lab, d in self.schedule)
        if not sched:
            raise ModelError("cycle schedule is empty", "cycles")
        object.__setattr__(self, "prob", prob)
        object.__setattr__(self, "schedule", sched)

    @property
    def duration(self) -> float:
        return math.fsum(d for _, d in self.schedule)


# ----------------------------------------------------------------------
# Models
# ----------------------------------------------------------------------
def _a1_status(modes: ModeSet, m: int) -> str | None:
    if m % 2 == 0:
        return "m even"
    if all(check_metzler(modes).values()):
        return "all modes Metzler"
    return None


def _check_degree(m) -> int:
    if isinstance(m, bool) or int(m) != m or int(m) < 1:
        raise ModelError(f"lift degree m must be an integer >= 1, got {m!r}", "m")
    return int(m)


class SwitchedSystemModel:
    """Common interface of the four model classes."""

    kind: ClassVar[str]
    modes: ModeSet
    m: int

    @property
    def num_states(self) -> int:
        raise NotImplementedError

    @property
    def cycle_bound(self) -> float | None:
        """Bound ``T`` on regeneration intervals (None: any sampling period works)."""
        raise NotImplementedError

    @property
    def assumptions(self) -> dict[str, Any]:
        return {"A1": _a1_status(self.modes, self.m), "A2": self.cycle_bound}

    def _check_a1(self):
        if _a1_status(self.modes, self.m) is None:
            raise AssumptionError(
                f"assumption (A1) unsatisfied: m={self.m} is odd and not all modes are Metzler",
                "m",
            )

    def with_degree(self, m: int) -> "SwitchedSystemModel":
        import dataclasses

        return dataclasses.replace(self, m=m)


@dataclass(frozen=True, eq=False)
class MJLSModel(SwitchedSystemModel):
    """Markov jump linear system; state ``i`` of ``Q`` runs ``modes.labels[i]``."""

    modes: ModeSet
    generator: NDArray[np.float64]
    m: int = 2
    kind: ClassVar[str] = "mjls"

    def __post_init__(self):
        object.__setattr__(self, "m", _check_degree(self.m))
        Q = validate_generator(self.generator)
        if Q.shape[0] != len(self.modes):
            raise ModelError(
                f"generator is {Q.shape[0]}x{Q.shape[0]} but there are {len(self.modes)} modes",
                "generator",
            )
        object.__setattr__(self, "generator", Q)
        self._check_a1()

    @property
    def num_states(self):
        return len(self.modes)

    @property
    def cycle_bound(self):
        return None

    def __eq__(self, other):
        return (
            isinstance(other, MJLSModel)
            and self.m == other.m
            and self.modes == other.modes
            and np.array_equal(self.generator, other.generator)
        )


@dataclass(frozen=True, eq=False)
class SemiMarkovModel(SwitchedSystemModel):
    """Semi-Markov jump linear system; mode is ``mode_of_state[theta_k]``."""

    modes: ModeSet
    kernel: SemiMarkovKernel
    mode_of_state: tuple[Hashable, ...] | None = None
    m: int = 2
    kind: ClassVar[str] = "semi_markov"

    def __post_init__(self):
        object.__setattr__(self, "m", _check_degree(self.m))
        mos = self.mode_of_state
        if mos is None:
            mos = self.modes.labels
        mos = tuple(mos)
        if len(mos) != self.kernel.N:
            raise ModelError(
                f"mode_of_state has {len(mos)} entries, kernel has {self.kernel.N} states",
                "kernel.mode_of_state",
            )
        for lab in mos:
            if lab not in self.modes.matrices:
                raise ModelError(f"unknown mode {lab!r}", "kernel.mode_of_state")
        object.__setattr__(self, "mode_of_state", mos)
        self._check_a1()

    @property
    def num_states(self):
        return self.kernel.N

    @property
    def cycle_bound(self):
        return self.kernel.support_bound

    def __eq__(self, other):
        return (
            isinstance(other, SemiMarkovModel)
            and self.m == other.m
            and self.modes == other.modes
            and self.kernel == other.kernel
            and self.mode_of_state == other.mode_of_state
        )


@dataclass(frozen=True, eq=False)
class RegenerativeModel(SwitchedSystemModel):
    """Regenerative switching with finitely many cycle scenarios."""

    modes: ModeSet
    cycles: tuple[Cycle, ...]
    m: int = 2
    kind: ClassVar[str] = "regenerative"

    def __post_init__(self):
        object.__setattr__(self, "m", _check_degree(self.m))
        cycles = tuple(self.cycles)
        if not cycles:
            raise ModelError("at least one cycle scenario is required", "cycles")
        total = math.fsum(c.prob for c in cycles)
        if abs(total - 1.0) > ROW_TOL:
            raise ModelError(f"cycle probabilities sum to {total!r}, not 1", "cycles")
        for c in cycles:
            for lab, _ in c.schedule:
                if lab not in self.modes.matrices:
                    raise ModelError(f"schedule uses unknown mode {lab!r}", "cycles")
        object.__setattr__(self, "cycles", cycles)
        self._check_a1()

    @property
    def num_states(self):
        return 1

    @property
    def cycle_bound(self):
        return max(c.duration for c in self.cycles if c.prob > 0)

    def __eq__(self, other):
        return (
            isinstance(other, RegenerativeModel)
            and self.m == other.m
            and self.modes == other.modes
            and self.cycles == other.cycles
        )


@dataclass(frozen=True, eq=False)
class PeriodicObservationModel(SwitchedSystemModel):
    """Markov plant ``dx/dt = A_r x + B_r u`` with ``u = K_q x``, ``q_t = r_{kh}``.

    Closed-loop modes are labelled ``(i, j)`` = (plant mode, held mode).
    """

    plant_A: tuple[NDArray[np.float64], ...]
    plant_B: tuple[NDArray[np.float64], ...]
    gains: tuple[NDArray[np.float64], ...]
    generator: NDArray[np.float64]
    h: float
    m: int = 2
    kind: ClassVar[str] = "periodic"

    def __post_init__(self):
        object.__setattr__(self, "m", _check_degree(self.m))
        Q = validate_generator(self.generator, "periodic.generator")
        N = Q.shape[0]
        As = tuple(_readonly(a) for a in self.plant_A)
        Bs = tuple(_readonly(np.atleast_2d(b)) for b in self.plant_B)
        Ks = tuple(_readonly(np.atleast_2d(k)) for k in self.gains)
        for name, seq in (("plant_A", As), ("plant_B", Bs), ("gains", Ks)):
            if len(seq) != N:
                raise ModelError(f"{name} has {len(seq)} entries, generator has {N} states",
                                 f"periodic.{name}")
        n = As[0].shape[0]
        for i, A in enumerate(As):
            if A.shape != (n, n):
                raise ModelError(f"plant_A[{i}] has shape {A.shape}, expected ({n}, {n})",
                                 "periodic.plant_A")
        p = Bs[0].shape[1]
        for i, B in enumerate(Bs):
            if B.shape != (n, p):
                raise ModelError(f"plant_B[{i}] has shape {B.shape}, expected ({n}, {p})",
                                 "periodic.plant_B")
        for j, K in enumerate(Ks):
            if K.shape != (p, n):
                raise ModelError(f"gains[{j}] has shape {K.shape}, expected ({p}, {n})",
                                 "periodic.gains")
        h = float(self.h)
        if not math.isfinite(h) or h <= 0:
            raise ModelError(f"sampling period h must be > 0, got {self.h}", "periodic.h")
        object.__setattr__(self, "plant_A", As)
        object.__setattr__(self, "plant_B", Bs)
        object.__setattr__(self, "gains", Ks)
        object.__setattr__(self, "generator", Q)
        object.__setattr__(self, "h", h)
        if self.m % 2:
            raise AssumptionError(
                f"assumption (A1) unsatisfied: periodic observation requires even m, got {self.m}",
                "m",
            )

    @property
    def num_states(self):
        return self.generator.shape[0]

    @property
    def n(self) -> int:
        return self.plant_A[0].shape[0]

    @cached_property
    def modes(self) -> ModeSet:
        return closed_loop_modes(self)

    @property
    def cycle_bound(self):
        return self.h

    def with_period(self, h: float) -> "PeriodicObservationModel":
        import dataclasses

        return dataclasses.replace(self, h=h)

    def continuous_observation(self) -> MJLSModel:
        """The closed loop under ideal feedback ``u = K_r x``."""
        N = self.num_states
        mats = [self.plant_A[i] + self.plant_B[i] @ self.gains[i] for i in range(N)]
        return MJLSModel(ModeSet.from_list(mats), self.generator, self.m)

    def __eq__(self, other):
        if not isinstance(other, PeriodicObservationModel):
            return False
        same = lambda xs, ys: len(xs) == len(ys) and all(
            np.array_equal(x, y) for x, y in zip(xs, ys)
        )
        return (
            self.m == other.m
            and self.h == other.h
            and np.array_equal(self.generator, other.generator)
            and same(self.plant_A, other.plant_A)
            and same(self.plant_B, other.plant_B)
            and same(self.gains, other.gains)
        )


def closed_loop_modes(model: PeriodicObservationModel) -> ModeSet:
    """Modes ``A_(i,j) = A_P,i + B_P,i K_j`` over all pairs ``(i, j)``."""
    N = len(model.plant_A)
    mats = {}
    for i in range(N):
        for j in range(N):
            B, K = model.plant_B[i], model.gains[j]
            if B.shape[1] != K.shape[0]:
                raise ModelError(f"B[{i}] has {B.shape[1]} inputs but K[{j}] has {K.shape[0]} rows")
            mats[(i, j)] = model.plant_A[i] + B @ K
    return ModeSet(tuple(mats), mats)


# ----------------------------------------------------------------------
# Parsing and serialization
# ----------------------------------------------------------------------
def _matrix(value, path: str, ndim: int = 2) -> NDArray[np.float64]:
    try:
        arr = np.array(value, dtype=np.float64)
    except (TypeError, ValueError):
        raise ModelError("expected a rectangular numeric array", path) from None
    if arr.ndim != ndim:
        raise ModelError(f"expected a {ndim}-d array, got {arr.ndim}-d", path)
    return arr


def _label(value):
    # JSON arrays cannot be dict keys; labels are strings or integers.
    if isinstance(value, list):
        return tuple(_label(v) for v in value)
    return value


def _require(doc: Mapping, key: str, where: str | None = None):
    if key not in doc:
        raise ModelError(f"missing required field {key!r}", where or key)
    return doc[key]


def _parse_modes(doc) -> ModeSet:
    raw = _require(doc, "modes")
    if not isinstance(raw, list) or not raw:
        raise ModelError("expected a non-empty array of modes", "modes")
    labels, mats = [], {}
    for k, item in enumerate(raw):
        if not isinstance(item, Mapping):
            raise ModelError("mode entries must be objects", f"modes[{k}]")
        lab = _label(_require(item, "label", f"modes[{k}]"))
        labels.append(lab)
        mats[lab] = _matrix(_require(item, "matrix", f"modes[{k}]"), f"modes[{k}].matrix")
    return ModeSet(tuple(labels), mats)


def parse_model(document: str | bytes | Mapping[str, Any]) -> SwitchedSystemModel:
    """Parse and validate a model document (JSON text or decoded mapping).

    Raises
    ------
    ModelError
        On syntax or schema violations; ``line`` is set for JSON syntax
        errors and, for schema errors, to the line of the offending
        top-level field when the text is available.
    """
    text = None
    if isinstance(document, (str, bytes)):
        text = document.decode() if isinstance(document, bytes) else document
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ModelError(f"invalid JSON: {exc.msg} (column {exc.colno})", line=exc.lineno) from None
    else:
        doc = document
    try:
        return _parse_doc(doc)
    except ModelError as exc:
        if text is not None and exc.line is None and exc.path:
            line = _locate_key(text, exc.path)
            if line is not None:
                raise type(exc)(exc.message, exc.path, line) from None
        raise


def _locate_key(text: str, path: str) -> int | None:
    key = path.split(".")[0].split("[")[0]
    needle = f'"{key}"'
    for lineno, line in enumerate(text.splitlines(), start=1):
        if needle in line:
            return lineno
    return None


def _parse_doc(doc) -> SwitchedSystemModel:
    if not isinstance(doc, Mapping):
        raise ModelError("model document must be a JSON object")
    version = _require(doc, "version")
    if version != FILE_VERSION:
        raise ModelError(f"unsupported version {version!r}, expected {FILE_VERSION}", "version")
    m = _check_degree(doc.get("m", 2))
    kind = _require(doc, "class")

    if kind == "mjls":
        return MJLSModel(_parse_modes(doc), _matrix(_require(doc, "generator"), "generator"), m)

    if kind == "semi_markov":
        modes = _parse_modes(doc)
        kern = _require(doc, "kernel")
        if not isinstance(kern, Mapping):
            raise ModelError("kernel must be an object", "kernel")
        P = _matrix(_require(kern, "P", "kernel.P"), "kernel.P")
        holding = {}
        for k, item in enumerate(kern.get("holding", [])):
            where = f"kernel.holding[{k}]"
            if not isinstance(item, Mapping):
                raise ModelError("holding entries must be objects", where)
            key = (int(_require(item, "from", where)), int(_require(item, "to", where)))
            if key in holding:
                raise ModelError(f"duplicate holding entry for {key}", where)
            try:
                holding[key] = holding_from_dict(_require(item, "dist", where))
            except ModelError as exc:
                raise ModelError(exc.message, where) from None
        mos = kern.get("mode_of_state")
        mos = None if mos is None else tuple(_label(v) for v in mos)
        return SemiMarkovModel(modes, SemiMarkovKernel(P, holding), mos, m)

    if kind == "regenerative":
        modes = _parse_modes(doc)
        raw = _require(doc, "cycles")
        if not isinstance(raw, list):
            raise ModelError("cycles must be an array", "cycles")
        cycles = []
        for k, item in enumerate(raw):
            where = f"cycles[{k}]"
            sched = tuple(
                (_label(_require(s, "label", where)), _require(s, "duration", where))
                for s in _require(item, "schedule", where)
            )
            try:
                cycles.append(Cycle(_require(item, "prob", where), sched))
            except ModelError as exc:
                raise ModelError(exc.message, where) from None
        return RegenerativeModel(modes, tuple(cycles), m)

    if kind == "periodic":
        per = _require(doc, "periodic")
        if not isinstance(per, Mapping):
            raise ModelError("periodic must be an object", "periodic")
        As = [_matrix(a, f"periodic.plant_A[{k}]") for k, a in
              enumerate(_require(per, "plant_A", "periodic.plant_A"))]
        Bs = [_matrix(b, f"periodic.plant_B[{k}]") for k, b in
              enumerate(_require(per, "plant_B", "periodic.plant_B"))]
        Ks = [_matrix(g, f"periodic.gains[{k}]") for k, g in
              enumerate(_require(per, "gains", "periodic.gains"))]
        Q = _matrix(_require(per, "generator", "periodic.generator"), "periodic.generator")
        h = _require(per, "h", "periodic.h")
        return PeriodicObservationModel(tuple(As), tuple(Bs), tuple(Ks), Q, h, m)

    raise ModelError(
        f"unknown class {kind!r}; expected mjls, semi_markov, regenerative or periodic", "class"
    )


def load_model(path) -> SwitchedSystemModel:
    with open(path, encoding="utf-8") as fh:
        return parse_model(fh.read())


def _jsonable_label(lab):
    return list(lab) if isinstance(lab, tuple) else lab


def _modes_to_list(modes: ModeSet) -> list:
    return [{"label": _jsonable_label(lab), "matrix": modes[lab].tolist()} for lab in modes.labels]


def model_to_dict(model: SwitchedSystemModel) -> dict:
    """Inverse of :func:`parse_model` on the decoded-document level."""
    doc: dict[str, Any] = {"version": FILE_VERSION, "m": model.m, "class": model.kind}
    if isinstance(model, MJLSModel):
        doc["modes"] = _modes_to_list(model.modes)
        doc["generator"] = model.generator.tolist()
    elif isinstance(model, SemiMarkovModel):
        doc["modes"] = _modes_to_list(model.modes)
        doc["kernel"] = {
            "P": model.kernel.P.tolist(),
            "holding": [
                {"from": i, "to": j, "dist": d.to_dict()}
                for (i, j), d in sorted(model.kernel.holding.items())
            ],
            "mode_of_state": [_jsonable_label(lab) for lab in model.mode_of_state],
        }
    elif isinstance(model, RegenerativeModel):
        doc["modes"] = _modes_to_list(model.modes)
        doc["cycles"] = [
            {
                "prob": c.prob,
                "schedule": [{"label": _jsonable_label(lab), "duration": d} for lab, d in c.schedule],
            }
            for c in model.cycles
        ]
    elif isinstance(model, PeriodicObservationModel):
        doc["periodic"] = {
            "plant_A": [a.tolist() for a in model.plant_A],
            "plant_B": [b.tolist() for b in model.plant_B],
            "gains": [k.tolist() for k in model.gains],
            "generator": model.generator.tolist(),
            "h": model.h,
        }
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")
    return doc


def serialize_model(model: SwitchedSystemModel, indent: int | None = 2) -> str:
    return json.dumps(model_to_dict(model), indent=indent)
