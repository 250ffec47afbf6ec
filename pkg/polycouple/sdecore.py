"""Seeded evolution of two coupled copies of (W₁, W₂, I₍a,b₎).

The state stores the midpoint and half-difference of the W₁ copies, W₂ with
its difference, and every monomial integral with its difference. Synchronous
steps only move the midpoint and reflection steps only move the
half-difference, so both conservation laws hold to the last bit. Differences
of integrals are advanced directly from factorized power differences instead
of being recovered from two large, nearly equal numbers.

Paths are produced a block at a time with numpy: `evolve` turns a block of
standard normals into a whole path, `step` is a one-element block and
`run_until` scans blocks for the first crossing of a stopping rule.
"""

from dataclasses import dataclass
from dataclasses import field
from dataclasses import replace
from enum import Enum
from functools import lru_cache

import math
import numpy as np
import typing as t


class Mode(Enum):
    """Control applied to the W₁ copies during a phase."""

    SYNCHRONOUS = "synchronous"
    REFLECTION = "reflection"
    # Two-dimensional reflection of (W₁, W₂) across the perpendicular
    # bisector of the two points, used before W₂ is coupled.
    MIRROR = "mirror"


@dataclass(frozen=True, order=True)
class MonomialIndex:
    """Index (a, b) of the integral I₍a,b₎ = ∫ W₁ᵃ W₂ᵇ ∘ dW₂."""

    a: int
    b: int

    def __post_init__(self) -> None:
        if self.a < 0 or self.b < 0:
            raise ValueError(f"Exponents must be non-negative, got ({self.a}, {self.b})")

    @property
    def degree(self) -> int:
        """Scaling degree a+b+1."""
        return self.a + self.b + 1

    def __str__(self):
        """Stringer method."""
        return f"({self.a},{self.b})"


def order_key(idx: MonomialIndex, n: int) -> int:
    """Return f(a,b) = 2na + (2n+1)b, the key of the ≺ order on Δₙ."""
    return 2 * n * idx.a + (2 * n + 1) * idx.b


@lru_cache(maxsize=None)
def simplex(n: int) -> t.Tuple[MonomialIndex, ...]:
    """All of Δₙ = {(a,b): a+b ≤ n}, sorted by ≺."""
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    members = [MonomialIndex(a, b) for a in range(n + 1) for b in range(n + 1 - a)]
    return tuple(sorted(members, key=lambda idx: order_key(idx, n)))


@lru_cache(maxsize=None)
def coupled_indices(n: int) -> t.Tuple[MonomialIndex, ...]:
    """Indices that need coupling: a ≥ 1 and a+b ≤ n, sorted by ≺."""
    return tuple(idx for idx in simplex(n) if idx.a >= 1)


def predecessor(idx: MonomialIndex, n: int) -> t.Optional[MonomialIndex]:
    """Return the ≺-maximal element of Δₙ strictly below idx, or None."""
    members = simplex(n)
    if idx not in members:
        raise ValueError(f"{idx} is not in the simplex of order {n}")
    position = members.index(idx)
    return members[position - 1] if position else None


class NumericalFault(ArithmeticError):
    """A step produced a non-finite value."""

    def __init__(self, dump: t.Mapping[str, t.Any]):
        super().__init__("Non-finite value in coupled evolution")
        self.dump = dict(dump)

    def __str__(self):
        """Stringer method."""
        return f"{super().__str__()} - state at block start: {self.dump}"


def _power_difference(x: np.ndarray, y: np.ndarray, d: np.ndarray, power: int) -> np.ndarray:
    """xᵖ − yᵖ, given d = x − y, as d·Σ xᵏ yᵖ⁻¹⁻ᵏ."""
    if power == 0:
        return np.zeros_like(x)
    total = np.zeros_like(x)
    for k in range(power):
        total = total + x ** k * y ** (power - 1 - k)
    return d * total


def ito_increment(
    w1: np.ndarray, w2: np.ndarray, xi2: np.ndarray, idx: MonomialIndex, dt: float
) -> np.ndarray:
    """Euler step of I₍a,b₎ in Itô form, evaluated at the left endpoint."""
    increment = w1 ** idx.a * w2 ** idx.b * xi2
    if idx.b:
        increment = increment + 0.5 * idx.b * w1 ** idx.a * w2 ** (idx.b - 1) * dt
    return increment


@dataclass(frozen=True)
class CoupledState:
    """Joint state of the two copies.

    `values[k]` is I for `indices[k]` and `deltas[k]` is I − Ĩ. W₁ and W̃₁
    are `mid ± half`, W̃₂ is `w2 − dw2`.
    """

    n: int
    mid: float
    half: float
    w2: float
    dw2: float
    values: t.Tuple[float, ...]
    deltas: t.Tuple[float, ...]
    clock: float = 0.0
    # Physical time per unit of the simulation clock, Π r_k⁻² over the
    # rescalings applied so far.
    phys_scale: float = 1.0
    phys_time: float = 0.0

    def __post_init__(self) -> None:
        count = len(coupled_indices(self.n))
        if len(self.values) != count or len(self.deltas) != count:
            raise ValueError(
                f"Expected {count} integrals for n={self.n}, "
                f"got {len(self.values)} values and {len(self.deltas)} deltas"
            )

    @classmethod
    def from_points(
        cls,
        n: int,
        w1: float,
        w2: float,
        w1_tilde: float,
        w2_tilde: float,
        integrals: t.Optional[t.Mapping[MonomialIndex, t.Tuple[float, float]]] = None,
    ) -> "CoupledState":
        """Build a state from the two copies' coordinates.

        Integrals missing from `integrals` start at zero in both copies.
        """
        integrals = dict(integrals or {})
        unknown = set(integrals) - set(coupled_indices(n))
        if unknown:
            raise ValueError(f"Not coupled for n={n}: {sorted(unknown)}")
        pairs = [integrals.get(idx, (0.0, 0.0)) for idx in coupled_indices(n)]
        return cls(
            n=n,
            mid=0.5 * (w1 + w1_tilde),
            half=0.5 * (w1 - w1_tilde),
            w2=float(w2),
            dw2=float(w2 - w2_tilde),
            values=tuple(float(value) for value, _ in pairs),
            deltas=tuple(float(value - tilde) for value, tilde in pairs),
        )

    @property
    def indices(self) -> t.Tuple[MonomialIndex, ...]:
        return coupled_indices(self.n)

    @property
    def w1(self) -> float:
        return self.mid + self.half

    @property
    def w1t(self) -> float:
        return self.mid - self.half

    @property
    def w2t(self) -> float:
        return self.w2 - self.dw2

    @property
    def delta_w1(self) -> float:
        return 2.0 * self.half

    @property
    def integrals(self) -> t.Dict[MonomialIndex, t.Tuple[float, float]]:
        """Map of index to (I, Ĩ)."""
        return {
            idx: (value, value - delta)
            for idx, value, delta in zip(self.indices, self.values, self.deltas)
        }

    def delta_i(self, idx: MonomialIndex) -> float:
        return self.deltas[self.indices.index(idx)]

    def with_delta(self, idx: MonomialIndex, delta: float) -> "CoupledState":
        """Return a copy in which I − Ĩ for idx equals `delta`."""
        deltas = list(self.deltas)
        deltas[self.indices.index(idx)] = delta
        return replace(self, deltas=tuple(deltas))

    def coalesced(self, upto: t.Optional[MonomialIndex] = None) -> "CoupledState":
        """Set the tilde copy equal to the plain copy.

        W₁ and every integral ≼ upto (all of them if upto is None) are
        merged; W₂ is merged as well.
        """
        deltas = tuple(
            0.0 if upto is None or order_key(idx, self.n) <= order_key(upto, self.n) else delta
            for idx, delta in zip(self.indices, self.deltas)
        )
        return replace(self, mid=self.w1, half=0.0, dw2=0.0, deltas=deltas)

    def as_dict(self) -> t.Dict[str, t.Any]:
        """Plain representation, used for diagnostics and traces."""
        return {
            "n": self.n,
            "clock": self.clock,
            "w1": self.w1,
            "w1_tilde": self.w1t,
            "w2": self.w2,
            "w2_tilde": self.w2t,
            "integrals": {str(idx): list(pair) for idx, pair in self.integrals.items()},
            "phys_scale": self.phys_scale,
            "phys_time": self.phys_time,
        }


@dataclass(frozen=True)
class Path:
    """Block of K steps from `start`; arrays have K+1 entries, row 0 is `start`."""

    start: CoupledState
    dt: float
    mid: np.ndarray
    half: np.ndarray
    w2: np.ndarray
    dw2: np.ndarray
    values: np.ndarray
    deltas: np.ndarray

    @property
    def steps(self) -> int:
        return len(self.mid) - 1

    @property
    def w1(self) -> np.ndarray:
        return self.mid + self.half

    @property
    def delta_w1(self) -> np.ndarray:
        return 2.0 * self.half

    def delta_i(self, idx: MonomialIndex) -> np.ndarray:
        return self.deltas[:, self.start.indices.index(idx)]

    def is_finite(self) -> bool:
        return bool(
            np.isfinite(self.mid).all()
            and np.isfinite(self.half).all()
            and np.isfinite(self.w2).all()
            and np.isfinite(self.dw2).all()
            and np.isfinite(self.values).all()
            and np.isfinite(self.deltas).all()
        )

    def state_at(self, j: int) -> CoupledState:
        start = self.start
        return replace(
            start,
            mid=float(self.mid[j]),
            half=float(self.half[j]),
            w2=float(self.w2[j]),
            dw2=float(self.dw2[j]),
            values=tuple(float(v) for v in self.values[j]),
            deltas=tuple(float(d) for d in self.deltas[j]),
            clock=start.clock + j * self.dt,
            phys_time=start.phys_time + start.phys_scale * j * self.dt,
        )


def _accumulate(start: float, increments: np.ndarray) -> np.ndarray:
    out = np.empty(len(increments) + 1, dtype=float)
    out[0] = start
    out[1:] = increments
    return np.cumsum(out, axis=0)


def unit_direction(state: CoupledState) -> t.Tuple[float, float]:
    """Unit vector along (W₁ − W̃₁, W₂ − W̃₂)."""
    norm = math.hypot(state.delta_w1, state.dw2)
    if norm == 0.0:
        raise ValueError("The two Brownian points coincide, there is no direction")
    return state.delta_w1 / norm, state.dw2 / norm


def evolve(
    state: CoupledState,
    mode: Mode,
    normals: np.ndarray,
    dt: float,
    direction: t.Optional[t.Tuple[float, float]] = None,
) -> Path:
    """Advance `state` by one step per row of `normals`, each of size dt.

    Row k holds the standard normals (z₁, z₂) of step k; the Brownian
    increments are z·√dt. The result is a pure function of its arguments.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    z = np.asarray(normals, dtype=float).reshape(-1, 2)
    xi = z * math.sqrt(dt)
    xi1 = xi[:, 0]
    xi2 = xi[:, 1]
    zeros = np.zeros(len(xi))

    if mode is Mode.SYNCHRONOUS:
        d_mid, d_half, d_dw2 = xi1, zeros, zeros
    elif mode is Mode.REFLECTION:
        d_mid, d_half, d_dw2 = zeros, xi1, zeros
    else:
        if direction is None:
            direction = unit_direction(state)
        e1, e2 = direction
        projection = xi1 * e1 + xi2 * e2
        d_mid = xi1 - projection * e1
        d_half = projection * e1
        d_dw2 = 2.0 * projection * e2

    mid = _accumulate(state.mid, d_mid)
    half = _accumulate(state.half, d_half)
    w2 = _accumulate(state.w2, xi2)
    dw2 = _accumulate(state.dw2, d_dw2)

    w1 = mid[:-1] + half[:-1]
    w1t = mid[:-1] - half[:-1]
    dw1 = 2.0 * half[:-1]
    w2_left = w2[:-1]
    dw2_left = dw2[:-1]
    w2t = w2_left - dw2_left
    split_w2 = mode is Mode.MIRROR or state.dw2 != 0.0

    value_steps = np.empty((len(xi), len(state.indices)))
    delta_steps = np.empty_like(value_steps)
    for column, idx in enumerate(state.indices):
        a, b = idx.a, idx.b
        value_steps[:, column] = ito_increment(w1, w2_left, xi2, idx, dt)

        diff = _power_difference(w1, w1t, dw1, a) * w2_left ** b
        if split_w2:
            diff = diff + w1t ** a * _power_difference(w2_left, w2t, dw2_left, b)
        step = diff * xi2
        if mode is Mode.MIRROR:
            # Ĩ is driven by the reflected W̃₂ increment ξ₂ − d_dw2.
            step = step + w1t ** a * w2t ** b * d_dw2
        if b:
            drift = _power_difference(w1, w1t, dw1, a) * w2_left ** (b - 1)
            if split_w2:
                drift = drift + w1t ** a * _power_difference(w2_left, w2t, dw2_left, b - 1)
            step = step + 0.5 * b * drift * dt
        delta_steps[:, column] = step

    values = np.vstack([np.asarray(state.values, dtype=float), value_steps]).cumsum(axis=0)
    deltas = np.vstack([np.asarray(state.deltas, dtype=float), delta_steps]).cumsum(axis=0)
    return Path(state, dt, mid, half, w2, dw2, values, deltas)


class NoiseStream:
    """Reproducible supply of standard normal pairs for one replica.

    Philox is keyed by (master_seed, replica_id). Normals are drawn in fixed
    chunks so the sequence does not depend on how callers slice it.
    """

    CHUNK = 8192

    def __init__(self, master_seed: int, replica_id: int):
        if master_seed < 0 or replica_id < 0:
            raise ValueError(
                f"Seeds must be non-negative, got master_seed={master_seed}, "
                f"replica_id={replica_id}"
            )
        self.master_seed = master_seed
        self.replica_id = replica_id
        self.counter = 0
        sequence = np.random.SeedSequence([master_seed, replica_id])
        self._generator = np.random.Generator(np.random.Philox(sequence))
        self._buffer = np.empty((0, 2))
        self._offset = 0

    def __repr__(self):
        return (
            f"NoiseStream(master_seed={self.master_seed}, "
            f"replica_id={self.replica_id}, counter={self.counter})"
        )

    def peek(self, k: int) -> np.ndarray:
        """Return the next k pairs without consuming them."""
        available = len(self._buffer) - self._offset
        if available < k:
            chunks = [self._buffer[self._offset :]]
            while available < k:
                chunks.append(self._generator.standard_normal((self.CHUNK, 2)))
                available += self.CHUNK
            self._buffer = np.concatenate(chunks)
            self._offset = 0
        return self._buffer[self._offset : self._offset + k]

    def consume(self, k: int) -> None:
        self.peek(k)
        self._offset += k
        self.counter += k

    def normals(self, k: int) -> np.ndarray:
        out = self.peek(k).copy()
        self.consume(k)
        return out


def _checked(path: Path) -> Path:
    if not path.is_finite():
        raise NumericalFault(path.start.as_dict())
    return path


def step(
    state: CoupledState,
    mode: Mode,
    dt: float,
    stream: NoiseStream,
    direction: t.Optional[t.Tuple[float, float]] = None,
) -> CoupledState:
    """One Euler step driven by the next pair of the stream."""
    path = _checked(evolve(state, mode, stream.peek(1), dt, direction))
    stream.consume(1)
    return path.state_at(1)


def scale(state: CoupledState, r: float) -> CoupledState:
    """Apply the Brownian scaling (W, I₍a,b₎) → (rW, r^{a+b+1} I₍a,b₎)."""
    if not r > 0:
        raise ValueError(f"Scaling factor must be positive, got {r}")
    factors = [r ** idx.degree for idx in state.indices]
    return replace(
        state,
        mid=r * state.mid,
        half=r * state.half,
        w2=r * state.w2,
        dw2=r * state.dw2,
        values=tuple(value * f for value, f in zip(state.values, factors)),
        deltas=tuple(delta * f for delta, f in zip(state.deltas, factors)),
        clock=0.0,
        phys_scale=state.phys_scale / (r * r),
    )


def frame_ratio(state: CoupledState, reference_phys_scale: float) -> float:
    """Cumulative scale factor between `state` and a frame with the given phys_scale."""
    return math.sqrt(reference_phys_scale / state.phys_scale)


def delta_norm(
    state: CoupledState, upto: t.Optional[MonomialIndex] = None, unscaled_by: float = 1.0
) -> float:
    """Euclidean norm of (ΔW₁, ΔI₍c,d₎ for (c,d) ≼ upto).

    With `unscaled_by` = ρ every entry is first mapped back through a scaling
    by ρ, i.e. divided by ρ raised to its degree.
    """
    terms = [state.delta_w1 / unscaled_by]
    for idx, delta in zip(state.indices, state.deltas):
        if upto is not None and order_key(idx, state.n) > order_key(upto, state.n):
            continue
        terms.append(delta / unscaled_by ** idx.degree)
    return float(np.linalg.norm(terms))


Observed = t.Union[CoupledState, Path]


class StoppingRule:
    """Event ending a phase.

    `gauge` is a signed quantity whose sign change (or zero) marks the event;
    it accepts a state or a whole path. `clamp` puts the triggering
    quantity exactly on its target. `distance` bounds from below how far the
    driving Brownian motion still has to travel before the event can happen.
    """

    def gauge(self, x: Observed) -> t.Any:
        raise NotImplementedError

    def admissible(self, path: Path) -> np.ndarray:
        return np.ones(path.steps + 1, dtype=bool)

    def accepts(self, state: CoupledState) -> bool:
        """Whether an interpolated landing point may end the phase."""
        return True

    def distance(self, state: CoupledState, mode: Mode) -> t.Optional[float]:
        return None

    def holds(self, state: CoupledState) -> bool:
        raise NotImplementedError

    def clamp(self, state: CoupledState) -> CoupledState:
        raise NotImplementedError

    def first_crossing(self, path: Path) -> t.Optional[int]:
        """Smallest j ≥ 1 such that the event happens in step j, or None."""
        g = self.gauge(path)
        crossed = (g[1:] == 0.0) | (g[:-1] * g[1:] < 0.0)
        crossed &= self.admissible(path)[1:]
        hits = np.flatnonzero(crossed)
        return int(hits[0]) + 1 if hits.size else None


@dataclass(frozen=True)
class DeltaW1Reaches(StoppingRule):
    """|W₁ − W̃₁| reaches `level`."""

    level: float

    def gauge(self, x: Observed) -> t.Any:
        return self.level - np.abs(x.delta_w1)

    def distance(self, state: CoupledState, mode: Mode) -> t.Optional[float]:
        return max(0.0, self.level - abs(state.delta_w1)) / 2.0

    def holds(self, state: CoupledState) -> bool:
        return abs(state.delta_w1) >= self.level

    def clamp(self, state: CoupledState) -> CoupledState:
        return replace(state, half=math.copysign(0.5 * self.level, state.half))


@dataclass(frozen=True)
class DeltaW1Vanishes(StoppingRule):
    """W₁ = W̃₁."""

    def gauge(self, x: Observed) -> t.Any:
        return x.delta_w1

    def distance(self, state: CoupledState, mode: Mode) -> t.Optional[float]:
        # Under reflection ΔW₁ moves twice as fast as W₁.
        return abs(state.delta_w1) / 2.0

    def holds(self, state: CoupledState) -> bool:
        return state.half == 0.0

    def clamp(self, state: CoupledState) -> CoupledState:
        return replace(state, half=0.0)


@dataclass(frozen=True)
class DeltaIVanishes(StoppingRule):
    """I₍a,b₎ = Ĩ₍a,b₎."""

    index: MonomialIndex

    def gauge(self, x: Observed) -> t.Any:
        return x.delta_i(self.index)

    def distance(self, state: CoupledState, mode: Mode) -> t.Optional[float]:
        # Only for ΔI₍₁,₀₎ under shared W₂ and a frozen gap, where it moves as ΔW₁·W₂.
        if (
            mode is Mode.SYNCHRONOUS
            and self.index == MonomialIndex(1, 0)
            and state.dw2 == 0.0
            and state.half != 0.0
        ):
            return abs(state.delta_i(self.index) / state.delta_w1)
        return None

    def holds(self, state: CoupledState) -> bool:
        return state.delta_i(self.index) == 0.0

    def clamp(self, state: CoupledState) -> CoupledState:
        return state.with_delta(self.index, 0.0)


@dataclass(frozen=True)
class W2Reaches(StoppingRule):
    """The shared W₂ reaches `level`."""

    level: float

    def gauge(self, x: Observed) -> t.Any:
        return x.w2 - self.level

    def distance(self, state: CoupledState, mode: Mode) -> t.Optional[float]:
        return abs(state.w2 - self.level)

    def holds(self, state: CoupledState) -> bool:
        return state.w2 == self.level

    def clamp(self, state: CoupledState) -> CoupledState:
        return replace(state, w2=self.level)


@dataclass(frozen=True)
class OnLine(StoppingRule):
    """(W₁, W₂) meets the line W₂ = slope·W₁ with |W₁| ≥ min_abs_w1."""

    slope: float
    min_abs_w1: float = 0.0
    # Relative tolerance for accepting a state as already on the line.
    rtol: float = 1e-12

    def gauge(self, x: Observed) -> t.Any:
        return x.w2 - self.slope * x.w1

    def admissible(self, path: Path) -> np.ndarray:
        return np.abs(path.w1) >= self.min_abs_w1

    def accepts(self, state: CoupledState) -> bool:
        return abs(state.w1) >= self.min_abs_w1

    def distance(self, state: CoupledState, mode: Mode) -> t.Optional[float]:
        offset = abs(state.w2 - self.slope * state.w1) / math.hypot(1.0, self.slope)
        return max(offset, self.min_abs_w1 - abs(state.w1))

    def holds(self, state: CoupledState) -> bool:
        offset = abs(state.w2 - self.slope * state.w1)
        return offset <= self.rtol * max(1.0, abs(state.w2)) and abs(state.w1) >= self.min_abs_w1

    def clamp(self, state: CoupledState) -> CoupledState:
        return replace(state, w2=self.slope * state.w1)


@dataclass(frozen=True)
class PairMeets(StoppingRule):
    """(W₁, W₂) = (W̃₁, W̃₂); `direction` is the unit vector of the initial difference."""

    direction: t.Tuple[float, float]

    def gauge(self, x: Observed) -> t.Any:
        e1, e2 = self.direction
        return e1 * x.delta_w1 + e2 * x.dw2

    def distance(self, state: CoupledState, mode: Mode) -> t.Optional[float]:
        return abs(self.gauge(state)) / 2.0

    def holds(self, state: CoupledState) -> bool:
        return state.half == 0.0 and state.dw2 == 0.0

    def clamp(self, state: CoupledState) -> CoupledState:
        return replace(state, mid=state.w1, half=0.0, dw2=0.0)


@dataclass(frozen=True)
class PhaseControl:
    """One phase of a coupling: a control, the rule that ends it and its length unit.

    The phase steps at dt·length² and gives up after cap·length².
    """

    name: str
    mode: Mode
    rule: StoppingRule
    length: float = 1.0
    cap: float = 1e3
    direction: t.Optional[t.Tuple[float, float]] = None


@dataclass(frozen=True)
class RunResult:
    state: CoupledState
    hit: bool
    # Largest |W₁ − W̃₁| seen along the simulated path, end point included.
    sup_delta_w1: float = 0.0


# Blocks start small so that phases ending almost immediately stay cheap.
FIRST_BLOCK = 64
MAX_BLOCK = 4096
# Steps are coarsened once the event is more than this many lengths away;
# the coarse step is then measured in units of distance / COARSE_RATIO.
COARSE_RATIO = 8.0


def _plan_block(
    rule: StoppingRule, state: CoupledState, mode: Mode, dt: float, length: float
) -> t.Tuple[float, t.Optional[int]]:
    """Step size and, for coarse blocks, the number of steps of the next block.

    A coarse block spans (distance / COARSE_RATIO)² of time, so reaching the
    event inside it takes an excursion of COARSE_RATIO standard deviations.
    """
    distance = rule.distance(state, mode)
    if distance is None or not distance > COARSE_RATIO * length:
        return dt, None
    relative = dt / (length * length)
    spread = distance / COARSE_RATIO
    return relative * spread * spread, max(1, int(round(1.0 / relative)))


def run_until(
    state: CoupledState,
    mode: Mode,
    rule: StoppingRule,
    dt: float,
    stream: NoiseStream,
    t_cap: float,
    direction: t.Optional[t.Tuple[float, float]] = None,
    length: float = 1.0,
) -> RunResult:
    """Evolve until `rule` fires or the simulation clock reaches t_cap.

    `dt` is the step near the event and `length` the spatial unit it
    resolves; far from the event steps grow with the remaining distance. On
    firing, one partial step lands on the linearly interpolated crossing and
    the rule clamps its quantity onto the target. A landing point the rule
    does not accept is skipped and the search goes on from the end of the
    step.
    """
    if rule.holds(state):
        return RunResult(rule.clamp(state), True, abs(state.delta_w1))
    if not t_cap > state.clock:
        raise ValueError(f"t_cap {t_cap} must exceed the current time {state.clock}")
    if mode is Mode.MIRROR and direction is None:
        direction = unit_direction(state)

    sup = abs(state.delta_w1)
    block = FIRST_BLOCK
    while state.clock < t_cap:
        remaining = t_cap - state.clock
        h, coarse = _plan_block(rule, state, mode, dt, length)
        if coarse is None:
            k = max(1, min(block, int(math.ceil(remaining / h))))
        else:
            k = coarse
            if k * h > remaining:
                # coarse blocks end exactly on the cap
                k = max(1, int(math.ceil(remaining / h)))
                h = remaining / k
        normals = stream.peek(k)
        path = _checked(evolve(state, mode, normals, h, direction))
        j = rule.first_crossing(path)
        if j is None:
            stream.consume(k)
            sup = max(sup, float(np.abs(path.delta_w1).max()))
            state = path.state_at(k)
            if coarse is None:
                block = min(2 * block, MAX_BLOCK)
            continue

        g = rule.gauge(path)
        before, after = float(g[j - 1]), float(g[j])
        fraction = 1.0 if after == 0.0 else before / (before - after)
        fraction = min(max(fraction, 0.0), 1.0)
        landed = path.state_at(j - 1)
        if fraction > 0.0:
            partial = evolve(
                landed, mode, normals[j - 1 : j] * math.sqrt(fraction), fraction * h, direction
            )
            landed = _checked(partial).state_at(1)
        stream.consume(j)
        if rule.accepts(landed):
            sup = max(sup, float(np.abs(path.delta_w1[:j]).max()), abs(landed.delta_w1))
            return RunResult(rule.clamp(landed), True, sup)
        sup = max(sup, float(np.abs(path.delta_w1[: j + 1]).max()))
        state = path.state_at(j)
    return RunResult(state, False, sup)


def run_phase(
    state: CoupledState, phase: PhaseControl, dt: float, stream: NoiseStream
) -> RunResult:
    """Run one phase in its own length unit, starting its clock at zero."""
    unit = phase.length * phase.length
    start = replace(state, clock=0.0)
    result = run_until(
        start,
        phase.mode,
        phase.rule,
        dt * unit,
        stream,
        phase.cap * unit,
        phase.direction,
        phase.length,
    )
    return RunResult(
        replace(result.state, clock=state.clock + result.state.clock),
        result.hit,
        result.sup_delta_w1,
    )


@dataclass(frozen=True)
class Ensemble:
    """Independent paths from a common start, one entry per path."""

    w1: np.ndarray
    w2: np.ndarray
    integrals: t.Dict[MonomialIndex, np.ndarray]
    # ∫W₁dW₂ − ∫W₂dW₁ from two left-point sums.
    levy_direct: np.ndarray
    # 2·∫W₁dW₂ − (W₁W₂ − W₁(0)W₂(0)).
    levy_identity: np.ndarray
    steps: int = field(default=0)


def simulate_ensemble(
    indices: t.Iterable[MonomialIndex],
    t_end: float,
    dt: float,
    n_paths: int,
    rng: np.random.Generator,
    start: t.Tuple[float, float] = (0.0, 0.0),
) -> Ensemble:
    """Simulate n_paths independent copies of W and the given integrals up to t_end."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    indices = tuple(indices)
    steps = int(round(t_end / dt))
    w1 = np.full(n_paths, float(start[0]))
    w2 = np.full(n_paths, float(start[1]))
    integrals = {idx: np.zeros(n_paths) for idx in indices}
    w1_dw2 = np.zeros(n_paths)
    w2_dw1 = np.zeros(n_paths)
    sqrt_dt = math.sqrt(dt)
    for _ in range(steps):
        xi = rng.standard_normal((n_paths, 2)) * sqrt_dt
        for idx in indices:
            integrals[idx] += ito_increment(w1, w2, xi[:, 1], idx, dt)
        w1_dw2 += w1 * xi[:, 1]
        w2_dw1 += w2 * xi[:, 0]
        w1 = w1 + xi[:, 0]
        w2 = w2 + xi[:, 1]
    product_change = w1 * w2 - start[0] * start[1]
    return Ensemble(
        w1=w1,
        w2=w2,
        integrals=integrals,
        levy_direct=w1_dw2 - w2_dw1,
        levy_identity=2.0 * w1_dw2 - product_change,
        steps=steps,
    )
