"""Phase-structured couplings of two copies of (W₁, W₂, I₍a,b₎).

Every coupler works in cycles. A cycle is a fixed sequence of phases, each
a control (synchronous or reflection) run until a stopping rule fires.
After a cycle the state is rescaled so the remaining discrepancy has unit
size again, and physical time is recovered from `phys_scale`.
"""

from dataclasses import dataclass
from dataclasses import field
from dataclasses import replace
from polycouple.sdecore import coupled_indices
from polycouple.sdecore import CoupledState
from polycouple.sdecore import delta_norm
from polycouple.sdecore import DeltaIVanishes
from polycouple.sdecore import DeltaW1Reaches
from polycouple.sdecore import DeltaW1Vanishes
from polycouple.sdecore import frame_ratio
from polycouple.sdecore import Mode
from polycouple.sdecore import MonomialIndex
from polycouple.sdecore import NoiseStream
from polycouple.sdecore import OnLine
from polycouple.sdecore import order_key
from polycouple.sdecore import PairMeets
from polycouple.sdecore import PhaseControl
from polycouple.sdecore import predecessor
from polycouple.sdecore import run_phase
from polycouple.sdecore import scale
from polycouple.sdecore import unit_direction
from polycouple.sdecore import W2Reaches
from scipy.optimize import brentq
from scipy.special import logsumexp

import math
import numpy as np
import typing as t

HEISENBERG = MonomialIndex(1, 0)
MAX_N = 4

# Phases of the monomial cycle during which W₁ ≠ W̃₁.
ACTIVE_PHASES = ("tau1", "eta1", "lambda1")

Trace = t.Optional[t.Callable[["CycleStats"], None]]


class PreconditionViolated(ValueError):
    """A coupler was entered from a state it is not defined for."""

    def __init__(self, operation: str, reason: str):
        super().__init__(f"{operation} cannot start from this state")
        self.operation = operation
        self.reason = reason

    def __str__(self):
        """Stringer method."""
        return f"{super().__str__()} - {self.reason}"


class CapExhausted(RuntimeError):
    """A phase hit its time cap before its stopping rule fired."""

    def __init__(self, phase: str, state: CoupledState, sup_delta_w1: float = 0.0):
        super().__init__(f"Phase {phase} reached its time cap")
        self.phase = phase
        self.state = state
        self.sup_delta_w1 = sup_delta_w1


@dataclass(frozen=True)
class CouplerConfig:
    """Tuning knobs shared by all couplers.

    Phases that end on a one-sided hitting event (T2, T3, η₁, λ₁ and the
    line phases) outlive C length² units with probability close to
    0.8/√C. A full coupling runs thousands of such phases, so a cap of 10³
    would abandon almost every replica. The caps therefore default to 10¹²,
    where an abandoned phase is rare enough not to show in success rates;
    steps coarsen far from the event, so a long phase costs time
    logarithmic in its duration.
    """

    R: float = 4.0
    # Declare-coupled threshold on delta_norm, measured in the frame where
    # the discrepancy had unit size when the coupler started.
    tol_couple: float = 1e-8
    max_cycles: int = 200
    # Step of the simulation clock near a stopping event, in units of each
    # phase's length squared.
    dt: float = 1e-4
    t_cap_factor: float = 1.0
    n: int = 1
    # Phase time caps, in units of each phase's length squared.
    phase_cap: float = 1e12
    theta_cap: float = 1e12
    # False runs the Heisenberg coupler in the coordinates it was given.
    rescale: bool = True

    def __post_init__(self) -> None:
        if not self.R > 1:
            raise ValueError(f"R must be greater than 1, got {self.R}")
        if not self.tol_couple > 0:
            raise ValueError(f"tol_couple must be positive, got {self.tol_couple}")
        if self.max_cycles < 1:
            raise ValueError(f"max_cycles must be at least 1, got {self.max_cycles}")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not self.t_cap_factor > 0:
            raise ValueError(f"t_cap_factor must be positive, got {self.t_cap_factor}")
        if not 1 <= self.n <= MAX_N:
            raise ValueError(f"n must be between 1 and {MAX_N}, got {self.n}")
        if not (self.phase_cap > 0 and self.theta_cap > 0):
            raise ValueError("Phase caps must be positive")


@dataclass(frozen=True)
class PhaseRecord:
    """How one phase went: simulation and physical duration, length unit, and
    the watched difference (ΔI of the coupled index, ΔW₁ otherwise) at its end,
    and the largest |ΔW₁| reached during the phase."""

    name: str
    sim_time: float
    phys_time: float
    length: float
    delta_end: float
    sup_delta_w1: float = 0.0

    def to_dict(self) -> t.Dict[str, t.Any]:
        return {
            "name": self.name,
            "sim_time": self.sim_time,
            "phys_time": self.phys_time,
            "length": self.length,
            "delta_end": self.delta_end,
            "sup_delta_w1": self.sup_delta_w1,
        }


@dataclass(frozen=True)
class CycleStats:
    cycle_index: int
    coupler: str
    level: str
    phase_durations: t.Tuple[PhaseRecord, ...]
    delta_in: float
    # Recorded before the rescaling that closes the cycle.
    delta_out: float
    scale_applied: float = 1.0
    # Largest |ΔW₁|, |ΔI| below the level when the monomial stage starts.
    entry_residual: t.Optional[float] = None

    def phase(self, name: str) -> PhaseRecord:
        for record in self.phase_durations:
            if record.name == name:
                return record
        raise KeyError(name)

    @property
    def sup_delta_w1(self) -> float:
        """Largest |ΔW₁| over the cycle, in the cycle's coordinates."""
        return max((record.sup_delta_w1 for record in self.phase_durations), default=0.0)

    def to_dict(self) -> t.Dict[str, t.Any]:
        return {
            "cycle_index": self.cycle_index,
            "coupler": self.coupler,
            "level": self.level,
            "phase_durations": [record.to_dict() for record in self.phase_durations],
            "delta_in": self.delta_in,
            "delta_out": self.delta_out,
            "scale_applied": self.scale_applied,
            "entry_residual": self.entry_residual,
        }


@dataclass(frozen=True)
class CouplingOutcome:
    """Result of one coupling attempt.

    `state` is expressed in the coordinates the coupler was called with.
    On failure the times are those reached when the attempt was abandoned.
    """

    success: bool
    coupling_time_physical: float
    cycles: t.List[CycleStats]
    active_time: float
    sup_delta_w1: float
    state: CoupledState
    initial_scale: float = 1.0
    failure: t.Optional[str] = None
    failed_level: t.Optional[MonomialIndex] = None
    extra: t.Dict[str, t.Any] = field(default_factory=dict)


def _require(condition: bool, operation: str, reason: str) -> None:
    if not condition:
        raise PreconditionViolated(operation, reason)


def _emit(trace: Trace, stats: CycleStats) -> None:
    if trace is not None:
        trace(stats)


def _run(
    state: CoupledState,
    phase: PhaseControl,
    cfg: CouplerConfig,
    stream: NoiseStream,
    records: t.List[PhaseRecord],
    watched: t.Optional[MonomialIndex] = None,
) -> CoupledState:
    result = run_phase(state, replace(phase, cap=phase.cap * cfg.t_cap_factor), cfg.dt, stream)
    end = result.state
    records.append(
        PhaseRecord(
            name=phase.name,
            sim_time=end.clock - state.clock,
            phys_time=end.phys_time - state.phys_time,
            length=phase.length,
            delta_end=end.delta_i(watched) if watched else end.delta_w1,
            sup_delta_w1=result.sup_delta_w1,
        )
    )
    if not result.hit:
        raise CapExhausted(phase.name, end, result.sup_delta_w1)
    return end


def _line_length(state: CoupledState, slope: float) -> float:
    """Length unit for reaching W₂ = slope·W₁: the distance to it, at least 1."""
    return max(1.0, abs(state.w2 - slope * state.w1) / math.hypot(1.0, slope))


def _in_frame(state: CoupledState, reference: CoupledState) -> CoupledState:
    """Express `state` in the coordinates of `reference` by undoing the rescalings."""
    r = math.sqrt(state.phys_scale / reference.phys_scale)
    if r != 1.0:
        state = scale(state, r)
    return replace(state, clock=reference.clock, phys_scale=reference.phys_scale)


def _finish(
    entry: CoupledState,
    state: CoupledState,
    cycles: t.List[CycleStats],
    success: bool,
    active_time: t.Optional[float],
    sup_delta_w1: float,
    initial_scale: float,
    failure: t.Optional[str] = None,
    failed_level: t.Optional[MonomialIndex] = None,
) -> CouplingOutcome:
    elapsed = state.phys_time - entry.phys_time
    return CouplingOutcome(
        success=success,
        coupling_time_physical=elapsed,
        cycles=cycles,
        active_time=elapsed if active_time is None else min(active_time, elapsed),
        sup_delta_w1=sup_delta_w1,
        state=_in_frame(state, entry),
        initial_scale=initial_scale,
        failure=failure,
        failed_level=failed_level,
    )


def _merged(state: CoupledState, idx: MonomialIndex) -> CoupledState:
    """Set W̃₁ = W₁ and Ĩ₍a,b₎ = I₍a,b₎ for idx only."""
    return replace(state.with_delta(idx, 0.0), mid=state.w1, half=0.0)


def _precoupled(state: CoupledState, operation: str) -> None:
    _require(state.half == 0.0, operation, "W₁ and W̃₁ must coincide")
    _require(state.dw2 == 0.0, operation, "W₂ and W̃₂ must coincide")


def heisenberg_cycle(
    state: CoupledState, cfg: CouplerConfig, stream: NoiseStream, cycle_index: int = 0
) -> t.Tuple[CoupledState, CycleStats]:
    """Run T1, T2 and T3 once.

    T1 reflects until |ΔW₁| = R⁻¹, T2 is synchronous until ΔI₍₁,₀₎ = 0 and T3
    reflects until ΔW₁ = 0. Without rescaling, R⁻¹ is measured in units of
    |ΔI₍₁,₀₎|^{1/2}.
    """
    _precoupled(state, "heisenberg_cycle")
    delta_in = abs(state.delta_i(HEISENBERG))
    unit = 1.0 if cfg.rescale else math.sqrt(delta_in)
    level = unit / cfg.R
    records: t.List[PhaseRecord] = []

    state = _run(
        state,
        PhaseControl("T1", Mode.REFLECTION, DeltaW1Reaches(level), level, cfg.phase_cap),
        cfg,
        stream,
        records,
        HEISENBERG,
    )
    # ΔI moves by |ΔW₁|·ΔW₂ during T2, so W₂ has to travel |ΔI|/|ΔW₁|.
    travel = abs(state.delta_i(HEISENBERG)) / level if level > 0 else 1.0
    state = _run(
        state,
        PhaseControl(
            "T2", Mode.SYNCHRONOUS, DeltaIVanishes(HEISENBERG), travel or 1.0, cfg.phase_cap
        ),
        cfg,
        stream,
        records,
        HEISENBERG,
    )
    state = _run(
        state,
        PhaseControl("T3", Mode.REFLECTION, DeltaW1Vanishes(), level, cfg.phase_cap),
        cfg,
        stream,
        records,
        HEISENBERG,
    )
    stats = CycleStats(
        cycle_index=cycle_index,
        coupler="heisenberg",
        level=str(HEISENBERG),
        phase_durations=tuple(records),
        delta_in=delta_in,
        delta_out=abs(state.delta_i(HEISENBERG)),
    )
    return state, stats


def heisenberg_couple(
    state: CoupledState, cfg: CouplerConfig, stream: NoiseStream, trace: Trace = None
) -> CouplingOutcome:
    """Couple W₁ and I₍₁,₀₎ given W₂ = W̃₂ and W₁ = W̃₁."""
    _precoupled(state, "heisenberg_couple")
    entry = state
    d0 = state.delta_i(HEISENBERG)
    if d0 == 0.0:
        return _finish(entry, state.coalesced(HEISENBERG), [], True, 0.0, 0.0, 1.0)

    initial = abs(d0) ** -0.5 if cfg.rescale else 1.0
    if cfg.rescale:
        state = scale(state, initial)
    # Phys scale of the frame in which |ΔI₍₁,₀₎| was 1 at entry.
    unit_frame = entry.phys_scale * abs(d0)
    cycles: t.List[CycleStats] = []
    sup = 0.0
    try:
        for k in range(cfg.max_cycles):
            state, stats = heisenberg_cycle(state, cfg, stream, k)
            sup = max(sup, stats.sup_delta_w1 * math.sqrt(state.phys_scale / entry.phys_scale))
            rho = frame_ratio(state, unit_frame)
            if delta_norm(state, HEISENBERG, unscaled_by=rho) <= cfg.tol_couple:
                cycles.append(stats)
                _emit(trace, stats)
                return _finish(
                    entry, state.coalesced(HEISENBERG), cycles, True, None, sup, initial
                )
            if cfg.rescale:
                r = abs(state.delta_i(HEISENBERG)) ** -0.5
                state = scale(state, r)
                stats = replace(stats, scale_applied=r)
            cycles.append(stats)
            _emit(trace, stats)
    except CapExhausted as exc:
        sup = max(sup, exc.sup_delta_w1 * math.sqrt(exc.state.phys_scale / entry.phys_scale))
        return _finish(
            entry, exc.state, cycles, False, None, sup, initial, f"cap:{exc.phase}", HEISENBERG
        )
    return _finish(entry, state, cycles, False, None, sup, initial, "max_cycles", HEISENBERG)


def _check_monomial(idx: MonomialIndex, operation: str) -> None:
    _require(idx.a >= 1, operation, f"index {idx} has a = 0")
    _require(idx.a + idx.b > 1, operation, f"index {idx} is the Heisenberg index")


def monomial_cycle(
    state: CoupledState,
    idx: MonomialIndex,
    cfg: CouplerConfig,
    stream: NoiseStream,
    cycle_index: int = 0,
) -> t.Tuple[CoupledState, CycleStats]:
    """Run θ₁, τ₁, η₁, λ₁ and β₁ once for I₍a,b₎."""
    _check_monomial(idx, "monomial_cycle")
    _precoupled(state, "monomial_cycle")
    a, b = idx.a, idx.b
    R, n = cfg.R, cfg.n
    delta_in = abs(state.delta_i(idx))
    records: t.List[PhaseRecord] = []

    # θ₁: synchronous until back on the line with |W₁| ≥ R^{2n}. Steps are
    # resolved on the scale of that radius.
    radius = R ** (2 * n)
    state = _run(
        state,
        PhaseControl("theta1", Mode.SYNCHRONOUS, OnLine(R, radius), radius, cfg.theta_cap),
        cfg,
        stream,
        records,
        idx,
    )
    w1_theta = state.w1
    spread = 1.0 / (abs(w1_theta) ** (a + b - 1) * R ** b)

    # τ₁: reflection opens a gap of exactly `spread` in W₁.
    state = _run(
        state,
        PhaseControl("tau1", Mode.REFLECTION, DeltaW1Reaches(spread), spread, cfg.phase_cap),
        cfg,
        stream,
        records,
        idx,
    )

    # η₁: with the gap frozen, W₂ is steered so that the drift of ΔI cancels it.
    orientation = math.copysign(1.0, state.delta_w1) * math.copysign(1.0, w1_theta) ** (a + b - 1)
    target = state.w2 - math.copysign(1.0, state.delta_i(idx)) * orientation / a
    state = _run(
        state,
        PhaseControl("eta1", Mode.SYNCHRONOUS, W2Reaches(target), 1.0 / a, cfg.phase_cap),
        cfg,
        stream,
        records,
        idx,
    )

    state = _run(
        state,
        PhaseControl("lambda1", Mode.REFLECTION, DeltaW1Vanishes(), spread, cfg.phase_cap),
        cfg,
        stream,
        records,
        idx,
    )
    state = _run(
        state,
        PhaseControl("beta1", Mode.SYNCHRONOUS, OnLine(R), _line_length(state, R), cfg.phase_cap),
        cfg,
        stream,
        records,
        idx,
    )
    stats = CycleStats(
        cycle_index=cycle_index,
        coupler="monomial",
        level=str(idx),
        phase_durations=tuple(records),
        delta_in=delta_in,
        delta_out=abs(state.delta_i(idx)),
    )
    return state, stats


def monomial_couple(
    state: CoupledState,
    idx: MonomialIndex,
    cfg: CouplerConfig,
    stream: NoiseStream,
    trace: Trace = None,
) -> CouplingOutcome:
    """Couple W₁ and I₍a,b₎, starting with W₁ = W̃₁, W₂ = W̃₂ on the line W₂ = R·W₁.

    Lower integrals are carried along but not coupled.
    """
    _check_monomial(idx, "monomial_couple")
    _precoupled(state, "monomial_couple")
    entry = state
    d0 = state.delta_i(idx)
    if d0 == 0.0:
        return _finish(entry, _merged(state, idx), [], True, 0.0, 0.0, 1.0)

    degree = idx.degree
    initial = abs(d0) ** (-1.0 / degree)
    state = scale(state, initial)
    unit_frame = state.phys_scale
    cycles: t.List[CycleStats] = []
    sup = 0.0
    active = 0.0
    try:
        for k in range(cfg.max_cycles):
            state, stats = monomial_cycle(state, idx, cfg, stream, k)
            active += sum(
                record.phys_time
                for record in stats.phase_durations
                if record.name in ACTIVE_PHASES
            )
            sup = max(sup, stats.sup_delta_w1 * math.sqrt(state.phys_scale / entry.phys_scale))
            rho = frame_ratio(state, unit_frame)
            remaining = math.hypot(state.delta_w1 / rho, state.delta_i(idx) / rho ** degree)
            if remaining <= cfg.tol_couple:
                cycles.append(stats)
                _emit(trace, stats)
                return _finish(entry, _merged(state, idx), cycles, True, active, sup, initial)
            r = abs(state.delta_i(idx)) ** (-1.0 / degree)
            state = scale(state, r)
            stats = replace(stats, scale_applied=r)
            cycles.append(stats)
            _emit(trace, stats)
    except CapExhausted as exc:
        sup = max(sup, exc.sup_delta_w1 * math.sqrt(exc.state.phys_scale / entry.phys_scale))
        return _finish(
            entry, exc.state, cycles, False, active, sup, initial, f"cap:{exc.phase}", idx
        )
    return _finish(entry, state, cycles, False, active, sup, initial, "max_cycles", idx)


def _coupled_at_or_below(idx: MonomialIndex, n: int) -> t.Optional[MonomialIndex]:
    """Largest index with a ≥ 1 that is ≼ idx; indices with a = 0 are skipped."""
    current: t.Optional[MonomialIndex] = idx
    while current is not None and current.a == 0:
        current = predecessor(current, n)
    return current


def _coupled_below(idx: MonomialIndex, n: int) -> t.Optional[MonomialIndex]:
    """Largest index with a ≥ 1 that is ≺ idx."""
    below = predecessor(idx, n)
    return None if below is None else _coupled_at_or_below(below, n)


def _differences(state: CoupledState, upto: MonomialIndex) -> t.List[t.Tuple[float, int]]:
    """(ΔX, degree) for W₁ and every integral ≼ upto."""
    key = order_key(upto, state.n)
    terms = [(state.delta_w1, 1)]
    terms += [
        (delta, idx.degree)
        for idx, delta in zip(state.indices, state.deltas)
        if order_key(idx, state.n) <= key
    ]
    return terms


def normalizing_factor(state: CoupledState, upto: MonomialIndex) -> float:
    """The r with |S_r(ΔX)| = 1, ΔX being W₁ and the integrals ≼ upto."""
    terms = [(math.log(abs(value)), degree) for value, degree in _differences(state, upto) if value]
    if not terms:
        raise ValueError("Nothing to normalise, all differences vanish")
    logs = np.array([log_value for log_value, _ in terms])
    degrees = np.array([degree for _, degree in terms], dtype=float)

    def log_norm(s: float) -> float:
        return 0.5 * float(logsumexp(2.0 * (logs + degrees * s)))

    roots = -logs / degrees
    hi = float(roots.max())
    lo = float(roots.min()) - math.log(len(terms)) - 1.0
    return math.exp(brentq(log_norm, lo, hi, xtol=1e-15))


def couple_upto(
    state: CoupledState,
    idx: MonomialIndex,
    cfg: CouplerConfig,
    stream: NoiseStream,
    trace: Trace = None,
) -> CouplingOutcome:
    """Couple W₁ and every integral ≼ idx, starting with W₁ = W̃₁ and W₂ = W̃₂.

    (1,0) is the Heisenberg coupler. Any other level repeats cycles of
    σ₁ (couple up to the predecessor), σ₂ (synchronous until W₂ = R·W₁) and
    σ₃ (the monomial coupler after rescaling), renormalising in between.
    """
    _precoupled(state, "couple_upto")
    level = _coupled_at_or_below(idx, state.n)
    if level is None:
        return _finish(state, state, [], True, 0.0, 0.0, 1.0)
    if level == HEISENBERG:
        return heisenberg_couple(state, cfg, stream, trace)

    entry = state
    lower = _coupled_below(level, state.n)
    if delta_norm(state, level) == 0.0:
        return _finish(entry, state, [], True, 0.0, 0.0, 1.0)

    initial = normalizing_factor(state, level)
    state = scale(state, initial)
    level_frame = state.phys_scale
    cycles: t.List[CycleStats] = []
    active = 0.0
    sup = 0.0

    def in_entry_frame(value: float, frame_scale: float) -> float:
        return value * math.sqrt(frame_scale / entry.phys_scale)

    try:
        for k in range(cfg.max_cycles):
            cycle_frame = state.phys_scale
            delta_in = delta_norm(state, level)
            records: t.List[PhaseRecord] = []

            inner = couple_upto(state, lower, cfg, stream, trace)
            cycles.extend(inner.cycles)
            active += inner.active_time
            sup = max(sup, in_entry_frame(inner.sup_delta_w1, state.phys_scale))
            records.append(
                PhaseRecord(
                    "sigma1",
                    inner.coupling_time_physical / state.phys_scale,
                    inner.coupling_time_physical,
                    1.0,
                    inner.state.delta_i(level),
                )
            )
            state = inner.state
            if not inner.success:
                return _finish(
                    entry, state, cycles, False, active, sup, initial,
                    inner.failure, inner.failed_level,
                )

            state = _run(
                state,
                PhaseControl(
                    "sigma2", Mode.SYNCHRONOUS, OnLine(cfg.R), _line_length(state, cfg.R),
                    cfg.phase_cap,
                ),
                cfg,
                stream,
                records,
                level,
            )
            rho = frame_ratio(state, level_frame)
            if delta_norm(state, level, unscaled_by=rho) <= cfg.tol_couple:
                stats = CycleStats(
                    k, "level", str(level), tuple(records), delta_in,
                    delta_norm(state, level, unscaled_by=frame_ratio(state, cycle_frame)),
                )
                cycles.append(stats)
                _emit(trace, stats)
                return _finish(
                    entry, state.coalesced(level), cycles, True, active, sup, initial
                )

            state = scale(state, abs(state.delta_i(level)) ** (-1.0 / level.degree))
            residual = max(abs(value) for value, _ in _differences(state, lower))
            residual = max(residual, abs(state.dw2))
            mono = monomial_couple(state, level, cfg, stream, trace)
            cycles.extend(mono.cycles)
            active += mono.active_time
            sup = max(sup, in_entry_frame(mono.sup_delta_w1, state.phys_scale))
            records.append(
                PhaseRecord(
                    "sigma3",
                    mono.coupling_time_physical / state.phys_scale,
                    mono.coupling_time_physical,
                    1.0,
                    mono.state.delta_i(level),
                )
            )
            state = mono.state
            if not mono.success:
                return _finish(
                    entry, state, cycles, False, active, sup, initial,
                    mono.failure, mono.failed_level,
                )

            rho = frame_ratio(state, level_frame)
            delta_out = delta_norm(state, level, unscaled_by=frame_ratio(state, cycle_frame))
            if delta_norm(state, level, unscaled_by=rho) <= cfg.tol_couple:
                stats = CycleStats(
                    k, "level", str(level), tuple(records), delta_in, delta_out,
                    entry_residual=residual,
                )
                cycles.append(stats)
                _emit(trace, stats)
                return _finish(
                    entry, state.coalesced(level), cycles, True, active, sup, initial
                )
            r = normalizing_factor(state, level)
            state = scale(state, r)
            stats = CycleStats(
                k, "level", str(level), tuple(records), delta_in, delta_out, r, residual
            )
            cycles.append(stats)
            _emit(trace, stats)
    except CapExhausted as exc:
        return _finish(
            entry, exc.state, cycles, False, active, sup, initial, f"cap:{exc.phase}", level
        )
    return _finish(entry, state, cycles, False, active, sup, initial, "max_cycles", level)


def reflect_couple_bm(
    state: CoupledState,
    cfg: CouplerConfig,
    stream: NoiseStream,
    records: t.Optional[t.List[PhaseRecord]] = None,
) -> CoupledState:
    """Couple the Brownian pair and move it onto the line W₂ = R·W₁.

    σ₋₁ mirrors (W̃₁, W̃₂) across the perpendicular bisector until the two
    points meet, σ₀ is synchronous until W₂ = R·W₁.
    """
    records = [] if records is None else records
    distance = math.hypot(state.delta_w1, state.dw2)
    if distance > 0.0:
        direction = unit_direction(state)
        state = _run(
            state,
            PhaseControl(
                "sigma-1", Mode.MIRROR, PairMeets(direction), distance, cfg.phase_cap, direction
            ),
            cfg,
            stream,
            records,
        )
    return _run(
        state,
        PhaseControl(
            "sigma0", Mode.SYNCHRONOUS, OnLine(cfg.R), _line_length(state, cfg.R), cfg.phase_cap
        ),
        cfg,
        stream,
        records,
    )


def _prestage_sup(records: t.List[PhaseRecord]) -> float:
    return max((record.sup_delta_w1 for record in records), default=0.0)


def full_couple(
    state: CoupledState, cfg: CouplerConfig, stream: NoiseStream, trace: Trace = None
) -> CouplingOutcome:
    """Couple the whole system from arbitrary starts."""
    _require(state.n == cfg.n, "full_couple", f"state has n={state.n}, config has n={cfg.n}")
    entry = state
    records: t.List[PhaseRecord] = []
    try:
        state = reflect_couple_bm(state, cfg, stream, records)
    except CapExhausted as exc:
        failed = _finish(
            entry, exc.state, [], False, 0.0, _prestage_sup(records), 1.0, f"cap:{exc.phase}"
        )
        return replace(failed, extra={"prestage": [record.to_dict() for record in records]})

    top = coupled_indices(cfg.n)[-1]
    inner = couple_upto(state, top, cfg, stream, trace)
    return replace(
        inner,
        coupling_time_physical=inner.state.phys_time - entry.phys_time,
        sup_delta_w1=max(inner.sup_delta_w1, _prestage_sup(records)),
        extra={"prestage": [record.to_dict() for record in records]},
    )


class Coupler:
    """Base class for coupling strategies selectable by dotted name."""

    def __init__(
        self,
        cfg: CouplerConfig,
        index: t.Optional[MonomialIndex] = None,
        trace: Trace = None,
    ) -> None:
        self.cfg = cfg
        self.index = index
        self.trace = trace

    def couple(self, state: CoupledState, stream: NoiseStream) -> CouplingOutcome:
        raise NotImplementedError


class HeisenbergCoupler(Coupler):
    def couple(self, state: CoupledState, stream: NoiseStream) -> CouplingOutcome:
        return heisenberg_couple(state, self.cfg, stream, self.trace)


class MonomialCoupler(Coupler):
    def couple(self, state: CoupledState, stream: NoiseStream) -> CouplingOutcome:
        if self.index is None:
            raise PreconditionViolated("MonomialCoupler", "no index to couple")
        return monomial_couple(state, self.index, self.cfg, stream, self.trace)


class FullCoupler(Coupler):
    def couple(self, state: CoupledState, stream: NoiseStream) -> CouplingOutcome:
        return full_couple(state, self.cfg, stream, self.trace)
