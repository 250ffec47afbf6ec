"""Seeded, replica-parallel coupling experiments and their statistics."""

from dataclasses import asdict
from dataclasses import dataclass
from dataclasses import field
from dataclasses import fields
from dataclasses import replace
from datetime import datetime
from datetime import timezone
from multiprocessing import Pool
from pathlib import Path
from polycouple import __version__
from polycouple import get_logger
from polycouple.couplers import Coupler
from polycouple.couplers import CouplerConfig
from polycouple.couplers import CouplingOutcome
from polycouple.couplers import FullCoupler
from polycouple.couplers import HeisenbergCoupler
from polycouple.couplers import MonomialCoupler
from polycouple.couplers import Trace
from polycouple.polyfield import BivariatePolyVec
from polycouple.polyfield import check_phc
from polycouple.sdecore import coupled_indices
from polycouple.sdecore import CoupledState
from polycouple.sdecore import MonomialIndex
from polycouple.sdecore import NoiseStream
from polycouple.sdecore import simulate_ensemble
from pyramid.path import DottedNameResolver
from scipy import stats

import hashlib
import json
import math
import numpy as np
import os
import pandas as pd
import time
import typing as t

NORMALIZED = "normalized"
SCENARIOS = ("heisenberg", "monomial", "full", "phc_check", "oracle")
ORACLES = ("I10_var", "I20_var", "levy_var", "levy_identity")
COLUMNS = (
    "replica_id",
    "scenario",
    "success",
    "coupling_time_physical",
    "cycles",
    "active_time",
    "sup_delta_w1",
    "seed",
    "censored",
)
THREADS_ENV = "POLYCOUPLE_THREADS"


class ConfigError(ValueError):
    """The experiment configuration is invalid."""

    def __init__(self, message: str, key: t.Optional[str] = None):
        super().__init__(message)
        self.key = key

    def __str__(self):
        """Stringer method."""
        if self.key is None:
            return super().__str__()
        return f"{super().__str__()} - key: {self.key}"


class DegenerateSample(ValueError):
    """All samples are equal, so there is no tail to fit."""

    def __init__(self, value: float):
        super().__init__("degenerate sample")
        self.value = value


class TooFewExceedances(ValueError):
    """Not enough observations in the fit range."""

    def __init__(self, count: int, required: int):
        super().__init__(f"Too few exceedances: {count} < {required}")
        self.count = count
        self.required = required


@dataclass(frozen=True)
class OracleSpec:
    name: str
    t: float = 1.0
    dt: float = 1e-3
    N: int = 100_000
    seed: int = 0
    halvings: int = 3


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a sweep needs, as read from a JSON document."""

    scenario: str
    coupler: CouplerConfig = field(default_factory=CouplerConfig)
    replicas: int = 1
    master_seed: int = 0
    output_path: str = "results.csv"
    # "normalized", or explicit coordinates of both copies.
    start: t.Union[str, t.Mapping[str, t.Any]] = NORMALIZED
    index: t.Optional[MonomialIndex] = None
    first_replica: int = 0
    system: t.Optional[t.Mapping[str, t.Any]] = None
    oracle: t.Optional[OracleSpec] = None
    structlog: bool = False
    coupler_class: t.Optional[str] = None

    def __post_init__(self) -> None:
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"Unknown scenario: {self.scenario}", "scenario")
        if self.replicas < 1:
            raise ConfigError(f"replicas must be at least 1, got {self.replicas}", "replicas")
        if self.master_seed < 0 or self.first_replica < 0:
            raise ConfigError("Seeds and replica ids must be non-negative", "master_seed")
        if self.scenario == "monomial":
            if self.index is None:
                raise ConfigError("Scenario monomial needs an index", "index")
            if self.index.a < 1 or self.index.a + self.index.b < 2:
                raise ConfigError(f"Index {self.index} cannot be coupled on its own", "index")
            if self.index.a + self.index.b > self.coupler.n:
                raise ConfigError(
                    f"Index {self.index} is outside the simplex of order {self.coupler.n}", "index"
                )
        if self.scenario == "phc_check" and not self.system:
            raise ConfigError("Scenario phc_check needs a system", "system")
        if self.scenario == "oracle" and self.oracle is None:
            raise ConfigError("Scenario oracle needs an oracle", "oracle")
        if self.oracle is not None and self.oracle.name not in ORACLES:
            raise ConfigError(f"Unknown oracle: {self.oracle.name}", "oracle")
        if self.start != NORMALIZED and not isinstance(self.start, t.Mapping):
            raise ConfigError(f"Unknown start: {self.start}", "start")

    @property
    def label(self) -> str:
        """Scenario name as written into result rows."""
        if self.scenario == "monomial":
            return f"monomial{self.index}"
        if self.scenario == "full":
            return f"full({self.coupler.n})"
        return self.scenario

    @classmethod
    def from_dict(cls, document: t.Mapping[str, t.Any]) -> "ExperimentConfig":
        """Validate a parsed JSON document and build the configuration."""
        if not isinstance(document, t.Mapping):
            raise ConfigError("Configuration must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(document) - known)
        if unknown:
            raise ConfigError(f"Unknown configuration keys: {', '.join(unknown)}", unknown[0])
        scenario = document.get("scenario")
        if not isinstance(scenario, str):
            raise ConfigError("scenario must be a string", "scenario")

        try:
            index = document.get("index")
            coupler = _coupler_config(scenario, document.get("coupler") or {}, index)
            oracle = document.get("oracle")
            return cls(
                scenario=scenario,
                coupler=coupler,
                replicas=int(document.get("replicas", 1)),
                master_seed=int(document.get("master_seed", 0)),
                output_path=str(document.get("output_path", "results.csv")),
                start=document.get("start", NORMALIZED),
                index=MonomialIndex(*index) if index is not None else None,
                first_replica=int(document.get("first_replica", 0)),
                system=document.get("system"),
                oracle=OracleSpec(**oracle) if oracle is not None else None,
                structlog=bool(document.get("structlog", False)),
                coupler_class=document.get("coupler_class"),
            )
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> t.Dict[str, t.Any]:
        return {
            "scenario": self.scenario,
            "coupler": asdict(self.coupler),
            "replicas": self.replicas,
            "master_seed": self.master_seed,
            "output_path": self.output_path,
            "start": self.start if isinstance(self.start, str) else dict(self.start),
            "index": [self.index.a, self.index.b] if self.index else None,
            "first_replica": self.first_replica,
            "system": self.system,
            "oracle": asdict(self.oracle) if self.oracle else None,
            "structlog": self.structlog,
            "coupler_class": self.coupler_class,
        }

    def config_hash(self) -> str:
        """sha256 of the canonical JSON rendering."""
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _coupler_config(
    scenario: str, values: t.Mapping[str, t.Any], index: t.Optional[t.Sequence[int]] = None
) -> CouplerConfig:
    known = {f.name for f in fields(CouplerConfig)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"Unknown coupler keys: {', '.join(unknown)}", unknown[0])
    values = dict(values)
    if scenario in ("monomial", "full"):
        values.setdefault("R", 8.0)
    if scenario == "monomial" and index is not None:
        values.setdefault("n", sum(int(k) for k in index))
    return CouplerConfig(**values)


@dataclass(frozen=True)
class RunRecord:
    """One replica's outcome, one CSV row."""

    replica_id: int
    scenario: str
    success: bool
    coupling_time_physical: float
    cycles: int
    active_time: float
    sup_delta_w1: float
    seed: int
    # Failed runs are right-censored at their recorded time.
    censored: bool
    # Why the replica failed; not written to the CSV.
    failure: t.Optional[str] = field(default=None, compare=False)

    @classmethod
    def from_outcome(
        cls, replica_id: int, scenario: str, seed: int, outcome: CouplingOutcome
    ) -> "RunRecord":
        return cls(
            replica_id=replica_id,
            scenario=scenario,
            success=outcome.success,
            coupling_time_physical=outcome.coupling_time_physical,
            cycles=len(outcome.cycles),
            active_time=outcome.active_time,
            sup_delta_w1=outcome.sup_delta_w1,
            seed=seed,
            censored=not outcome.success,
            failure=outcome.failure,
        )


def replica_seed(master_seed: int, replica_id: int) -> int:
    """Compact identifier of a replica's noise stream."""
    return int(np.random.SeedSequence([master_seed, replica_id]).generate_state(1)[0])


def initial_state(cfg: ExperimentConfig) -> CoupledState:
    """Starting pair of copies for a coupling scenario.

    The normalized start puts both copies at the origin except for the
    integral being coupled (the ≺-largest one for full coupling), whose
    difference is 1.
    """
    n = cfg.coupler.n
    if cfg.start == NORMALIZED:
        if cfg.scenario == "monomial":
            assert cfg.index is not None  # nosec
            target = cfg.index
        elif cfg.scenario == "full":
            target = coupled_indices(n)[-1]
        else:
            target = MonomialIndex(1, 0)
        return CoupledState.from_points(n, 0.0, 0.0, 0.0, 0.0, {target: (1.0, 0.0)})

    start = t.cast(t.Mapping[str, t.Any], cfg.start)
    try:
        integrals = {
            MonomialIndex(int(item["a"]), int(item["b"])): (
                float(item["value"]),
                float(item["tilde"]),
            )
            for item in start.get("integrals", [])
        }
        return CoupledState.from_points(
            n,
            float(start.get("w1", 0.0)),
            float(start.get("w2", 0.0)),
            float(start.get("w1_tilde", 0.0)),
            float(start.get("w2_tilde", 0.0)),
            integrals,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"Invalid start: {exc}", "start") from exc


def resolve_coupler(cfg: ExperimentConfig, trace: Trace = None) -> Coupler:
    """Instantiate the coupler for the scenario, or the one named by coupler_class."""
    dotted_name: t.Optional[object] = cfg.coupler_class
    if not dotted_name:
        default: t.Type[Coupler] = {
            "heisenberg": HeisenbergCoupler,
            "monomial": MonomialCoupler,
            "full": FullCoupler,
        }[cfg.scenario]
        return default(cfg.coupler, cfg.index, trace)
    if not isinstance(dotted_name, str):
        raise ConfigError(
            f"dotted_name must be a string, but it is: {dotted_name.__class__.__name__}",
            "coupler_class",
        )
    resolved = DottedNameResolver().resolve(dotted_name)
    if not (isinstance(resolved, type) and issubclass(resolved, Coupler)):
        raise ConfigError(
            "class in dotted_name needs to be based on polycouple.couplers.Coupler",
            "coupler_class",
        )
    return resolved(cfg.coupler, cfg.index, trace)


def run_replica(cfg: ExperimentConfig, replica_id: int, trace: Trace = None) -> RunRecord:
    """Run one replica; an exception raised by the coupler becomes a failed,
    censored row named after the exception class."""
    seed = replica_seed(cfg.master_seed, replica_id)
    stream = NoiseStream(cfg.master_seed, replica_id)
    coupler = resolve_coupler(cfg, trace)
    logger = get_logger(__name__, cfg.structlog)
    state = initial_state(cfg)
    try:
        outcome = coupler.couple(state, stream)
    except Exception as exc:
        failure = type(exc).__name__
        if cfg.structlog:
            logger.exception(
                "Replica faulted", replica_id=replica_id, failure=failure, exc_info=True
            )
        else:
            logger.exception(f"Replica {replica_id} faulted: {failure}", exc_info=True)
        return RunRecord(
            replica_id, cfg.label, False, math.nan, 0, math.nan, math.nan, seed, True, failure
        )

    if not outcome.success:
        if cfg.structlog:
            logger.warning(
                "Replica did not couple",
                replica_id=replica_id,
                failure=outcome.failure,
                level=str(outcome.failed_level),
            )
        else:
            logger.warning(
                f"Replica {replica_id} did not couple: "
                f"failure={outcome.failure}, level={outcome.failed_level}"
            )
    return RunRecord.from_outcome(replica_id, cfg.label, seed, outcome)


def _replica_worker(args: t.Tuple[ExperimentConfig, int]) -> RunRecord:
    cfg, replica_id = args
    return run_replica(cfg, replica_id)


def worker_count(default: int = 1) -> int:
    """Number of worker processes, POLYCOUPLE_THREADS if set."""
    value = os.getenv(THREADS_ENV)
    if not value:
        return default
    try:
        count = int(value)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {value!r}", THREADS_ENV)
    if count < 1:
        raise ConfigError(f"{THREADS_ENV} must be at least 1, got {count}", THREADS_ENV)
    return count


def run_replicas(cfg: ExperimentConfig, workers: t.Optional[int] = None) -> t.List[RunRecord]:
    """Run every replica and return the rows sorted by replica_id."""
    ids = range(cfg.first_replica, cfg.first_replica + cfg.replicas)
    workers = workers or worker_count()
    if workers == 1:
        records = [run_replica(cfg, replica_id) for replica_id in ids]
    else:
        with Pool(processes=workers) as pool:
            records = pool.map(_replica_worker, [(cfg, replica_id) for replica_id in ids])
    return sorted(records, key=lambda record: record.replica_id)


def write_records(records: t.Sequence[RunRecord], path: t.Union[str, Path]) -> None:
    frame = pd.DataFrame([asdict(record) for record in records], columns=list(COLUMNS))
    frame.to_csv(path, index=False)


def read_records(path: t.Union[str, Path]) -> t.List[RunRecord]:
    """Parse a CSV written by `write_records`."""
    frame = pd.read_csv(path, float_precision="round_trip")
    if tuple(frame.columns) != COLUMNS:
        raise ValueError(f"Unexpected columns in {path}: {list(frame.columns)}")
    return [
        RunRecord(
            replica_id=int(row.replica_id),
            scenario=str(row.scenario),
            success=bool(row.success),
            coupling_time_physical=float(row.coupling_time_physical),
            cycles=int(row.cycles),
            active_time=float(row.active_time),
            sup_delta_w1=float(row.sup_delta_w1),
            seed=int(row.seed),
            censored=bool(row.censored),
        )
        for row in frame.itertuples(index=False)
    ]


def merge_records(*groups: t.Iterable[RunRecord]) -> t.List[RunRecord]:
    """Union of record sets from disjoint replica ranges, sorted by replica_id."""
    merged: t.Dict[int, RunRecord] = {}
    for group in groups:
        for record in group:
            known = merged.get(record.replica_id)
            if known is not None and known != record:
                raise ValueError(f"Conflicting records for replica {record.replica_id}")
            merged[record.replica_id] = record
    return [merged[key] for key in sorted(merged)]


def sidecar_path(output_path: t.Union[str, Path]) -> Path:
    return Path(output_path).with_suffix(".meta.json")


def write_sidecar(cfg: ExperimentConfig, wall_time: float) -> Path:
    path = sidecar_path(cfg.output_path)
    metadata = {
        "config_hash": cfg.config_hash(),
        "version": __version__,
        "wall_time": wall_time,
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "scenario": cfg.label,
        "replicas": cfg.replicas,
        "first_replica": cfg.first_replica,
        "master_seed": cfg.master_seed,
        "tol_couple": cfg.coupler.tol_couple,
        "config": cfg.to_dict(),
    }
    path.write_text(json.dumps(metadata, indent=2, sort_keys=True), encoding="utf-8")
    return path


def phc_verdict(system: t.Mapping[str, t.Any]) -> t.Dict[str, t.Any]:
    """Rank test for {"sigma1", "sigma2", "base_point"} literals."""
    try:
        sigma1 = BivariatePolyVec.from_literal(system["sigma1"])
        sigma2 = BivariatePolyVec.from_literal(system["sigma2"])
        w1, w2 = (float(x) for x in system.get("base_point", (0.0, 0.0)))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"Invalid system: {exc}", "system") from exc
    n = max(sigma1.max_degree, sigma2.max_degree)
    verdict = check_phc(sigma1, sigma2, w1, w2, n)
    return {"holds": verdict.holds, "rank": verdict.rank, "cols": verdict.cols}


def run_oracle(spec: OracleSpec) -> t.Dict[str, t.Any]:
    if spec.name == "levy_identity":
        return oracle_levy_identity(spec.seed, spec.t, spec.dt, spec.N, spec.halvings)
    return oracle_moments(spec.name, spec.t, spec.dt, spec.N, spec.seed)


def run_experiment(cfg: ExperimentConfig, workers: t.Optional[int] = None) -> t.List[RunRecord]:
    """Run a configured sweep and write its results.

    Coupling scenarios write one CSV row per replica plus a JSON sidecar.
    phc_check and oracle scenarios write a single JSON report to
    output_path and return no rows.
    """
    logger = get_logger(__name__, cfg.structlog)
    if cfg.structlog:
        logger.info(
            "Experiment configured",
            scenario=cfg.label,
            replicas=cfg.replicas,
            master_seed=cfg.master_seed,
            config_hash=cfg.config_hash(),
        )
    else:
        logger.info(
            "Experiment configured "
            f"scenario={cfg.label}, "
            f"replicas={cfg.replicas}, "
            f"master_seed={cfg.master_seed}, "
            f"config_hash={cfg.config_hash()}"
        )

    if cfg.scenario in ("phc_check", "oracle"):
        if cfg.scenario == "phc_check":
            report = phc_verdict(t.cast(t.Mapping[str, t.Any], cfg.system))
        else:
            report = run_oracle(t.cast(OracleSpec, cfg.oracle))
        Path(cfg.output_path).write_text(json.dumps(report, sort_keys=True), encoding="utf-8")
        return []

    started = time.monotonic()
    records = run_replicas(cfg, workers)
    write_records(records, cfg.output_path)
    meta = write_sidecar(cfg, time.monotonic() - started)
    successes = sum(record.success for record in records)
    if cfg.structlog:
        logger.info(
            "Sweep finished",
            successes=successes,
            replicas=len(records),
            output=cfg.output_path,
            metadata=str(meta),
        )
    else:
        logger.info(
            f"Sweep finished successes={successes}, replicas={len(records)}, "
            f"output={cfg.output_path}, metadata={meta}"
        )
    return records


@dataclass(frozen=True)
class TailFit:
    gamma_hat: float
    stderr: float
    fit_range: t.Tuple[float, float]
    method: str
    exceedances: int


def kaplan_meier(
    times: t.Sequence[float], censored: t.Sequence[bool]
) -> t.Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Event times with deaths, numbers at risk and survival just after each.

    Censored observations stay at risk up to and including their own time.
    """
    times = np.asarray(times, dtype=float)
    censored = np.asarray(censored, dtype=bool)
    if times.shape != censored.shape:
        raise ValueError("times and censored must have the same length")
    events = np.unique(times[~censored])
    deaths = np.array([np.sum((times == u) & ~censored) for u in events], dtype=float)
    at_risk = np.array([np.sum(times >= u) for u in events], dtype=float)
    survival = np.cumprod(1.0 - deaths / at_risk)
    return events, deaths, at_risk, survival


def survival_curve(
    times: t.Sequence[float], censored: t.Sequence[bool], grid: t.Sequence[float]
) -> t.List[t.Tuple[float, float, float]]:
    """Kaplan–Meier estimate of P(τ > t) with Greenwood standard errors.

    Without censoring this is the empirical survival with binomial errors.
    P(τ > t) bounds the total variation distance between the two laws at t.
    """
    grid = np.asarray(grid, dtype=float)
    if np.any(np.diff(grid) < 0):
        raise ValueError("grid must be sorted ascending")
    events, deaths, at_risk, survival = kaplan_meier(times, censored)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(at_risk > deaths, deaths / (at_risk * (at_risk - deaths)), 0.0)
    greenwood = np.cumsum(terms)

    curve = []
    for point in grid:
        k = int(np.searchsorted(events, point, side="right"))
        if k == 0:
            curve.append((float(point), 1.0, 0.0))
            continue
        s = float(survival[k - 1])
        curve.append((float(point), s, float(s * math.sqrt(greenwood[k - 1]))))
    return curve


MIN_SAMPLES = 100
MIN_EXCEEDANCES = 30


def estimate_tail(
    times: t.Sequence[float],
    censored: t.Sequence[bool],
    method: str = "loglog_ls",
    fit_range: t.Optional[t.Tuple[float, float]] = None,
) -> TailFit:
    """Fit P(τ > t) ≈ C t^{-γ}.

    loglog_ls regresses log survival on log t over the top decade of times,
    [t_max/10, t_max], widened downwards until it holds 30 observations.
    hill uses the top 10% of order statistics, counting only uncensored ones
    as tail events.
    `fit_range` overrides the range in both cases.
    """
    values = np.asarray(times, dtype=float)
    flags = np.asarray(censored, dtype=bool)
    if len(values) < MIN_SAMPLES:
        raise TooFewExceedances(len(values), MIN_SAMPLES)
    if np.all(values == values[0]):
        raise DegenerateSample(float(values[0]))
    if np.any(values <= 0):
        raise ValueError("Times must be positive for a log–log tail fit")
    if method == "loglog_ls":
        return _loglog_fit(values, flags, fit_range)
    if method == "hill":
        return _hill_fit(values, flags, fit_range)
    raise ValueError(f"Unknown tail method: {method}")


def _loglog_fit(
    values: np.ndarray, flags: np.ndarray, fit_range: t.Optional[t.Tuple[float, float]]
) -> TailFit:
    events, _, _, survival = kaplan_meier(values, flags)
    if fit_range is None:
        ordered = np.sort(values)
        t_hi = float(ordered[-1])
        t_lo = min(t_hi / 10.0, float(ordered[-MIN_EXCEEDANCES]))
    else:
        t_lo, t_hi = map(float, fit_range)
    exceedances = int(np.sum(values >= t_lo))
    if exceedances < MIN_EXCEEDANCES or not t_lo < t_hi:
        raise TooFewExceedances(exceedances, MIN_EXCEEDANCES)
    mask = (events >= t_lo) & (events <= t_hi) & (survival > 0)
    if mask.sum() < 3:
        raise TooFewExceedances(int(mask.sum()), 3)
    fit = stats.linregress(np.log(events[mask]), np.log(survival[mask]))
    return TailFit(-float(fit.slope), float(fit.stderr), (t_lo, t_hi), "loglog_ls", exceedances)


def _hill_fit(
    values: np.ndarray, flags: np.ndarray, fit_range: t.Optional[t.Tuple[float, float]]
) -> TailFit:
    order = np.argsort(values)
    ordered = values[order]
    ordered_flags = flags[order]
    if fit_range is None:
        k = max(len(values) // 10, 1)
        threshold = float(ordered[-k - 1])
        t_hi = float(ordered[-1])
    else:
        threshold, t_hi = map(float, fit_range)
    mask = (ordered > threshold) & (ordered <= t_hi)
    exceedances = int(mask.sum())
    events = int(np.sum(mask & ~ordered_flags))
    if exceedances < MIN_EXCEEDANCES or events == 0:
        raise TooFewExceedances(exceedances, MIN_EXCEEDANCES)
    log_excess = float(np.sum(np.log(ordered[mask] / threshold)))
    if log_excess == 0.0:
        raise DegenerateSample(threshold)
    gamma = events / log_excess
    return TailFit(gamma, gamma / math.sqrt(events), (threshold, t_hi), "hill", exceedances)


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def oracle_moments(
    name: str, t_end: float = 1.0, dt: float = 1e-3, N: int = 100_000, seed: int = 0
) -> t.Dict[str, t.Any]:
    """Compare a Monte Carlo second moment with its closed form.

    I10_var is E[I₍₁,₀₎²] = t²/2, I20_var is E[I₍₂,₀₎²] = t³ and levy_var is
    the second moment t² of the Lévy area ∫W₁dW₂ − ∫W₂dW₁, all from the
    origin. PASS iff the estimate is within 3 standard errors.
    """
    if name == "I10_var":
        analytic = t_end ** 2 / 2
        indices = [MonomialIndex(1, 0)]
    elif name == "I20_var":
        analytic = t_end ** 3
        indices = [MonomialIndex(2, 0)]
    elif name == "levy_var":
        analytic = t_end ** 2
        indices = []
    else:
        raise ValueError(f"Unknown oracle: {name}")

    ensemble = simulate_ensemble(indices, t_end, dt, N, _rng(seed))
    sample = ensemble.levy_direct if name == "levy_var" else ensemble.integrals[indices[0]]
    squares = sample ** 2
    estimate = float(squares.mean())
    stderr = float(squares.std(ddof=1) / math.sqrt(N)) if N > 1 else math.inf
    return {
        "name": name,
        "t": t_end,
        "dt": dt,
        "N": N,
        "analytic": analytic,
        "estimate": estimate,
        "stderr": stderr,
        "passed": abs(estimate - analytic) <= 3 * stderr,
    }


def oracle_levy_identity(
    seed: int = 0,
    t_end: float = 1.0,
    dt: float = 1e-3,
    N: int = 10_000,
    halvings: int = 3,
    start: t.Tuple[float, float] = (0.0, 0.0),
) -> t.Dict[str, t.Any]:
    """Lévy area computed directly and through W₁W₂ − W₁(0)W₂(0) = ∫W₁dW₂ + ∫W₂dW₁.

    One fine Brownian path per sample drives every step size dt/2^k, so the
    levels differ only by discretisation. Per level the discrepancy is
    −Σ ξ₁ξ₂; its mean square is t·dt, and the level passes when consecutive
    mean squares shrink by a factor in [1.5, 2.5].
    """
    rng = _rng(seed)
    fine_steps = int(round(t_end / dt)) * 2 ** halvings
    fine_dt = t_end / fine_steps if fine_steps else dt
    strides = [2 ** (halvings - level) for level in range(halvings + 1)]

    w1 = np.full(N, float(start[0]))
    w2 = np.full(N, float(start[1]))
    left1 = [w1.copy() for _ in strides]
    left2 = [w2.copy() for _ in strides]
    w1_dw2 = [np.zeros(N) for _ in strides]
    w2_dw1 = [np.zeros(N) for _ in strides]
    sqrt_dt = math.sqrt(fine_dt)
    for i in range(fine_steps):
        xi = rng.standard_normal((N, 2)) * sqrt_dt
        w1 = w1 + xi[:, 0]
        w2 = w2 + xi[:, 1]
        for level, stride in enumerate(strides):
            if (i + 1) % stride == 0:
                w1_dw2[level] += left1[level] * (w2 - left2[level])
                w2_dw1[level] += left2[level] * (w1 - left1[level])
                left1[level] = w1
                left2[level] = w2

    product_change = w1 * w2 - start[0] * start[1]
    levels = []
    for level, stride in enumerate(strides):
        direct = w1_dw2[level] - w2_dw1[level]
        identity = 2.0 * w1_dw2[level] - product_change
        discrepancy = identity - direct
        levels.append(
            {
                "dt": fine_dt * stride,
                "max_discrepancy": float(np.abs(discrepancy).max()),
                "mean_square": float(np.mean(discrepancy ** 2)),
                "levy_var": float(np.mean(direct ** 2)),
            }
        )
    ratios = [
        coarse["mean_square"] / fine["mean_square"]
        for coarse, fine in zip(levels, levels[1:])
        if fine["mean_square"] > 0
    ]
    return {
        "name": "levy_identity",
        "t": t_end,
        "N": N,
        "levels": levels,
        "ratios": ratios,
        "passed": bool(ratios) and all(1.5 <= ratio <= 2.5 for ratio in ratios),
    }


def with_overrides(cfg: ExperimentConfig, **overrides: t.Any) -> ExperimentConfig:
    """Apply command-line style overrides; None values are ignored."""
    coupler_keys = {"R", "dt"}
    coupler = {k: v for k, v in overrides.items() if k in coupler_keys and v is not None}
    top = {k: v for k, v in overrides.items() if k not in coupler_keys and v is not None}
    try:
        if coupler:
            top["coupler"] = replace(cfg.coupler, **coupler)
        return replace(cfg, **top)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
