"""Tests for experiment configuration, sweeps, oracles and tail statistics."""

from freezegun import freeze_time
from pathlib import Path
from polycouple import __version__
from polycouple.couplers import Coupler
from polycouple.couplers import CouplingOutcome
from polycouple.couplers import CycleStats
from polycouple.couplers import FullCoupler
from polycouple.couplers import HeisenbergCoupler
from polycouple.couplers import MonomialCoupler
from polycouple.harness import ConfigError
from polycouple.harness import DegenerateSample
from polycouple.harness import estimate_tail
from polycouple.harness import ExperimentConfig
from polycouple.harness import initial_state
from polycouple.harness import kaplan_meier
from polycouple.harness import merge_records
from polycouple.harness import oracle_levy_identity
from polycouple.harness import oracle_moments
from polycouple.harness import OracleSpec
from polycouple.harness import phc_verdict
from polycouple.harness import read_records
from polycouple.harness import replica_seed
from polycouple.harness import resolve_coupler
from polycouple.harness import run_experiment
from polycouple.harness import run_oracle
from polycouple.harness import run_replica
from polycouple.harness import run_replicas
from polycouple.harness import RunRecord
from polycouple.harness import sidecar_path
from polycouple.harness import survival_curve
from polycouple.harness import TooFewExceedances
from polycouple.harness import with_overrides
from polycouple.harness import worker_count
from polycouple.harness import write_records
from polycouple.harness import write_sidecar
from polycouple.sdecore import CoupledState
from polycouple.sdecore import MonomialIndex
from polycouple.sdecore import NoiseStream
from polycouple.sdecore import NumericalFault
from testfixtures import LogCapture

import json
import math
import numpy as np
import pytest
import structlog

HEISENBERG_SYSTEM = {
    "sigma1": {"dim_out": 1, "n": 1, "terms": []},
    "sigma2": {"dim_out": 1, "n": 1, "terms": [{"l": 1, "m": 0, "coef": [1.0]}]},
    "base_point": [0.0, 0.0],
}


class InstantCoupler(Coupler):
    """Couples at once after drawing one pair of normals."""

    def couple(self, state: CoupledState, stream: NoiseStream) -> CouplingOutcome:
        z = stream.normals(1)
        stats = CycleStats(0, "instant", "(1,0)", (), 1.0, 0.0)
        if self.trace is not None:
            self.trace(stats)
        return CouplingOutcome(
            success=True,
            coupling_time_physical=1.0 + abs(float(z[0, 0])),
            cycles=[stats],
            active_time=0.5,
            sup_delta_w1=0.25,
            state=state.coalesced(),
        )


class StuckCoupler(Coupler):
    """Never couples."""

    def couple(self, state: CoupledState, stream: NoiseStream) -> CouplingOutcome:
        return CouplingOutcome(
            success=False,
            coupling_time_physical=2.0,
            cycles=[],
            active_time=2.0,
            sup_delta_w1=0.0,
            state=state,
            failure="max_cycles",
            failed_level=MonomialIndex(1, 0),
        )


class FaultyCoupler(Coupler):
    """Blows up numerically."""

    def couple(self, state: CoupledState, stream: NoiseStream) -> CouplingOutcome:
        raise NumericalFault(state.as_dict())


class BrokenCoupler(Coupler):
    """Fails with an error of its own."""

    def couple(self, state: CoupledState, stream: NoiseStream) -> CouplingOutcome:
        raise RuntimeError("lost track of the copies")


class NotACoupler(object):
    pass


def stub_config(name: str, **kwargs) -> ExperimentConfig:
    return ExperimentConfig(
        scenario="heisenberg", coupler_class=f"polycouple.tests.test_harness.{name}", **kwargs
    )


def test_from_dict() -> None:
    """Test that a JSON document becomes a validated configuration."""
    cfg = ExperimentConfig.from_dict(
        {
            "scenario": "heisenberg",
            "replicas": 3,
            "master_seed": 7,
            "coupler": {"tol_couple": 1e-6},
        }
    )
    assert cfg.replicas == 3
    assert cfg.master_seed == 7
    assert cfg.coupler.R == 4.0
    assert cfg.coupler.tol_couple == 1e-6
    assert cfg.label == "heisenberg"
    assert cfg.output_path == "results.csv"

    cfg = ExperimentConfig.from_dict({"scenario": "monomial", "index": [2, 0]})
    assert cfg.index == MonomialIndex(2, 0)
    assert cfg.coupler.R == 8.0
    assert cfg.coupler.n == 2
    assert cfg.label == "monomial(2,0)"

    cfg = ExperimentConfig.from_dict({"scenario": "full", "coupler": {"n": 2}})
    assert cfg.coupler.R == 8.0
    assert cfg.label == "full(2)"

    cfg = ExperimentConfig.from_dict({"scenario": "oracle", "oracle": {"name": "I10_var"}})
    assert cfg.oracle == OracleSpec("I10_var")


@pytest.mark.parametrize(
    "document, message",
    [
        ([], "Configuration must be a JSON object"),
        ({"scenario": "heisenberg", "foo": 1}, "Unknown configuration keys: foo - key: foo"),
        ({"scenario": "heisenberg", "coupler": {"Q": 1}}, "Unknown coupler keys: Q - key: Q"),
        ({"replicas": 1}, "scenario must be a string - key: scenario"),
        ({"scenario": "bar"}, "Unknown scenario: bar - key: scenario"),
        ({"scenario": "monomial"}, "Scenario monomial needs an index - key: index"),
        (
            {"scenario": "monomial", "index": [0, 2]},
            "Index (0,2) cannot be coupled on its own - key: index",
        ),
        (
            {"scenario": "monomial", "index": [3, 0], "coupler": {"n": 2}},
            "Index (3,0) is outside the simplex of order 2 - key: index",
        ),
        ({"scenario": "heisenberg", "replicas": 0}, "replicas must be at least 1, got 0 - key: replicas"),
        ({"scenario": "heisenberg", "coupler": {"R": 0.5}}, "R must be greater than 1, got 0.5"),
        ({"scenario": "oracle", "oracle": {"name": "foo"}}, "Unknown oracle: foo - key: oracle"),
        ({"scenario": "oracle"}, "Scenario oracle needs an oracle - key: oracle"),
        ({"scenario": "phc_check"}, "Scenario phc_check needs a system - key: system"),
        ({"scenario": "heisenberg", "start": "origin"}, "Unknown start: origin - key: start"),
    ],
)
def test_from_dict_errors(document, message: str) -> None:
    """Test that invalid documents raise ConfigError naming the offending key."""
    with pytest.raises(ConfigError) as exc:
        ExperimentConfig.from_dict(document)
    assert str(exc.value) == message


def test_config_hash() -> None:
    """Test that the hash identifies the configuration."""
    cfg = ExperimentConfig.from_dict({"scenario": "heisenberg", "master_seed": 1})
    same = ExperimentConfig.from_dict({"master_seed": 1, "scenario": "heisenberg"})

    assert len(cfg.config_hash()) == 64
    assert cfg.config_hash() == same.config_hash()
    assert cfg.config_hash() != with_overrides(cfg, master_seed=2).config_hash()
    assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg


def test_with_overrides() -> None:
    """Test command-line style overrides of top-level and coupler values."""
    cfg = ExperimentConfig.from_dict({"scenario": "heisenberg"})

    overridden = with_overrides(cfg, master_seed=3, replicas=None, R=6.0, dt=1e-3)
    assert overridden.master_seed == 3
    assert overridden.replicas == 1
    assert overridden.coupler.R == 6.0
    assert overridden.coupler.dt == 1e-3
    assert with_overrides(cfg) == cfg

    with pytest.raises(ConfigError) as exc:
        with_overrides(cfg, R=0.5)
    assert str(exc.value) == "R must be greater than 1, got 0.5"

    with pytest.raises(ConfigError) as exc:
        with_overrides(cfg, replicas=0)
    assert str(exc.value) == "replicas must be at least 1, got 0 - key: replicas"


def test_initial_state() -> None:
    """Test the normalized starts and explicit coordinates."""
    state = initial_state(ExperimentConfig.from_dict({"scenario": "heisenberg"}))
    assert state.n == 1
    assert state.delta_i(MonomialIndex(1, 0)) == 1.0
    assert state.half == 0.0

    state = initial_state(ExperimentConfig.from_dict({"scenario": "full", "coupler": {"n": 2}}))
    assert state.deltas == (0.0, 0.0, 1.0)
    assert state.delta_i(MonomialIndex(1, 1)) == 1.0

    state = initial_state(ExperimentConfig.from_dict({"scenario": "monomial", "index": [2, 0]}))
    assert state.deltas == (0.0, 1.0, 0.0)

    state = initial_state(
        ExperimentConfig.from_dict(
            {
                "scenario": "full",
                "start": {
                    "w1": 1.0,
                    "w1_tilde": -1.0,
                    "w2": 0.5,
                    "integrals": [{"a": 1, "b": 0, "value": 0.5, "tilde": 0.0}],
                },
            }
        )
    )
    assert state.delta_w1 == 2.0
    assert state.dw2 == 0.5
    assert state.delta_i(MonomialIndex(1, 0)) == 0.5

    with pytest.raises(ConfigError) as exc:
        initial_state(
            ExperimentConfig.from_dict(
                {"scenario": "full", "start": {"integrals": [{"a": 1, "b": 0, "value": 1.0}]}}
            )
        )
    assert str(exc.value) == "Invalid start: 'tilde' - key: start"


def test_replica_seed() -> None:
    """Test that replica seeds are reproducible and distinct."""
    assert replica_seed(5, 0) == replica_seed(5, 0)
    assert len({replica_seed(5, replica_id) for replica_id in range(100)}) == 100
    assert replica_seed(5, 0) != replica_seed(6, 0)


def test_resolve_coupler() -> None:
    """Test the default couplers and the dotted-name override."""
    heisenberg = resolve_coupler(ExperimentConfig.from_dict({"scenario": "heisenberg"}))
    assert heisenberg.__class__ == HeisenbergCoupler

    monomial = resolve_coupler(ExperimentConfig.from_dict({"scenario": "monomial", "index": [2, 0]}))
    assert monomial.__class__ == MonomialCoupler
    assert monomial.index == MonomialIndex(2, 0)
    assert monomial.cfg.R == 8.0

    full = resolve_coupler(ExperimentConfig.from_dict({"scenario": "full"}))
    assert full.__class__ == FullCoupler

    trace = print
    instant = resolve_coupler(stub_config("InstantCoupler"), trace)
    assert instant.__class__ == InstantCoupler
    assert instant.trace is trace

    # the resolved class needs to be based off of Coupler to have the expected API
    with pytest.raises(ConfigError) as exc:
        resolve_coupler(stub_config("NotACoupler"))
    assert str(exc.value) == (
        "class in dotted_name needs to be based on polycouple.couplers.Coupler"
        " - key: coupler_class"
    )

    with pytest.raises(ConfigError) as exc:
        resolve_coupler(ExperimentConfig(scenario="heisenberg", coupler_class=123))  # type: ignore
    assert str(exc.value) == "dotted_name must be a string, but it is: int - key: coupler_class"


def test_run_replica() -> None:
    """Test that one replica becomes one row, seeded by (master_seed, replica_id)."""
    cfg = stub_config("InstantCoupler", master_seed=4)

    record = run_replica(cfg, 2)
    z = NoiseStream(4, 2).normals(1)

    assert record == RunRecord(
        replica_id=2,
        scenario="heisenberg",
        success=True,
        coupling_time_physical=1.0 + abs(float(z[0, 0])),
        cycles=1,
        active_time=0.5,
        sup_delta_w1=0.25,
        seed=replica_seed(4, 2),
        censored=False,
    )
    assert run_replica(cfg, 2) == record


def test_run_replica_fault() -> None:
    """Test that a numerical fault is logged and recorded as a censored failure."""
    with LogCapture() as logs:
        record = run_replica(stub_config("FaultyCoupler"), 2)

    logs.check(("polycouple.harness", "ERROR", "Replica 2 faulted: NumericalFault"))
    assert record.failure == "NumericalFault"
    assert record.success is False
    assert record.censored is True
    assert record.cycles == 0
    assert math.isnan(record.coupling_time_physical)
    assert math.isnan(record.active_time)


def test_run_replica_unexpected_error() -> None:
    """Test that any error raised by a coupler is recorded under its class name."""
    with LogCapture() as logs:
        record = run_replica(stub_config("BrokenCoupler"), 3)

    logs.check(("polycouple.harness", "ERROR", "Replica 3 faulted: RuntimeError"))
    assert record.failure == "RuntimeError"
    assert record.success is False
    assert record.censored is True
    assert record.replica_id == 3


def test_run_replica_fault_structlog() -> None:
    """Test the structlog rendering of a faulted replica."""
    structlog.configure(
        processors=[structlog.processors.KeyValueRenderer(sort_keys=True)],
        logger_factory=structlog.stdlib.LoggerFactory(),
    )

    with LogCapture() as logs:
        run_replica(stub_config("FaultyCoupler", structlog=True), 2)

    logs.check(
        (
            "polycouple.harness",
            "ERROR",
            "event='Replica faulted' exc_info=True failure='NumericalFault' replica_id=2",
        )
    )


def test_run_replica_failure_is_logged() -> None:
    """Test that a replica that does not couple is reported as a warning."""
    with LogCapture() as logs:
        record = run_replica(stub_config("StuckCoupler"), 0)

    logs.check(
        (
            "polycouple.harness",
            "WARNING",
            "Replica 0 did not couple: failure=max_cycles, level=(1,0)",
        )
    )
    assert record.success is False
    assert record.censored is True
    assert record.coupling_time_physical == 2.0
    assert record.failure == "max_cycles"


def test_run_replicas_in_parallel() -> None:
    """Test that the worker count does not change the results."""
    cfg = stub_config("InstantCoupler", replicas=5, first_replica=10)

    serial = run_replicas(cfg, workers=1)
    parallel = run_replicas(cfg, workers=2)

    assert [record.replica_id for record in serial] == [10, 11, 12, 13, 14]
    assert parallel == serial


def test_worker_count(monkeypatch: pytest.MonkeyPatch) -> None:
    """Test that POLYCOUPLE_THREADS sets the number of workers."""
    monkeypatch.delenv("POLYCOUPLE_THREADS", raising=False)
    assert worker_count() == 1

    monkeypatch.setenv("POLYCOUPLE_THREADS", "3")
    assert worker_count() == 3

    monkeypatch.setenv("POLYCOUPLE_THREADS", "many")
    with pytest.raises(ConfigError) as exc:
        worker_count()
    assert str(exc.value) == (
        "POLYCOUPLE_THREADS must be an integer, got 'many' - key: POLYCOUPLE_THREADS"
    )

    monkeypatch.setenv("POLYCOUPLE_THREADS", "0")
    with pytest.raises(ConfigError) as exc:
        worker_count()
    assert str(exc.value) == "POLYCOUPLE_THREADS must be at least 1, got 0 - key: POLYCOUPLE_THREADS"


def test_records_csv(tmp_path) -> None:
    """Test that written rows are read back bit for bit, failures included."""
    records = [
        RunRecord(0, "full(2)", True, 0.1 + 0.2, 3, 1 / 3, 2 ** -40, 11, False),
        RunRecord(1, "full(2)", False, math.nan, 0, math.nan, math.nan, 12, True),
    ]
    path = tmp_path / "out.csv"
    write_records(records, path)

    assert path.read_text().splitlines()[0] == (
        "replica_id,scenario,success,coupling_time_physical,cycles,active_time,"
        "sup_delta_w1,seed,censored"
    )
    parsed = read_records(path)
    assert parsed[0] == records[0]
    assert parsed[1].censored is True
    assert parsed[1].success is False
    assert math.isnan(parsed[1].coupling_time_physical)

    (tmp_path / "bad.csv").write_text("a,b\n1,2\n")
    with pytest.raises(ValueError) as exc:
        read_records(tmp_path / "bad.csv")
    assert str(exc.value) == f"Unexpected columns in {tmp_path / 'bad.csv'}: ['a', 'b']"


def test_merge_records() -> None:
    """Test the union of disjoint replica ranges."""
    first = [RunRecord(1, "heisenberg", True, 1.0, 1, 1.0, 0.1, 5, False)]
    second = [RunRecord(0, "heisenberg", True, 2.0, 2, 2.0, 0.2, 6, False)]

    merged = merge_records(first, second, first)
    assert [record.replica_id for record in merged] == [0, 1]

    conflicting = [RunRecord(1, "heisenberg", False, 3.0, 1, 3.0, 0.1, 5, True)]
    with pytest.raises(ValueError) as exc:
        merge_records(first, conflicting)
    assert str(exc.value) == "Conflicting records for replica 1"


@freeze_time("2026-01-02 03:04:05")
def test_write_sidecar(tmp_path) -> None:
    """Test the metadata written next to the CSV."""
    cfg = stub_config("InstantCoupler", output_path=str(tmp_path / "out.csv"), master_seed=9)

    path = write_sidecar(cfg, 1.5)

    assert path == tmp_path / "out.meta.json"
    assert sidecar_path(cfg.output_path) == path
    metadata = json.loads(path.read_text())
    assert metadata["timestamp"] == "2026-01-02T03:04:05+00:00"
    assert metadata["config_hash"] == cfg.config_hash()
    assert metadata["version"] == __version__
    assert metadata["wall_time"] == 1.5
    assert metadata["master_seed"] == 9
    assert metadata["tol_couple"] == 1e-8
    assert metadata["config"] == cfg.to_dict()


def test_run_experiment(tmp_path) -> None:
    """Test a sweep end to end: rows, sidecar and log lines."""
    output = tmp_path / "out.csv"
    cfg = stub_config("InstantCoupler", replicas=3, master_seed=5, output_path=str(output))

    with LogCapture() as logs:
        records = run_experiment(cfg, workers=1)

    assert len(records) == 3
    assert read_records(output) == records
    assert sidecar_path(output).exists()
    logs.check(
        (
            "polycouple.harness",
            "INFO",
            "Experiment configured scenario=heisenberg, replicas=3, master_seed=5, "
            f"config_hash={cfg.config_hash()}",
        ),
        (
            "polycouple.harness",
            "INFO",
            f"Sweep finished successes=3, replicas=3, output={output}, "
            f"metadata={tmp_path / 'out.meta.json'}",
        ),
    )


def test_run_experiment_structlog(tmp_path) -> None:
    """Test the structlog rendering of the sweep log lines."""
    structlog.configure(
        processors=[structlog.processors.KeyValueRenderer(sort_keys=True)],
        logger_factory=structlog.stdlib.LoggerFactory(),
    )
    output = tmp_path / "out.csv"
    cfg = stub_config("InstantCoupler", output_path=str(output), structlog=True)

    with LogCapture() as logs:
        run_experiment(cfg, workers=1)

    logs.check(
        (
            "polycouple.harness",
            "INFO",
            f"config_hash='{cfg.config_hash()}' event='Experiment configured' "
            "master_seed=0 replicas=1 scenario='heisenberg'",
        ),
        (
            "polycouple.harness",
            "INFO",
            f"event='Sweep finished' metadata='{tmp_path / 'out.meta.json'}' "
            f"output='{output}' replicas=1 successes=1",
        ),
    )


def test_run_experiment_phc_check(tmp_path) -> None:
    """Test that a phc_check sweep writes the verdict as JSON."""
    output = tmp_path / "phc.json"
    cfg = ExperimentConfig(scenario="phc_check", system=HEISENBERG_SYSTEM, output_path=str(output))

    assert run_experiment(cfg) == []
    assert json.loads(output.read_text()) == {"cols": 1, "holds": True, "rank": 1}


def test_phc_verdict_errors() -> None:
    """Test that a malformed system is a configuration error."""
    with pytest.raises(ConfigError) as exc:
        phc_verdict({})
    assert str(exc.value) == "Invalid system: 'sigma1' - key: system"


def test_kaplan_meier_and_survival_curve() -> None:
    """Test survival estimates with and without censoring."""
    curve = survival_curve([1.0, 2.0, 3.0, 4.0], [False] * 4, [0.0, 1.0, 2.5, 4.0])
    assert [point for point, _, _ in curve] == [0.0, 1.0, 2.5, 4.0]
    assert [s for _, s, _ in curve] == pytest.approx([1.0, 0.75, 0.5, 0.0])
    # binomial error without censoring
    assert curve[1][2] == pytest.approx(math.sqrt(0.75 * 0.25 / 4))
    assert curve[0][2] == 0.0

    events, deaths, at_risk, survival = kaplan_meier([1.0, 2.0, 3.0, 4.0], [False, True, False, False])
    assert events.tolist() == [1.0, 3.0, 4.0]
    assert at_risk.tolist() == [4.0, 2.0, 1.0]
    assert survival.tolist() == pytest.approx([0.75, 0.375, 0.0])

    with pytest.raises(ValueError) as exc:
        survival_curve([1.0], [False], [2.0, 1.0])
    assert str(exc.value) == "grid must be sorted ascending"

    with pytest.raises(ValueError) as exc:
        kaplan_meier([1.0, 2.0], [False])
    assert str(exc.value) == "times and censored must have the same length"


def test_estimate_tail_pareto() -> None:
    """Test both estimators on a Pareto sample with P(τ > t) = t^{-1/2}, censored at 10⁴."""
    rng = np.random.Generator(np.random.Philox(2024))
    raw = (1.0 - rng.random(10_000)) ** -2.0
    censored = raw > 1e4
    times = np.minimum(raw, 1e4)

    fit = estimate_tail(times, censored)
    assert fit.method == "loglog_ls"
    assert fit.fit_range == (1e3, 1e4)
    assert 0.38 <= fit.gamma_hat <= 0.62
    assert fit.exceedances == int(np.sum(times >= 1e3))
    assert fit.stderr > 0

    hill = estimate_tail(times, censored, method="hill")
    assert 0.45 <= hill.gamma_hat <= 0.55
    assert hill.exceedances == 1000


def test_estimate_tail_top_decade_widens() -> None:
    """Test that a top decade with fewer than 30 times is widened to the 30 largest."""
    rng = np.random.Generator(np.random.Philox(5))
    times = (1.0 - rng.random(1_000)) ** -2.0
    times[-1] = 1e12
    censored = np.zeros(1_000, dtype=bool)

    fit = estimate_tail(times, censored)

    ordered = np.sort(times)
    assert fit.fit_range == (float(ordered[-30]), 1e12)
    assert fit.exceedances == 30


def test_estimate_tail_exponential_range() -> None:
    """Test that an exponential tail looks steeper further out."""
    rng = np.random.Generator(np.random.Philox(7))
    times = rng.exponential(size=10_000)
    censored = np.zeros(10_000, dtype=bool)

    near = estimate_tail(times, censored, fit_range=(0.5, 2.0))
    far = estimate_tail(times, censored, fit_range=(2.0, 5.0))
    assert far.gamma_hat > near.gamma_hat


def test_estimate_tail_errors() -> None:
    """Test samples the estimators refuse."""
    with pytest.raises(TooFewExceedances) as exc:
        estimate_tail([1.0] * 50, [False] * 50)
    assert str(exc.value) == "Too few exceedances: 50 < 100"

    with pytest.raises(DegenerateSample) as exc:
        estimate_tail([3.0] * 200, [False] * 200)
    assert str(exc.value) == "degenerate sample"

    with pytest.raises(ValueError) as exc:
        estimate_tail([0.0] + [1.0] * 199, [False] * 200)
    assert str(exc.value) == "Times must be positive for a log–log tail fit"

    with pytest.raises(ValueError) as exc:
        estimate_tail(np.arange(1.0, 201.0), [False] * 200, method="foo")
    assert str(exc.value) == "Unknown tail method: foo"


def test_tail_fit_reproducible_from_csv(tmp_path) -> None:
    """Test that re-parsing a written CSV reproduces the fitted exponent exactly."""
    rng = np.random.Generator(np.random.Philox(3))
    times = (1.0 - rng.random(500)) ** -2.0
    records = [
        RunRecord(i, "heisenberg", True, float(value), 1, float(value), 0.1, i, False)
        for i, value in enumerate(times)
    ]
    write_records(records, tmp_path / "out.csv")
    parsed = read_records(tmp_path / "out.csv")

    original = estimate_tail([r.coupling_time_physical for r in records], [r.censored for r in records])
    again = estimate_tail([r.coupling_time_physical for r in parsed], [r.censored for r in parsed])
    assert again == original


def test_oracle_moments() -> None:
    """Test a reduced-scale second moment of I₍₁,₀₎ against t²/2."""
    report = oracle_moments("I10_var", t_end=1.0, dt=1e-3, N=20_000, seed=1)

    assert report["analytic"] == 0.5
    assert abs(report["estimate"] - 0.5) < 5 * report["stderr"]

    with pytest.raises(ValueError) as exc:
        oracle_moments("foo")
    assert str(exc.value) == "Unknown oracle: foo"


def test_oracle_levy_identity() -> None:
    """Test that the two Lévy area expressions differ by O(dt) in mean square."""
    report = oracle_levy_identity(seed=0, t_end=1.0, dt=0.1, N=2000, halvings=2)

    assert [level["dt"] for level in report["levels"]] == pytest.approx([0.1, 0.05, 0.025])
    for level in report["levels"]:
        assert level["mean_square"] == pytest.approx(level["dt"], rel=0.2)
        assert level["max_discrepancy"] > 0.0
    assert len(report["ratios"]) == 2
    assert report["passed"] is True

    assert run_oracle(OracleSpec("levy_identity", dt=0.1, N=500, halvings=1))["name"] == (
        "levy_identity"
    )


@pytest.mark.parametrize(
    "name", ["heisenberg.json", "monomial-2-0.json", "full-n2.json", "exact-form.json", "levy-identity.json"]
)
def test_shipped_configs(name: str) -> None:
    """Test that the configurations in configs/ are valid."""
    path = Path(__file__).parents[2] / "configs" / name

    cfg = ExperimentConfig.from_dict(json.loads(path.read_text()))

    assert cfg.output_path == name.replace(".json", ".csv") or cfg.output_path == name
    if cfg.scenario in ("heisenberg", "monomial", "full"):
        initial_state(cfg)
        assert resolve_coupler(cfg).cfg == cfg.coupler
