"""Experiment runner, requirement audits and JSON reports.

Exact mode evaluates every (j, scenario) cell from Born probabilities.
Sampled mode plays `trials` rounds; trial t draws from its own stream seeded
with (seed, t), in the order: query index (if not fixed), scenario coin (if
random), then everything `run_round` draws.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np
from statsmodels.stats.proportion import proportion_confint

from .adversaries import STRATEGIES, appendix_predicted_memory, make_strategy, pm_memory
from .core import RegisterLayout, DensityMatrix, trace_distance
from .protocol import (
    Database,
    Scenario,
    appendix_database,
    check_honest_conformance,
    exact_round,
    final_branches,
    run_round,
)

SCHEMA_VERSION = 1
AUDIT_TOL = 1e-9
BUILTIN_DATABASES = {
    "builtin:appendix": appendix_database,
    "builtin:appendix-deterministic": lambda: appendix_database().deterministic_restriction(),
}


class InvariantViolation(RuntimeError):
    pass


class ConfigError(ValueError):
    pass


def load_database(source) -> Database:
    if isinstance(source, Database):
        return source
    if isinstance(source, Mapping):
        return Database.from_json(source)
    if source in BUILTIN_DATABASES:
        return BUILTIN_DATABASES[source]()
    path = Path(source)
    if not path.exists():
        raise ConfigError(f"database {source!r} is neither a builtin nor a file")
    return Database.load(path)


@dataclass
class ExperimentConfig:
    database: Any = "builtin:appendix"
    strategy: str = "appendix-attack"
    j: int | str = "all"
    scenario: str = "random"
    trials: int = 1000
    seed: int = 0
    mode: str = "exact-born"

    def __post_init__(self):
        if self.mode == "exact":
            self.mode = "exact-born"
        if self.mode not in ("exact-born", "sampled"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        if self.scenario not in ("a", "b", "random"):
            raise ConfigError(f"scenario must be a, b or random, got {self.scenario!r}")
        if self.j != "all":
            try:
                self.j = int(self.j)
            except (TypeError, ValueError):
                raise ConfigError(f"j must be an integer or 'all', got {self.j!r}") from None
        self.trials = int(self.trials)
        self.seed = int(self.seed)
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")

    def to_json(self) -> dict:
        doc = asdict(self)
        if isinstance(self.database, Database):
            doc["database"] = self.database.to_json()
        return doc


@dataclass
class StatsReport:
    mode: str
    config: dict
    database: dict
    cells: list[dict]
    summary: dict = field(default_factory=dict)
    audits: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    def to_json(self) -> dict:
        return _clean(asdict(self))

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, doc: Mapping) -> "StatsReport":
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise ConfigError(f"unsupported report schema {doc.get('schema_version')!r}")
        return cls(doc["mode"], doc["config"], doc["database"], doc["cells"],
                   doc.get("summary", {}), doc.get("audits", {}), doc["schema_version"])


def _clean(obj):
    if isinstance(obj, float):
        v = round(obj, 12)
        return 0.0 if v == 0 else v
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    return obj


def _matrix_json(m: np.ndarray) -> list:
    return [[[float(x.real), float(x.imag)] for x in row] for row in m]


def _matrix_from_json(rows) -> np.ndarray:
    return np.array([[complex(re, im) for re, im in row] for row in rows])


def wilson_interval(successes: int, trials: int) -> tuple[float, float]:
    lo, hi = proportion_confint(successes, trials, alpha=0.05, method="wilson")
    return float(lo), float(hi)


def _entropy_bits(dist: Mapping[Any, float]) -> float:
    return float(-sum(p * math.log2(p) for p in dist.values() if p > AUDIT_TOL))


def _dm(m: np.ndarray) -> DensityMatrix:
    return DensityMatrix(RegisterLayout([("B", m.shape[0])]), m)


def _queries(config: ExperimentConfig, db: Database) -> list[int]:
    if config.j == "all":
        return list(range(1, db.n))
    if not 1 <= config.j < db.n:
        raise ConfigError(f"j must be in 1..{db.n - 1}")
    return [config.j]


def _scenarios(config: ExperimentConfig) -> list[Scenario]:
    return [Scenario.a, Scenario.b] if config.scenario == "random" else [Scenario(config.scenario)]


def _exact_cell(j, scenario, db, bob, strategy_name) -> dict:
    stats = exact_round(j, db, scenario, bob)
    total = sum(stats.answer_distribution.values())
    if abs(total - 1.0) > AUDIT_TOL or not -AUDIT_TOL <= stats.pass_probability <= 1 + AUDIT_TOL:
        raise InvariantViolation(f"probabilities out of range in cell j={j}, {scenario.value}")
    if strategy_name == "honest":
        (_, final), = final_branches(j, db, scenario, bob)
        if not check_honest_conformance(j, db, scenario, final):
            raise InvariantViolation(f"honest end state deviates from closed form (j={j})")
    blank = np.zeros((db.n, db.n), dtype=complex)
    blank[0, 0] = 1.0
    cell = {
        "j": j,
        "scenario": scenario.value,
        "pass_probability": stats.pass_probability,
        "detection_probability": 1.0 - stats.pass_probability,
        "answer_distribution": {str(a): p for a, p in stats.answer_distribution.items()},
        "answer_entropy_bits": _entropy_bits(stats.answer_distribution),
        "legal_answer_probability": stats.legal_answer_probability,
        "plain_check_probability": stats.plain_check_probability,
        "q_support": stats.q_support,
        "bob_guess_probability": stats.bob_guess_probability,
        "guess_baseline": 1.0 / (db.n - 1),
        "bob_memory": _matrix_json(stats.bob_memory),
        "memory_disturbance": trace_distance(_dm(stats.bob_memory), _dm(blank)),
    }
    if strategy_name == "appendix-attack":
        cell["memory_prediction_distance"] = trace_distance(
            _dm(stats.bob_memory), _dm(appendix_predicted_memory(j, db)))
        if len(db.answers[j]) == 2:
            conditional = {}
            for sign, label in ((+1, db.answers[j][0]), (-1, db.answers[j][1])):
                v = pm_memory(j, sign, db.n)
                conditional[str(label)] = trace_distance(
                    _dm(stats.conditional_memory[label]), _dm(np.outer(v, v.conj())))
            cell["conditional_memory_distance"] = conditional
    return cell


def _trial(t: int, config: ExperimentConfig, db: Database, bob, queries, scenarios):
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, t]))
    j = queries[0] if len(queries) == 1 else int(rng.integers(1, db.n))
    if config.scenario == "random":
        scenario = Scenario.a if rng.random() < 0.5 else Scenario.b
    else:
        scenario = scenarios[0]
    tr = run_round(j, db, scenario, bob, rng)
    return (j, scenario.value, tr.recovered_answer, tr.plain_check_passed, tr.test_passed,
            tr.bob_guess == j)


def _sampled_cells(config, db, bob, queries, scenarios, workers: int) -> list[dict]:
    def work(t):
        return _trial(t, config, db, bob, queries, scenarios)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, range(config.trials), chunksize=16))
    else:
        results = [work(t) for t in range(config.trials)]

    cells = {}
    for j, sc, answer, plain_ok, passed, guessed in results:
        c = cells.setdefault((j, sc), {"trials": 0, "passes": 0, "plain_ok": 0,
                                       "guesses": 0, "answers": {}})
        c["trials"] += 1
        c["passes"] += passed
        c["plain_ok"] += plain_ok
        c["guesses"] += guessed
        c["answers"][str(answer)] = c["answers"].get(str(answer), 0) + 1

    out = []
    for (j, sc) in sorted(cells):
        c = cells[(j, sc)]
        exact = exact_round(j, db, sc, bob)
        n = c["trials"]
        out.append({
            "j": j,
            "scenario": sc,
            "trials": n,
            "passes": c["passes"],
            "pass_rate": c["passes"] / n,
            "pass_interval": list(wilson_interval(c["passes"], n)),
            "plain_check_rate": c["plain_ok"] / n,
            "answer_frequencies": {a: k / n for a, k in sorted(c["answers"].items())},
            "bob_guess_rate": c["guesses"] / n,
            "exact_pass_probability": exact.pass_probability,
            "exact_answer_distribution": {str(a): p for a, p in
                                          exact.answer_distribution.items()},
            "exact_bob_guess_probability": exact.bob_guess_probability,
        })
    return out


def _memory_leakage(cells: list[dict]) -> float | None:
    """Largest trace distance between Bob's memories for different queries."""
    by_j: dict[int, list[np.ndarray]] = {}
    for c in cells:
        by_j.setdefault(c["j"], []).append(_matrix_from_json(c["bob_memory"]))
    if len(by_j) < 2:
        return None
    avg = {j: sum(ms) / len(ms) for j, ms in by_j.items()}
    js = sorted(avg)
    return max(trace_distance(_dm(avg[a]), _dm(avg[b]))
               for i, a in enumerate(js) for b in js[i + 1:])


def run_experiment(config: ExperimentConfig, workers: int = 1) -> StatsReport:
    """Run `config`; the report does not depend on `workers`."""
    db = load_database(config.database)
    try:
        bob = make_strategy(config.strategy, db)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    queries = _queries(config, db)
    scenarios = _scenarios(config)
    doc = config.to_json()
    if config.mode == "exact-born":
        cells = [_exact_cell(j, sc, db, bob, config.strategy)
                 for j in queries for sc in scenarios]
        summary = {
            "max_pass_probability_deficit": max(c["detection_probability"] for c in cells),
            "memory_trace_distance_across_j": _memory_leakage(cells),
        }
        report = StatsReport(config.mode, doc, db.to_json(), cells, summary)
        report.audits = {which: audit_requirements(report, which) for which in ("pqpq", "spqpq")}
    else:
        cells = _sampled_cells(config, db, bob, queries, scenarios, workers)
        passes = sum(c["passes"] for c in cells)
        summary = {"trials": config.trials, "pass_rate": passes / config.trials,
                   "pass_interval": list(wilson_interval(passes, config.trials))}
        report = StatsReport(config.mode, doc, db.to_json(), cells, summary)
    return report


def _verdict(ok: bool | None, metric: str, value) -> dict:
    verdict = "not-evaluable" if ok is None else ("pass" if ok else "fail")
    return {"verdict": verdict, "metric": metric, "value": value}


def audit_requirements(report: StatsReport | Mapping, which: str) -> dict:
    """Map each item of the pQPQ or SpQPQ requirement list to a verdict.

    Only exact-born reports can be audited.
    """
    if isinstance(report, Mapping):
        report = StatsReport.from_json(report)
    if report.mode != "exact-born":
        raise ConfigError("audits need an exact-born report")
    if which not in ("pqpq", "spqpq"):
        raise ConfigError(f"unknown requirement list {which!r}")
    cells = report.cells
    if not cells:
        return {str(i): _verdict(None, "no cells", None) for i in range(1, 4 if which == "pqpq" else 5)}

    learn = min(min(c["legal_answer_probability"], c["plain_check_probability"]) for c in cells)
    items = {"1": _verdict(learn >= 1 - AUDIT_TOL,
                           "min probability that Alice's answer is correct for j", learn)}
    extra = sorted({q for c in cells for q in c["q_support"] if q not in (0, c["j"])})
    items["2"] = _verdict(not extra, "query-register support outside {0, j}", extra)

    leakage = report.summary.get("memory_trace_distance_across_j")
    advantage = max(c["bob_guess_probability"] - c["guess_baseline"] for c in cells)
    if which == "pqpq":
        violations = []
        for c in cells:
            reads = c["memory_disturbance"] > AUDIT_TOL or \
                c["bob_guess_probability"] - c["guess_baseline"] > AUDIT_TOL
            caught = c["detection_probability"] > AUDIT_TOL
            if reads != caught:
                violations.append({"j": c["j"], "scenario": c["scenario"], "bob_reads": reads,
                                   "detection_probability": c["detection_probability"]})
        items["3"] = _verdict(
            not violations,
            "Bob's memory leaves blank or Bob's guess beats baseline iff detection > 0",
            {"min_detection_probability": min(c["detection_probability"] for c in cells),
             "violations": violations})
    else:
        leaks = advantage > AUDIT_TOL or (leakage is not None and leakage > AUDIT_TOL)
        items["3"] = _verdict(
            not leaks,
            "Bob's guess advantage over baseline and memory trace distance across j",
            {"guess_advantage": advantage, "memory_trace_distance_across_j": leakage})
        # labels are distinct within a record, so the answer entropy equals I(answer; k)
        k_info = max(c["answer_entropy_bits"] for c in cells)
        items["4"] = _verdict(k_info <= AUDIT_TOL,
                              "bits about k carried by Alice's answer", k_info)
    return items
