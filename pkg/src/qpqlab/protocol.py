"""One QPQ round: Alice's two queries, Bob's replies, recovery and cheat test.

Registers are laid out as (Q1, R1, Q2, R2, B). Query registers have one
basis state per record, answer registers one per answer label, and Bob's
memory B one per record. Answer label 0 is the blank every answer register
starts in, so no record may use it.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Mapping

import numpy as np

from .core import (
    STRUCT_TOL,
    DensityMatrix,
    LayoutError,
    RegisterLayout,
    StateVector,
    UnitaryOp,
    apply_unitary,
    born_probabilities,
    computational_projectors,
    make_basis_state,
    measure_projective,
    partial_trace,
    superpose,
    tensor_product,
)

if TYPE_CHECKING:
    from .adversaries import BobStrategy

REGISTERS = ("Q1", "R1", "Q2", "R2", "B")
PROB_TOL = 1e-12


class DatabaseError(ValueError):
    pass


class Scenario(str, enum.Enum):
    """Order in which Alice sends the two queries."""

    a = "a"  # plain query first
    b = "b"  # superposed query first

    @property
    def plain_slot(self) -> str:
        return "1" if self is Scenario.a else "2"

    @property
    def superposed_slot(self) -> str:
        return "2" if self is Scenario.a else "1"


@dataclass(frozen=True)
class Database:
    """Answer table. ``answers[j]`` lists the correct answer labels for record j.

    ``k_map`` is only set for tables produced from a two-party function with
    repeated outputs; it records, per record, which answer each k selects.
    """

    n: int
    answer_dim: int
    answers: tuple[tuple[int, ...], ...]
    k_map: tuple[tuple[int, ...], ...] | None = field(default=None, compare=True)

    def __post_init__(self):
        answers = tuple(tuple(int(a) for a in rec) for rec in self.answers)
        object.__setattr__(self, "answers", answers)
        if self.k_map is not None:
            object.__setattr__(self, "k_map", tuple(tuple(int(i) for i in r) for r in self.k_map))
        if self.n < 2:
            raise DatabaseError("database needs the fixed record 0 and at least one more")
        if len(answers) != self.n:
            raise DatabaseError(f"expected {self.n} records, got {len(answers)}")
        if len(answers[0]) != 1:
            raise DatabaseError("record 0 must have exactly one answer")
        for j, rec in enumerate(answers):
            if not rec:
                raise DatabaseError(f"record {j} has no answers")
            if len(set(rec)) != len(rec):
                raise DatabaseError(f"record {j} repeats an answer label")
            for a in rec:
                if not 1 <= a < self.answer_dim:
                    raise DatabaseError(
                        f"record {j}: label {a} outside 1..{self.answer_dim - 1} (0 is blank)")
        if self.k_map is not None:
            if len(self.k_map) != self.n:
                raise DatabaseError("k_map must have one entry per record")
            for j, ks in enumerate(self.k_map):
                if sorted(set(ks)) != list(range(len(answers[j]))):
                    raise DatabaseError(f"k_map for record {j} does not cover its answers")

    @property
    def fixed_answer(self) -> int:
        return self.answers[0][0]

    @property
    def is_deterministic(self) -> bool:
        return all(len(rec) == 1 for rec in self.answers)

    def is_legal(self, j: int, label: int) -> bool:
        return 0 <= j < self.n and label in self.answers[j]

    def deterministic_restriction(self) -> "Database":
        return Database(self.n, self.answer_dim, tuple(rec[:1] for rec in self.answers))

    def to_json(self) -> dict:
        doc = {
            "n": self.n,
            "answer_dim": self.answer_dim,
            "answers": {str(j): list(rec) for j, rec in enumerate(self.answers)},
        }
        if self.k_map is not None:
            doc["k_map"] = {str(j): list(ks) for j, ks in enumerate(self.k_map)}
        return doc

    @classmethod
    def from_json(cls, doc: Mapping) -> "Database":
        try:
            n = int(doc["n"])
            answers = tuple(tuple(doc["answers"][str(j)]) for j in range(n))
            k_map = None
            if "k_map" in doc:
                k_map = tuple(tuple(doc["k_map"][str(j)]) for j in range(n))
            return cls(n, int(doc["answer_dim"]), answers, k_map)
        except (KeyError, TypeError) as exc:
            raise DatabaseError(f"malformed database document: {exc!r}") from exc

    @classmethod
    def load(cls, path: str | Path) -> "Database":
        return cls.from_json(json.loads(Path(path).read_text()))


def appendix_database() -> Database:
    """N=3 table: A0 for record 0, two answers each for records 1 and 2."""
    return Database(n=3, answer_dim=6, answers=((1,), (2, 3), (4, 5)))


def qpq_layout(db: Database) -> RegisterLayout:
    return RegisterLayout([("Q1", db.n), ("R1", db.answer_dim),
                           ("Q2", db.n), ("R2", db.answer_dim), ("B", db.n)])


def _check_query(j: int, db_n: int):
    if not 1 <= j < db_n:
        raise ValueError(f"query index must be in 1..{db_n - 1}, got {j}")


def _slot_layout(db: Database, slot: str) -> RegisterLayout:
    if slot not in ("1", "2"):
        raise ValueError(f"slot must be '1' or '2', got {slot!r}")
    return RegisterLayout([(f"Q{slot}", db.n), (f"R{slot}", db.answer_dim)])


def phi_state(j: int, answer: int, db: Database, slot: str = "2") -> StateVector:
    """(|j>|answer> + |0>|A0>)/sqrt2 with no legality check on `answer`."""
    lay = _slot_layout(db, slot)
    q, r = lay.names
    return superpose([
        (1.0, make_basis_state(lay, {q: j, r: answer})),
        (1.0, make_basis_state(lay, {q: 0, r: db.fixed_answer})),
    ])


def build_phi(j: int, answer: int, db: Database, slot: str = "2") -> StateVector:
    """The entangled reply to a superposed query for record j."""
    if j == 0:
        raise ValueError("record 0 is the fixed record and cannot be queried")
    _check_query(j, db.n)
    if not db.is_legal(j, answer):
        raise ValueError(f"{answer} is not a correct answer for record {j}")
    return phi_state(j, answer, db, slot)


def alice_prepare(j: int, scenario: Scenario | str, layout: RegisterLayout):
    """Alice's two query messages, on single-register layouts Q1 and Q2."""
    scenario = Scenario(scenario)
    n = layout.dim_of("Q1")
    _check_query(j, n)
    messages = []
    for slot in ("1", "2"):
        lay = RegisterLayout([(f"Q{slot}", n)])
        plain = make_basis_state(lay, {f"Q{slot}": j})
        if slot == scenario.plain_slot:
            messages.append(plain)
        else:
            messages.append(superpose([(1.0, plain),
                                       (1.0, make_basis_state(lay, {f"Q{slot}": 0}))]))
    return messages[0], messages[1]


def bob_honest_oracle(db: Database, slot: str = "1") -> UnitaryOp:
    """qRAM reply |q>|r> -> |q>|r + A_q mod answer_dim> on (Q_slot, R_slot)."""
    if not db.is_deterministic:
        raise DatabaseError("honest oracle needs a deterministic database")
    lay = _slot_layout(db, slot)
    d = db.answer_dim
    u = np.zeros((lay.total_dim, lay.total_dim), dtype=complex)
    for q in range(db.n):
        shift = db.answers[q][0]
        for r in range(d):
            u[q * d + (r + shift) % d, q * d + r] = 1.0
    return UnitaryOp(lay.names, u)


def initial_state(j: int, scenario: Scenario | str, db: Database) -> StateVector:
    layout = qpq_layout(db)
    first, second = alice_prepare(j, scenario, layout)
    blank_r = RegisterLayout([("R", db.answer_dim)])
    blank = make_basis_state(blank_r, {"R": 0}).amplitudes
    memory = make_basis_state(RegisterLayout([("B", db.n)]), {"B": 0}).amplitudes
    amps = tensor_product(first, second).amplitudes.reshape(db.n, db.n)
    full = np.einsum("ac,r,s,m->arcsm", amps, blank, blank, memory)
    return StateVector(layout, full.reshape(-1))


def honest_final_state(j: int, db: Database, scenario: Scenario | str) -> StateVector:
    """Closed-form end state of an honest round, built directly from basis states."""
    scenario = Scenario(scenario)
    aj = db.answers[j][0]
    p, s = scenario.plain_slot, scenario.superposed_slot
    plain = make_basis_state(_slot_layout(db, p), {f"Q{p}": j, f"R{p}": aj})
    phi = phi_state(j, aj, db, s)
    memory = make_basis_state(RegisterLayout([("B", db.n)]), {"B": 0})
    pair = (plain, phi) if scenario is Scenario.a else (phi, plain)
    return tensor_product(*pair, memory)


def alice_recover_answer(state: StateVector, scenario: Scenario | str,
                         rng: np.random.Generator):
    """Computational measurement of the answer register of the plain query."""
    scenario = Scenario(scenario)
    reg = f"R{scenario.plain_slot}"
    outcome, post, _ = measure_projective(
        state, computational_projectors(state.layout.dim_of(reg)), [reg], rng)
    return outcome, post


def cheat_test_projector(j: int, answer: int, db: Database, scenario: Scenario | str):
    scenario = Scenario(scenario)
    slot = scenario.superposed_slot
    phi = phi_state(j, answer, db, slot).amplitudes
    pi = np.outer(phi, phi.conj())
    return [pi, np.eye(len(phi)) - pi], [f"Q{slot}", f"R{slot}"]


def cheat_test_probability(state: StateVector, j: int, answer: int, db: Database,
                           scenario: Scenario | str) -> float:
    projectors, regs = cheat_test_projector(j, answer, db, scenario)
    return float(born_probabilities(state, projectors, regs)[0])


def alice_cheat_test(state: StateVector, j: int, recovered_answer: int, db: Database,
                     scenario: Scenario | str, rng: np.random.Generator):
    """Project the superposed slot onto Phi_j(recovered_answer).

    Returns (passed, exact pass probability, post-state).
    """
    projectors, regs = cheat_test_projector(j, recovered_answer, db, scenario)
    outcome, post, prob = measure_projective(state, projectors, regs, rng)
    p_pass = prob if outcome == 0 else 1.0 - prob
    return outcome == 0, float(p_pass), post


@dataclass(frozen=True, eq=False)
class Transcript:
    j: int
    scenario: Scenario
    final_state: StateVector
    recovered_answer: int
    plain_check_passed: bool
    test_passed: bool
    test_pass_probability: float
    bob_memory: DensityMatrix
    bob_observations: tuple[int, ...] = ()
    bob_guess: int | None = None

    def to_json(self) -> dict:
        return {
            "j": self.j,
            "scenario": self.scenario.value,
            "recovered_answer": self.recovered_answer,
            "plain_check_passed": self.plain_check_passed,
            "test_passed": self.test_passed,
            "test_pass_probability": self.test_pass_probability,
            "bob_observations": list(self.bob_observations),
            "bob_guess": self.bob_guess,
            "bob_memory": self.bob_memory.to_json(),
            "final_state": self.final_state.to_json(),
        }


def _check_strategy(bob: "BobStrategy"):
    for u, allowed in ((bob.u1, {"Q1", "R1", "B"}), (bob.u2, {"Q2", "R2", "B"})):
        if not set(u.target_registers) <= allowed:
            raise LayoutError(
                f"strategy {bob.name!r} acts on {u.target_registers}, allowed {sorted(allowed)}")


def record_in_memory(state: StateVector, outcome: int, memory_record: int) -> StateVector:
    """Swap |0> and |outcome> on B; Bob only writes once, into a blank memory."""
    if outcome == 0 or memory_record != 0:
        return state
    n = state.layout.dim_of("B")
    perm = np.eye(n, dtype=complex)
    perm[[0, outcome]] = perm[[outcome, 0]]
    return apply_unitary(state, UnitaryOp(("B",), perm))


def bob_reply(state: StateVector, bob: "BobStrategy", slot: str,
              rng: np.random.Generator | None, observations: list[int]) -> StateVector:
    if bob.pre_reply_measurement is not None:
        outcome, state, _ = measure_projective(
            state, bob.pre_reply_measurement, [f"Q{slot}"], rng)
        record = next((o for o in observations if o != 0), 0)
        state = record_in_memory(state, outcome, record)
        observations.append(outcome)
    return apply_unitary(state, bob.u1 if slot == "1" else bob.u2)


def run_round(j: int, db: Database, scenario: Scenario | str, bob: "BobStrategy",
              rng: np.random.Generator) -> Transcript:
    """Simulate one round.

    Draws from `rng` in this order: Bob's pre-reply measurements (first then
    second query), Alice's answer measurement, the plain-query measurement,
    the cheat test, Bob's memory readout.
    """
    from .adversaries import bob_extract_j

    scenario = Scenario(scenario)
    _check_query(j, db.n)
    _check_strategy(bob)
    state = initial_state(j, scenario, db)
    observations: list[int] = []
    state = bob_reply(state, bob, "1", rng, observations)
    state = bob_reply(state, bob, "2", rng, observations)
    final_state = state
    memory = partial_trace(final_state, ["B"])

    answer, state = alice_recover_answer(state, scenario, rng)
    qreg = f"Q{scenario.plain_slot}"
    q_seen, state, _ = measure_projective(
        state, computational_projectors(db.n), [qreg], rng)
    plain_ok = q_seen == j and db.is_legal(j, answer)
    passed, p_pass, state = alice_cheat_test(state, j, answer, db, scenario, rng)

    if bob.memory_readout:
        guess = bob_extract_j(partial_trace(state, ["B"]), db.n, rng)
    else:
        guess = int(rng.integers(1, db.n))
    return Transcript(j, scenario, final_state, answer, plain_ok, passed, p_pass,
                      memory, tuple(observations), guess)


# exact (branch-enumerating) analysis

def final_branches(j: int, db: Database, scenario: Scenario | str,
                   bob: "BobStrategy") -> list[tuple[float, StateVector]]:
    """All end states of a round with their weights, before Alice measures.

    Bob's pre-reply measurements split the round into branches; strategies
    without them yield a single branch of weight 1.
    """
    _check_query(j, db.n)
    _check_strategy(bob)
    branches = [(1.0, initial_state(j, scenario, db), 0)]
    for slot in ("1", "2"):
        nxt = []
        for w, st, record in branches:
            if bob.pre_reply_measurement is None:
                nxt.append((w, apply_unitary(st, bob.u1 if slot == "1" else bob.u2), record))
                continue
            probs = born_probabilities(st, bob.pre_reply_measurement, [f"Q{slot}"])
            for outcome, p in enumerate(probs):
                if p <= PROB_TOL:
                    continue
                collapsed = _collapse(st, bob.pre_reply_measurement[outcome], f"Q{slot}", p)
                collapsed = record_in_memory(collapsed, outcome, record)
                new_record = record if record != 0 else outcome
                u = bob.u1 if slot == "1" else bob.u2
                nxt.append((w * p, apply_unitary(collapsed, u), new_record))
        branches = nxt
    return [(w, st) for w, st, _ in branches]


def _collapse(state: StateVector, projector: np.ndarray, reg: str, prob: float) -> StateVector:
    layout = state.layout
    pos = layout.position(reg)
    t = np.moveaxis(state.tensor(), pos, 0)
    shape = t.shape
    out = (projector @ t.reshape(shape[0], -1)).reshape(shape)
    out = np.moveaxis(out, 0, pos).reshape(-1) / np.sqrt(prob)
    return StateVector(layout, out)


def _slice_plain(state: StateVector, scenario: Scenario, q: int, a: int):
    """Unnormalized state after the plain (Q, R) pair reads (q, a)."""
    p = scenario.plain_slot
    t = state.tensor()
    index = [slice(None)] * 5
    index[state.layout.position(f"Q{p}")] = q
    index[state.layout.position(f"R{p}")] = a
    return t[tuple(index)]  # remaining registers in layout order


@dataclass
class RoundStatistics:
    """Exact Born statistics of one (j, scenario) cell."""

    j: int
    scenario: Scenario
    answer_distribution: dict[int, float]
    legal_answer_probability: float
    plain_check_probability: float
    pass_probability: float
    bob_memory: np.ndarray
    conditional_memory: dict[int, np.ndarray]
    q_support: list[int]
    bob_guess_probability: float


def exact_round(j: int, db: Database, scenario: Scenario | str,
                bob: "BobStrategy") -> RoundStatistics:
    from .adversaries import bob_extract_probability

    scenario = Scenario(scenario)
    branches = final_branches(j, db, scenario, bob)
    s = scenario.superposed_slot
    answer_dist: dict[int, float] = {}
    plain_ok = 0.0
    pass_prob = 0.0
    memory = np.zeros((db.n, db.n), dtype=complex)
    cond: dict[int, np.ndarray] = {}
    support: set[int] = set()

    for w, st in branches:
        memory += w * partial_trace(st, ["B"]).matrix
        for reg in ("Q1", "Q2"):
            diag = np.real(np.diag(partial_trace(st, [reg]).matrix))
            support.update(int(i) for i in np.nonzero(diag > PROB_TOL)[0])
        for q in range(db.n):
            for a in range(db.answer_dim):
                rest = _slice_plain(st, scenario, q, a)  # axes: Q_s, R_s, B
                p = float(np.vdot(rest, rest).real)
                if p <= PROB_TOL:
                    continue
                answer_dist[a] = answer_dist.get(a, 0.0) + w * p
                if q == j and db.is_legal(j, a):
                    plain_ok += w * p
                phi = phi_state(j, a, db, s).amplitudes.reshape(db.n, db.answer_dim)
                residual = np.einsum("qr,qrb->b", phi.conj(), rest)
                pass_prob += w * float(np.vdot(residual, residual).real)
                mat = rest.reshape(-1, db.n)
                cond[a] = cond.get(a, 0) + w * (mat.T @ mat.conj())

    cond = {a: m / answer_dist[a] for a, m in cond.items()}
    legal = sum(p for a, p in answer_dist.items() if db.is_legal(j, a))
    if bob.memory_readout:
        guess = bob_extract_probability(memory, j, db.n)
    else:
        guess = 1.0 / (db.n - 1)
    return RoundStatistics(
        j=j,
        scenario=scenario,
        answer_distribution=dict(sorted(answer_dist.items())),
        legal_answer_probability=float(legal),
        plain_check_probability=float(plain_ok),
        pass_probability=float(pass_prob),
        bob_memory=memory,
        conditional_memory=dict(sorted(cond.items())),
        q_support=sorted(support),
        bob_guess_probability=float(guess),
    )


def check_honest_conformance(j: int, db: Database, scenario: Scenario | str,
                             final_state: StateVector, atol: float = STRUCT_TOL) -> bool:
    expected = honest_final_state(j, db, scenario)
    return abs(abs(np.vdot(expected.amplitudes, final_state.amplitudes)) - 1.0) <= atol


def random_deterministic_database(rng: np.random.Generator, max_n: int = 6,
                                  max_answer_dim: int = 8) -> Database:
    n = int(rng.integers(2, max_n + 1))
    d = int(rng.integers(2, max_answer_dim + 1))
    answers = tuple((int(rng.integers(1, d)),) for _ in range(n))
    return Database(n, d, answers)


def random_rectangular_database(rng: np.random.Generator, max_n: int = 6, max_m: int = 3,
                                max_answer_dim: int = 10) -> Database:
    n = int(rng.integers(2, max_n + 1))
    m = int(rng.integers(1, max_m + 1))
    d = int(rng.integers(m + 1, max(m + 2, max_answer_dim + 1)))
    answers = [(int(rng.integers(1, d)),)]
    for _ in range(1, n):
        answers.append(tuple(int(x) for x in rng.choice(np.arange(1, d), size=m, replace=False)))
    return Database(n, d, tuple(answers))
