"""Bob strategies: honest replies, an intercept-and-measure cheat, and the
two-answer attack that keeps information about j while passing Alice's test.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import (
    DensityMatrix,
    RegisterLayout,
    StateVector,
    UnitaryOp,
    complete_unitary,
    computational_projectors,
    make_basis_state,
    superpose,
    tensor_product,
)
from .protocol import (
    Database,
    DatabaseError,
    Scenario,
    bob_honest_oracle,
    phi_state,
)


@dataclass(frozen=True, eq=False)
class BobStrategy:
    """Bob's behaviour in one round.

    ``u1`` answers the first query on (Q1, R1, B) and ``u2`` the second on
    (Q2, R2, B). ``pre_reply_measurement`` is an optional projector set Bob
    measures on each incoming query register before replying; the first
    nonzero outcome is written into B. ``memory_readout`` means Bob measures
    B at the end to guess j.
    """

    name: str
    u1: UnitaryOp
    u2: UnitaryOp
    pre_reply_measurement: tuple[np.ndarray, ...] | None = None
    memory_readout: bool = False


def honest_strategy(db: Database) -> BobStrategy:
    return BobStrategy("honest", bob_honest_oracle(db, "1"), bob_honest_oracle(db, "2"))


def intercept_strategy(db: Database) -> BobStrategy:
    if not db.is_deterministic:
        raise DatabaseError("intercept strategy needs a deterministic database")
    return BobStrategy(
        "intercept",
        bob_honest_oracle(db, "1"),
        bob_honest_oracle(db, "2"),
        pre_reply_measurement=tuple(computational_projectors(db.n)),
        memory_readout=True,
    )


def _check_attack_shape(db: Database):
    for j, rec in enumerate(db.answers):
        if len(rec) > 2:
            raise DatabaseError(
                f"record {j} has {len(rec)} answers; the attack handles 1 or 2 per record")


def pm_memory(j: int, sign: int, n: int) -> np.ndarray:
    """(|0> + sign |j>)/sqrt2 on Bob's memory."""
    v = np.zeros(n, dtype=complex)
    v[0] = 1.0
    v[j] += sign
    return v / np.linalg.norm(v)


def _slot_layout(db: Database, slot: str) -> RegisterLayout:
    return RegisterLayout([(f"Q{slot}", db.n), (f"R{slot}", db.answer_dim), ("B", db.n)])


def _ket(lay: RegisterLayout, q: int, r: int, memory: np.ndarray) -> np.ndarray:
    qr = np.zeros(lay.dims[0] * lay.dims[1], dtype=complex)
    qr[q * lay.dims[1] + r] = 1.0
    return np.kron(qr, memory)


def build_U1(db: Database, slot: str = "1") -> UnitaryOp:
    """First reply: two-answer records get |j>(|A+>|+j> + |A->|-j>)/sqrt2."""
    _check_attack_shape(db)
    lay = _slot_layout(db, slot)
    n = db.n
    blank = np.eye(n, dtype=complex)[0]
    ins, outs = [], []
    for j, rec in enumerate(db.answers):
        ins.append(_ket(lay, j, 0, blank))
        if len(rec) == 1:
            outs.append(_ket(lay, j, rec[0], blank))
        else:
            plus = _ket(lay, j, rec[0], pm_memory(j, +1, n))
            minus = _ket(lay, j, rec[1], pm_memory(j, -1, n))
            outs.append((plus + minus) / np.sqrt(2))
    return UnitaryOp(lay.names, complete_unitary(np.column_stack(ins), np.column_stack(outs)))


def build_U2(db: Database, slot: str = "2") -> UnitaryOp:
    """Second reply: answers A_j^(+/-) according to Bob's memory |+/-j>."""
    _check_attack_shape(db)
    lay = _slot_layout(db, slot)
    n = db.n
    ins, outs = [], []
    for j, rec in enumerate(db.answers):
        if len(rec) == 1:
            for g in range(n):
                mem = np.eye(n, dtype=complex)[g]
                ins.append(_ket(lay, j, 0, mem))
                outs.append(_ket(lay, j, rec[0], mem))
        else:
            for sign, label in ((+1, rec[0]), (-1, rec[1])):
                mem = pm_memory(j, sign, n)
                ins.append(_ket(lay, j, 0, mem))
                outs.append(_ket(lay, j, label, mem))
    return UnitaryOp(lay.names, complete_unitary(np.column_stack(ins), np.column_stack(outs)))


def appendix_attack_strategy(db: Database) -> BobStrategy:
    return BobStrategy("appendix-attack", build_U1(db), build_U2(db), memory_readout=True)


STRATEGIES: dict[str, Callable[[Database], BobStrategy]] = {
    "honest": honest_strategy,
    "intercept": intercept_strategy,
    "appendix-attack": appendix_attack_strategy,
}


def make_strategy(name: str, db: Database) -> BobStrategy:
    try:
        factory = STRATEGIES[name]
    except KeyError:
        raise ValueError(f"unknown strategy {name!r}; choose from {sorted(STRATEGIES)}") from None
    return factory(db)


def appendix_predicted_state(j: int, db: Database, scenario: Scenario | str) -> StateVector:
    """End state of the attack written out term by term, independent of U1/U2."""
    scenario = Scenario(scenario)
    rec = db.answers[j]
    if len(rec) != 2:
        raise DatabaseError(f"record {j} does not have two answers")
    n = db.n
    p, s = scenario.plain_slot, scenario.superposed_slot
    mem_layout = RegisterLayout([("B", n)])
    terms = []
    for sign, label in ((+1, rec[0]), (-1, rec[1])):
        plain_lay = RegisterLayout([(f"Q{p}", n), (f"R{p}", db.answer_dim)])
        plain = make_basis_state(plain_lay, {f"Q{p}": j, f"R{p}": label})
        phi = phi_state(j, label, db, s)
        memory = StateVector(mem_layout, pm_memory(j, sign, n))
        pair = (plain, phi) if scenario is Scenario.a else (phi, plain)
        terms.append((1.0, tensor_product(*pair, memory)))
    return superpose(terms)


def appendix_predicted_memory(j: int, db: Database) -> np.ndarray:
    """Bob's average memory under the attack: (|0><0| + |j><j|)/2, or |0><0|."""
    m = np.zeros((db.n, db.n), dtype=complex)
    if len(db.answers[j]) == 2:
        m[0, 0] = m[j, j] = 0.5
    else:
        m[0, 0] = 1.0
    return m


def bob_extract_j(bob_memory: DensityMatrix, n: int, rng: np.random.Generator) -> int:
    """Measure B; a nonzero outcome is the guess, outcome 0 falls back to uniform."""
    probs = np.clip(np.real(np.diag(bob_memory.matrix)), 0.0, None)
    if len(probs) != n:
        raise ValueError(f"memory has dimension {len(probs)}, expected {n}")
    g = int(rng.choice(n, p=probs / probs.sum()))
    if g > 0:
        return g
    return int(rng.integers(1, n))


def bob_extract_probability(bob_memory: DensityMatrix | np.ndarray, j: int, n: int) -> float:
    """Exact success probability of `bob_extract_j` when the true index is j."""
    mat = bob_memory.matrix if isinstance(bob_memory, DensityMatrix) else bob_memory
    diag = np.real(np.diag(mat))
    return float(diag[j] + diag[0] / (n - 1))
