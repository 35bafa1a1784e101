"""Constructive no-go attacks and the reductions between SpQPQ, 1S2PC and OT.

A perfectly concealing commitment lets the committer swap commitments with a
unitary on Alice's own registers; the same conversion, with the sides swapped,
lets a 1S2PC party rotate between outputs for different inputs.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Hashable, Iterable, Mapping

import numpy as np

from .core import (
    DERIVED_TOL,
    RegisterLayout,
    ReducedStateMismatch,
    StateVector,
    UnitaryOp,
    apply_unitary,
    fidelity,
    local_conversion_unitary,
    partial_trace,
    trace_distance,
)
from .protocol import Database, DatabaseError


class NotConcealingError(ReducedStateMismatch):
    """The commitment leaks b to the receiver, so the swap cannot be exact."""


@dataclass(frozen=True, eq=False)
class CommitmentScheme:
    """End-of-commit global states for b=0 and b=1, with Alice's registers named."""

    psi0: StateVector
    psi1: StateVector
    alice: tuple[str, ...]

    def __post_init__(self):
        if self.psi0.layout != self.psi1.layout:
            raise ValueError("commitment states must share one layout")
        alice = self.psi0.layout.ordered(self.alice)
        if not alice or len(alice) == len(self.psi0.layout.names):
            raise ValueError("Alice must hold a nonempty proper subset of the registers")
        object.__setattr__(self, "alice", alice)

    @property
    def layout(self) -> RegisterLayout:
        return self.psi0.layout

    @property
    def receiver(self) -> tuple[str, ...]:
        return tuple(n for n in self.layout.names if n not in self.alice)

    def state(self, b: int) -> StateVector:
        if b not in (0, 1):
            raise ValueError(f"committed bit must be 0 or 1, got {b}")
        return self.psi1 if b else self.psi0

    def to_json(self) -> dict:
        return {"alice": list(self.alice), "psi0": self.psi0.to_json(),
                "psi1": self.psi1.to_json()}

    @classmethod
    def from_json(cls, doc: Mapping) -> "CommitmentScheme":
        return cls(StateVector.from_json(doc["psi0"]), StateVector.from_json(doc["psi1"]),
                   tuple(doc["alice"]))


def bell_scheme() -> CommitmentScheme:
    """b=0 commits (|00>+|11>)/sqrt2, b=1 commits (|01>+|10>)/sqrt2; Alice holds A."""
    layout = RegisterLayout([("A", 2), ("B", 2)])
    s = 1 / np.sqrt(2)
    return CommitmentScheme(StateVector(layout, [s, 0, 0, s]),
                            StateVector(layout, [0, s, s, 0]), ("A",))


def concealing_gap(scheme: CommitmentScheme) -> float:
    """Trace distance between what the receiver holds for b=0 and b=1."""
    return trace_distance(partial_trace(scheme.psi0, scheme.receiver),
                          partial_trace(scheme.psi1, scheme.receiver))


def delayed_choice_attack(scheme: CommitmentScheme, commit_as: int, open_as: int,
                          eps_eq: float = DERIVED_TOL) -> tuple[UnitaryOp, float]:
    """Commit to `commit_as`, then rotate Alice's side so the opening reads `open_as`.

    Raises NotConcealingError (carrying the gap) when the receiver's reduced
    states differ by more than `eps_eq`.
    """
    gap = concealing_gap(scheme)
    if gap > eps_eq:
        raise NotConcealingError(gap, eps_eq)
    src, dst = scheme.state(commit_as), scheme.state(open_as)
    u = local_conversion_unitary(src, dst, scheme.alice, eps_eq)
    return u, fidelity(dst, apply_unitary(src, u))


def rotation_attack_1s2pc(final_states: Mapping[Hashable, StateVector],
                          alice_side: Iterable[str], k_from, k_to,
                          eps_eq: float = DERIVED_TOL) -> tuple[UnitaryOp, float]:
    """Bob-local unitary turning the run with input k_from into the run with k_to.

    Requires Alice's reduced state not to depend on k.
    """
    src, dst = final_states[k_from], final_states[k_to]
    alice = src.layout.ordered(alice_side)
    bob = tuple(n for n in src.layout.names if n not in alice)
    if not bob:
        raise ValueError("Bob holds no registers")
    gap = trace_distance(partial_trace(src, alice), partial_trace(dst, alice))
    if gap > eps_eq:
        raise ReducedStateMismatch(gap, eps_eq)
    u = local_conversion_unitary(src, dst, bob, eps_eq)
    return u, fidelity(dst, apply_unitary(src, u))


@dataclass(frozen=True)
class TwoPartyFunction:
    """f(j, k) tabulated over Alice's inputs j and Bob's inputs k.

    ``fixed_answer`` and ``answer_dim`` carry the database context needed to
    turn the table back into a QPQ database; they are ignored otherwise.
    """

    j_domain: tuple
    k_domain: tuple
    table: Mapping
    fixed_answer: int | None = None
    answer_dim: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "j_domain", tuple(self.j_domain))
        object.__setattr__(self, "k_domain", tuple(self.k_domain))
        object.__setattr__(self, "table", dict(self.table))
        for j in self.j_domain:
            for k in self.k_domain:
                if (j, k) not in self.table:
                    raise ValueError(f"table is missing f({j!r}, {k!r})")

    def __call__(self, j, k):
        return self.table[(j, k)]

    def __hash__(self):
        return hash((self.j_domain, self.k_domain, tuple(sorted(self.table.items(), key=repr))))

    def to_json(self) -> dict:
        rows = [[_jsonable(j), _jsonable(k), self.table[(j, k)]]
                for j in self.j_domain for k in self.k_domain]
        doc = {"j_domain": [_jsonable(j) for j in self.j_domain],
               "k_domain": [_jsonable(k) for k in self.k_domain], "table": rows}
        if self.fixed_answer is not None:
            doc["fixed_answer"] = self.fixed_answer
        if self.answer_dim is not None:
            doc["answer_dim"] = self.answer_dim
        return doc

    @classmethod
    def from_json(cls, doc: Mapping) -> "TwoPartyFunction":
        table = {(_hashable(j), _hashable(k)): out for j, k, out in doc["table"]}
        return cls(tuple(_hashable(j) for j in doc["j_domain"]),
                   tuple(_hashable(k) for k in doc["k_domain"]), table,
                   doc.get("fixed_answer"), doc.get("answer_dim"))


def _jsonable(x):
    return list(x) if isinstance(x, tuple) else x


def _hashable(x):
    return tuple(x) if isinstance(x, list) else x


@dataclass(frozen=True)
class OTInstance:
    m0: int
    m1: int
    k: int

    def __post_init__(self):
        if self.k not in (0, 1):
            raise ValueError(f"choice bit must be 0 or 1, got {self.k}")


def spqpq_as_1s2pc(db: Database) -> TwoPartyFunction:
    """Read a probabilistic database as f(j, k) = k-th correct answer of record j."""
    counts = set()
    lists = {}
    for j in range(1, db.n):
        if db.k_map is not None:
            lists[j] = [db.answers[j][i] for i in db.k_map[j]]
        else:
            lists[j] = list(db.answers[j])
        counts.add(len(lists[j]))
    if len(counts) != 1:
        raise DatabaseError(f"records have differing answer counts {sorted(counts)}")
    m = counts.pop()
    table = {(j, k): lists[j][k - 1] for j in lists for k in range(1, m + 1)}
    return TwoPartyFunction(tuple(range(1, db.n)), tuple(range(1, m + 1)), table,
                            fixed_answer=db.fixed_answer, answer_dim=db.answer_dim)


def onesided_via_spqpq(f: TwoPartyFunction) -> Database:
    """Database whose record j holds the outputs f(j, 1..m), duplicates merged.

    Alice's inputs are renumbered 1..len(j_domain) in domain order; record 0
    gets `f.fixed_answer` or a fresh label above every output.
    """
    outputs = [int(v) for v in f.table.values()]
    fixed = f.fixed_answer if f.fixed_answer is not None else max(outputs) + 1
    answer_dim = f.answer_dim if f.answer_dim is not None else max(outputs + [fixed]) + 1
    answers = [(fixed,)]
    k_map = [(0,)]
    trivial = True
    for j in f.j_domain:
        outs = [int(f.table[(j, k)]) for k in f.k_domain]
        unique = list(dict.fromkeys(outs))
        answers.append(tuple(unique))
        ks = tuple(unique.index(o) for o in outs)
        k_map.append(ks)
        trivial = trivial and ks == tuple(range(len(outs)))
    return Database(len(answers), answer_dim, tuple(answers), None if trivial else tuple(k_map))


def oot_as_1s2pc(ot: OTInstance, alphabet_size: int | None = None):
    """One-out-of-two OT as f((m0, m1), k) = m_k over all message pairs.

    Returns the tabulated function and its value at the instance's inputs.
    """
    size = alphabet_size if alphabet_size is not None else max(ot.m0, ot.m1) + 1
    if not (0 <= ot.m0 < size and 0 <= ot.m1 < size):
        raise ValueError(f"messages must lie in 0..{size - 1}")
    pairs = tuple(itertools.product(range(size), repeat=2))
    table = {(pair, k): pair[k] for pair in pairs for k in (0, 1)}
    f = TwoPartyFunction(pairs, (0, 1), table)
    return f, f((ot.m0, ot.m1), ot.k)


def k_ambiguity(f: TwoPartyFunction) -> dict:
    """Per (j, output), the inputs k consistent with seeing that output.

    An output shared by several k leaves Alice unable to tell them apart.
    """
    out: dict = {}
    for j in f.j_domain:
        for k in f.k_domain:
            out.setdefault((j, f.table[(j, k)]), []).append(k)
    return out


# random purification fixtures

def random_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    z = (rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def random_concealing_scheme(rng: np.random.Generator, alice_dim: int, bob_dim: int,
                             degenerate: bool = False) -> CommitmentScheme:
    """Two purifications of one random receiver state, built independently.

    With ``degenerate`` the spectrum has a repeated eigenvalue and the second
    purification also picks a different eigenbasis inside that eigenspace.
    """
    rank = int(rng.integers(1, min(alice_dim, bob_dim) + 1))
    if degenerate:
        rank = max(rank, 2)
        rank = min(rank, alice_dim, bob_dim)
    p = rng.random(rank) + 0.05
    if degenerate and rank >= 2:
        size = int(rng.integers(2, rank + 1))
        p[:size] = p[0]
    p = p / p.sum()
    eig = random_unitary(bob_dim, rng)[:, :rank]
    layout = RegisterLayout([("A", alice_dim), ("B", bob_dim)])

    def purify(bob_basis):
        alice_basis = random_unitary(alice_dim, rng)[:, :rank]
        mat = (alice_basis * np.sqrt(p)) @ bob_basis.T
        return StateVector(layout, mat.reshape(-1))

    eig1 = eig.copy()
    if degenerate and rank >= 2:
        block = np.nonzero(np.isclose(p, p[0]))[0]
        w = random_unitary(len(block), rng)
        eig1[:, block] = eig[:, block] @ w
    return CommitmentScheme(purify(eig), purify(eig1), ("A",))


def random_revealing_scheme(rng: np.random.Generator, alice_dim: int,
                            bob_dim: int) -> CommitmentScheme:
    """Two independent random global states; the receiver can tell them apart."""
    layout = RegisterLayout([("A", alice_dim), ("B", bob_dim)])

    def rand_state():
        v = rng.normal(size=layout.total_dim) + 1j * rng.normal(size=layout.total_dim)
        return StateVector(layout, v / np.linalg.norm(v))

    return CommitmentScheme(rand_state(), rand_state(), ("A",))
