"""Exact finite-dimensional state algebra over named registers.

Basis ordering is big-endian in declared register order: the first register
is the most significant digit of the global amplitude index.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

STRUCT_TOL = 1e-10
DERIVED_TOL = 1e-8
DEGENERACY_TOL = 1e-9
SCHMIDT_CUTOFF = 1e-12


class LayoutError(ValueError):
    pass


class NormalizationError(ValueError):
    pass


class NotUnitaryError(ValueError):
    pass


class InvalidProjectorError(ValueError):
    pass


class ReducedStateMismatch(ValueError):
    """Raised when two states do not share a reduced state on the fixed side."""

    def __init__(self, gap: float, eps: float):
        super().__init__(f"reduced states differ: trace distance {gap:.3e} > {eps:.1e}")
        self.gap = gap
        self.eps = eps


@dataclass(frozen=True)
class RegisterLayout:
    registers: tuple[tuple[str, int], ...]

    def __init__(self, registers: Iterable[tuple[str, int]]):
        regs = tuple((str(name), int(dim)) for name, dim in registers)
        names = [name for name, _ in regs]
        if not regs:
            raise LayoutError("layout needs at least one register")
        if len(set(names)) != len(names):
            raise LayoutError(f"duplicate register names in {names}")
        for name, dim in regs:
            if dim < 1:
                raise LayoutError(f"register {name!r} has dimension {dim}")
        object.__setattr__(self, "registers", regs)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.registers)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(dim for _, dim in self.registers)

    @property
    def total_dim(self) -> int:
        return int(np.prod(self.dims))

    def dim_of(self, name: str) -> int:
        return self.dims[self.position(name)]

    def position(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise LayoutError(f"unknown register {name!r}; layout has {self.names}") from None

    def ordered(self, names: Iterable[str]) -> tuple[str, ...]:
        """Return `names` sorted into layout order, validating each one."""
        wanted = set(names)
        for name in wanted:
            self.position(name)
        return tuple(n for n in self.names if n in wanted)

    def sub(self, names: Iterable[str]) -> "RegisterLayout":
        return RegisterLayout((n, self.dim_of(n)) for n in self.ordered(names))

    def encode(self, assignment: Mapping[str, int]) -> int:
        for name in assignment:
            self.position(name)
        index = 0
        for name, dim in self.registers:
            if name not in assignment:
                raise LayoutError(f"register {name!r} not assigned")
            value = int(assignment[name])
            if not 0 <= value < dim:
                raise LayoutError(f"index {value} out of range for {name!r} (dim {dim})")
            index = index * dim + value
        return index

    def decode(self, index: int) -> dict[str, int]:
        out = {}
        for name, dim in reversed(self.registers):
            index, out[name] = divmod(index, dim)
        return {name: out[name] for name in self.names}

    def to_json(self) -> list:
        return [[name, dim] for name, dim in self.registers]


@dataclass(frozen=True, eq=False)
class StateVector:
    layout: RegisterLayout
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex).reshape(-1)
        if amps.size != self.layout.total_dim:
            raise LayoutError(
                f"{amps.size} amplitudes for layout of dimension {self.layout.total_dim}")
        norm = np.linalg.norm(amps)
        if abs(norm - 1.0) > STRUCT_TOL:
            raise NormalizationError(f"state has norm {norm}")
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    def tensor(self) -> np.ndarray:
        return self.amplitudes.reshape(self.layout.dims)

    def density(self) -> "DensityMatrix":
        return DensityMatrix(self.layout, np.outer(self.amplitudes, self.amplitudes.conj()))

    def to_json(self) -> dict:
        return {
            "layout": self.layout.to_json(),
            "amplitudes": [[float(a.real), float(a.imag)] for a in self.amplitudes],
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "StateVector":
        layout = RegisterLayout(tuple(r) for r in doc["layout"])
        amps = np.array([complex(re, im) for re, im in doc["amplitudes"]])
        return cls(layout, amps)


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    layout: RegisterLayout
    matrix: np.ndarray

    def __post_init__(self):
        mat = np.asarray(self.matrix, dtype=complex)
        d = self.layout.total_dim
        if mat.shape != (d, d):
            raise LayoutError(f"matrix shape {mat.shape} does not match dimension {d}")
        if np.max(np.abs(mat - mat.conj().T)) > STRUCT_TOL:
            raise ValueError("density matrix is not Hermitian")
        if abs(np.trace(mat) - 1.0) > STRUCT_TOL:
            raise ValueError(f"density matrix has trace {np.trace(mat).real}")
        if np.min(np.linalg.eigvalsh(mat)) < -STRUCT_TOL:
            raise ValueError("density matrix has a negative eigenvalue")
        mat.setflags(write=False)
        object.__setattr__(self, "matrix", mat)

    def to_json(self) -> dict:
        return {
            "layout": self.layout.to_json(),
            "matrix": [[[float(x.real), float(x.imag)] for x in row] for row in self.matrix],
        }


@dataclass(frozen=True, eq=False)
class UnitaryOp:
    target_registers: tuple[str, ...]
    matrix: np.ndarray

    def __post_init__(self):
        mat = np.asarray(self.matrix, dtype=complex)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise NotUnitaryError(f"unitary must be square, got shape {mat.shape}")
        err = unitarity_error(mat)
        if err > STRUCT_TOL:
            raise NotUnitaryError(f"U^dag U deviates from identity by {err:.3e}")
        mat.setflags(write=False)
        object.__setattr__(self, "target_registers", tuple(self.target_registers))
        object.__setattr__(self, "matrix", mat)


@dataclass(frozen=True, eq=False)
class SchmidtDecomposition:
    layout: RegisterLayout
    left: tuple[str, ...]
    coefficients: np.ndarray
    left_basis: np.ndarray  # columns
    right_basis: np.ndarray  # columns

    @property
    def right(self) -> tuple[str, ...]:
        return tuple(n for n in self.layout.names if n not in self.left)

    @property
    def rank(self) -> int:
        return len(self.coefficients)

    def reconstruct(self) -> StateVector:
        mat = (self.left_basis * self.coefficients) @ self.right_basis.T
        left_dims = [self.layout.dim_of(n) for n in self.left]
        right_dims = [self.layout.dim_of(n) for n in self.right]
        tensor = mat.reshape(left_dims + right_dims)
        order = self.left + self.right
        perm = [order.index(n) for n in self.layout.names]
        return StateVector(self.layout, tensor.transpose(perm).reshape(-1))


def unitarity_error(mat: np.ndarray) -> float:
    return float(np.max(np.abs(mat.conj().T @ mat - np.eye(mat.shape[0]))))


def make_basis_state(layout: RegisterLayout, assignment: Mapping[str, int]) -> StateVector:
    amps = np.zeros(layout.total_dim, dtype=complex)
    amps[layout.encode(assignment)] = 1.0
    return StateVector(layout, amps)


def superpose(terms: Sequence[tuple[complex, StateVector]]) -> StateVector:
    """Normalized linear combination of states sharing one layout."""
    if not terms:
        raise ValueError("superpose needs at least one term")
    layout = terms[0][1].layout
    total = np.zeros(layout.total_dim, dtype=complex)
    for coeff, state in terms:
        if state.layout != layout:
            raise LayoutError("superposed states have mismatched layouts")
        total += coeff * state.amplitudes
    norm = np.linalg.norm(total)
    if norm < STRUCT_TOL:
        raise NormalizationError("superposition has zero norm")
    return StateVector(layout, total / norm)


def tensor_product(*states: StateVector) -> StateVector:
    regs: list[tuple[str, int]] = []
    amps = np.ones(1, dtype=complex)
    for s in states:
        regs.extend(s.layout.registers)
        amps = np.kron(amps, s.amplitudes)
    return StateVector(RegisterLayout(regs), amps)


def _move_to_front(tensor: np.ndarray, layout: RegisterLayout, names: Sequence[str]):
    front = [layout.position(n) for n in names]
    rest = [i for i in range(len(layout.names)) if i not in front]
    perm = front + rest
    return np.transpose(tensor, perm), perm


def apply_unitary(state: StateVector, u: UnitaryOp) -> StateVector:
    layout = state.layout
    targets = u.target_registers
    if len(set(targets)) != len(targets):
        raise LayoutError(f"repeated target register in {targets}")
    tdims = [layout.dim_of(n) for n in targets]
    dt = int(np.prod(tdims))
    if u.matrix.shape[0] != dt:
        raise LayoutError(f"unitary of size {u.matrix.shape[0]} on registers of dimension {dt}")
    moved, perm = _move_to_front(state.tensor(), layout, targets)
    rest_shape = moved.shape[len(targets):]
    out = (u.matrix @ moved.reshape(dt, -1)).reshape(tuple(tdims) + rest_shape)
    out = np.transpose(out, np.argsort(perm))
    return StateVector(layout, out.reshape(-1))


def partial_trace(state: StateVector | DensityMatrix, keep: Iterable[str]) -> DensityMatrix:
    """Reduced density matrix on `keep`, in layout order."""
    layout = state.layout
    kept = layout.ordered(keep)
    if not kept:
        raise LayoutError("partial trace needs a nonempty keep set")
    sub = layout.sub(kept)
    dk = sub.total_dim
    if isinstance(state, StateVector):
        moved, _ = _move_to_front(state.tensor(), layout, kept)
        mat = moved.reshape(dk, -1)
        rho = mat @ mat.conj().T
    else:
        n = len(layout.names)
        tensor = state.matrix.reshape(layout.dims + layout.dims)
        front = [layout.position(k) for k in kept]
        rest = [i for i in range(n) if i not in front]
        perm = front + rest + [n + i for i in front] + [n + i for i in rest]
        dt = layout.total_dim // dk
        rho = np.einsum("iaja->ij", tensor.transpose(perm).reshape(dk, dt, dk, dt))
    return DensityMatrix(sub, rho)


def schmidt_decompose(state: StateVector, left: Iterable[str]) -> SchmidtDecomposition:
    layout = state.layout
    lnames = layout.ordered(left)
    if not lnames or len(lnames) == len(layout.names):
        raise LayoutError("Schmidt decomposition needs a nontrivial bipartition")
    moved, _ = _move_to_front(state.tensor(), layout, lnames)
    dl = int(np.prod([layout.dim_of(n) for n in lnames]))
    u, s, vh = np.linalg.svd(moved.reshape(dl, -1), full_matrices=False)
    r = int(np.sum(s > SCHMIDT_CUTOFF))
    return SchmidtDecomposition(layout, lnames, s[:r], u[:, :r], vh[:r, :].T)


def computational_projectors(dim: int) -> list[np.ndarray]:
    out = []
    for i in range(dim):
        p = np.zeros((dim, dim), dtype=complex)
        p[i, i] = 1.0
        out.append(p)
    return out


def _check_projectors(projectors: Sequence[np.ndarray], dim: int) -> list[np.ndarray]:
    mats = [np.asarray(p, dtype=complex) for p in projectors]
    total = np.zeros((dim, dim), dtype=complex)
    for k, p in enumerate(mats):
        if p.shape != (dim, dim):
            raise InvalidProjectorError(f"projector {k} has shape {p.shape}, expected {(dim, dim)}")
        if np.max(np.abs(p - p.conj().T)) > STRUCT_TOL:
            raise InvalidProjectorError(f"projector {k} is not Hermitian")
        if np.max(np.abs(p @ p - p)) > STRUCT_TOL:
            raise InvalidProjectorError(f"projector {k} is not idempotent")
        total += p
    if np.max(np.abs(total - np.eye(dim))) > STRUCT_TOL:
        raise InvalidProjectorError("projectors do not sum to the identity")
    return mats


def _project_all(state: StateVector, projectors, registers):
    layout = state.layout
    targets = tuple(registers)
    tdims = [layout.dim_of(n) for n in targets]
    dt = int(np.prod(tdims))
    mats = _check_projectors(projectors, dt)
    moved, perm = _move_to_front(state.tensor(), layout, targets)
    flat = moved.reshape(dt, -1)
    inverse = np.argsort(perm)
    branches = []
    for p in mats:
        vec = (p @ flat).reshape(moved.shape)
        branches.append(np.transpose(vec, inverse).reshape(-1))
    return branches


def born_probabilities(state: StateVector, projectors: Sequence[np.ndarray],
                       registers: Sequence[str]) -> np.ndarray:
    """Exact outcome probabilities for a projective measurement on `registers`."""
    branches = _project_all(state, projectors, registers)
    return np.array([float(np.vdot(b, b).real) for b in branches])


def measure_projective(state: StateVector, projectors: Sequence[np.ndarray],
                       registers: Sequence[str], rng: np.random.Generator):
    """Sample a projective measurement.

    Returns (outcome index, renormalized post-measurement state, exact Born
    probability of the sampled outcome).
    """
    branches = _project_all(state, projectors, registers)
    probs = np.array([float(np.vdot(b, b).real) for b in branches])
    probs = np.clip(probs, 0.0, None)
    outcome = int(rng.choice(len(probs), p=probs / probs.sum()))
    post = branches[outcome] / np.sqrt(probs[outcome])
    return outcome, StateVector(state.layout, post), float(probs[outcome])


def trace_distance(a: DensityMatrix, b: DensityMatrix) -> float:
    if a.matrix.shape != b.matrix.shape:
        raise LayoutError(f"dimension mismatch: {a.matrix.shape} vs {b.matrix.shape}")
    eig = np.linalg.eigvalsh(a.matrix - b.matrix)
    return float(min(1.0, 0.5 * np.sum(np.abs(eig))))


def overlap(a: StateVector, b: StateVector) -> complex:
    if a.layout != b.layout:
        raise LayoutError("overlap of states on different layouts")
    return complex(np.vdot(a.amplitudes, b.amplitudes))


def fidelity(a: StateVector, b: StateVector) -> float:
    return abs(overlap(a, b)) ** 2


def equal_up_to_phase(a: StateVector, b: StateVector, atol: float = STRUCT_TOL) -> bool:
    return abs(abs(overlap(a, b)) - 1.0) <= atol


def gram_schmidt_complement(vectors: np.ndarray, dim: int) -> np.ndarray:
    """Orthonormal basis (as columns) of the complement of span(vectors).

    Candidates are the computational basis vectors in order, each
    orthogonalized twice against the growing set.
    """
    basis = [vectors[:, i] for i in range(vectors.shape[1])]
    found = []
    for i in range(dim):
        if len(basis) == dim:
            break
        v = np.zeros(dim, dtype=complex)
        v[i] = 1.0
        for _ in range(2):
            for b in basis:
                v = v - np.vdot(b, v) * b
        norm = np.linalg.norm(v)
        if norm > 1e-6:
            v = v / norm
            basis.append(v)
            found.append(v)
    if not found:
        return np.zeros((dim, 0), dtype=complex)
    return np.column_stack(found)


def complete_unitary(inputs: np.ndarray, outputs: np.ndarray) -> np.ndarray:
    """Extend the isometry inputs[:, i] -> outputs[:, i] to a full unitary."""
    inputs = np.asarray(inputs, dtype=complex)
    outputs = np.asarray(outputs, dtype=complex)
    dim, r = inputs.shape
    if outputs.shape != (dim, r):
        raise ValueError("inputs and outputs must have the same shape")
    for name, m in (("inputs", inputs), ("outputs", outputs)):
        if np.max(np.abs(m.conj().T @ m - np.eye(r)), initial=0.0) > STRUCT_TOL:
            raise NotUnitaryError(f"{name} are not orthonormal; mapping is not an isometry")
    u = outputs @ inputs.conj().T
    cin = gram_schmidt_complement(inputs, dim)
    cout = gram_schmidt_complement(outputs, dim)
    u = u + cout @ cin.conj().T
    if unitarity_error(u) > STRUCT_TOL:
        raise NotUnitaryError("unitary completion failed")
    return u


def _polar_unitary(m: np.ndarray) -> np.ndarray:
    w, _, vh = np.linalg.svd(m)
    return w @ vh


def local_conversion_unitary(psi0: StateVector, psi1: StateVector, local: Iterable[str],
                             eps_eq: float = DERIVED_TOL) -> UnitaryOp:
    """Unitary on `local` taking psi0 to psi1 (up to phase).

    Requires the two states to share their reduced state on the complement
    of `local`.
    """
    if psi0.layout != psi1.layout:
        raise LayoutError("states live on different layouts")
    layout = psi0.layout
    lnames = layout.ordered(local)
    others = [n for n in layout.names if n not in lnames]
    if not lnames:
        raise LayoutError("local register set is empty")
    dl = layout.sub(lnames).total_dim
    if not others:
        # whole system is local: any unitary with psi0 -> psi1 works
        return UnitaryOp(lnames, complete_unitary(psi0.amplitudes[:, None],
                                                  psi1.amplitudes[:, None]))
    gap = trace_distance(partial_trace(psi0, others), partial_trace(psi1, others))
    if gap > eps_eq:
        raise ReducedStateMismatch(gap, eps_eq)

    s0 = schmidt_decompose(psi0, lnames)
    s1 = schmidt_decompose(psi1, lnames)
    r = min(s0.rank, s1.rank)
    c = s0.coefficients[:r]
    blocks = []
    start = 0
    for i in range(1, r + 1):
        if i == r or c[start] - c[i] > DEGENERACY_TOL:
            blocks.append(slice(start, i))
            start = i

    # psi = L diag(c) R^T; within a degenerate block R1 ~ R0 W, so map L0 -> L1 W^T
    images = np.zeros((dl, r), dtype=complex)
    for blk in blocks:
        w = _polar_unitary(s0.right_basis[:, blk].conj().T @ s1.right_basis[:, blk])
        images[:, blk] = s1.left_basis[:, blk] @ w.T
    return UnitaryOp(lnames, complete_unitary(s0.left_basis[:, :r], images))
