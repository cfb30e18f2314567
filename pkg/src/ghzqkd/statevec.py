"""
Dense state-vector simulator for the handful of qubits a GHZ triplet needs.

Qubit 0 is the leftmost symbol of a ket, so |110> has amplitude index 6.
Every operation returns a new StateVector; inputs are never mutated.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

MAX_QUBITS = 24
NORM_TOL = 1e-9
EXACT_TOL = 1e-12

_SQRT1_2 = 1.0 / np.sqrt(2.0)


class StateCorruptionError(RuntimeError):
    """A measurement branch has zero norm, which a valid state cannot produce."""


class Gate(enum.Enum):
    IDENTITY = "I"
    PAULI_X = "X"
    PAULI_Y = "Y"
    PAULI_Z = "Z"
    HADAMARD = "H"

    @classmethod
    def from_symbol(cls, symbol: str) -> "Gate":
        return cls(symbol.upper())


class MeasurementBasis(enum.Enum):
    Z = "Z"
    X = "X"


GATE_MATRICES = {
    Gate.IDENTITY: np.eye(2, dtype=complex),
    Gate.PAULI_X: np.array([[0, 1], [1, 0]], dtype=complex),
    Gate.PAULI_Y: np.array([[0, -1j], [1j, 0]], dtype=complex),
    Gate.PAULI_Z: np.array([[1, 0], [0, -1]], dtype=complex),
    Gate.HADAMARD: np.array([[1, 1], [1, -1]], dtype=complex) * _SQRT1_2,
}


@dataclass
class StateVector:
    num_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self):
        if len(self.amplitudes) != 1 << self.num_qubits:
            raise ValueError(
                f"expected {1 << self.num_qubits} amplitudes, got {len(self.amplitudes)}"
            )

    @property
    def norm(self) -> float:
        return float(np.vdot(self.amplitudes, self.amplitudes).real)

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def copy(self) -> "StateVector":
        return StateVector(self.num_qubits, self.amplitudes.copy())

    def __repr__(self) -> str:
        terms = []
        for idx in np.flatnonzero(np.abs(self.amplitudes) > EXACT_TOL):
            amp = self.amplitudes[idx]
            terms.append(f"({amp:.4g})|{idx:0{self.num_qubits}b}>")
        return "StateVector(" + " + ".join(terms) + ")"


def _check_size(num_qubits: int) -> None:
    if not 1 <= num_qubits <= MAX_QUBITS:
        raise ValueError(f"num_qubits must be in [1, {MAX_QUBITS}], got {num_qubits}")


def _check_qubit(state: StateVector, qubit: int) -> None:
    if not 0 <= qubit < state.num_qubits:
        raise IndexError(f"qubit {qubit} out of range for {state.num_qubits}-qubit register")


@lru_cache(maxsize=None)
def _bit_mask(num_qubits: int, qubit: int) -> int:
    return 1 << (num_qubits - 1 - qubit)


@lru_cache(maxsize=None)
def _split_indices(num_qubits: int, qubit: int) -> tuple[np.ndarray, np.ndarray]:
    """Amplitude indices where `qubit` reads 0, and the partner indices where it reads 1."""
    idx = np.arange(1 << num_qubits)
    mask = _bit_mask(num_qubits, qubit)
    zeros = idx[(idx & mask) == 0]
    return zeros, zeros | mask


@lru_cache(maxsize=None)
def _flip_permutation(num_qubits: int, qubit: int) -> np.ndarray:
    return np.arange(1 << num_qubits) ^ _bit_mask(num_qubits, qubit)


@lru_cache(maxsize=None)
def _z_signs(num_qubits: int, qubit: int) -> np.ndarray:
    idx = np.arange(1 << num_qubits)
    return np.where(idx & _bit_mask(num_qubits, qubit), -1.0, 1.0)


@lru_cache(maxsize=None)
def _cnot_permutation(num_qubits: int, control: int, target: int) -> np.ndarray:
    idx = np.arange(1 << num_qubits)
    cmask = _bit_mask(num_qubits, control)
    tmask = _bit_mask(num_qubits, target)
    return np.where(idx & cmask, idx ^ tmask, idx)


def new_register(num_qubits: int) -> StateVector:
    _check_size(num_qubits)
    amps = np.zeros(1 << num_qubits, dtype=complex)
    amps[0] = 1.0
    return StateVector(num_qubits, amps)


def basis_state(bits: Sequence[int]) -> StateVector:
    """Computational basis state |b0 b1 ...>."""
    _check_size(len(bits))
    amps = np.zeros(1 << len(bits), dtype=complex)
    amps[int("".join(str(int(b)) for b in bits), 2)] = 1.0
    return StateVector(len(bits), amps)


def from_amplitudes(amplitudes) -> StateVector:
    amps = np.asarray(amplitudes, dtype=complex)
    num_qubits = int(np.log2(len(amps)))
    if 1 << num_qubits != len(amps):
        raise ValueError("amplitude count must be a power of two")
    _check_size(num_qubits)
    return StateVector(num_qubits, amps.copy())


def tensor(a: StateVector, b: StateVector) -> StateVector:
    """a ⊗ b, with a's qubits first."""
    _check_size(a.num_qubits + b.num_qubits)
    return StateVector(a.num_qubits + b.num_qubits, np.kron(a.amplitudes, b.amplitudes))


def append_zero_qubits(state: StateVector, count: int = 1) -> StateVector:
    """state ⊗ |0...0>; cheaper than a general tensor product."""
    _check_size(state.num_qubits + count)
    amps = np.zeros(len(state.amplitudes) << count, dtype=complex)
    amps[:: 1 << count] = state.amplitudes
    return StateVector(state.num_qubits + count, amps)


def apply_gate(state: StateVector, gate: Gate, qubit: int) -> StateVector:
    _check_qubit(state, qubit)
    n = state.num_qubits
    amps = state.amplitudes
    if gate is Gate.IDENTITY:
        out = amps.copy()
    elif gate is Gate.PAULI_X:
        out = amps[_flip_permutation(n, qubit)]
    elif gate is Gate.PAULI_Z:
        out = amps * _z_signs(n, qubit)
    elif gate is Gate.PAULI_Y:
        # Y = i X Z
        out = 1j * (amps * _z_signs(n, qubit))[_flip_permutation(n, qubit)]
    elif gate is Gate.HADAMARD:
        zeros, ones = _split_indices(n, qubit)
        a0, a1 = amps[zeros], amps[ones]
        out = np.empty_like(amps)
        out[zeros] = (a0 + a1) * _SQRT1_2
        out[ones] = (a0 - a1) * _SQRT1_2
    else:
        raise ValueError(f"unsupported gate {gate!r}")
    return StateVector(n, out)


def apply_cnot(state: StateVector, control: int, target: int) -> StateVector:
    _check_qubit(state, control)
    _check_qubit(state, target)
    if control == target:
        raise ValueError("control and target must differ")
    perm = _cnot_permutation(state.num_qubits, control, target)
    return StateVector(state.num_qubits, state.amplitudes[perm])


def measure_qubit(
    state: StateVector,
    qubit: int,
    basis: MeasurementBasis,
    rng: np.random.Generator,
) -> tuple[int, StateVector]:
    """Projective single-qubit measurement; X outcomes are 0 for |+>, 1 for |->."""
    _check_qubit(state, qubit)
    n = state.num_qubits
    zeros, ones = _split_indices(n, qubit)
    amps = state.amplitudes
    a0, a1 = amps[zeros], amps[ones]
    if basis is MeasurementBasis.X:
        a0, a1 = (a0 + a1) * _SQRT1_2, (a0 - a1) * _SQRT1_2
    p0 = (a0.real @ a0.real) + (a0.imag @ a0.imag)
    p1 = (a1.real @ a1.real) + (a1.imag @ a1.imag)
    total = p0 + p1
    if total <= NORM_TOL:
        raise StateCorruptionError("state has zero norm")
    outcome = int(rng.random() * total >= p0)
    branch, p = (a1, p1) if outcome else (a0, p0)
    if p <= 0.0:
        raise StateCorruptionError(f"sampled zero-probability outcome {outcome} on qubit {qubit}")
    branch = branch * (1.0 / np.sqrt(p))
    out = np.zeros(1 << n, dtype=complex)
    if basis is MeasurementBasis.Z:
        out[ones if outcome else zeros] = branch
    else:
        branch *= _SQRT1_2
        out[zeros] = branch
        out[ones] = -branch if outcome else branch
    return outcome, StateVector(n, out)


class ProjectiveFamily:
    """Orthonormal, complete family of states on k qubits, validated once.

    The columns of `matrix` are the family members in order.
    """

    def __init__(self, members: Sequence[StateVector]):
        if not members:
            raise ValueError("empty measurement family")
        k = members[0].num_qubits
        if any(m.num_qubits != k for m in members):
            raise ValueError("family members must share a qubit count")
        if len(members) != 1 << k:
            raise ValueError(f"family on {k} qubits needs {1 << k} members, got {len(members)}")
        matrix = np.column_stack([m.amplitudes for m in members])
        gram = matrix.conj().T @ matrix
        if not np.allclose(gram, np.eye(len(members)), atol=NORM_TOL, rtol=0.0):
            raise ValueError("measurement family is not orthonormal")
        self.num_qubits = k
        self.members = list(members)
        self.matrix = matrix
        self._adjoint = matrix.conj().T

    def __len__(self) -> int:
        return len(self.members)


def measure_in_family(
    state: StateVector,
    family: ProjectiveFamily | Sequence[StateVector],
    rng: np.random.Generator,
    qubits: Sequence[int] | None = None,
) -> tuple[int, StateVector]:
    """Measure the listed qubits (default: the first k) against an orthonormal family.

    Returns the sampled member index and the collapsed state, in which the
    measured qubits hold that member and the rest keep their conditional state.
    """
    if not isinstance(family, ProjectiveFamily):
        family = ProjectiveFamily(family)
    k = family.num_qubits
    n = state.num_qubits
    if qubits is None:
        qubits = range(k)
    order = _measure_order(n, tuple(qubits), k)
    if order is None:
        psi = state.amplitudes.reshape(1 << k, 1 << (n - k))
    else:
        psi = state.amplitudes.reshape([2] * n).transpose(order).reshape(1 << k, 1 << (n - k))

    coeffs = family._adjoint @ psi
    probs = (coeffs.real**2 + coeffs.imag**2).sum(axis=1).tolist()
    total = sum(probs)
    if total <= NORM_TOL:
        raise StateCorruptionError("state has zero norm")
    threshold = rng.random() * total
    index = len(probs) - 1
    acc = 0.0
    for i, p in enumerate(probs):
        acc += p
        if threshold < acc:
            index = i
            break
    if probs[index] <= 0.0:
        raise StateCorruptionError(f"sampled zero-probability family member {index}")

    remainder = coeffs[index] / np.sqrt(probs[index])
    collapsed = np.multiply.outer(family.matrix[:, index], remainder)
    if order is None:
        out = collapsed.reshape(-1)
    else:
        out = np.ascontiguousarray(collapsed.reshape([2] * n).transpose(np.argsort(order)).reshape(-1))
    return index, StateVector(n, out)


@lru_cache(maxsize=None)
def _measure_order(n: int, qubits: tuple[int, ...], k: int) -> tuple[int, ...] | None:
    """Axis order putting the measured qubits first; None when already in place."""
    if len(qubits) != k or len(set(qubits)) != k:
        raise ValueError(f"need {k} distinct qubits for this family, got {list(qubits)}")
    for q in qubits:
        if not 0 <= q < n:
            raise IndexError(f"qubit {q} out of range for {n}-qubit register")
    order = qubits + tuple(q for q in range(n) if q not in qubits)
    return None if order == tuple(range(n)) else order


def inner_product(a: StateVector, b: StateVector) -> complex:
    """<a|b>."""
    if a.num_qubits != b.num_qubits:
        raise ValueError(f"dimension mismatch: {a.num_qubits} vs {b.num_qubits} qubits")
    return complex(np.vdot(a.amplitudes, b.amplitudes))


def fidelity(a: StateVector, b: StateVector) -> float:
    return abs(inner_product(a, b))


def equal_up_to_phase(a: StateVector, b: StateVector, tol: float = EXACT_TOL) -> bool:
    if a.num_qubits != b.num_qubits:
        return False
    return abs(fidelity(a, b) - 1.0) <= tol and abs(a.norm - 1.0) <= NORM_TOL
