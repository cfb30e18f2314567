"""
Closed-form algebra of N-particle GHZ-class states.

A GHZ-class state is (|p> + s|~p>)/sqrt(2) where ~p is the bitwise complement
of p.  It is stored canonically with the last bit of p equal to 0, so the
2**N basis states of N particles are indexed by (pattern, sign).

For three particles the labels 1..8 follow the usual table

    psi1,2 = |000> +- |111>      psi5,6 = |010> +- |101>
    psi3,4 = |100> +- |011>      psi7,8 = |110> +- |001>

and the same numbering scheme extends to any N (see `index_from_label`).
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

from .statevec import MAX_QUBITS, ProjectiveFamily, StateVector

PAULIS = "IXYZ"
_SQRT1_2 = 1.0 / np.sqrt(2.0)


@dataclass(frozen=True)
class GhzIndex:
    pattern: tuple[int, ...]
    sign: int

    def __post_init__(self):
        if len(self.pattern) < 2:
            raise ValueError("a GHZ state needs at least two particles")
        if self.pattern[-1] != 0:
            raise ValueError(f"pattern {self.pattern} is not canonical (last bit must be 0)")
        if self.sign not in (1, -1):
            raise ValueError(f"sign must be +1 or -1, got {self.sign}")

    @property
    def num_parties(self) -> int:
        return len(self.pattern)

    @property
    def complement(self) -> tuple[int, ...]:
        return tuple(1 - b for b in self.pattern)

    def __str__(self) -> str:
        bits = "".join(map(str, self.pattern))
        return f"|{bits}>{'+' if self.sign > 0 else '-'}|{''.join(map(str, self.complement))}>"


def canonical(pattern: Sequence[int], sign: int) -> tuple[GhzIndex, int]:
    """Canonicalize (|pattern> + sign|~pattern>)/sqrt(2); returns the index and the global phase pulled out."""
    pattern = tuple(int(b) for b in pattern)
    if pattern[-1] == 0:
        return GhzIndex(pattern, sign), 1
    # |q> + s|~q> = s (|~q> + s|q>)
    return GhzIndex(tuple(1 - b for b in pattern), sign), sign


def all_indices(num_parties: int) -> list[GhzIndex]:
    """Every basis index for N particles, in label order (label k is element k-1)."""
    return [index_from_label(k, num_parties) for k in range(1, (1 << num_parties) + 1)]


@lru_cache(maxsize=None)
def index_from_label(k: int, num_parties: int = 3) -> GhzIndex:
    """Label k -> index.  Odd labels carry +, even labels -; particle 1 is the fastest-varying pattern bit."""
    if not 1 <= k <= 1 << num_parties:
        raise ValueError(f"label must be in 1..{1 << num_parties}, got {k}")
    m, minus = divmod(k - 1, 2)
    pattern = tuple((m >> j) & 1 for j in range(num_parties - 1)) + (0,)
    return GhzIndex(pattern, -1 if minus else 1)


def label_from_index(g: GhzIndex) -> int:
    m = sum(b << j for j, b in enumerate(g.pattern[:-1]))
    return 2 * m + (1 if g.sign < 0 else 0) + 1


def to_state_vector(g: GhzIndex) -> StateVector:
    return StateVector(g.num_parties, _amplitudes(g).copy())


@lru_cache(maxsize=4096)
def _amplitudes(g: GhzIndex) -> np.ndarray:
    n = g.num_parties
    if n > MAX_QUBITS:
        raise ValueError(f"{n} particles exceed the register cap")
    amps = np.zeros(1 << n, dtype=complex)
    hi = int("".join(map(str, g.pattern)), 2)
    amps[hi] = _SQRT1_2
    amps[hi ^ ((1 << n) - 1)] = g.sign * _SQRT1_2
    return amps


@lru_cache(maxsize=None)
def ghz_family(num_parties: int) -> ProjectiveFamily:
    """The GHZ basis as a validated measurement family, members in label order."""
    return ProjectiveFamily([to_state_vector(g) for g in all_indices(num_parties)])


@dataclass(frozen=True)
class PauliWord:
    """Tensor product of single-particle Paulis, e.g. PauliWord("IXZ")."""

    ops: str

    def __post_init__(self):
        if any(c not in PAULIS for c in self.ops):
            raise ValueError(f"invalid Pauli word {self.ops!r}")

    @classmethod
    def on(cls, num_parties: int, ops: dict[int, str]) -> "PauliWord":
        """Word acting with ops[j] on particle j (0-based) and identity elsewhere."""
        letters = ["I"] * num_parties
        for j, op in ops.items():
            letters[j] = op
        return cls("".join(letters))

    def __len__(self) -> int:
        return len(self.ops)

    def __str__(self) -> str:
        return self.ops

    def compose(self, other: "PauliWord") -> tuple["PauliWord", complex]:
        """self · other as (word, phase)."""
        if len(self) != len(other):
            raise ValueError("length mismatch")
        phase = 1 + 0j
        out = []
        for a, b in zip(self.ops, other.ops):
            letter, ph = _PAULI_PRODUCT[a, b]
            out.append(letter)
            phase *= ph
        return PauliWord("".join(out)), phase

    def inverse(self) -> "PauliWord":
        # Paulis are self-inverse
        return self

    @property
    def flips(self) -> tuple[int, ...]:
        return tuple(int(c in "XY") for c in self.ops)

    @property
    def sign_flips(self) -> int:
        """Parity of phase-flipping letters; a GHZ state's sign changes iff this is 1."""
        return sum(c in "YZ" for c in self.ops) % 2


def _build_product_table() -> dict[tuple[str, str], tuple[str, complex]]:
    mats = {
        "I": np.eye(2, dtype=complex),
        "X": np.array([[0, 1], [1, 0]], dtype=complex),
        "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
        "Z": np.array([[1, 0], [0, -1]], dtype=complex),
    }
    table = {}
    for a, b in itertools.product(PAULIS, repeat=2):
        prod = mats[a] @ mats[b]
        for c in PAULIS:
            for ph in (1, -1, 1j, -1j):
                if np.allclose(prod, ph * mats[c]):
                    table[a, b] = (c, ph)
    return table


_PAULI_PRODUCT = _build_product_table()


def apply_pauli(g: GhzIndex, w: PauliWord) -> tuple[GhzIndex, complex]:
    """Act with w on the GHZ state g; returns the new index and the global phase.

    X on particle j flips pattern bit j.  Z on particle j flips the sign and
    contributes (-1)**pattern[j].  Y = iXZ does both with an extra i.
    """
    if len(w) != g.num_parties:
        raise ValueError(f"word of length {len(w)} on {g.num_parties}-particle state")
    pattern = list(g.pattern)
    sign = g.sign
    phase = 1 + 0j
    for j, op in enumerate(w.ops):
        if op in "ZY":
            if pattern[j]:
                phase = -phase
            sign = -sign
        if op in "XY":
            pattern[j] ^= 1
        if op == "Y":
            phase *= 1j
    out, extra = canonical(pattern, sign)
    return out, phase * extra


def decode_flips(prepared: GhzIndex, measured: GhzIndex, home: int = 0) -> tuple[tuple[int, ...], bool]:
    """Recover which non-home particles were bit-flipped between two GHZ states.

    The pattern XOR is only defined up to complement; it is anchored so the
    home particle (never released by its owner) reads 0.
    """
    if prepared.num_parties != measured.num_parties:
        raise ValueError("party count mismatch")
    diff = [a ^ b for a, b in zip(prepared.pattern, measured.pattern)]
    if diff[home]:
        diff = [1 - b for b in diff]
    flips = tuple(b for j, b in enumerate(diff) if j != home)
    return flips, prepared.sign != measured.sign


def z_pattern_consistent(g: GhzIndex, outcomes: Sequence[int]) -> bool:
    """Z-basis outcomes are consistent with g iff they equal one of its two branches."""
    if len(outcomes) != g.num_parties:
        raise ValueError(f"expected {g.num_parties} outcomes, got {len(outcomes)}")
    outcomes = tuple(int(b) for b in outcomes)
    return outcomes == g.pattern or outcomes == g.complement


def x_parity(g: GhzIndex) -> int:
    """Eigenvalue of X on every particle: the product of +-1 X outcomes always equals this."""
    return g.sign


def x_outcomes_consistent(g: GhzIndex, outcomes: Sequence[int]) -> bool:
    if len(outcomes) != g.num_parties:
        raise ValueError(f"expected {g.num_parties} outcomes, got {len(outcomes)}")
    product = -1 if sum(outcomes) % 2 else 1
    return product == x_parity(g)


def eve_consistent_ops(flip_observations: Iterable[int]) -> set[PauliWord]:
    """All Pauli words compatible with observed bit flips: flip 1 -> {X, Y}, flip 0 -> {I, Z}."""
    choices = ["XY" if f else "IZ" for f in flip_observations]
    return {PauliWord("".join(letters)) for letters in itertools.product(*choices)}


@dataclass(frozen=True)
class EncodingAgreement:
    """Operator <-> bit convention shared by the legitimate users.

    The standard agreement is I -> 0, X -> 1.  The four-operator variant
    keeps the bit carried by the flip but lets the session choose Z for 0
    and/or Y for 1, which an outsider cannot tell apart from flips alone.
    """

    zero_op: str = "I"
    one_op: str = "X"

    def __post_init__(self):
        if self.zero_op not in "IZ" or self.one_op not in "XY":
            raise ValueError(f"invalid agreement ({self.zero_op} -> 0, {self.one_op} -> 1)")

    @property
    def is_two_op(self) -> bool:
        return (self.zero_op, self.one_op) == ("I", "X")

    def op_for_bit(self, bit: int) -> str:
        return self.one_op if bit else self.zero_op

    def bit_for_op(self, op: str) -> int:
        if op == self.zero_op:
            return 0
        if op == self.one_op:
            return 1
        raise ValueError(f"operator {op} is not part of this agreement")

    def word_for_bits(self, bits: Sequence[int]) -> PauliWord:
        return PauliWord("".join(self.op_for_bit(b) for b in bits))

    def __str__(self) -> str:
        return f"{self.zero_op}{self.one_op}"


TWO_OP = EncodingAgreement("I", "X")
FOUR_OP_CONVENTIONS = tuple(EncodingAgreement(z, o) for z in "IZ" for o in "XY")
