"""
Eavesdropper strategies acting on the quantum channel, Eve's key inference,
and the transcript leakage audit.

An attack only sees blocks in flight.  Home particles never enter a block,
so no strategy here can reach them.
"""
from __future__ import annotations

import enum
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .ghz_algebra import (
    FOUR_OP_CONVENTIONS,
    EncodingAgreement,
    GhzIndex,
    PauliWord,
    all_indices,
    decode_flips,
    eve_consistent_ops,
    to_state_vector,
)
from .protocol import (
    EVE,
    Block,
    ClassicalMessage,
    MessageKind,
    Particle,
    Session,
    Transcript,
    add_ancilla,
    apply_op,
    cnot,
    measure,
    measure_ghz,
    new_particles,
)
from .statevec import Gate, MeasurementBasis, StateVector, basis_state


class AttackKind(enum.Enum):
    NONE = "none"
    DOUBLE_CNOT = "2cnot"
    MITM_GHZ = "mitm-ghz"
    MITM_Z = "mitm-z"
    INTERCEPT_RESEND = "intercept-resend"


class MissingAncillaError(RuntimeError):
    pass


class MissingStoredParticleError(RuntimeError):
    pass


@dataclass
class EveReport:
    guessed_keys: dict[tuple[int, int], list[int]] = field(default_factory=dict)
    true_keys: dict[tuple[int, int], list[int]] = field(default_factory=dict)
    convention_guess: EncodingAgreement | None = None
    convention_correct: bool = False
    detected: bool = False
    substitutions: int = 0
    exact_substitutions: int = 0

    @property
    def bits_guessed(self) -> int:
        return sum(len(v) for v in self.guessed_keys.values())

    @property
    def bits_correct(self) -> int:
        return sum(
            sum(a == b for a, b in zip(guess, self.true_keys[key]))
            for key, guess in self.guessed_keys.items()
        )

    @property
    def whole_key_correct(self) -> bool:
        """Every target key recovered and the operator agreement identified."""
        return self.bits_guessed > 0 and self.convention_correct and self.bits_correct == self.bits_guessed


@dataclass
class EveState:
    ancillae: dict[tuple[int, int, int], Particle] = field(default_factory=dict)
    stored: dict[tuple[int, int, int], Particle] = field(default_factory=dict)
    # (owner, slot, position) -> observed bit flip
    observations: dict[tuple[int, int, int], int] = field(default_factory=dict)
    # (owner, position) -> (fake GHZ label index, slot Eve kept)
    fakes: dict[tuple[int, int], tuple[GhzIndex, int]] = field(default_factory=dict)
    fake_particles: dict[tuple[int, int], list[Particle]] = field(default_factory=dict)
    sent_bits: dict[tuple[int, int, int], int] = field(default_factory=dict)
    measurements: list[tuple[int, int, int, str, int]] = field(default_factory=list)


class AttackStrategy:
    """Base strategy: an ideal channel.  Subclasses override per-block or per-round hooks."""

    kind = AttackKind.NONE

    def __init__(self, targets=None, eve_knows_agreement: bool = False):
        self.targets = None if targets is None else set(targets)
        self.eve_knows_agreement = eve_knows_agreement
        self.eve_state = EveState()

    def targeted(self, block: Block) -> bool:
        return self.targets is None or block.owner in self.targets

    def forward_round(self, blocks: list[Block], rng: np.random.Generator) -> None:
        for b in blocks:
            if self.targeted(b):
                b.particles = self.forward(b, rng)

    def backward_round(self, blocks: list[Block], rng: np.random.Generator) -> None:
        for b in blocks:
            if self.targeted(b):
                b.particles = self.backward(b, rng)

    def forward(self, block: Block, rng: np.random.Generator) -> list[Particle]:
        return block.particles

    def backward(self, block: Block, rng: np.random.Generator) -> list[Particle]:
        return block.particles

    def report(self, session: Session) -> EveReport:
        # the two-operator agreement is fixed by the protocol and therefore public
        public = self.eve_knows_agreement or session.config.encoding_mode == "two-op"
        rep = infer_key_2cnot(self.eve_state, session.convention if public else None,
                              session.eve_rng, session)
        rep.detected = any(
            r.detected for owner, r in session.check_reports.items()
            if self.targets is None or owner in self.targets
        )
        return rep


class NoAttack(AttackStrategy):
    pass


class DoubleCnotAttack(AttackStrategy):
    """CNOT onto a fresh ancilla on the way out, CNOT again on the way back, then read the ancilla."""

    kind = AttackKind.DOUBLE_CNOT

    def forward(self, block, rng):
        return cnot_forward(block, self.eve_state, rng)

    def backward(self, block, rng):
        return cnot_backward(block, self.eve_state, rng)


def cnot_forward(block: Block, eve_state: EveState, rng=None) -> list[Particle]:
    for pos, p in zip(block.positions, block.particles):
        anc = add_ancilla(p)
        cnot(p, anc)
        eve_state.ancillae[block.owner, block.slot, pos] = anc
    return block.particles


def cnot_backward(block: Block, eve_state: EveState, rng: np.random.Generator) -> list[Particle]:
    for pos, p in zip(block.positions, block.particles):
        key = (block.owner, block.slot, pos)
        try:
            anc = eve_state.ancillae.pop(key)
        except KeyError:
            raise MissingAncillaError(f"no ancilla for particle {key}") from None
        cnot(p, anc)
        eve_state.observations[key] = measure(anc, MeasurementBasis.Z, rng)
    return block.particles


class _MitmAttack(AttackStrategy):
    """Store the genuine particles, send substitutes, read the substitutes on return and relay."""

    def forward_round(self, blocks, rng):
        by_owner = defaultdict(list)
        for b in blocks:
            if self.targeted(b):
                by_owner[b.owner].append(b)
        for owner, group in sorted(by_owner.items()):
            mitm_forward(group, self.eve_state, rng, self._substitutes)

    def backward_round(self, blocks, rng):
        by_owner = defaultdict(list)
        for b in blocks:
            if self.targeted(b):
                by_owner[b.owner].append(b)
        for owner, group in sorted(by_owner.items()):
            mitm_backward(group, self.eve_state, rng, self._read)

    def _substitutes(self, owner, position, slots, rng) -> dict[int, Particle]:
        raise NotImplementedError

    def _read(self, owner, position, returned: dict[int, Particle], rng) -> dict[int, int]:
        raise NotImplementedError

    def report(self, session):
        rep = super().report(session)
        for (owner, pos), (fake, keep) in self.eve_state.fakes.items():
            rep.substitutions += 1
            rep.exact_substitutions += fake == session.parties[owner].prepared[pos] and keep == owner
        return rep


def mitm_forward(group: list[Block], eve_state: EveState, rng, make_substitutes) -> None:
    """Swap every particle of one owner's outgoing blocks for a substitute, keeping the originals."""
    owner = group[0].owner
    slots = sorted(b.slot for b in group)
    by_slot = {b.slot: b for b in group}
    positions = group[0].positions
    subs = {}
    for pos in positions:
        subs[pos] = make_substitutes(owner, pos, slots, rng)
    for slot, b in by_slot.items():
        for pos, p in zip(b.positions, b.particles):
            eve_state.stored[owner, slot, pos] = p
        b.particles = [subs[pos][slot] for pos in b.positions]


def mitm_backward(group: list[Block], eve_state: EveState, rng, read_encoding) -> None:
    """Read the returning substitutes, copy the inferred flips onto the stored originals, relay those."""
    owner = group[0].owner
    returned = defaultdict(dict)
    for b in group:
        for pos, p in zip(b.positions, b.particles):
            returned[pos][b.slot] = p
    for pos in sorted(returned):
        flips = read_encoding(owner, pos, returned[pos], rng)
        for slot, f in flips.items():
            eve_state.observations[owner, slot, pos] = f
            try:
                genuine = eve_state.stored[owner, slot, pos]
            except KeyError:
                raise MissingStoredParticleError(f"no stored particle for {(owner, slot, pos)}") from None
            if f:
                apply_op(genuine, Gate.PAULI_X)
    for b in group:
        b.particles = [eve_state.stored.pop((owner, b.slot, pos)) for pos in b.positions]


class MitmGhzAttack(_MitmAttack):
    """Substitutes come from a GHZ state of Eve's own with a random label; she keeps one random particle."""

    kind = AttackKind.MITM_GHZ

    def _substitutes(self, owner, position, slots, rng):
        n = len(slots) + 1
        family = all_indices(n)
        fake = family[int(rng.integers(len(family)))]
        keep = int(rng.integers(n))
        parts = new_particles(to_state_vector(fake), EVE, position)
        self.eve_state.fakes[owner, position] = (fake, keep)
        self.eve_state.fake_particles[owner, position] = parts
        sent = [q for q in range(n) if q != keep]
        return {slot: parts[q] for slot, q in zip(slots, sent)}

    def _read(self, owner, position, returned, rng):
        fake, keep = self.eve_state.fakes[owner, position]
        parts = self.eve_state.fake_particles.pop((owner, position))
        measured = measure_ghz(parts, rng)
        flips, _ = decode_flips(fake, measured, home=keep)
        slots = sorted(returned)
        return dict(zip(slots, flips))


class MitmZAttack(_MitmAttack):
    """Substitutes are computational-basis states.

    `pattern` fixes the bits sent to the traveling slots (e.g. "01"), or is one
    of "random", "matched" (all bits equal) or "mismatched" (not all equal).
    """

    kind = AttackKind.MITM_Z

    def __init__(self, targets=None, eve_knows_agreement=False, pattern: str = "random"):
        super().__init__(targets, eve_knows_agreement)
        self.pattern = pattern

    def _draw_bits(self, count, rng) -> list[int]:
        if self.pattern == "random":
            return rng.integers(2, size=count).tolist()
        if self.pattern == "matched":
            return [int(rng.integers(2))] * count
        if self.pattern == "mismatched":
            if count < 2:
                raise ValueError("a mismatched pattern needs at least two traveling particles")
            while True:
                bits = rng.integers(2, size=count).tolist()
                if len(set(bits)) > 1:
                    return bits
        if len(self.pattern) != count or set(self.pattern) - {"0", "1"}:
            raise ValueError(f"pattern {self.pattern!r} does not fit {count} traveling particles")
        return [int(c) for c in self.pattern]

    def _substitutes(self, owner, position, slots, rng):
        bits = self._draw_bits(len(slots), rng)
        out = {}
        for slot, bit in zip(slots, bits):
            self.eve_state.sent_bits[owner, slot, position] = bit
            out[slot] = new_particles(basis_state([bit]), EVE, position)[0]
        return out

    def _read(self, owner, position, returned, rng):
        return {
            slot: measure(p, MeasurementBasis.Z, rng) ^ self.eve_state.sent_bits[owner, slot, position]
            for slot, p in sorted(returned.items())
        }


class InterceptResendAttack(AttackStrategy):
    """Measure each outgoing particle in a random Z/X basis and send on the resulting eigenstate."""

    kind = AttackKind.INTERCEPT_RESEND

    def forward(self, block, rng):
        return intercept_resend(block, self.eve_state, rng)


def intercept_resend(block: Block, eve_state: EveState, rng: np.random.Generator) -> list[Particle]:
    out = []
    for pos, p in zip(block.positions, block.particles):
        basis = MeasurementBasis.Z if rng.random() < 0.5 else MeasurementBasis.X
        bit = measure(p, basis, rng)
        eve_state.measurements.append((block.owner, block.slot, pos, basis.value, bit))
        state = basis_state([bit]) if basis is MeasurementBasis.Z else _x_eigenstate(bit)
        out.append(new_particles(state, EVE, pos)[0])
    return out


def _x_eigenstate(bit: int) -> StateVector:
    s = 1 / np.sqrt(2)
    return StateVector(1, np.array([s, -s if bit else s], dtype=complex))


def infer_key_2cnot(
    eve_state: EveState,
    known_agreement: EncodingAgreement | None,
    rng: np.random.Generator,
    session: Session | None = None,
) -> EveReport:
    """Turn recorded flip observations into key guesses.

    With the agreement known the flips decode directly.  Otherwise Eve holds
    every convention consistent with what she saw (each observed flip pattern
    fits all four {I,Z}x{X,Y} pairings) and commits to one uniformly.
    """
    rep = EveReport()
    if not eve_state.observations:
        return rep
    per_key: dict[tuple[int, int], list[tuple[int, int]]] = defaultdict(list)
    for (owner, slot, pos), f in sorted(eve_state.observations.items()):
        per_key[owner, slot].append((pos, f))

    if known_agreement is not None:
        guess = known_agreement
    else:
        seen = {f for obs in per_key.values() for _, f in obs}
        candidates = [
            conv for conv in FOUR_OP_CONVENTIONS
            if all(conv.word_for_bits([f]) in eve_consistent_ops([f]) for f in seen)
        ]
        guess = candidates[int(rng.integers(len(candidates)))]
    rep.convention_guess = guess

    for key, obs in per_key.items():
        ops = PauliWord("".join(guess.op_for_bit(f) for _, f in obs))
        rep.guessed_keys[key] = [guess.bit_for_op(op) for op in ops.ops]
    if session is not None:
        rep.convention_correct = guess == session.convention
        for (owner, slot), obs in per_key.items():
            rep.true_keys[owner, slot] = [session.encoded_bit(owner, slot, pos) for pos, _ in obs]
    return rep


def make_attack(kind: AttackKind | str, targets=None, eve_knows_agreement=False, mitm_z_pattern="random"):
    kind = AttackKind(kind)
    if kind is AttackKind.NONE:
        return NoAttack(targets, eve_knows_agreement)
    if kind is AttackKind.DOUBLE_CNOT:
        return DoubleCnotAttack(targets, eve_knows_agreement)
    if kind is AttackKind.MITM_GHZ:
        return MitmGhzAttack(targets, eve_knows_agreement)
    if kind is AttackKind.MITM_Z:
        return MitmZAttack(targets, eve_knows_agreement, pattern=mitm_z_pattern)
    return InterceptResendAttack(targets, eve_knows_agreement)


_ALLOWED_PAYLOAD = {
    MessageKind.ANNOUNCE_TRANSMISSION: {"recipient", "direction", "count"},
    MessageKind.CONFIRM_RECEPTION: {"origin", "direction", "count"},
    MessageKind.CHECK_POSITIONS: {"positions"},
    MessageKind.CHECK_BASIS: {"bases"},
    MessageKind.CHECK_OUTCOME: {"positions", "bases", "outcomes"},
    MessageKind.DPRIME_POSITIONS: {"positions"},
    MessageKind.DPRIME_REVEAL: {"position", "bit"},
    MessageKind.ERROR_RATE_REPORT: {"stage", "checked", "failures", "rates"},
}

_PLAIN = (int, float, str, bool, type(None))


def _plain_value(v) -> bool:
    if isinstance(v, _PLAIN):
        return True
    if isinstance(v, (list, tuple)):
        return all(_plain_value(x) for x in v)
    if isinstance(v, dict):
        return all(isinstance(k, str) and _plain_value(x) for k, x in v.items())
    return False


def audit_leakage(transcript: Transcript | list[ClassicalMessage]) -> bool:
    """True iff no public message can name an initial or final GHZ state.

    Every message kind has a fixed set of payload fields carrying positions,
    bases, single-particle outcomes, key bits or rates; anything else, or any
    non-primitive value, counts as a state announcement.
    """
    for msg in transcript:
        allowed = _ALLOWED_PAYLOAD.get(msg.kind)
        if allowed is None or not set(msg.payload) <= allowed:
            return False
        if not all(_plain_value(v) for v in msg.payload.values()):
            return False
    return True
