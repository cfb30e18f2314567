"""
Multi-key GHZ key distribution: parties, quantum channel plumbing and the
six protocol steps.

Each owner prepares one GHZ state per position and keeps the particle whose
slot equals its own id (the home particle); slot j travels to party j.
Partners encode their key bits onto the particles they hold, send them back,
and the owner reads the flips with a GHZ-basis measurement.
"""
from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import statevec as sv
from .ghz_algebra import (
    FOUR_OP_CONVENTIONS,
    TWO_OP,
    EncodingAgreement,
    GhzIndex,
    PauliWord,
    decode_flips,
    ghz_family,
    index_from_label,
    to_state_vector,
    x_outcomes_consistent,
    z_pattern_consistent,
)
from .statevec import Gate, MeasurementBasis

logger = logging.getLogger(__name__)


class ProtocolViolation(RuntimeError):
    """A party or the channel broke the message discipline of the protocol."""


class SessionAborted(RuntimeError):
    pass


# --------------------------------------------------------------------------
# particles and registers
# --------------------------------------------------------------------------


class Register:
    """Joint pure state of the particles listed in `particles` (qubit i <-> particles[i])."""

    __slots__ = ("state", "particles")

    def __init__(self, state: sv.StateVector, particles: list["Particle"]):
        self.state = state
        self.particles = particles


class Particle:
    __slots__ = ("register", "qubit", "owner", "position", "slot")

    def __init__(self, register: Register, qubit: int, owner: int, position: int, slot: int):
        self.register = register
        self.qubit = qubit
        self.owner = owner
        self.position = position
        self.slot = slot

    def __repr__(self) -> str:
        return f"Particle(owner={self.owner}, pos={self.position}, slot={self.slot})"


EVE = -1


def new_particles(state: sv.StateVector, owner: int, position: int) -> list[Particle]:
    """Wrap a state in a fresh register; particle i is qubit i, slot i."""
    reg = Register(state, [])
    reg.particles = [Particle(reg, q, owner, position, q) for q in range(state.num_qubits)]
    return list(reg.particles)


def merge(a: Register, b: Register) -> Register:
    if a is b:
        return a
    offset = a.state.num_qubits
    a.state = sv.tensor(a.state, b.state)
    for p in b.particles:
        p.register = a
        p.qubit += offset
    a.particles.extend(b.particles)
    b.particles = []
    return a


def apply_op(p: Particle, gate: Gate) -> None:
    if gate is Gate.IDENTITY:
        return
    p.register.state = sv.apply_gate(p.register.state, gate, p.qubit)


def cnot(control: Particle, target: Particle) -> None:
    reg = merge(control.register, target.register)
    reg.state = sv.apply_cnot(reg.state, control.qubit, target.qubit)


def add_ancilla(p: Particle, owner: int = EVE) -> Particle:
    """Append a |0> qubit to p's register."""
    reg = p.register
    reg.state = sv.append_zero_qubits(reg.state)
    anc = Particle(reg, reg.state.num_qubits - 1, owner, p.position, -1)
    reg.particles.append(anc)
    return anc


def measure(p: Particle, basis: MeasurementBasis, rng: np.random.Generator) -> int:
    outcome, p.register.state = sv.measure_qubit(p.register.state, p.qubit, basis, rng)
    return outcome


def measure_ghz(particles: Sequence[Particle], rng: np.random.Generator) -> GhzIndex:
    """GHZ-basis measurement of the given particles, in the given slot order."""
    reg = particles[0].register
    for p in particles[1:]:
        reg = merge(reg, p.register)
    n = len(particles)
    index, reg.state = sv.measure_in_family(
        reg.state, ghz_family(n), rng, qubits=[p.qubit for p in particles]
    )
    return index_from_label(index + 1, n)


# --------------------------------------------------------------------------
# classical channel
# --------------------------------------------------------------------------


class MessageKind(enum.Enum):
    ANNOUNCE_TRANSMISSION = "AnnounceTransmission"
    CONFIRM_RECEPTION = "ConfirmReception"
    CHECK_POSITIONS = "CheckPositions"
    CHECK_BASIS = "CheckBasis"
    CHECK_OUTCOME = "CheckOutcome"
    DPRIME_POSITIONS = "DPrimePositions"
    DPRIME_REVEAL = "DPrimeReveal"
    ERROR_RATE_REPORT = "ErrorRateReport"


@dataclass(frozen=True)
class ClassicalMessage:
    sender: int
    kind: MessageKind
    sequence_owner: int
    payload: dict

    def to_json(self) -> str:
        return json.dumps(
            {
                "sequence_owner": self.sequence_owner,
                "sender": self.sender,
                "kind": self.kind.value,
                "payload": self.payload,
            },
            sort_keys=True,
            separators=(",", ":"),
        )


class Transcript:
    """Append-only, totally ordered log of public messages."""

    def __init__(self, messages: Iterable[ClassicalMessage] = ()):
        self._messages: list[ClassicalMessage] = list(messages)

    def post(self, sender: int, kind: MessageKind, owner: int, **payload) -> ClassicalMessage:
        msg = ClassicalMessage(sender, kind, owner, payload)
        self._messages.append(msg)
        return msg

    def append(self, msg: ClassicalMessage) -> None:
        self._messages.append(msg)

    def __iter__(self):
        return iter(self._messages)

    def __len__(self) -> int:
        return len(self._messages)

    def __getitem__(self, i):
        return self._messages[i]

    def of_kind(self, kind: MessageKind) -> list[ClassicalMessage]:
        return [m for m in self._messages if m.kind is kind]

    def to_lines(self) -> list[str]:
        return [m.to_json() for m in self._messages]

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            for line in self.to_lines():
                fh.write(line + "\n")

    @classmethod
    def load(cls, path) -> "Transcript":
        out = cls()
        with open(path) as fh:
            for line in fh:
                rec = json.loads(line)
                out.append(
                    ClassicalMessage(rec["sender"], MessageKind(rec["kind"]), rec["sequence_owner"], rec["payload"])
                )
        return out


# --------------------------------------------------------------------------
# parties and plan
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SequencePlan:
    n: int
    d: int
    d_prime: int

    def __post_init__(self):
        if min(self.n, self.d, self.d_prime) < 1:
            raise ValueError(f"n, d and d' must all be >= 1, got {self}")

    @property
    def total(self) -> int:
        return self.n + self.d + self.d_prime

    @property
    def key_length(self) -> int:
        """Bits each party encodes: key positions plus sacrificial d' positions."""
        return self.n + self.d_prime


@dataclass
class Party:
    id: int
    rng: np.random.Generator
    prepared: list[GhzIndex] = field(default_factory=list)
    triplets: list[list[Particle]] = field(default_factory=list)
    home_particles: list[Particle] = field(default_factory=list)
    held_remote: dict[int, dict[int, Particle]] = field(default_factory=dict)
    returned: dict[int, dict[int, Particle]] = field(default_factory=dict)
    surviving: list[int] = field(default_factory=list)
    own_key: list[int] = field(default_factory=list)
    decoded_keys: dict[int, list[int]] = field(default_factory=dict)
    tamper_positions: list[int] = field(default_factory=list)
    compromised: bool = False

    def partners(self, num_parties: int) -> list[int]:
        """Other parties in ring order starting after this one."""
        return [(self.id + k) % num_parties for k in range(1, num_parties)]


@dataclass
class Block:
    owner: int
    sender: int
    recipient: int
    slot: int
    positions: list[int]
    particles: list[Particle]
    direction: str  # "forward" | "backward"


@dataclass
class SessionConfig:
    num_parties: int = 3
    plan: SequencePlan = field(default_factory=lambda: SequencePlan(16, 8, 8))
    encoding_mode: str = "two-op"  # "two-op" | "four-op"
    error_threshold: float = 0.0
    abort_on_detection: bool = False
    check_bases: str = "zx"  # bases the d-check draws from
    fixed_label: int | None = None  # prepare every triplet in this GHZ label

    def __post_init__(self):
        if self.num_parties < 2:
            raise ValueError("need at least two parties")
        if self.num_parties > 12:
            raise ValueError("register budget allows at most 12 parties")
        if self.encoding_mode not in ("two-op", "four-op"):
            raise ValueError(f"unknown encoding mode {self.encoding_mode!r}")
        if not 0.0 <= self.error_threshold <= 1.0:
            raise ValueError("error_threshold must lie in [0, 1]")
        if not self.check_bases or set(self.check_bases.lower()) - {"z", "x"}:
            raise ValueError(f"check_bases must draw from 'z'/'x', got {self.check_bases!r}")
        if self.fixed_label is not None and not 1 <= self.fixed_label <= 1 << self.num_parties:
            raise ValueError(f"fixed_label out of range for {self.num_parties} parties")


@dataclass
class CheckReport:
    owner: int
    positions: list[int]
    bases: str
    checks: dict[str, int]
    failures: dict[str, int]

    @property
    def detected(self) -> bool:
        return sum(self.failures.values()) > 0


@dataclass
class SessionReport:
    num_parties: int
    detected_at_step4: dict[int, bool]
    step4_checks: dict[str, int]
    step4_error_count: dict[str, int]
    dprime_error_rates: dict[int, dict[int, float]]
    selected_key_owner: int | None
    key_accepted: bool
    key_agreement: dict[tuple[int, int], bool]
    tamper_counts: dict[int, int]
    final_keys: dict[int, list[int]]
    transcript: Transcript
    convention: EncodingAgreement
    aborted: bool = False
    abort_reason: str = ""
    eve_report: object | None = None
    home_untouched: bool = True

    @property
    def detected(self) -> bool:
        return any(self.detected_at_step4.values())

    @property
    def all_keys_agree(self) -> bool:
        return bool(self.key_agreement) and all(self.key_agreement.values())


# --------------------------------------------------------------------------
# session
# --------------------------------------------------------------------------


class Session:
    """One protocol round among N parties, optionally under attack.

    `attack` is any object with `forward_round(blocks, rng)` and
    `backward_round(blocks, rng)`; None means an ideal channel.
    """

    def __init__(self, config: SessionConfig, rng: np.random.Generator, attack=None):
        self.config = config
        self.plan = config.plan
        self.n_parties = config.num_parties
        streams = rng.spawn(self.n_parties + 2)
        self.parties = [Party(i, streams[i]) for i in range(self.n_parties)]
        self.setup_rng = streams[-2]
        self.eve_rng = streams[-1]
        self.attack = attack
        self.transcript = Transcript()
        self.check_reports: dict[int, CheckReport] = {}
        self.dprime_rates: dict[int, dict[int, float]] = {}
        self.aborted = False
        self.abort_reason = ""

        if config.encoding_mode == "four-op":
            self.convention = FOUR_OP_CONVENTIONS[int(self.setup_rng.integers(4))]
        else:
            self.convention = TWO_OP
        # agreed in advance: which encoded bits are sacrificed for the d' check
        self.dprime_indices = sorted(
            int(i) for i in self.setup_rng.choice(self.plan.key_length, self.plan.d_prime, replace=False)
        )
        self._home_ids = set()

    # -- helpers ----------------------------------------------------------

    def party(self, pid: int) -> Party:
        return self.parties[pid]

    @property
    def key_indices(self) -> list[int]:
        sacrificed = set(self.dprime_indices)
        return [i for i in range(self.plan.key_length) if i not in sacrificed]

    def _transmit(self, blocks: list[Block]) -> list[Block]:
        for b in blocks:
            self.transcript.post(
                b.sender, MessageKind.ANNOUNCE_TRANSMISSION, b.owner,
                recipient=b.recipient, direction=b.direction, count=len(b.particles),
            )
        announced = [len(b.particles) for b in blocks]
        for b in blocks:
            if any(id(p) in self._home_ids for p in b.particles):
                raise ProtocolViolation("home particle placed on the quantum channel")
        if self.attack is not None:
            if blocks[0].direction == "forward":
                self.attack.forward_round(blocks, self.eve_rng)
            else:
                self.attack.backward_round(blocks, self.eve_rng)
        for b, count in zip(blocks, announced):
            if len(b.particles) != count or len(b.positions) != count:
                # no confirmation: the sender cannot rule out impersonation
                raise SessionAborted(
                    f"block {b.owner}->{b.recipient} ({b.direction}) arrived with "
                    f"{len(b.particles)} of {count} particles; reception not confirmed"
                )
            self.transcript.post(
                b.recipient, MessageKind.CONFIRM_RECEPTION, b.owner,
                origin=b.sender, direction=b.direction, count=count,
            )
        return blocks

    # -- step 1-2 ---------------------------------------------------------

    def prepare_sequences(self, party: Party) -> Party:
        n_par = self.n_parties
        total = self.plan.total
        if self.config.fixed_label is not None:
            labels = [self.config.fixed_label] * total
        else:
            labels = (party.rng.integers(1 << n_par, size=total) + 1).tolist()
        party.prepared = [index_from_label(k, n_par) for k in labels]
        party.triplets = [
            new_particles(to_state_vector(g), party.id, pos) for pos, g in enumerate(party.prepared)
        ]
        party.home_particles = [t[party.id] for t in party.triplets]
        self._home_ids.update(id(p) for p in party.home_particles)
        party.surviving = list(range(total))
        party.own_key = party.rng.integers(2, size=self.plan.key_length).tolist()
        return party

    # -- step 3 -----------------------------------------------------------

    def distribute(self) -> None:
        blocks = []
        for owner in self.parties:
            positions = list(range(self.plan.total))
            for j in owner.partners(self.n_parties):
                blocks.append(Block(owner.id, owner.id, j, j, positions[:],
                                    [t[j] for t in owner.triplets], "forward"))
        for b in self._transmit(blocks):
            self.parties[b.recipient].held_remote[b.owner] = dict(zip(b.positions, b.particles))

    # -- step 4 -----------------------------------------------------------

    def check_d(self, owner_id: int) -> CheckReport:
        owner = self.parties[owner_id]
        chooser_party = self.parties[(owner_id + 1) % self.n_parties]
        chooser = chooser_party.id
        d = self.plan.d
        picks = chooser_party.rng.choice(len(owner.surviving), d, replace=False)
        positions = sorted(owner.surviving[int(i)] for i in picks)
        alphabet = self.config.check_bases.upper()
        bases = "".join(alphabet[int(i)] for i in chooser_party.rng.integers(len(alphabet), size=d))
        self.transcript.post(chooser, MessageKind.CHECK_POSITIONS, owner_id, positions=positions)
        self.transcript.post(chooser, MessageKind.CHECK_BASIS, owner_id, bases=bases)
        return self._run_check(owner, positions, bases)

    def _run_check(self, owner: Party, positions: list[int], bases: str) -> CheckReport:
        if len(set(positions)) != len(positions):
            raise ProtocolViolation(f"position collision in d-set {positions}")
        outcomes: dict[int, list[int]] = {}
        for pid in owner.partners(self.n_parties):
            holder = self.parties[pid]
            held = holder.held_remote[owner.id]
            res = [measure(held[pos], MeasurementBasis(b), holder.rng) for pos, b in zip(positions, bases)]
            msg = self.transcript.post(
                pid, MessageKind.CHECK_OUTCOME, owner.id, positions=positions, bases=bases, outcomes=res
            )
            if msg.payload["bases"] != bases or msg.payload["positions"] != positions:
                raise ProtocolViolation(f"party {pid} announced a different basis choice")
            outcomes[pid] = res
        # the owner measures last
        outcomes[owner.id] = [
            measure(owner.triplets[pos][owner.id], MeasurementBasis(b), owner.rng)
            for pos, b in zip(positions, bases)
        ]

        checks = {"Z": 0, "X": 0}
        failures = {"Z": 0, "X": 0}
        for i, (pos, b) in enumerate(zip(positions, bases)):
            bits = [outcomes[slot][i] for slot in range(self.n_parties)]
            g = owner.prepared[pos]
            ok = z_pattern_consistent(g, bits) if b == "Z" else x_outcomes_consistent(g, bits)
            checks[b] += 1
            failures[b] += not ok
        report = CheckReport(owner.id, positions, bases, checks, failures)
        self.transcript.post(owner.id, MessageKind.ERROR_RATE_REPORT, owner.id,
                             stage="d", checked=checks, failures=failures)

        removed = set(positions)
        owner.surviving = [p for p in owner.surviving if p not in removed]
        for pid in owner.partners(self.n_parties):
            held = self.parties[pid].held_remote[owner.id]
            for pos in positions:
                del held[pos]
        owner.compromised = report.detected
        self.check_reports[owner.id] = report
        return report

    # -- step 5 -----------------------------------------------------------

    def encode_key(self, party: Party) -> None:
        for owner_id, held in party.held_remote.items():
            positions = sorted(held)
            if len(positions) != len(party.own_key):
                raise ValueError(
                    f"party {party.id} key has {len(party.own_key)} bits but "
                    f"{len(positions)} positions survive in sequence {owner_id}"
                )
            for pos, bit in zip(positions, party.own_key):
                apply_op(held[pos], Gate.from_symbol(self.convention.op_for_bit(bit)))

    # -- step 6 -----------------------------------------------------------

    def return_blocks(self) -> None:
        blocks = []
        for party in self.parties:
            for owner_id in sorted(party.held_remote):
                held = party.held_remote[owner_id]
                positions = sorted(held)
                blocks.append(Block(owner_id, party.id, owner_id, party.id, positions,
                                    [held[p] for p in positions], "backward"))
        for b in self._transmit(blocks):
            self.parties[b.owner].returned[b.slot] = dict(zip(b.positions, b.particles))
            self.parties[b.sender].held_remote.pop(b.owner)

    def decode_keys(self, owner: Party) -> Party:
        partners = [j for j in range(self.n_parties) if j != owner.id]
        decoded = {j: [] for j in partners}
        conv = self.convention
        for pos in owner.surviving:
            parts = [
                owner.triplets[pos][owner.id] if slot == owner.id else owner.returned[slot][pos]
                for slot in range(self.n_parties)
            ]
            measured = measure_ghz(parts, owner.rng)
            flips, sign_changed = decode_flips(owner.prepared[pos], measured, home=owner.id)
            for j, f in zip(partners, flips):
                decoded[j].append(f)
            expected = PauliWord("".join(conv.op_for_bit(f) for f in flips)).sign_flips == 1
            if sign_changed != expected:
                owner.tamper_positions.append(pos)
        owner.decoded_keys = decoded
        return owner

    def verify_dprime(self, owner_id: int) -> dict[int, float]:
        owner = self.parties[owner_id]
        positions = [owner.surviving[i] for i in self.dprime_indices]
        self.transcript.post(owner_id, MessageKind.DPRIME_POSITIONS, owner_id, positions=positions)
        partners = owner.partners(self.n_parties)
        reveals = []
        for i, pos in zip(self.dprime_indices, positions):
            for pid in partners:
                reveals.append(self.transcript.post(
                    pid, MessageKind.DPRIME_REVEAL, owner_id, position=pos, bit=self.parties[pid].own_key[i]
                ))
        check_alternation(reveals, partners)
        mismatches = {pid: 0 for pid in partners}
        for msg, pid in zip(reveals, partners * len(positions)):
            i = self.dprime_indices[positions.index(msg.payload["position"])]
            if owner.decoded_keys[pid][i] != msg.payload["bit"]:
                mismatches[pid] += 1
        rates = {pid: mismatches[pid] / len(positions) for pid in sorted(partners)}
        self.transcript.post(owner_id, MessageKind.ERROR_RATE_REPORT, owner_id,
                             stage="d_prime", rates={str(k): v for k, v in rates.items()})
        self.dprime_rates[owner_id] = rates
        return rates

    # -- composite --------------------------------------------------------

    def run(self) -> SessionReport:
        try:
            for p in self.parties:
                self.prepare_sequences(p)
            self.distribute()
            for p in self.parties:
                self.check_d(p.id)
            if self.config.abort_on_detection and any(r.detected for r in self.check_reports.values()):
                raise SessionAborted("eavesdropping detected in the d-set check")
            for p in self.parties:
                self.encode_key(p)
            self.return_blocks()
            for p in self.parties:
                self.decode_keys(p)
            for p in self.parties:
                self.verify_dprime(p.id)
        except SessionAborted as exc:
            self.aborted = True
            self.abort_reason = str(exc)
            logger.debug("session aborted: %s", exc)
        return self.report()

    def report(self) -> SessionReport:
        checks = {"Z": 0, "X": 0}
        fails = {"Z": 0, "X": 0}
        for r in self.check_reports.values():
            for b in checks:
                checks[b] += r.checks[b]
                fails[b] += r.failures[b]
        key_idx = self.key_indices
        agreement = {}
        selected, accepted = None, False
        if not self.aborted:
            for owner in self.parties:
                for pid, bits in owner.decoded_keys.items():
                    truth = self.parties[pid].own_key
                    agreement[owner.id, pid] = all(bits[i] == truth[i] for i in key_idx)
            selected = select_best_key(
                self.dprime_rates, exclude={p.id for p in self.parties if p.compromised}
            )
            if selected is not None:
                accepted = max(self.dprime_rates[selected].values()) <= self.config.error_threshold
        eve_report = None
        if self.attack is not None and hasattr(self.attack, "report"):
            eve_report = self.attack.report(self)
        return SessionReport(
            num_parties=self.n_parties,
            detected_at_step4={p.id: self.check_reports[p.id].detected
                               for p in self.parties if p.id in self.check_reports},
            step4_checks=checks,
            step4_error_count=fails,
            dprime_error_rates=dict(self.dprime_rates),
            selected_key_owner=selected,
            key_accepted=accepted,
            key_agreement=agreement,
            tamper_counts={p.id: len(p.tamper_positions) for p in self.parties},
            final_keys={p.id: [p.own_key[i] for i in key_idx] for p in self.parties},
            transcript=self.transcript,
            convention=self.convention,
            aborted=self.aborted,
            abort_reason=self.abort_reason,
            eve_report=eve_report,
            home_untouched=all(
                p.register is not None and p in p.register.particles
                for party in self.parties for p in party.home_particles
            ),
        )

    def encoded_bit(self, owner_id: int, slot: int, position: int) -> int:
        """Ground truth: the bit party `slot` encoded at `position` of `owner_id`'s sequence."""
        i = self.parties[owner_id].surviving.index(position)
        return self.parties[slot].own_key[i]


def check_alternation(reveals: Sequence[ClassicalMessage], partners: Sequence[int]) -> None:
    """d' reveals must cycle strictly through the partners in ring order."""
    for k, msg in enumerate(reveals):
        expected = partners[k % len(partners)]
        if msg.sender != expected:
            raise ProtocolViolation(
                f"out-of-turn d' announcement: party {msg.sender} spoke where party {expected} was due"
            )


def select_best_key(rates: dict[int, dict[int, float]], exclude: Iterable[int] = ()) -> int | None:
    """Owner whose sequence shows the smallest worst-partner error rate; ties go to the lowest id."""
    exclude = set(exclude)
    candidates = [(max(r.values()) if r else 0.0, owner) for owner, r in rates.items() if owner not in exclude]
    if not candidates:
        return None
    return min(candidates)[1]


def run_session(config: SessionConfig, attack=None, rng: np.random.Generator | None = None) -> SessionReport:
    if rng is None:
        rng = np.random.default_rng()
    return Session(config, rng, attack).run()


__all__ = [
    "Block", "CheckReport", "ClassicalMessage", "MessageKind", "Particle", "Party", "ProtocolViolation",
    "Register", "SequencePlan", "Session", "SessionAborted", "SessionConfig", "SessionReport",
    "Transcript", "check_alternation", "run_session", "select_best_key",
]
