"""Round-by-round state machine for the entanglement-based key protocol.

Alice and Bob share one reusable Bell state and reuse it for the whole key:
each round Alice entangles a fresh key qudit into it with a controlled
right-shift, sends the qudit, and Bob disentangles it with a controlled
left-shift and measures.  An eavesdropper on the channel can entangle her
own qudit via controlled shifts (round one) and afterwards read off
differences between key dits (later rounds); applying paired Fourier gates
H and H* on the shared pair before every send blinds her completely at the
price of scrambling what Bob receives.

Register layout: the persistent wires are (alice, bob, eve) = (0, 1, 2);
the key wire is adjoined as wire 3 for the duration of one round and
dropped after Bob's measurement, so memory stays at d^3 between rounds.
Sessions are immutable; every operation returns a new one.  A session is
owned by one thread; independent sessions parallelize freely.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from .core import (
    LEFT,
    RIGHT,
    Gate,
    PureState,
    apply_gate,
    basis_state,
    bell_state,
    controlled_gate,
    drop_wire,
    fourier_gate,
    make_rng,
    measure,
    shift_gate,
    tensor,
)

WIRE_ALICE = 0
WIRE_BOB = 1
WIRE_EVE = 2
WIRE_KEY = 3

PROTECTION_NONE = "none"
PROTECTION_HADAMARD = "hadamard"
PROTECTION_CUSTOM = "custom"
EVE_ABSENT = "absent"
EVE_SHIFT_INTERCEPT = "shift_intercept"

PHASE_FIRST_ROUND = "first_round"
PHASE_STEADY = "steady"


class ConfigError(ValueError):
    """Invalid protocol or experiment configuration."""


class UsageError(RuntimeError):
    """Protocol operation called out of order or against the configuration."""


@dataclass(frozen=True, eq=False)
class ProtocolConfig:
    d: int
    n_rounds: int
    protection: str = PROTECTION_NONE
    custom_unitary: Optional[np.ndarray] = None
    eve: str = EVE_ABSENT
    seed: int = 0
    snapshot_states: bool = False

    def __post_init__(self):
        if self.d < 2:
            raise ConfigError(f"d must be >= 2, got {self.d}")
        if self.n_rounds < 1:
            raise ConfigError(f"n_rounds must be >= 1, got {self.n_rounds}")
        if self.protection not in (PROTECTION_NONE, PROTECTION_HADAMARD, PROTECTION_CUSTOM):
            raise ConfigError(f"unknown protection mode {self.protection!r}")
        if self.eve not in (EVE_ABSENT, EVE_SHIFT_INTERCEPT):
            raise ConfigError(f"unknown eve mode {self.eve!r}")
        if self.protection == PROTECTION_CUSTOM:
            if self.custom_unitary is None:
                raise ConfigError("custom protection requires a unitary matrix")
            mat = np.array(self.custom_unitary, dtype=complex)
            if mat.shape != (self.d, self.d):
                raise ConfigError(
                    f"custom unitary has shape {mat.shape}, expected {(self.d, self.d)}"
                )
            if np.max(np.abs(mat.conj().T @ mat - np.eye(self.d))) > 1e-10:
                raise ConfigError("custom protection matrix is not unitary")
            mat.flags.writeable = False
            object.__setattr__(self, "custom_unitary", mat)
        elif self.custom_unitary is not None:
            raise ConfigError("custom_unitary given but protection is not 'custom'")


@dataclass(frozen=True, eq=False)
class Session:
    """Live protocol state between operations.

    ``round`` counts completed rounds; the key wire exists only between
    alice_send and bob_receive.  ``pending_snapshots`` accumulates labeled
    states during a round when the config asks for them and is collected
    into the transcript by run_protocol.
    """

    state: PureState
    round: int
    eve_phase: str
    config: ProtocolConfig
    pending_snapshots: tuple = ()

    @property
    def key_wire_present(self) -> bool:
        return self.state.n_wires == 4


@dataclass(frozen=True)
class RoundTranscript:
    round: int
    q_sent: int
    bob_measured: int
    eve_measured: Optional[int] = None
    snapshots: Optional[tuple] = None


@dataclass(frozen=True)
class EveRecord:
    """Eavesdropper's measured values, one per round from the second onward."""

    values: tuple


@dataclass(frozen=True)
class CompareReport:
    compared: int
    mismatches: int
    detected: bool
    sampled_rounds: tuple


@lru_cache(maxsize=None)
def _controlled_shift(d: int, direction: str) -> Gate:
    return controlled_gate(shift_gate(d, direction))


@lru_cache(maxsize=64)
def _protection_pair(d: int, matrix_bytes: Optional[bytes]) -> tuple[Gate, Gate]:
    """Alice's gate and Bob's conjugate, validated once per distinct matrix."""
    if matrix_bytes is None:
        gate = fourier_gate(d)
    else:
        gate = Gate(d, 1, np.frombuffer(matrix_bytes, dtype=complex).reshape(d, d), "U")
    return gate, gate.conjugated()


def _protection_gates(config: ProtocolConfig) -> Optional[tuple[Gate, Gate]]:
    if config.protection == PROTECTION_HADAMARD:
        return _protection_pair(config.d, None)
    if config.protection == PROTECTION_CUSTOM:
        return _protection_pair(config.d, config.custom_unitary.tobytes())
    return None


def _snap(session: Session, label: str, state: PureState) -> tuple:
    if not session.config.snapshot_states:
        return session.pending_snapshots
    return session.pending_snapshots + ((label, state),)


def init_session(config: ProtocolConfig, eve_initial: int = 0) -> Session:
    """Fresh session: shared (0,0) Bell state on (alice, bob), eavesdropper
    wire in |eve_initial> (the particular value is immaterial to every
    statistic; 0 by convention)."""
    if not 0 <= eve_initial < config.d:
        raise ConfigError(f"eve_initial {eve_initial} outside [0, {config.d})")
    state = tensor(bell_state(config.d, 0, 0), basis_state(config.d, [eve_initial]))
    return Session(state=state, round=0, eve_phase=PHASE_FIRST_ROUND, config=config)


def alice_send(session: Session, q: int) -> Session:
    """Alice encodes one key dit and puts it on the channel.

    With protection enabled, Alice applies the protection gate G to her half
    of the shared pair and Bob applies G* to his half first; a Bell pair
    disentangled from the outside world is invariant under G (x) G*, so the
    step is free in the honest case.  Alice then adjoins the key wire in
    |q> and entangles it with a controlled right-shift from her wire.
    """
    d = session.config.d
    if not 0 <= q < d:
        raise ValueError(f"key dit {q} outside [0, {d})")
    if session.key_wire_present:
        raise UsageError("key wire already on the channel; call bob_receive first")
    state = session.state
    guard = _protection_gates(session.config)
    if guard is not None:
        state = apply_gate(state, guard[0], (WIRE_ALICE,))
        state = apply_gate(state, guard[1], (WIRE_BOB,))
    state = tensor(state, basis_state(d, [q]))
    first = session.round == 0
    protected = guard is not None
    prefix = "Phi" if first else ("PsiHat" if protected else "Psi")
    snaps = _snap(session, prefix + "0", state)
    state = apply_gate(state, _controlled_shift(d, RIGHT), (WIRE_ALICE, WIRE_KEY))
    session = replace(session, state=state, pending_snapshots=snaps)
    return replace(session, pending_snapshots=_snap(session, prefix + "1", state))


def eve_intervene(session: Session, rng: np.random.Generator) -> tuple[Session, Optional[int]]:
    """Eavesdropper acts on the in-flight key qudit.

    First round: she only entangles, via a controlled right-shift from the
    key wire onto her own, and measures nothing.  Every later round she
    runs controlled-left-shift, measurement of her wire, controlled-right-
    shift, which (without protection) hands her q1 - q_i exactly and leaves
    the channel state untouched.
    """
    if session.config.eve != EVE_SHIFT_INTERCEPT:
        raise UsageError("eve_intervene called but the configuration has no eavesdropper")
    if not session.key_wire_present:
        raise UsageError("eve_intervene must be called between alice_send and bob_receive")
    d = session.config.d
    state = session.state
    if session.eve_phase == PHASE_FIRST_ROUND:
        state = apply_gate(state, _controlled_shift(d, RIGHT), (WIRE_KEY, WIRE_EVE))
        session = replace(session, state=state, eve_phase=PHASE_STEADY)
        return replace(session, pending_snapshots=_snap(session, "Phi2", state)), None
    protected = session.config.protection != PROTECTION_NONE
    state = apply_gate(state, _controlled_shift(d, LEFT), (WIRE_KEY, WIRE_EVE))
    snaps = session.pending_snapshots
    if not protected and session.config.snapshot_states:
        snaps = snaps + (("Psi2", state),)
    outcome = measure(state, WIRE_EVE, rng)
    state = outcome.post_state
    if protected and session.config.snapshot_states:
        snaps = snaps + (("Phi3", state),)
    state = apply_gate(state, _controlled_shift(d, RIGHT), (WIRE_KEY, WIRE_EVE))
    session = replace(session, state=state, pending_snapshots=snaps)
    return session, outcome.value


def bob_receive(session: Session, rng: np.random.Generator) -> tuple[Session, int]:
    """Bob disentangles the key qudit with a controlled left-shift from his
    wire, measures it, and retires the key wire.  Advances the round count."""
    if not session.key_wire_present:
        raise UsageError("no key wire on the channel; call alice_send first")
    d = session.config.d
    state = apply_gate(session.state, _controlled_shift(d, LEFT), (WIRE_BOB, WIRE_KEY))
    label = "Phi3" if session.round == 0 else "Phi4"
    snaps = _snap(replace(session, state=state), label, state)
    outcome = measure(state, WIRE_KEY, rng)
    state = drop_wire(outcome.post_state, WIRE_KEY, outcome.value)
    session = replace(
        session, state=state, round=session.round + 1, pending_snapshots=snaps
    )
    return session, outcome.value


def run_protocol(
    config: ProtocolConfig,
    key: Sequence[int],
    rng: Optional[np.random.Generator] = None,
) -> list[RoundTranscript]:
    """Execute the full per-round loop for a caller-supplied key.

    Rounds are numbered from 1.  The eavesdropper's measured value appears
    from round 2 onward (her first intervention only entangles).
    Deterministic for a given seed: when ``rng`` is omitted it is derived
    from ``config.seed``.
    """
    key = [int(q) for q in key]
    if len(key) != config.n_rounds:
        raise ValueError(f"key length {len(key)} != n_rounds {config.n_rounds}")
    for i, q in enumerate(key):
        if not 0 <= q < config.d:
            raise ValueError(f"key dit {q} at position {i} outside [0, {config.d})")
    if rng is None:
        rng = make_rng(config.seed)
    session = init_session(config)
    transcripts = []
    for round_no, q in enumerate(key, start=1):
        session = alice_send(session, q)
        eve_value = None
        if config.eve == EVE_SHIFT_INTERCEPT:
            session, eve_value = eve_intervene(session, rng)
        session, bob_value = bob_receive(session, rng)
        transcripts.append(
            RoundTranscript(
                round=round_no,
                q_sent=q,
                bob_measured=bob_value,
                eve_measured=eve_value,
                snapshots=session.pending_snapshots or None,
            )
        )
        session = replace(session, pending_snapshots=())
    return transcripts


def random_key(d: int, n: int, rng: np.random.Generator) -> list[int]:
    """Uniform key material for experiments."""
    return [int(q) for q in rng.integers(0, d, size=n)]


def eve_record(transcripts: Sequence[RoundTranscript]) -> EveRecord:
    """Collect the eavesdropper's measured values (rounds >= 2, in order)."""
    return EveRecord(
        values=tuple(t.eve_measured for t in transcripts if t.eve_measured is not None)
    )


def compare_sample(
    transcripts: Sequence[RoundTranscript], m: int, rng: np.random.Generator
) -> CompareReport:
    """Publicly compare ``m`` uniformly sampled rounds against the sent dits.

    The sampled rounds are consumed: they become public and must be
    excluded from the delivered key (``sampled_rounds`` identifies them).
    """
    if not 1 <= m <= len(transcripts):
        raise ValueError(f"m={m} outside [1, {len(transcripts)}]")
    picks = rng.choice(len(transcripts), size=m, replace=False)
    chosen = [transcripts[int(i)] for i in picks]
    mismatches = sum(1 for t in chosen if t.bob_measured != t.q_sent)
    return CompareReport(
        compared=m,
        mismatches=mismatches,
        detected=mismatches > 0,
        sampled_rounds=tuple(sorted(t.round for t in chosen)),
    )
