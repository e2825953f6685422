"""Dense state-vector linear algebra for registers of d-level systems.

All register values share one level count ``d >= 2``.  A register of
``n_wires`` qudits is a complex vector of length ``d**n_wires``; wire 0 is
the *most significant* base-d digit of the flat index, so the basis ket
|q0, q1, ..., q_{n-1}> sits at flat index q0*d^(n-1) + q1*d^(n-2) + ... + q_{n-1}.
This convention is fixed here and asserted throughout the test suite.

States, gates and density matrices are immutable after construction;
every operation returns a new value.  Practical ceiling is d <= 64 for a
four-wire register (dense d^4 amplitudes).

Phases zeta^k (zeta = e^{2*pi*i/d}) are computed as exp(2*pi*i*(k mod d)/d)
element by element, never by repeated multiplication, so there is no phase
drift at large d.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

#: entrywise tolerance for equality checks (amplitudes, matrix entries)
ATOL = 1e-10
#: eigenvalue floor below which a matrix is rejected as not positive semidefinite
PSD_FLOOR = -1e-9

RIGHT = "right"
LEFT = "left"


def _check_dimension(d: int) -> None:
    if not isinstance(d, (int, np.integer)) or d < 2:
        raise ValueError(f"qudit dimension must be an integer >= 2, got {d!r}")


def zeta_power(d: int, k) -> np.ndarray:
    """exp(2*pi*i*k/d) with the exponent reduced mod d before evaluation."""
    return np.exp(2j * np.pi * (np.asarray(k) % d) / d)


def make_rng(seed: int, *path: int) -> np.random.Generator:
    """Counter-based random source; extra ``path`` integers split off
    statistically independent streams from the same 64-bit seed, so
    sub-streams can be created in any order (or in parallel) and still be
    bit-reproducible."""
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence(entropy=seed, spawn_key=path))
    )


@dataclass(frozen=True, eq=False)
class PureState:
    """Normalized amplitude vector over ``n_wires`` qudits of dimension ``d``."""

    d: int
    n_wires: int
    amplitudes: np.ndarray

    def __post_init__(self):
        _check_dimension(self.d)
        if self.n_wires < 1:
            raise ValueError(f"need at least one wire, got {self.n_wires}")
        amps = np.array(self.amplitudes, dtype=complex)
        if amps.shape != (self.d**self.n_wires,):
            raise ValueError(
                f"amplitude vector has shape {amps.shape}, "
                f"expected ({self.d**self.n_wires},)"
            )
        norm_sq = float(np.real(np.vdot(amps, amps)))
        if abs(norm_sq - 1.0) > ATOL:
            raise ValueError(f"state not normalized: sum |a|^2 = {norm_sq!r}")
        amps.flags.writeable = False
        object.__setattr__(self, "amplitudes", amps)

    def tensor_view(self) -> np.ndarray:
        """Amplitudes reshaped to one axis per wire (read-only view)."""
        return self.amplitudes.reshape([self.d] * self.n_wires)


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Hermitian, unit-trace, positive-semidefinite matrix over a register."""

    d: int
    n_wires: int
    entries: np.ndarray

    def __post_init__(self):
        _check_dimension(self.d)
        side = self.d**self.n_wires
        mat = np.array(self.entries, dtype=complex)
        if mat.shape != (side, side):
            raise ValueError(f"entries have shape {mat.shape}, expected {(side, side)}")
        if np.max(np.abs(mat - mat.conj().T)) > ATOL:
            raise ValueError("matrix is not Hermitian within tolerance")
        tr = complex(np.trace(mat))
        if abs(tr - 1.0) > ATOL:
            raise ValueError(f"trace is {tr!r}, expected 1")
        if float(np.min(np.linalg.eigvalsh(mat))) < PSD_FLOOR:
            raise ValueError("matrix has an eigenvalue below the PSD floor")
        mat.flags.writeable = False
        object.__setattr__(self, "entries", mat)


@dataclass(frozen=True, eq=False)
class Gate:
    """Unitary acting on ``arity`` wires of a d-level register."""

    d: int
    arity: int
    matrix: np.ndarray
    label: str = ""

    def __post_init__(self):
        _check_dimension(self.d)
        if self.arity < 1:
            raise ValueError(f"gate arity must be >= 1, got {self.arity}")
        side = self.d**self.arity
        mat = np.array(self.matrix, dtype=complex)
        if mat.shape != (side, side):
            raise ValueError(f"matrix has shape {mat.shape}, expected {(side, side)}")
        if np.max(np.abs(mat.conj().T @ mat - np.eye(side))) > ATOL:
            raise ValueError(f"gate {self.label or '<unnamed>'} is not unitary")
        mat.flags.writeable = False
        object.__setattr__(self, "matrix", mat)

    def adjoint(self) -> "Gate":
        return Gate(self.d, self.arity, self.matrix.conj().T, self.label + "^-1")

    def conjugated(self) -> "Gate":
        """Entrywise complex conjugate (not the adjoint)."""
        return Gate(self.d, self.arity, self.matrix.conj(), self.label + "*")


@dataclass(frozen=True, eq=False)
class MeasurementOutcome:
    """Result of a projective measurement of one wire in the computational basis."""

    wire: int
    value: int
    probability: float
    post_state: PureState


# ---------------------------------------------------------------------------
# State construction
# ---------------------------------------------------------------------------


def flat_index(d: int, digits: Sequence[int]) -> int:
    """Flat index of |digits> under the wire-0-most-significant convention."""
    idx = 0
    for q in digits:
        idx = idx * d + int(q)
    return idx


def basis_state(d: int, digits: Sequence[int]) -> PureState:
    """Computational basis ket |q0, q1, ...>."""
    _check_dimension(d)
    digits = list(digits)
    if not digits:
        raise ValueError("need at least one digit")
    for wire, q in enumerate(digits):
        if not 0 <= int(q) < d:
            raise ValueError(f"digit {q} on wire {wire} is outside [0, {d})")
    amps = np.zeros(d ** len(digits), dtype=complex)
    amps[flat_index(d, digits)] = 1.0
    return PureState(d, len(digits), amps)


def tensor(a: PureState, b: PureState) -> PureState:
    """Tensor product; ``a``'s wires become the most significant digits."""
    if a.d != b.d:
        raise ValueError(f"cannot tensor states with d={a.d} and d={b.d}")
    return PureState(a.d, a.n_wires + b.n_wires, np.kron(a.amplitudes, b.amplitudes))


def bell_state(d: int, m: int, n: int) -> PureState:
    """Maximally entangled two-wire state (1/sqrt(d)) sum_j zeta^{nj} |j, j+m>."""
    _check_dimension(d)
    if not 0 <= m < d or not 0 <= n < d:
        raise ValueError(f"bell state labels (m={m}, n={n}) must lie in [0, {d})")
    amps = np.zeros(d * d, dtype=complex)
    j = np.arange(d)
    amps[j * d + (j + m) % d] = zeta_power(d, n * j) / np.sqrt(d)
    return PureState(d, 2, amps)


# ---------------------------------------------------------------------------
# Gate construction
# ---------------------------------------------------------------------------


def identity_gate(d: int) -> Gate:
    _check_dimension(d)
    return Gate(d, 1, np.eye(d, dtype=complex), "I")


def generalized_pauli(d: int, m: int, n: int) -> Gate:
    """Shift-and-phase unitary sum_j zeta^{nj} |j+m><j|.

    Plays the role the Pauli operators play for qubits; generally not
    Hermitian.  Acting on the second wire of the (0,0) Bell state it
    produces the (m,n) Bell state.
    """
    _check_dimension(d)
    if not 0 <= m < d or not 0 <= n < d:
        raise ValueError(f"pauli labels (m={m}, n={n}) must lie in [0, {d})")
    mat = np.zeros((d, d), dtype=complex)
    j = np.arange(d)
    mat[(j + m) % d, j] = zeta_power(d, n * j)
    return Gate(d, 1, mat, f"U[{m},{n}]")


def fourier_gate(d: int) -> Gate:
    """Discrete Fourier gate H with H_ij = zeta^{ij}/sqrt(d).

    Symmetric (H = H^T) and unitary (H H* = 1), but not Hermitian for d > 2.
    The d-level generalization of the Hadamard gate.
    """
    _check_dimension(d)
    ij = np.outer(np.arange(d), np.arange(d))
    return Gate(d, 1, zeta_power(d, ij) / np.sqrt(d), "H")


def shift_gate(d: int, direction: str = RIGHT) -> Gate:
    """Cyclic shift: right maps |j> to |j+1 mod d>, left is its inverse.

    The mod-d generalization of NOT; R^d = identity.
    """
    _check_dimension(d)
    if direction not in (RIGHT, LEFT):
        raise ValueError(f"direction must be '{RIGHT}' or '{LEFT}', got {direction!r}")
    mat = np.zeros((d, d), dtype=complex)
    j = np.arange(d)
    if direction == RIGHT:
        mat[(j + 1) % d, j] = 1.0
    else:
        mat[(j - 1) % d, j] = 1.0
    return Gate(d, 1, mat, "R" if direction == RIGHT else "L")


def controlled_gate(u: Gate) -> Gate:
    """Two-wire gate |i>|j> -> |i> U^i |j| (U applied i times, i = control digit).

    Unlike the qubit case this is a loop, not an if: the target sees the
    i-th matrix power of U.  Applied to the shift gates it yields the
    controlled shifts R_c |i,j> = |i, j+i> and L_c |i,j> = |i, j-i>, the
    d-level analogue of CNOT.
    """
    if u.arity != 1:
        raise ValueError(f"control construction needs an arity-1 gate, got arity {u.arity}")
    d = u.d
    mat = np.zeros((d * d, d * d), dtype=complex)
    power = np.eye(d, dtype=complex)
    for i in range(d):
        mat[i * d : (i + 1) * d, i * d : (i + 1) * d] = power
        power = power @ u.matrix
    return Gate(d, 2, mat, f"C[{u.label}]")


def random_unitary(d: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-random unitary matrix via QR of a complex Ginibre matrix."""
    _check_dimension(d)
    z = (rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    diag = np.diag(r)
    return q * (diag / np.abs(diag))


# ---------------------------------------------------------------------------
# Applying gates, measuring, reducing
# ---------------------------------------------------------------------------


def _check_wires(n_wires: int, wires: Sequence[int], arity: int) -> tuple[int, ...]:
    wires = tuple(int(w) for w in wires)
    if len(wires) != arity:
        raise ValueError(f"gate acts on {arity} wires, got {len(wires)}")
    if len(set(wires)) != len(wires):
        raise ValueError(f"wires must be distinct, got {wires}")
    for w in wires:
        if not 0 <= w < n_wires:
            raise ValueError(f"wire {w} out of range for a {n_wires}-wire register")
    return wires


def apply_gate(s: PureState, g: Gate, wires: Sequence[int]) -> PureState:
    """Apply ``g`` to the named wires, identity on the rest."""
    if g.d != s.d:
        raise ValueError(f"gate d={g.d} does not match state d={s.d}")
    wires = _check_wires(s.n_wires, wires, g.arity)
    d, n, arity = s.d, s.n_wires, g.arity
    psi = s.amplitudes.reshape([d] * n)
    gt = g.matrix.reshape([d] * (2 * arity))
    psi = np.tensordot(gt, psi, axes=(list(range(arity, 2 * arity)), list(wires)))
    # tensordot leaves the gate's output axes first; restore wire positions
    psi = np.moveaxis(psi, list(range(arity)), list(wires))
    return PureState(d, n, psi.reshape(-1))


def to_density(s: PureState) -> DensityMatrix:
    """Rank-one density matrix |s><s|."""
    return DensityMatrix(s.d, s.n_wires, np.outer(s.amplitudes, s.amplitudes.conj()))


def partial_trace(rho: DensityMatrix, keep: Sequence[int]) -> DensityMatrix:
    """Reduce to the ``keep`` wires (in the order given), tracing out the rest."""
    keep = _check_wires(rho.n_wires, keep, len(keep)) if keep else ()
    if not keep:
        raise ValueError("keep must name at least one wire")
    d, n = rho.d, rho.n_wires
    t = rho.entries.reshape([d] * (2 * n))
    row = list(range(n))
    col = [n + w if w in keep else w for w in range(n)]  # shared label = traced
    out = [w for w in keep] + [n + w for w in keep]
    reduced = np.einsum(t, row + col, out)
    side = d ** len(keep)
    return DensityMatrix(d, len(keep), reduced.reshape(side, side))


def reduced_density(s: PureState, keep: Sequence[int]) -> DensityMatrix:
    """Partial trace of |s><s| without materializing the full outer product."""
    keep = _check_wires(s.n_wires, keep, len(keep)) if keep else ()
    if not keep:
        raise ValueError("keep must name at least one wire")
    d, n = s.d, s.n_wires
    psi = s.tensor_view()
    bra = [n + w if w in keep else w for w in range(n)]
    out = [w for w in keep] + [n + w for w in keep]
    reduced = np.einsum(psi, list(range(n)), psi.conj(), bra, out)
    side = d ** len(keep)
    return DensityMatrix(d, len(keep), reduced.reshape(side, side))


def measure(s: PureState, wire: int, rng: np.random.Generator) -> MeasurementOutcome:
    """Projective measurement of one wire in the computational basis.

    Samples the digit with its Born probability, collapses the state and
    renormalizes.  Deterministic for a given generator state.
    """
    (wire,) = _check_wires(s.n_wires, (wire,), 1)
    d, n = s.d, s.n_wires
    psi = s.tensor_view()
    other_axes = tuple(ax for ax in range(n) if ax != wire)
    probs = np.abs(psi) ** 2
    p = probs.sum(axis=other_axes)
    total = float(p.sum())
    if total < 1e-12:
        raise RuntimeError("all outcome probabilities vanished on a normalized state")
    p = p / total
    value = int(np.searchsorted(np.cumsum(p), rng.random(), side="right"))
    value = min(value, d - 1)  # guard the u == 1.0 edge
    prob_v = float(p[value])
    sel = [slice(None)] * n
    sel[wire] = value
    post = np.zeros_like(psi)
    post[tuple(sel)] = psi[tuple(sel)] / np.sqrt(prob_v)
    return MeasurementOutcome(wire, value, prob_v, PureState(d, n, post.reshape(-1)))


def drop_wire(s: PureState, wire: int, value: int) -> PureState:
    """Remove a wire that is in the definite basis state |value>.

    Used to discard a measured wire; raises if any amplitude weight lives
    outside the ``value`` slice.
    """
    (wire,) = _check_wires(s.n_wires, (wire,), 1)
    if not 0 <= value < s.d:
        raise ValueError(f"value {value} outside [0, {s.d})")
    if s.n_wires == 1:
        raise ValueError("cannot drop the only wire of a register")
    sel = [slice(None)] * s.n_wires
    sel[wire] = value
    rest = s.tensor_view()[tuple(sel)].reshape(-1)
    weight = float(np.real(np.vdot(rest, rest)))
    if abs(weight - 1.0) > ATOL:
        raise ValueError(
            f"wire {wire} is not definitely |{value}>; slice weight {weight!r}"
        )
    return PureState(s.d, s.n_wires - 1, rest)


def bell_via_circuit(d: int, m: int, n: int) -> PureState:
    """Generate the (m,n) Bell state by circuit: R_c (H x 1) |n, m>.

    Note the swapped argument order: the circuit input ket is |n, m> while
    the output is the (m, n) Bell state.
    """
    _check_dimension(d)
    if not 0 <= m < d or not 0 <= n < d:
        raise ValueError(f"bell state labels (m={m}, n={n}) must lie in [0, {d})")
    s = basis_state(d, [n, m])
    s = apply_gate(s, fourier_gate(d), (0,))
    return apply_gate(s, controlled_gate(shift_gate(d, RIGHT)), (0, 1))


# ---------------------------------------------------------------------------
# Comparison and debug dumps
# ---------------------------------------------------------------------------


def states_close(a: PureState, b: PureState, atol: float = ATOL) -> bool:
    """Amplitude-wise equality (phase-sensitive; the protocol circuits are
    phase-deterministic, so this is the primary comparator)."""
    if a.d != b.d or a.n_wires != b.n_wires:
        return False
    return bool(np.max(np.abs(a.amplitudes - b.amplitudes)) <= atol)


def states_close_up_to_phase(a: PureState, b: PureState, atol: float = ATOL) -> bool:
    """Diagnostic comparator that quotients out a global phase."""
    if a.d != b.d or a.n_wires != b.n_wires:
        return False
    k = int(np.argmax(np.abs(a.amplitudes)))
    if abs(b.amplitudes[k]) <= atol:
        return False
    phase = a.amplitudes[k] / b.amplitudes[k]
    phase /= abs(phase)
    return bool(np.max(np.abs(a.amplitudes - phase * b.amplitudes)) <= atol)


def state_to_json(s: PureState) -> list[list[float]]:
    """Debug dump: [re, im] pairs in flat-index order."""
    return [[float(a.real), float(a.imag)] for a in s.amplitudes]
