"""Closed-form density-matrix oracles, information gain, and Monte-Carlo estimators.

The closed forms give the exact reduced states seen by the eavesdropper and
by Bob in the second round of a protected session, for an arbitrary
protection unitary U.  They exist so the simulator can be cross-checked
entrywise: any drift between circuit evolution and the algebra shows up as
a tolerance failure, not a statistical fluke.  The key structural fact is
that only the moduli |U_ij|^2 enter; a "flat" U (all |U_ij|^2 = 1/d) makes
the eavesdropper's view maximally mixed and Bob's received dit uniform,
exactly as the Fourier gate does.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import DensityMatrix, fourier_gate, partial_trace
from .protocol import EveRecord, RoundTranscript


def _check_unitary(u: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    u = np.asarray(u, dtype=complex)
    if u.ndim != 2 or u.shape[0] != u.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {u.shape}")
    d = u.shape[0]
    if np.max(np.abs(u.conj().T @ u - np.eye(d))) > tol:
        raise ValueError("matrix is not unitary within tolerance")
    return u


@dataclass(frozen=True, eq=False)
class ConditionalDistribution:
    """Row i = distribution of the eavesdropper's value r given Alice sent i."""

    d: int
    p_r_given_i: np.ndarray

    def __post_init__(self):
        p = np.array(self.p_r_given_i, dtype=float)
        if p.shape != (self.d, self.d):
            raise ValueError(f"expected a {self.d}x{self.d} matrix, got {p.shape}")
        if np.min(p) < 0:
            raise ValueError("probabilities must be nonnegative")
        if np.max(np.abs(p.sum(axis=1) - 1.0)) > 1e-10:
            raise ValueError("each row must sum to 1")
        p.flags.writeable = False
        object.__setattr__(self, "p_r_given_i", p)


@dataclass(frozen=True)
class InfoGainReport:
    h_apriori: float
    h_aposteriori: float
    gain: float


@dataclass(frozen=True)
class QberReport:
    per_round_error: tuple
    aggregate_from_round2: float
    theoretical: float


# ---------------------------------------------------------------------------
# Closed-form reduced states (round 2 of a protected session)
# ---------------------------------------------------------------------------


def rho_key_eve_closed_form(d: int, q1: int, q2: int, u: np.ndarray) -> DensityMatrix:
    """Joint state of (key, eve) wires while the second dit is in flight:

        (1/d) sum_{i,j} |u_ij|^2 |i+q2, j+q1><i+q2, j+q1|

    q1 is the first key dit (entangled into the eavesdropper's wire in
    round one), q2 the dit currently being sent, u the protection unitary.
    Flat u collapses this to identity/d^2: nothing she can do to the pair
    extracts anything.
    """
    u = _check_unitary(u)
    if u.shape[0] != d:
        raise ValueError(f"unitary side {u.shape[0]} does not match d={d}")
    w = np.abs(u) ** 2
    diag = np.zeros(d * d)
    for i in range(d):
        for j in range(d):
            diag[((i + q2) % d) * d + (j + q1) % d] += w[i, j] / d
    return DensityMatrix(d, 2, np.diag(diag.astype(complex)))


def rho_bob_key_closed_form(
    d: int, q1: int, q2: int, q_eve: int, u: np.ndarray
) -> DensityMatrix:
    """Key-wire state Bob measures in round two, conditioned on the
    eavesdropper having read q_eve:

        normalize( sum_{i,k} |u_{i,j(i)}|^2 |u_{k,j(i)}|^2 |i+q2-k><i+q2-k| ),
        j(i) = i + q2 - q1 + q_eve  (all arithmetic mod d)

    The displayed sum has trace d * P(q_eve); it is normalized here so the
    result is the proper conditional state.  Flat u gives identity/d: Bob's
    chance of the correct dit drops to 1/d.
    """
    u = _check_unitary(u)
    if u.shape[0] != d:
        raise ValueError(f"unitary side {u.shape[0]} does not match d={d}")
    if not 0 <= q_eve < d:
        raise ValueError(f"q_eve {q_eve} outside [0, {d})")
    w = np.abs(u) ** 2
    diag = np.zeros(d)
    for i in range(d):
        j = (i + q2 - q1 + q_eve) % d
        for k in range(d):
            diag[(i + q2 - k) % d] += w[i, j] * w[k, j]
    total = diag.sum()
    if total < 1e-12:
        raise ValueError(
            f"eavesdropper outcome q_eve={q_eve} has zero probability for this unitary"
        )
    return DensityMatrix(d, 1, np.diag((diag / total).astype(complex)))


def eve_outcome_distribution(d: int, q1: int, q2: int, u: np.ndarray) -> np.ndarray:
    """Exact distribution of the eavesdropper's round-two measured value:
    P(q) = (1/d) sum_i |u_{i, i+q2-q1+q}|^2."""
    u = _check_unitary(u)
    if u.shape[0] != d:
        raise ValueError(f"unitary side {u.shape[0]} does not match d={d}")
    w = np.abs(u) ** 2
    p = np.zeros(d)
    for q in range(d):
        for i in range(d):
            p[q] += w[i, (i + q2 - q1 + q) % d] / d
    return p


def is_flat(u: np.ndarray, tol: float = 1e-10) -> bool:
    """True iff every entry satisfies | |u_ij|^2 - 1/d | <= tol."""
    u = np.asarray(u, dtype=complex)
    if u.ndim != 2 or u.shape[0] != u.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {u.shape}")
    d = u.shape[0]
    return bool(np.max(np.abs(np.abs(u) ** 2 - 1.0 / d)) <= tol)


def flat_unitary(d: int, rng: np.random.Generator) -> np.ndarray:
    """Random member of the phase-dressed Fourier family D1 H D2.

    Unit-modulus diagonals preserve entry moduli, so the result is unitary
    and flat by construction; it is as protective as the Fourier gate
    itself.
    """
    h = fourier_gate(d).matrix
    d1 = np.exp(2j * np.pi * rng.random(d))
    d2 = np.exp(2j * np.pi * rng.random(d))
    return (d1[:, None] * h) * d2[None, :]


# ---------------------------------------------------------------------------
# Information gain
# ---------------------------------------------------------------------------


def _entropy_bits(p: np.ndarray) -> float:
    p = p[p > 0]
    return float(-(p * np.log2(p)).sum())


def info_gain_analytic(cond: ConditionalDistribution) -> InfoGainReport:
    """Mean information gain per dit for a uniform prior over sent values.

    Bayes inversion of p(r|i) gives the posterior p(i|r); the gain is the
    prior entropy log2(d) minus the expected posterior entropy.  A uniform
    conditional (the protected protocol) yields exactly zero.
    """
    d = cond.d
    joint = cond.p_r_given_i / d  # p(i, r), rows indexed by i
    p_r = joint.sum(axis=0)
    h_post = 0.0
    for r in range(d):
        if p_r[r] <= 0:
            continue
        h_post += p_r[r] * _entropy_bits(joint[:, r] / p_r[r])
    h_prior = float(np.log2(d))
    gain = h_prior - h_post
    if gain < -1e-10:
        raise ValueError(f"posterior entropy exceeds the uniform prior: gain={gain!r}")
    return InfoGainReport(h_apriori=h_prior, h_aposteriori=h_post, gain=gain)


def protected_conditional(d: int) -> ConditionalDistribution:
    """Eavesdropper's exact per-sent-dit outcome distribution under Fourier
    protection, read off the closed-form joint state's marginal."""
    h = fourier_gate(d).matrix
    rows = []
    for i in range(d):
        rho = rho_key_eve_closed_form(d, q1=0, q2=i, u=h)
        marginal = partial_trace(rho, keep=(1,))
        rows.append(np.real(np.diag(marginal.entries)))
    return ConditionalDistribution(d, np.array(rows))


def conditional_from_pairs(
    pairs: Sequence[tuple[int, int]], d: int
) -> ConditionalDistribution:
    """Empirical p(r|i) from (sent dit, eavesdropper value) samples."""
    counts = np.zeros((d, d))
    for i, r in pairs:
        counts[int(i), int(r)] += 1
    row_totals = counts.sum(axis=1)
    if np.any(row_totals == 0):
        missing = int(np.argmin(row_totals))
        raise ValueError(f"sent value {missing} never occurs in the sample")
    return ConditionalDistribution(d, counts / row_totals[:, None])


def empirical_mutual_information(pairs: Sequence[tuple[int, int]], d: int) -> float:
    """Plug-in estimate of I(X;Y) in bits over the empirical joint.

    No bias correction; the estimator overshoots by O(d^2 / N), which the
    calling tests budget for explicitly.
    """
    if len(pairs) == 0:
        raise ValueError("need at least one sample pair")
    counts = np.zeros((d, d))
    for x, y in pairs:
        if not (0 <= int(x) < d and 0 <= int(y) < d):
            raise ValueError(f"pair ({x}, {y}) outside [0, {d})^2")
        counts[int(x), int(y)] += 1
    joint = counts / counts.sum()
    px = joint.sum(axis=1)
    py = joint.sum(axis=0)
    mi = 0.0
    for x in range(d):
        for y in range(d):
            if joint[x, y] > 0:
                mi += joint[x, y] * np.log2(joint[x, y] / (px[x] * py[y]))
    return float(mi)


# ---------------------------------------------------------------------------
# Error rate, ambiguity, detection
# ---------------------------------------------------------------------------


def qber(transcripts: Sequence[RoundTranscript], d: int) -> QberReport:
    """Per-round and aggregate error rates of Bob's dits against the sent key.

    Accepts transcripts pooled from any number of sessions; entries are
    grouped by round number and averaged, so a single session yields 0/1
    indicators.  The aggregate covers rounds >= 2 (0.0 when there are
    none); the reference value is (d-1)/d, the rate a shift-intercept
    attack forces on a protected channel.
    """
    if len(transcripts) == 0:
        raise ValueError("need at least one transcript")
    max_round = max(t.round for t in transcripts)
    errors = np.zeros(max_round)
    counts = np.zeros(max_round)
    late_errors = 0
    late_count = 0
    for t in transcripts:
        miss = 1.0 if t.bob_measured != t.q_sent else 0.0
        errors[t.round - 1] += miss
        counts[t.round - 1] += 1
        if t.round >= 2:
            late_errors += miss
            late_count += 1
    with np.errstate(invalid="ignore"):
        per_round = np.where(counts > 0, errors / np.maximum(counts, 1), 0.0)
    aggregate = late_errors / late_count if late_count else 0.0
    return QberReport(
        per_round_error=tuple(float(x) for x in per_round),
        aggregate_from_round2=float(aggregate),
        theoretical=(d - 1) / d,
    )


def key_ambiguity(record: EveRecord, d: int, key_length: int) -> int:
    """Number of full keys consistent with an unprotected-attack record.

    Brute force: for each hypothesis of the first dit, reconstruct the key
    that would have produced the record and keep it only if replaying the
    attack rule reproduces the record exactly.  The shift attack reveals
    differences only, so all d hypotheses survive.
    """
    values = record.values
    if len(values) != key_length - 1:
        raise ValueError(
            f"record length {len(values)} does not match key length {key_length} - 1"
        )
    consistent = 0
    for q1 in range(d):
        candidate = [q1] + [(q1 - v) % d for v in values]
        replay = tuple((candidate[0] - candidate[i]) % d for i in range(1, key_length))
        if replay == values:
            consistent += 1
    return consistent


def detection_probability(d: int, m: int) -> float:
    """Chance that comparing m post-first-round dits exposes the attack:
    1 - (1/d)^m, from the per-dit agreement probability 1/d."""
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    if d < 2:
        raise ValueError(f"d must be >= 2, got {d}")
    return 1.0 - (1.0 / d) ** m
