"""Batch experiment runner.

Runs seeded protocol sessions (optionally sweeping the qudit dimension),
aggregates error-rate / information / detection statistics, and emits a
machine-readable JSON or CSV report.  Reports are bit-identical for
identical spec + seed: every session draws from its own counter-based
stream derived from (seed, d, session index), so serial and parallel
execution agree.  Set QUDITQKD_WORKERS=N to run sessions across N
processes.

Exit codes: 0 success, 2 configuration error, 3 output I/O error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .analysis import (
    detection_probability,
    empirical_mutual_information,
    is_flat,
    key_ambiguity,
    qber,
)
from .core import fourier_gate, make_rng, state_to_json
from .protocol import (
    EVE_ABSENT,
    EVE_SHIFT_INTERCEPT,
    PROTECTION_CUSTOM,
    PROTECTION_NONE,
    ConfigError,
    ProtocolConfig,
    RoundTranscript,
    compare_sample,
    eve_record,
    random_key,
    run_protocol,
)

WORKERS_ENV = "QUDITQKD_WORKERS"

CSV_HEADER = (
    "d,qber_round1,qber_from_round2,theoretical_qber,eve_info_bits,"
    "key_ambiguity,detection_prob_observed,detection_prob_theoretical,"
    "n_sessions,seed"
)

# rng stream tags within one session
_STREAM_MEASURE = 0
_STREAM_KEY = 1
_STREAM_COMPARE = 2


@dataclass(frozen=True)
class ExperimentSpec:
    mode: str  # "single" | "sweep"
    d_values: tuple
    n_rounds: int
    n_sessions: int
    eve: bool
    protection: str
    custom_unitary: Optional[np.ndarray]
    unitary_file: Optional[str]
    sample_m: int
    seed: int
    output_format: str  # "json" | "csv"
    output_path: Optional[str]
    snapshots: bool


@dataclass(frozen=True)
class DimensionRecord:
    d: int
    qber_round1: float
    qber_from_round2: float
    theoretical_qber: float
    eve_info_bits: float
    key_ambiguity: Optional[int]
    detection_prob_observed: float
    detection_prob_theoretical: float
    n_sessions: int
    seed: int
    qber_3sigma: float


@dataclass(frozen=True)
class ExperimentReport:
    records: list
    protection_flat: Optional[bool]
    snapshots: Optional[dict]


def load_unitary_file(path: str, d: int) -> np.ndarray:
    """Read a d x d unitary from JSON ([re, im] pairs, row-major).

    Unitarity is checked at 1e-8 and the matrix is then polar-projected to
    the nearest exact unitary, so downstream 1e-10 gate checks never trip
    over file rounding.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"unitary-file: cannot read {path}: {exc}") from exc
    try:
        mat = np.array(
            [[complex(cell[0], cell[1]) for cell in row] for row in raw], dtype=complex
        )
    except (TypeError, IndexError, ValueError) as exc:
        raise ConfigError(
            f"unitary-file: {path} is not a matrix of [re, im] pairs"
        ) from exc
    if mat.ndim != 2 or mat.shape != (d, d):
        raise ConfigError(
            f"unitary-file: matrix shape {mat.shape} does not match d={d}"
        )
    if np.max(np.abs(mat.conj().T @ mat - np.eye(d))) > 1e-8:
        raise ConfigError(f"unitary-file: matrix in {path} is not unitary (tol 1e-8)")
    w, _, vh = np.linalg.svd(mat)
    return w @ vh


def parse_spec(argv: Optional[Sequence[str]] = None) -> ExperimentSpec:
    parser = argparse.ArgumentParser(
        prog="quditqkd",
        description="Run seeded qudit key-distribution experiments and report "
        "error-rate, information and detection statistics.",
    )
    parser.add_argument("--d", type=int, default=None, help="qudit dimension (default 3)")
    parser.add_argument(
        "--sweep", type=str, default=None, help="comma-separated dimensions, e.g. 2,3,5,8"
    )
    parser.add_argument("--rounds", type=int, default=100, help="key dits per session")
    parser.add_argument("--sessions", type=int, default=100, help="sessions per dimension")
    parser.add_argument("--eve", action="store_true", help="enable the shift-intercept attack")
    parser.add_argument(
        "--protect",
        choices=[PROTECTION_NONE, "hadamard", PROTECTION_CUSTOM],
        default=PROTECTION_NONE,
        help="protection gate applied before every send",
    )
    parser.add_argument(
        "--unitary-file", type=str, default=None, help="JSON matrix for --protect custom"
    )
    parser.add_argument(
        "--sample-m", type=int, default=1, help="rounds sacrificed for public comparison"
    )
    parser.add_argument("--seed", type=int, default=0, help="64-bit master seed")
    parser.add_argument("--output", choices=["json", "csv"], default="json")
    parser.add_argument("--out", type=str, default=None, help="output path (default stdout)")
    parser.add_argument(
        "--snapshots", action="store_true", help="dump labeled per-round states (json only)"
    )
    args = parser.parse_args(argv)

    if args.d is not None and args.sweep is not None:
        raise ConfigError("d: give either --d or --sweep, not both")
    if args.sweep is not None:
        try:
            d_values = tuple(int(x) for x in args.sweep.split(","))
        except ValueError as exc:
            raise ConfigError(f"sweep: expected comma-separated integers, got {args.sweep!r}") from exc
        mode = "sweep"
    else:
        d_values = (args.d if args.d is not None else 3,)
        mode = "single"
    if not d_values:
        raise ConfigError("sweep: need at least one dimension")
    for d in d_values:
        if d < 2:
            raise ConfigError(f"d: dimension must be >= 2, got {d}")
    if args.rounds < 1:
        raise ConfigError(f"rounds: must be >= 1, got {args.rounds}")
    if args.sessions < 1:
        raise ConfigError(f"sessions: must be >= 1, got {args.sessions}")
    if args.sample_m < 1:
        raise ConfigError(f"sample-m: must be >= 1, got {args.sample_m}")
    if not 0 <= args.seed < 2**64:
        raise ConfigError(f"seed: must fit in 64 bits, got {args.seed}")
    if args.snapshots and args.output != "json":
        raise ConfigError("snapshots: labeled state dumps require --output json")

    custom = None
    if args.protect == PROTECTION_CUSTOM:
        if args.unitary_file is None:
            raise ConfigError("unitary-file: required with --protect custom")
        if len(set(d_values)) != 1:
            raise ConfigError("unitary-file: a custom matrix fixes one dimension; cannot sweep")
        custom = load_unitary_file(args.unitary_file, d_values[0])
    elif args.unitary_file is not None:
        raise ConfigError("unitary-file: only meaningful with --protect custom")

    return ExperimentSpec(
        mode=mode,
        d_values=d_values,
        n_rounds=args.rounds,
        n_sessions=args.sessions,
        eve=args.eve,
        protection=args.protect,
        custom_unitary=custom,
        unitary_file=args.unitary_file,
        sample_m=args.sample_m,
        seed=args.seed,
        output_format=args.output,
        output_path=args.out,
        snapshots=args.snapshots,
    )


def _run_one_session(task: tuple) -> dict:
    """One independent session; module-level so it pickles for worker pools."""
    (d, n_rounds, protection, custom, eve_on, seed, index, m_eff, want_snapshots) = task
    config = ProtocolConfig(
        d=d,
        n_rounds=n_rounds,
        protection=protection,
        custom_unitary=custom,
        eve=EVE_SHIFT_INTERCEPT if eve_on else EVE_ABSENT,
        seed=seed,
        snapshot_states=want_snapshots,
    )
    key = random_key(d, n_rounds, make_rng(seed, d, index, _STREAM_KEY))
    transcripts = run_protocol(config, key, make_rng(seed, d, index, _STREAM_MEASURE))
    detected = None
    if eve_on and m_eff >= 1:
        report = compare_sample(
            transcripts[1:], m_eff, make_rng(seed, d, index, _STREAM_COMPARE)
        )
        detected = report.detected
    result = {
        "key": key,
        "bob": [t.bob_measured for t in transcripts],
        "eve": [t.eve_measured for t in transcripts],
        "detected": detected,
    }
    if want_snapshots:
        result["snapshots"] = [
            {
                "round": t.round,
                "states": {label: state_to_json(s) for label, s in (t.snapshots or ())},
            }
            for t in transcripts
        ]
    return result


def _worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"{WORKERS_ENV}: expected an integer, got {raw!r}") from exc
    if n < 1:
        raise ConfigError(f"{WORKERS_ENV}: must be >= 1, got {n}")
    return n


def execute(spec: ExperimentSpec) -> ExperimentReport:
    """Run every session of the experiment and aggregate per-dimension records.

    Sub-seeds are derived from (master seed, d, session index), never from
    scheduling order, so concurrent and sequential runs aggregate the same
    numbers in the same order.
    """
    workers = _worker_count()
    m_eff = min(spec.sample_m, spec.n_rounds - 1)
    records = []
    snapshots: dict = {}
    for d in spec.d_values:
        tasks = [
            (
                d,
                spec.n_rounds,
                spec.protection,
                spec.custom_unitary,
                spec.eve,
                spec.seed,
                index,
                m_eff,
                spec.snapshots and index == 0,
            )
            for index in range(spec.n_sessions)
        ]
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(_run_one_session, tasks, chunksize=32))
        else:
            results = [_run_one_session(t) for t in tasks]

        pooled = []
        pairs = []
        for res in results:
            for r in range(spec.n_rounds):
                pooled.append(
                    RoundTranscript(
                        round=r + 1,
                        q_sent=res["key"][r],
                        bob_measured=res["bob"][r],
                        eve_measured=res["eve"][r],
                    )
                )
                if res["eve"][r] is not None:
                    pairs.append((res["key"][r], res["eve"][r]))
        qrep = qber(pooled, d)
        info_bits = empirical_mutual_information(pairs, d) if pairs else 0.0

        ambiguity = None
        if spec.eve and spec.protection == PROTECTION_NONE:
            first = [t for t in pooled if t.round >= 1][: spec.n_rounds]
            ambiguity = key_ambiguity(eve_record(first), d, spec.n_rounds)

        decisions = [res["detected"] for res in results if res["detected"] is not None]
        observed = sum(1 for x in decisions if x) / len(decisions) if decisions else 0.0
        if spec.eve and spec.protection != PROTECTION_NONE and m_eff >= 1:
            theoretical_detect = detection_probability(d, m_eff)
        else:
            theoretical_detect = 0.0

        late = spec.n_sessions * (spec.n_rounds - 1)
        p_th = qrep.theoretical
        sigma3 = 3.0 * float(np.sqrt(p_th * (1 - p_th) / late)) if late else 0.0

        records.append(
            DimensionRecord(
                d=d,
                qber_round1=qrep.per_round_error[0],
                qber_from_round2=qrep.aggregate_from_round2,
                theoretical_qber=p_th,
                eve_info_bits=info_bits,
                key_ambiguity=ambiguity,
                detection_prob_observed=observed,
                detection_prob_theoretical=theoretical_detect,
                n_sessions=spec.n_sessions,
                seed=spec.seed,
                qber_3sigma=sigma3,
            )
        )
        if spec.snapshots:
            snapshots[str(d)] = results[0]["snapshots"]

    if spec.protection == PROTECTION_NONE:
        flat = None
    elif spec.protection == PROTECTION_CUSTOM:
        flat = is_flat(spec.custom_unitary, tol=1e-8)
    else:
        flat = is_flat(fourier_gate(spec.d_values[0]).matrix)
    return ExperimentReport(
        records=records,
        protection_flat=flat,
        snapshots=snapshots if spec.snapshots else None,
    )


def _spec_echo(spec: ExperimentSpec) -> dict:
    return {
        "mode": spec.mode,
        "d_values": list(spec.d_values),
        "n_rounds": spec.n_rounds,
        "n_sessions": spec.n_sessions,
        "eve": spec.eve,
        "protection": spec.protection,
        "unitary_file": spec.unitary_file,
        "sample_m": spec.sample_m,
        "seed": spec.seed,
        "snapshots": spec.snapshots,
    }


def render(report: ExperimentReport, spec: ExperimentSpec) -> str:
    """Serialize the report; the same report always yields the same bytes."""
    if spec.output_format == "json":
        obj = {
            "format": "quditqkd-report-v1",
            "spec": _spec_echo(spec),
            "protection_flat": report.protection_flat,
            "records": [asdict(r) for r in report.records],
        }
        if report.snapshots is not None:
            obj["snapshots"] = report.snapshots
        return json.dumps(obj, indent=2, sort_keys=True) + "\n"
    lines = [CSV_HEADER]
    for r in report.records:
        cells = [
            str(r.d),
            repr(r.qber_round1),
            repr(r.qber_from_round2),
            repr(r.theoretical_qber),
            repr(r.eve_info_bits),
            "" if r.key_ambiguity is None else str(r.key_ambiguity),
            repr(r.detection_prob_observed),
            repr(r.detection_prob_theoretical),
            str(r.n_sessions),
            str(r.seed),
        ]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def emit(report: ExperimentReport, spec: ExperimentSpec) -> None:
    """Write the rendered report to the configured path or stdout."""
    text = render(report, spec)
    if spec.output_path is None:
        sys.stdout.write(text)
    else:
        with open(spec.output_path, "w", encoding="utf-8") as fh:
            fh.write(text)


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        spec = parse_spec(argv)
        report = execute(spec)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        emit(report, spec)
    except OSError as exc:
        print(f"error: cannot write report: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
