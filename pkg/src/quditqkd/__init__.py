"""Simulator and analysis toolkit for entanglement-based key distribution
over d-level quantum systems.

Layers:

- :mod:`quditqkd.core` — dense state vectors, the qudit gate set
  (generalized Pauli / Fourier / controlled shifts), measurement, partial
  trace.
- :mod:`quditqkd.protocol` — the round-by-round session machine for Alice,
  Bob and the shift-intercept eavesdropper, with optional Fourier or custom
  protection gates.
- :mod:`quditqkd.analysis` — exact closed-form reduced states, information
  gain, error-rate / ambiguity / detection statistics.
- :mod:`quditqkd.cli` — seeded batch experiment runner with JSON/CSV
  reports (installed as the ``quditqkd`` command).
"""

from .core import (
    ATOL,
    DensityMatrix,
    Gate,
    MeasurementOutcome,
    PureState,
    apply_gate,
    basis_state,
    bell_state,
    bell_via_circuit,
    controlled_gate,
    drop_wire,
    fourier_gate,
    generalized_pauli,
    identity_gate,
    make_rng,
    measure,
    partial_trace,
    random_unitary,
    reduced_density,
    shift_gate,
    state_to_json,
    states_close,
    states_close_up_to_phase,
    tensor,
    to_density,
)
from .protocol import (
    CompareReport,
    ConfigError,
    EveRecord,
    ProtocolConfig,
    RoundTranscript,
    Session,
    UsageError,
    alice_send,
    bob_receive,
    compare_sample,
    eve_intervene,
    eve_record,
    init_session,
    random_key,
    run_protocol,
)
from .analysis import (
    ConditionalDistribution,
    InfoGainReport,
    QberReport,
    conditional_from_pairs,
    detection_probability,
    empirical_mutual_information,
    eve_outcome_distribution,
    flat_unitary,
    info_gain_analytic,
    is_flat,
    key_ambiguity,
    protected_conditional,
    qber,
    rho_bob_key_closed_form,
    rho_key_eve_closed_form,
)

__version__ = "0.1.0"
