"""circuitpad: a desk-scale lab for Tor circuit fingerprinting defenses.

Synthesizes cell-level circuit traces, applies padding defenses (handshake
shaping, a delaying strawman, and preemptive circuit padding), attacks them
with protocol-aware and learned classifiers, and checks the analytic
accuracy/leakage laws against Monte-Carlo experiments.
"""

__version__ = "0.1.0"

from .cells import (
    Cell,
    CellDirection,
    CircuitPurpose,
    CircuitTrace,
    HandshakeKind,
    RelayCommand,
    RequestKind,
    circuit_handshake,
    dummy_request,
    inject_cells,
)
from .machines import (
    DelayDistribution,
    MachineEvent,
    MachineSpec,
    MachineState,
    MachineStateSpec,
    run_machine,
    step,
)
from .traffic import (
    ConnectionType,
    PackingMode,
    SessionTrace,
    SimConfig,
    SiteModel,
    UserModel,
    app_traffic,
    make_sites,
    sample_think_time,
    simulate_dataset,
    simulate_session,
)
from .defenses import (
    PaddedSession,
    PaddingDefense,
    StrategyConfig,
    StrategyKind,
    apply_pcp,
    apply_prop999,
    apply_strategy,
    apply_strawman,
)
from .adversary import (
    AdversaryView,
    BayesTripletClassifier,
    ClassifierReport,
    FeatureVector,
    NO_MATCH,
    TraceFeaturizer,
    bayes_predict,
    count_triplets,
    evaluate,
    extract_features,
    to_adversary_view,
    train_classifier,
)
from .analytics import (
    PcpParams,
    accuracy_oracle,
    dummy_count_pmf,
    fit_geometric,
    leakage,
    optimal_accuracy,
)
from .config import ConfigError, HarnessConfig, load_config, validate_config
