"""Signal Credibility Index for prediction-market price shocks."""

__version__ = "0.1.0"

from .metrics import (  # noqa: E402
    BALANCED,
    BREADTH_WEIGHTED,
    EPS_NO_TRADE,
    PERSISTENCE_WEIGHTED,
    AlarmSummary,
    InsufficientDataError,
    MetricDomainError,
    NoTradeError,
    SciComponents,
    Weights,
    alarm_summary,
    compute_sci_for_shock,
    hhi_flow,
    inverse_logit,
    logit,
    persistence_ratio,
    rolling_sci,
    sci,
    two_sidedness,
    variance_ratio,
    weighted_sci,
)
from .dgp import (  # noqa: E402
    ADVERSARIAL,
    BASELINE,
    BUILTIN_ORDER,
    DEFAULT_SEED,
    Dataset,
    DgpSpec,
    SimulatedPath,
    builtin_specs,
    generate_dataset,
    sample_path,
    sweep_specs,
)
from .evaluation import (  # noqa: E402
    ComponentTable,
    RocResult,
    ScoredSet,
    auc,
    bootstrap_ci,
    evaluate,
    youden_threshold,
)
from .logistic import LogisticModel, fit_logistic, fit_logistic_cv  # noqa: E402
from .clustering import (  # noqa: E402
    ClusterConfig,
    ClusterMap,
    FundingEdge,
    WalletGraph,
    build_cluster_map,
    hhi_robustness_report,
)
from .ingest import ShockSpec, TradeRecord, parse_trades, sci_from_trades  # noqa: E402
