"""Select, generate and audit synthetic categorical data against a declared set of safe marginals."""

__version__ = "0.1.0"

from sdgaudit.errors import SdgError
from sdgaudit.dataset import (
    Attribute,
    Dataset,
    IngestConfig,
    Schema,
    ThetaVector,
    ingest_csv,
    realize_dataset,
    sample_iid,
    theta_of_dataset,
    write_csv,
)
from sdgaudit.statspace import (
    MarginalSpec,
    SafeSpace,
    SafeStatistics,
    Workload,
    build_safespace,
    marginal_of_theta,
    perp_component,
    phi_of_theta,
    sample_perp_subspace,
    workload_matrix,
)
from sdgaudit.generators import (
    GeneratorCard,
    GeneratorConfig,
    TrainedModel,
    fit_ipf,
    generate,
    make_card,
    train,
)
from sdgaudit.extremal import (
    Direction,
    ExtremalPair,
    direction_from_coords,
    extremal_pair,
    random_direction,
    starting_theta,
)
from sdgaudit.auditor import (
    AuditConfig,
    AuditReport,
    audit,
    critical_direction,
    estimate_coefficients,
    g_stat,
    two_sample_t_test,
)
from sdgaudit.utility import DerivedStatSpec, UtilityReport, gap_rmse, marginal_rmse, utility_report
