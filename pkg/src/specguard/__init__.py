"""specguard: certified pseudospectrum brackets for data-driven spectral analysis.

Estimates how far a complex number lies from the spectrum of an unknown
transfer operator using only snapshot data, with two-sided certified error
brackets, eigenvalue hypothesis tests, and spectral-gap clustering.
"""

from .charmatrix import (
    CharContext,
    EigenMode,
    GramPair,
    char_context,
    edmd_matrix,
    eigensystem,
    gram_matrices,
    snapshot_factors,
)
from .errors import SpecguardError
from .generators import (
    Lorenz63Spec,
    VarSpec,
    expanding_map_f,
    gen_expanding_map,
    gen_lorenz63,
    gen_var,
    var_benchmark_7d,
)
from .ingest import (
    DictionarySpec,
    ObservablePair,
    SnapshotSeries,
    delay_embed,
    evaluate_dictionary,
    load_snapshots,
    write_snapshots,
)
from .oracle import (
    QuadratureMoments,
    VarMoments,
    quadrature_moments,
    run_oracle_checks,
    s_matrix_bruteforce,
    var_p_exact,
    var_p_power,
    var_v_exact,
)
from .pseudospec import (
    GridSpec,
    PEstimate,
    PowerIterSettings,
    SweepResult,
    bracket,
    p_hat,
    p_sym_fixed_q,
    p_sym_lower,
    power_iterate,
    s_apply,
    s_star_apply,
    sweep,
)
from .stats import (
    ClusterReport,
    ConfidenceRegion,
    EigTestResult,
    SpectralReport,
    chi2_cdf,
    cluster_eigenvalues,
    confidence_region,
    counting_exponent,
    eig_test,
    p_value_from_mphat,
    r_estimate,
    sample_size_advice,
    spectrum_test,
)
from .variance import (
    KernelSpec,
    VarianceApplication,
    estimate_tau,
    kappa_w,
    metastability_kernel,
    variance_apply,
    variance_apply_naive,
    variance_exact_iid,
    window_length,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # errors
    "SpecguardError",
    # ingest
    "DictionarySpec",
    "ObservablePair",
    "SnapshotSeries",
    "delay_embed",
    "evaluate_dictionary",
    "load_snapshots",
    "write_snapshots",
    # generators
    "VarSpec",
    "Lorenz63Spec",
    "gen_var",
    "gen_expanding_map",
    "gen_lorenz63",
    "expanding_map_f",
    "var_benchmark_7d",
    # charmatrix
    "GramPair",
    "CharContext",
    "EigenMode",
    "gram_matrices",
    "edmd_matrix",
    "char_context",
    "eigensystem",
    "snapshot_factors",
    # variance
    "KernelSpec",
    "VarianceApplication",
    "kappa_w",
    "metastability_kernel",
    "window_length",
    "estimate_tau",
    "variance_apply",
    "variance_apply_naive",
    "variance_exact_iid",
    # pseudospec
    "PowerIterSettings",
    "PEstimate",
    "GridSpec",
    "SweepResult",
    "bracket",
    "power_iterate",
    "s_apply",
    "s_star_apply",
    "p_hat",
    "p_sym_fixed_q",
    "p_sym_lower",
    "sweep",
    # stats
    "chi2_cdf",
    "p_value_from_mphat",
    "EigTestResult",
    "eig_test",
    "SpectralReport",
    "spectrum_test",
    "ConfidenceRegion",
    "confidence_region",
    "ClusterReport",
    "cluster_eigenvalues",
    "r_estimate",
    "counting_exponent",
    "sample_size_advice",
    # oracle
    "var_p_exact",
    "var_v_exact",
    "VarMoments",
    "var_p_power",
    "QuadratureMoments",
    "quadrature_moments",
    "s_matrix_bruteforce",
    "run_oracle_checks",
]
