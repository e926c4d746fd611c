"""Weak-instrument-robust inference for linear instrumental-variables models."""

from .clr_cdf import GammaCVF, GammaCVFPlusChi2
from .dataset import IVDataset, ProjectionPair, annih, load_csv, proj, residualize
from .errors import (
    ConfigError,
    ConvexityError,
    DomainError,
    NumericalError,
    OptimizationError,
    ParseError,
    QuadratureError,
    RankError,
    SchemaError,
    UnsupportedError,
    WeakIVError,
)
from .ivtests import (
    TEST_KINDS,
    TestResult,
    ar_test,
    clr_test,
    j_liml,
    j_statistic,
    lm_test,
    lm_test_plugin,
    lr_test,
    rank_test,
    run_test,
    test_with_exogenous_of_interest,
    wald_test,
)
from .kclass import KClassFit, fuller, kappa_liml, kclass, liml, ols, tsls
from .montecarlo import DGPSpec, empirical_size, power_curve, size_table
from .optimize import minimize_multistart
from .quadric import (
    ConfidenceSet1D,
    Quadric,
    ar_wald_level_map,
    boundedness_condition,
    classify,
    grid_invert,
    invert_closed_form,
    project_to_interval,
)

__all__ = [name for name in dir() if not name.startswith("_")]
