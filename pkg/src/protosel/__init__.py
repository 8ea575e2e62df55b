"""Selective tests and estimation for grouped prototype models."""

from .datagen import generate_design, generate_response
from .linear_core import GroupedDesign, HatOperator, make_hat
from .multivariate import run_multivariate_test, run_multivariate_tests
from .sampler import HitAndRunConfig
from .univariate import TestResult, run_univariate_test, run_univariate_tests

__version__ = "0.1.0"

__all__ = ["GroupedDesign", "HatOperator", "HitAndRunConfig", "TestResult", "generate_design",
           "generate_response", "make_hat", "run_multivariate_test", "run_multivariate_tests",
           "run_univariate_test", "run_univariate_tests"]
