"""Tests for the finite-difference suites."""

from __future__ import annotations

import numpy as np
import pytest

from relational_iqa.errors import NumericalError, ValidationError
from relational_iqa.objectives import finite_diff_check
from relational_iqa.verification import (
    MODEL_TOLERANCE,
    CheckResult,
    GradientCheckError,
    check_objectives,
    check_predictor,
    check_scorer,
    require_passing,
    run_checks,
)


class TestSuites:
    """Every analytic gradient agrees with central differences."""

    def test_objectives(self) -> None:
        results = check_objectives(seed=0)
        assert {r.name for r in results} >= {"weighted_mse", "hinge_rank", "infonce", "consecutive_hinge"}
        assert all(r.passed for r in results), results

    def test_predictor(self) -> None:
        results = check_predictor(seed=1)
        assert all(r.passed for r in results), results

    def test_scorer(self) -> None:
        results = check_scorer(seed=2)
        assert len(results) == 3
        assert all(r.passed for r in results), results

    def test_run_single_module(self) -> None:
        results = run_checks("predictor")
        assert [r.name for r in results] == ["predictor_backprop"]

    def test_unknown_module(self) -> None:
        with pytest.raises(ValidationError):
            run_checks("nope")

    @pytest.mark.parametrize("seed", range(20))
    def test_every_suite_passes_across_seeds(self, seed: int) -> None:
        """Kernels hold 1e-5 and both model backprops hold 1e-4 on twenty random draws."""
        results = run_checks(seed=seed)
        assert len(results) == 10
        failed = [(r.name, r.max_error) for r in results if not r.passed]
        assert not failed, failed


class TestKinkHandling:
    """Coordinates that straddle a piece boundary are not compared."""

    def test_straddling_coordinate_skipped(self) -> None:
        def relu_sum(x: np.ndarray) -> tuple[float, np.ndarray]:
            return float(np.maximum(x, 0.0).sum()), (x > 0).astype(float)

        x = np.array([1e-6, 0.5])
        assert finite_diff_check(relu_sum, x) > 0.4
        assert finite_diff_check(relu_sum, x, piece=lambda v: (v > 0).tobytes()) < 1e-7


class TestRequirePassing:
    """Failure reporting."""

    def test_failure_raises_numerical_error(self) -> None:
        results = [CheckResult("ok", 0.0, MODEL_TOLERANCE), CheckResult("bad", 1.0, MODEL_TOLERANCE)]
        with pytest.raises(GradientCheckError) as excinfo:
            require_passing(results)
        assert isinstance(excinfo.value, NumericalError)
        assert "bad" in str(excinfo.value)

    def test_all_passing(self) -> None:
        require_passing([CheckResult("ok", 1e-9, MODEL_TOLERANCE)])
