"""The gradient checker itself: it must pass correct code and flag broken code."""

import numpy as np
import pytest

import cliprank.autodiff as ad
from cliprank.gradcheck import (
    DEFAULT_TOL,
    KINK_BAND,
    check_full_objective,
    finite_diff_check,
    tiny_check_geometry,
)


def wrong_grad_double(x: ad.Tensor) -> ad.Tensor:
    """y = 2x whose backward deliberately claims dy/dx = 3."""
    out = ad.Tensor(x.data * 2.0, _parents=(x,), _backward=None)

    def backward(gy):
        return (gy * 3.0,)

    out._backward = backward
    return out


class TestFiniteDiffCheck:
    def test_correct_gradient_passes(self, rng):
        with ad.precision("float64"):
            x = ad.Tensor(rng.uniform(-1, 1, size=(3, 3)), requires_grad=True)
            report = finite_diff_check(lambda: (x * x).sum(), [("x", x)])
        assert report.passed
        assert report.max_rel_error < 1e-6

    def test_wrong_gradient_flagged(self, rng):
        with ad.precision("float64"):
            x = ad.Tensor(rng.uniform(0.5, 1.0, size=4), requires_grad=True)
            report = finite_diff_check(lambda: wrong_grad_double(x).sum(), [("x", x)])
        assert not report.passed
        assert [p.name for p in report.flagged] == ["x"]
        assert report.max_rel_error > 0.1

    def test_unused_parameter_gets_zero_grad_checked(self, rng):
        with ad.precision("float64"):
            x = ad.Tensor(rng.uniform(-1, 1, size=3), requires_grad=True)
            unused = ad.Tensor(rng.uniform(-1, 1, size=3), requires_grad=True)
            report = finite_diff_check(lambda: (x * x).sum(), [("x", x), ("unused", unused)])
        assert report.passed  # fd also sees zero sensitivity

    def test_subsampling_needs_rng(self, rng):
        with ad.precision("float64"):
            x = ad.Tensor(rng.uniform(-1, 1, size=8), requires_grad=True)
            with pytest.raises(ValueError, match="rng"):
                finite_diff_check(lambda: (x * x).sum(), [("x", x)], coords_per_param=2)

    def test_subsampling_limits_coords(self, rng):
        with ad.precision("float64"):
            x = ad.Tensor(rng.uniform(-1, 1, size=10), requires_grad=True)
            report = finite_diff_check(
                lambda: (x * x).sum(),
                [("x", x)],
                coords_per_param=4,
                rng=np.random.default_rng(0),
            )
        assert report.params[0].coords_checked == 4

    def test_kink_inside_probe_step_not_a_false_alarm(self):
        # kink sits 5e-5 past the base point, inside the 1e-4 probe: a naive
        # central difference reads slope 1.0 where the true gradient is 0
        with ad.precision("float64"):
            x = ad.Tensor(np.array([0.3]), requires_grad=True)
            shift = ad.Tensor(np.array([0.3 + 5e-5]))
            report = finite_diff_check(lambda: (ad.relu(x - shift) * 2.0).sum(), [("x", x)])
        assert report.passed, report.to_dict()

    def test_report_dict_shape(self, rng):
        with ad.precision("float64"):
            x = ad.Tensor(rng.uniform(-1, 1, size=2), requires_grad=True)
            report = finite_diff_check(lambda: (x * x).sum(), [("x", x)])
        d = report.to_dict()
        assert d["passed"] is True
        assert d["params"][0]["name"] == "x"
        assert d["tol"] == DEFAULT_TOL


class TestFullObjectiveCheck:
    def test_tiny_geometry_is_consistent(self):
        enc, samp, loss = tiny_check_geometry()
        assert enc.grid_shape == (4, 2, 2)
        assert samp.m == 3
        assert loss.enable_rank and loss.enable_contrastive and loss.enable_rotation

    def test_few_instances_pass(self):
        reports = check_full_objective(n_instances=2, seed=0)
        assert len(reports) == 2
        for rep in reports:
            assert rep.passed, rep.to_dict()
            assert rep.max_rel_error <= DEFAULT_TOL

    def test_band_wider_than_step(self):
        # central differences must not straddle a kink: the resample band
        # has to exceed the probe step
        assert KINK_BAND > 2 * 1e-4
