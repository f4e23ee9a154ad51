import numpy as np
import pytest

from bev import gradcheck


def test_central_difference_polynomial():
    f = lambda x: x[0] ** 3 + 2 * x[0] * x[1]
    num = gradcheck.central_difference(f, np.array([1.5, -2.0]))
    assert np.allclose(num, [3 * 1.5 ** 2 - 4.0, 3.0], atol=1e-8)


def test_rel_error_floor():
    assert gradcheck.rel_error(0.0, 0.0) == 0.0
    assert gradcheck.rel_error([1.0, 0.0], [1.0, 1e-6]) == pytest.approx(1e-6)


def test_small_run_passes():
    results = gradcheck.run_suite(n_points=15, seed=3)
    assert [r.name for r in results] == list(gradcheck.SUITES)
    assert all(r.passed for r in results), gradcheck.format_results(results)


def test_detects_wrong_gradient(monkeypatch):
    from bev import losses
    real = losses.age_loss
    monkeypatch.setattr(losses, "age_loss", lambda a, k, r=losses.AgeRanges(): (real(a, k, r)[0], 0.0))
    res = gradcheck.run_suite(n_points=50, seed=0, names=["age_loss"])[0]
    assert not res.passed


def test_unknown_suite():
    with pytest.raises(KeyError):
        gradcheck.run_suite(2, names=["nope"])
