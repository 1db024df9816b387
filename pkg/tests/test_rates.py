import numpy as np
import pytest

from deep_limit_lab.rates import envelope_constant, envelope_holds, fit_slope


def test_exact_inverse_law():
    pairs = [(n, 1.0 / n) for n in (4, 8, 16, 32)]
    fit = fit_slope(pairs)
    assert fit.slope == pytest.approx(-1.0, abs=1e-12)
    assert fit.r2 == pytest.approx(1.0, abs=1e-12)


def test_constant_data_has_zero_slope():
    fit = fit_slope([(4, 3.0), (8, 3.0), (16, 3.0)])
    assert fit.slope == pytest.approx(0.0, abs=1e-12)
    assert fit.r2 == 1.0


def test_inverse_square_law():
    fit = fit_slope([(n, 1.0 / n**2) for n in (4, 16, 64, 256)])
    assert fit.slope == pytest.approx(-2.0, abs=1e-12)


def test_rejects_nonpositive_values():
    with pytest.raises(ValueError):
        fit_slope([(4, 1.0), (8, 0.0), (16, 0.1)])
    with pytest.raises(ValueError):
        fit_slope([(4, 1.0), (-8, 1.0), (16, 0.1)])


def test_rejects_short_input():
    with pytest.raises(ValueError):
        fit_slope([(4, 1.0), (8, 0.5)])


def test_envelope_from_two_largest():
    pairs = [(n, 2.0 / n) for n in (4, 8, 16, 32)]
    c = envelope_constant(pairs)
    assert c == pytest.approx(2.0)
    assert envelope_holds(pairs, c)
    assert not envelope_holds([(4, 10.0)] + pairs[1:], c)
