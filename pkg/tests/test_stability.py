import math

import mpmath as mp
import numpy as np
import pytest

from strainedfilm import (
    Anisotropy,
    DomainError,
    FlowParams,
    InvalidInputError,
    LameParams,
    Profile,
    d_loc,
    grinfeld_J,
    grinfeld_K,
    poisson_modulus,
    second_variation_flat,
)
from strainedfilm.stability import (
    Perturbation,
    classify,
    infinite_branch_bound,
    liapunov_experiment,
    stability_report,
    threshold_rhs,
)

B = 2 * np.pi


def J_mp(y, nu):
    y, nu = mp.mpf(y), mp.mpf(nu)
    a = 3 - 4 * nu
    return (y + a * mp.sinh(y) * mp.cosh(y)) / (4 * (1 - nu) ** 2 + y**2 + a * mp.sinh(y) ** 2)


@pytest.mark.parametrize("lam,mu,expected", [(0.0, 1.0, 0.0), (1.0, 1.0, 0.25), (2.0, 1.0, 1 / 3)])
def test_poisson_modulus(lam, mu, expected):
    assert poisson_modulus(LameParams(mu, lam, 0.1)) == pytest.approx(expected, abs=1e-15)


@pytest.mark.parametrize("y", [0.0, 1e-3, 0.5, 1.0, 1.0001, 3.0, 10.0, 30.0, 200.0, 1e5])
@pytest.mark.parametrize("nu", [0.0, 0.25, 0.45])
def test_J_against_arbitrary_precision(y, nu):
    mp.mp.dps = 50
    assert grinfeld_J(y, nu) == pytest.approx(float(J_mp(y, nu)), rel=1e-13, abs=1e-300)


def test_J_limits():
    assert grinfeld_J(0.0, 0.25) == 0.0
    assert abs(grinfeld_J(30.0, 0.25) - 1.0) < 1e-10
    for nu in (0.0, 0.25, 0.4):
        assert grinfeld_J(1e-4, nu) / 1e-4 == pytest.approx(1 / (1 - nu), rel=1e-6)
    with pytest.raises(DomainError):
        grinfeld_J(-1.0, 0.25)
    with pytest.raises(DomainError):
        grinfeld_J(1.0, 0.5)


def test_J_is_vectorized_and_increasing():
    y = np.linspace(0, 20, 400)
    J = grinfeld_J(y, 1 / 3)
    assert J.shape == y.shape
    assert np.all(np.diff(J[y < 15]) > 0)


def test_K_properties():
    nu = 1 / 3
    y = np.linspace(0.01, 50, 100)
    K = grinfeld_K(y, nu)
    J = grinfeld_J(y, nu)
    assert np.all(K >= J) and np.all(K <= 1.0)
    assert np.all(np.diff(K) >= 0)
    strict = K < 1.0 - 1e-14
    assert np.all(np.diff(K[strict]) > 0)
    assert grinfeld_K(50.0, nu) >= 0.999
    assert grinfeld_K(0.0, nu) == 0.0
    small = np.linspace(1e-3, 1.0, 50)
    assert np.all(grinfeld_K(small, nu) <= (1 / (1 - nu) + 0.01) * small)


def test_K_is_exact_discrete_max():
    nu = 0.2
    for y in (0.05, 0.7, 2.0):
        brute = max(float(J_mp(n * y, nu)) / n for n in range(1, int(2 / y) + 2))
        assert grinfeld_K(y, nu) == pytest.approx(brute, rel=1e-13)


def test_K_continuity_under_refinement():
    nu = 0.25
    jumps = [np.max(np.diff(grinfeld_K(np.linspace(0.01, 5, n), nu))) for n in (50, 100, 200)]
    assert jumps[0] > jumps[1] > jumps[2]


def test_d_loc_infinite_branch_is_exact():
    p = LameParams(1.0, 1.0, 0.7)
    bound = infinite_branch_bound(p, 1.0)
    assert bound == pytest.approx(math.pi / 4 * 3 / (0.49 * 2))
    assert math.isinf(d_loc(bound, p, 1.0))
    assert math.isinf(d_loc(0.5 * bound, p, 1.0))
    assert math.isfinite(d_loc(bound * (1 + 1e-9), p, 1.0))


def test_d_loc_round_trip_and_monotonicity():
    p = LameParams(1.0, 1.0, 0.7)
    nu = poisson_modulus(p)
    d = d_loc(B, p, 1.0)
    assert grinfeld_K(2 * np.pi * d / B, nu) == pytest.approx(threshold_rhs(B, p, 1.0), rel=1e-9)
    assert d_loc(B, LameParams(1.0, 1.0, 1.4), 1.0) < d
    bs = np.linspace(3.0, 30.0, 25)
    ds = [d_loc(b, p, 1.0) for b in bs]
    assert np.all(np.diff(ds) <= 0)


def test_d_loc_rejects_nonpositive_stiffness():
    with pytest.raises(DomainError):
        d_loc(B, LameParams(1.0, 1.0, 0.7), 0.0)


@pytest.mark.parametrize("k", [1, 3])
def test_second_variation_without_mismatch(k):
    b = 5.0
    p = LameParams(1.0, 1.0, 0.0)
    val = second_variation_flat(0.4, k, b, p, Anisotropy.elliptic([[1.7, 0.0], [0.0, 1.0]]), nx=64, ny=8)
    assert val == pytest.approx(1.7 * (2 * np.pi * k / b) ** 2 * b / 2, rel=1e-12)


def test_second_variation_scalings():
    b, d = B, 0.5
    psi = Anisotropy.isotropic(2)
    v0 = second_variation_flat(d, 1, b, LameParams(1.0, 1.0, 0.0), psi, nx=64, ny=16)
    v1 = second_variation_flat(d, 1, b, LameParams(1.0, 1.0, 0.3), psi, nx=64, ny=16)
    v2 = second_variation_flat(d, 1, b, LameParams(1.0, 1.0, 0.6), psi, nx=64, ny=16)
    assert v2 - v0 == pytest.approx(4 * (v1 - v0), rel=1e-10)
    assert v1 < v0
    lp = LameParams(1.0, 1.0, 0.3)
    a1 = second_variation_flat(d, 1, b, lp, 1.0, nx=64, ny=16)
    a2 = second_variation_flat(d, 1, b, lp, 2.0, nx=64, ny=16)
    a3 = second_variation_flat(d, 1, b, lp, 3.0, nx=64, ny=16)
    assert a3 - a2 == pytest.approx(a2 - a1, rel=1e-12)


def test_second_variation_normalizations():
    lp = LameParams(1.0, 1.0, 0.3)
    raw = second_variation_flat(0.5, 2, B, lp, 1.0, nx=64, ny=16)
    l2 = second_variation_flat(0.5, 2, B, lp, 1.0, nx=64, ny=16, normalization="l2")
    h1 = second_variation_flat(0.5, 2, B, lp, 1.0, nx=64, ny=16, normalization="h1")
    assert l2 == pytest.approx(raw / np.pi)
    assert h1 == pytest.approx(raw / (5 * np.pi))


def test_second_variation_input_errors():
    lp = LameParams(1.0, 1.0, 0.3)
    with pytest.raises(InvalidInputError):
        second_variation_flat(Profile.from_function(lambda x: 1 + 0.1 * np.sin(x), 64, B), 1, B, lp, 1.0)
    with pytest.raises(InvalidInputError):
        second_variation_flat(0.5, 0, B, lp, 1.0)
    with pytest.raises(InvalidInputError):
        second_variation_flat(0.5, 1, B, lp, 1.0, normalization="max")
    # a flat Profile is accepted
    val = second_variation_flat(Profile.flat(0.5, 64, B), 1, B, lp, 1.0, ny=16)
    assert val == pytest.approx(second_variation_flat(0.5, 1, B, lp, 1.0, nx=64, ny=16))


def test_stability_report_contents():
    rep = stability_report(B, LameParams(1.0, 1.0, 0.7), 1.0, d_values=[0.1], modes=(1, 2), nx=64, ny=16)
    assert rep.nu_p == 0.25
    assert len(rep.per_mode_second_variation) == 2
    assert rep.to_dict()["numeric_threshold"] is None
    small = stability_report(0.5, LameParams(1.0, 1.0, 0.7), 1.0)
    assert small.to_dict()["d_loc"] == "inf"


def test_classification_thresholds():
    assert classify(1.0, 0.5) == "decay"
    assert classify(1.0, 2.0) == "growth"
    assert classify(1.0, 1.2) == "inconclusive"
    assert classify(0.0, 0.0) == "inconclusive"


def test_zero_perturbation_is_inconclusive():
    res = liapunov_experiment(
        0.2, Perturbation(()), LameParams(1.0, 1.0, 0.7), Anisotropy.isotropic(2),
        FlowParams(epsilon=0.01), b=B, t_end=0.2, n=32, ny=8,
    )
    assert res.classification == "inconclusive"
    assert np.all(res.l2_norms == 0.0) and np.all(res.w2p_norms == 0.0)


def test_perturbation_validation():
    with pytest.raises(InvalidInputError):
        Perturbation(((0, 0.1, 0.0),))
    with pytest.raises(InvalidInputError):
        liapunov_experiment(
            0.2, Perturbation(((1, 0.1, 0.0),)), LameParams(1.0, 1.0, 0.7), Anisotropy.isotropic(2),
            FlowParams(epsilon=0.01), b=B, t_end=0.1, n=32, ny=8, delta=0.01,
        )
