import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.linalg import solve_banded

from radnls.errors import NumericalError
from radnls.tridiag import FLUSH, CayleyOperator, nonlinear_phase


def _random_problem(m, seed, tau=0.05):
    rng = np.random.default_rng(seed)
    h = 0.1
    diag = 2 / h**2 + rng.uniform(0, 5, m)
    return CayleyOperator(diag, -1 / h**2, tau), diag, -1 / h**2, rng


@given(m=st.integers(3, 300), seed=st.integers(0, 10**6), tau=st.floats(-0.5, 0.5).filter(lambda x: abs(x) > 1e-6))
def test_solve_matches_solve_banded(m, seed, tau):
    op, diag, off, rng = _random_problem(m, seed, tau)
    rhs = rng.normal(size=m) + 1j * rng.normal(size=m)
    ab = np.zeros((3, m), complex)
    ab[0, 1:] = 1j * tau * off
    ab[1] = 1 + 1j * tau * diag
    ab[2, :-1] = 1j * tau * off
    ref = solve_banded((1, 1), ab, rhs)
    got = op.solve(rhs)
    assert np.allclose(got, ref, rtol=1e-12, atol=1e-12 * np.linalg.norm(ref))
    assert op.residual(got, rhs) < 1e-13


def test_cayley_eigenvector_factor():
    m = 60
    op, diag, off, _ = _random_problem(m, 3, tau=0.01)
    H = np.diag(diag) + off * (np.eye(m, k=1) + np.eye(m, k=-1))
    lam, V = np.linalg.eigh(H)
    for j in (0, 17, m - 1):
        v = V[:, j].astype(complex)
        got = op.apply(v)
        fac = (1 - 1j * op.tau * lam[j]) / (1 + 1j * op.tau * lam[j])
        assert np.allclose(got, fac * v, atol=1e-12)
        assert np.linalg.norm(got) == pytest.approx(1.0, rel=1e-13)


def test_negative_tau_inverts_exactly():
    op, diag, off, rng = _random_problem(200, 9)
    back = CayleyOperator(diag, off, -op.tau)
    w = rng.normal(size=200) + 1j * rng.normal(size=200)
    x = w.copy()
    op.run(x, 50)
    back.run(x, 50)
    assert np.linalg.norm(x - w) / np.linalg.norm(w) < 1e-11


def test_zero_state_stays_zero():
    op, *_ = _random_problem(50, 1)
    z = np.zeros(50, complex)
    assert not np.any(op.run(z, 10))


def test_subnormal_flush_only_touches_tiny_values():
    op, *_ = _random_problem(100, 2)
    w = np.zeros(100, complex)
    w[0] = 1.0
    out = op.apply(w)
    small = np.abs(out) < FLUSH
    assert np.all(out[small] == 0)
    assert np.all(np.abs(out[~small]) > FLUSH)


def test_breakdown_reported():
    with pytest.raises(NumericalError):
        CayleyOperator(np.array([np.nan, 1.0, 1.0]), -1.0, 0.1)


def test_nonlinear_phase_single_node():
    # sigma = 0.5, |u| = 1 at one node, tau = 0.1 -> phase -0.1 there, nothing elsewhere
    inv_scale = np.ones(5)
    w = np.zeros(5, complex)
    w[2] = 1.0
    nonlinear_phase(w, inv_scale, 0.5, 0.1)
    assert np.angle(w[2]) == pytest.approx(-0.1, abs=1e-15)
    assert abs(w[2]) == pytest.approx(1.0, abs=1e-15)


@given(sigma=st.floats(0.05, 2.0), tau=st.floats(-1, 1), seed=st.integers(0, 10**6))
def test_nonlinear_phase_formula(sigma, tau, seed):
    rng = np.random.default_rng(seed)
    inv_scale = rng.uniform(0.1, 2.0, 40)
    w = rng.normal(size=40) + 1j * rng.normal(size=40)
    th = tau * np.abs(w * inv_scale) ** (2 * sigma)
    ref = w * np.exp(-1j * th)
    got = nonlinear_phase(w.copy(), inv_scale, sigma, tau)
    # rounding of a large phase argument is amplified by |th|
    rtol = 1e-13 + 8 * np.finfo(float).eps * np.max(np.abs(th))
    assert np.allclose(got, ref, rtol=rtol, atol=1e-15)
