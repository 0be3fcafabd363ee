import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from radnls import diagnostics as dg
from radnls.errors import DomainError
from radnls.evolution import Integrator
from radnls.geometry import ManifoldProfile
from radnls.grid import FieldState, RadialGrid, bump_data, field_from_u, gaussian_data, mass


def _exact(r, t):
    z = 1 + 2j * t
    return z**-2 * np.exp(-(r**2) / (2 * z))


@pytest.fixture(scope="module")
def euclid():
    """Free Gaussian on R^4 with every sample stored."""
    g = RadialGrid(ManifoldProfile(4, 0), 80.0, 8191)
    s0 = field_from_u(g, _exact(g.r, 0.0))
    tr = Integrator(g, 5e-3, nonlinear=False).evolve(s0, 8.0, 0.25, mode="free")
    return g, s0, tr


@pytest.fixture(scope="module")
def hyper_free():
    g = RadialGrid(ManifoldProfile(4, "inf"), 160.0, 8191)
    s0 = gaussian_data(g, 1.0, 1.0)
    tr = Integrator(g, 4e-3, nonlinear=False).evolve(s0, 20.0, 0.5, mode="free", store=[5.0, 10.0, 20.0])
    return s0, tr


@pytest.fixture(scope="module")
def hyper_nl():
    g = RadialGrid(ManifoldProfile(4, "inf"), 40.0, 2047)
    s0 = gaussian_data(g, 1.0, 1.5)
    it = Integrator(g, 0.01, sigma=0.5)
    return it.evolve(s0, 4.0, 0.25)


# -- full-pipeline closed-form oracle (free Euclidean) ----------------------------

def test_euclidean_series_closed_form(euclid):
    g, s0, tr = euclid
    s = dg.SeriesRecorder(None)
    for st_ in tr.states:
        s(st_)
    ser = s.series()
    t = ser["t"]
    assert np.allclose(ser["mass"], math.pi**2, rtol=1e-10)
    assert np.allclose(ser["linf_u"], 1 / (1 + 4 * t**2), rtol=2e-3)
    # gradient energy of the exact solution is conserved: 2 pi^2
    assert np.allclose(ser["energy"], 2 * math.pi**2, rtol=2e-3)


def test_euclidean_profile_closed_form(euclid):
    g, s0, tr = euclid
    t = 8.0
    rho = np.linspace(0.1, 6.0, 200)
    prof = dg.extract_profile(tr.at(t), rho, mass(s0))
    ref = t**2 / (1 + 4 * t**2) * np.exp(-(t**2) * rho**2 / (2 * (1 + 4 * t**2)))
    assert np.max(np.abs(prof.F - ref)) / ref.max() < 2e-3


def test_euclidean_phase_is_zero(euclid):
    g, s0, tr = euclid
    fit = dg.fit_asymptotic_phase(tr, window=(4.0, 8.0))
    assert abs(fit.lambda_fit) < 0.05 and fit.matched == "0"


def test_free_defect_vanishes(euclid):
    g, s0, tr = euclid
    d = dg.scattering_defect(tr, 2.0, 8.0)
    assert d.value < 1e-8 * dg.h1_norm(s0) and d.status == "OK"


# -- profile, phase -------------------------------------------------------------

def test_unitarity_defect_decreases_dyadic(hyper_free):
    s0, tr = hyper_free
    ud = [dg.extract_profile(tr.at(t), None, mass(s0)).unitarity_defect for t in (5.0, 10.0, 20.0)]
    assert ud[0] > ud[1] > ud[2]


def test_profile_truncation_and_errors(hyper_free):
    s0, tr = hyper_free
    with pytest.warns(UserWarning):
        p = dg.extract_profile(tr.at(20.0), np.linspace(0.5, 10, 50))
    assert p.truncated and "truncated" in p.flags
    with pytest.raises(DomainError):
        dg.extract_profile(s0)
    a = dg.extract_profile(tr.at(10.0))
    with pytest.raises(DomainError):
        dg.profile_difference(a, dg.extract_profile(tr.at(20.0), np.linspace(0.1, 5, 10)))


def test_zero_profile_flagged():
    g = RadialGrid(ManifoldProfile(4, "inf"), 20.0, 255)
    p = dg.extract_profile(FieldState(10.0, np.zeros(g.m), g), np.linspace(0.5, 1.5, 50))
    assert not np.any(p.F) and math.isnan(p.unitarity_defect) and p.flags


def test_profile_rho_beyond_domain_warns():
    g = RadialGrid(ManifoldProfile(4, "inf"), 20.0, 255)
    with pytest.warns(UserWarning, match="truncated"):
        dg.extract_profile(FieldState(10.0, np.zeros(g.m), g), np.linspace(0.5, 6.0, 50))


def test_phase_fit_needs_samples(hyper_free):
    s0, tr = hyper_free
    with pytest.raises(DomainError):
        dg.fit_asymptotic_phase([tr.at(5.0), tr.at(10.0)])


# -- Morawetz / virial ------------------------------------------------------------

def test_morawetz_monotone_and_nonnegative(hyper_nl):
    mr = dg.morawetz_accumulate(hyper_nl)
    assert np.all(mr.integrand >= 0)
    assert np.all(np.diff(mr.cum) >= 0)
    inc = np.diff(mr.cum)
    assert np.allclose(inc, 0.5 * (mr.integrand[1:] + mr.integrand[:-1]) * np.diff(mr.t))
    assert mr.to_dict()["M_T"] == pytest.approx(mr.cum[-1])


def test_virial_nonlinear_nonnegative(hyper_nl):
    v = dg.virial_check(hyper_nl)
    assert v.nonlinear_nonnegative
    assert np.all(np.diff(v.rhs) >= 0)
    assert np.all(v.lhs >= 0)


def test_zero_field_morawetz_virial():
    g = RadialGrid(ManifoldProfile(4, "inf"), 20.0, 255)
    z = FieldState(0.0, np.zeros(g.m), g)
    tr = Integrator(g, 0.01, sigma=0.5).evolve(z, 0.5, 0.1)
    mr = dg.morawetz_accumulate(tr)
    assert not np.any(mr.cum) and not np.any(mr.bound_ratio)
    v = dg.virial_check(tr)
    assert not np.any(v.lhs) and not np.any(v.rhs)


def test_morawetz_n3_flag():
    g = RadialGrid(ManifoldProfile(3, "inf"), 20.0, 255)
    tr = Integrator(g, 0.01, nonlinear=False).evolve(gaussian_data(g, 1.0, 1.0), 0.2, 0.1, mode="free")
    assert dg.morawetz_accumulate(tr).flags


def test_series_source_types(hyper_nl):
    with pytest.raises(TypeError):
        dg.morawetz_accumulate(42)
    g = hyper_nl.grid
    part = Integrator(g, 0.01, sigma=0.5).evolve(gaussian_data(g, 1.0, 1.0), 0.5, 0.1, store=False)
    with pytest.raises(DomainError):
        dg.morawetz_accumulate(part)


# -- defects --------------------------------------------------------------------

def test_defect_same_time_zero(hyper_nl):
    assert dg.scattering_defect(hyper_nl, 2.0, 2.0).value == 0.0
    with pytest.raises(DomainError):
        dg.scattering_defect(hyper_nl, 3.0, 2.0)


@given(ts=st.lists(st.sampled_from([0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0]), min_size=3, max_size=3))
def test_defect_triangle_inequality(hyper_nl, ts):
    back = _BACK.setdefault(id(hyper_nl), dg.Backpropagator(hyper_nl))
    a, b, c = sorted(ts)
    d = lambda x, y: dg.scattering_defect(hyper_nl, x, y, back).value  # noqa: E731
    assert d(a, c) <= d(a, b) + d(b, c) + 1e-10


_BACK = {}


def test_defect_unreliable_after_leak():
    g = RadialGrid(ManifoldProfile(4, 0), 12.0, 511)
    it = Integrator(g, 0.01, sigma=0.5, leak_threshold=1e-4)
    tr = it.evolve(gaussian_data(g, 1.0, 1.0), 20.0, 0.5, raise_on_leak=False)
    assert tr.aborted is not None
    t_last = tr.times[-1]
    d = dg.scattering_defect(tr, 0.5, t_last)
    assert d.status == "UNRELIABLE"


def test_defect_sequence_structure(hyper_nl):
    seq = dg.defect_sequence(hyper_nl, [1.0, 2.0, 4.0])
    assert [(x.t1, x.t2) for x in seq.items] == [(1.0, 2.0), (2.0, 4.0)]
    assert len(seq.ratios()) == 1 and seq.fit.npts == 2
    json.dumps(seq.to_dict())


# -- fits -------------------------------------------------------------------------

@given(beta=st.floats(0.1, 4.0), c=st.floats(-3, 3))
def test_power_fit_exact(beta, c):
    t = np.linspace(1, 40, 80)
    fit = dg.fit_power_decay(t, np.exp(c) * t**-beta, (10, 40))
    assert fit.beta == pytest.approx(beta, abs=1e-9) and fit.residual < 1e-9


def test_power_fit_degenerate():
    fit = dg.fit_power_decay([1.0, 2.0], [0.0, 0.0])
    assert math.isnan(fit.beta)


def test_longrange_indicator_synthetic_and_zero():
    t = np.linspace(0, 40, 81)
    D = np.where(t > 0, (1 + t) ** -1.7, 1.0)
    lr = dg.longrange_indicator(t, D, 0.2, ManifoldProfile(4, 1), 1.0, window=(20, 40))
    assert lr.beta == pytest.approx(1.7, abs=0.1) and lr.regime == "short-range"
    assert lr.predicted == pytest.approx(2.0)
    zero = dg.longrange_indicator(t, np.zeros_like(t), 0.2, ManifoldProfile(4, 1), 1.0)
    assert zero.undetermined and zero.regime == "UNDETERMINED"


def test_pairing_tracker_zero_field():
    g = RadialGrid(ManifoldProfile(4, 1), 20.0, 255)
    pt = dg.PairingTracker(g, 0.01, 0.2, bump_data(g))
    Integrator(g, 0.01, sigma=0.2).evolve(FieldState(0.0, np.zeros(g.m), g), 1.0, 0.5, observers=[pt])
    assert pt.t == pytest.approx([0, 0.5, 1.0]) and not any(pt.D)


# -- report -----------------------------------------------------------------------

def test_report_csv_and_json(hyper_nl):
    rec = dg.SeriesRecorder(0.5)
    for s in hyper_nl.states:
        rec(s)
    rep = dg.DiagnosticsReport(config={"a": 1}, series=rec.series(),
                               morawetz=dg.morawetz_accumulate(rec), virial=dg.virial_check(rec),
                               defects=dg.defect_sequence(hyper_nl, [1.0, 2.0, 4.0]),
                               leak={"leak": hyper_nl.leak, "max": max(hyper_nl.leak)})
    lines = rep.to_csv().splitlines()
    assert lines[0] == ",".join(dg.CSV_COLUMNS)
    assert len(lines) == len(hyper_nl.times) + 1
    d = json.loads(rep.to_json())
    assert d["schema_version"] == dg.SCHEMA_VERSION and d["leak"] == {"max": max(hyper_nl.leak)}
