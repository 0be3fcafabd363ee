"""Acceptance suite: one test per criterion, each logging a PASS/FAIL line.

Long simulations are shared through module-scoped fixtures.  Run only this
file with ``pytest tests/test_acceptance.py -v -s`` to see the lines as they
are produced; they are also repeated in the terminal summary.
"""

import math
import time

import numpy as np
import pytest

from radnls import diagnostics as dg
from radnls import harness
from radnls.evolution import Integrator
from radnls.exponents import ExponentSolution, solve_exponents_M
from radnls.geometry import ManifoldProfile, morawetz_asymptotic_constants, morawetz_weights, positivity_certificate
from radnls.grid import FieldState, RadialGrid, bump_data, field_from_u, gaussian_data, mass

pytestmark = pytest.mark.slow

# reference spacing h ~ 0.0073 (120/16384) on a wider domain so that the
# s = 1.5 Gaussian stays inside the leak budget up to t = 40
LONG_RMAX, LONG_M = 300.0, 40960
DT = 1e-3


def _long_run(k, sigma, store=False, tracker=False):
    prof = ManifoldProfile(4, k)
    g = RadialGrid(prof, LONG_RMAX, LONG_M)
    s0 = gaussian_data(g, 1.0, 1.5)
    it = Integrator(g, DT, sigma=sigma)
    rec = dg.SeriesRecorder(sigma)
    obs = [rec]
    pt = None
    if tracker:
        pt = dg.PairingTracker(g, DT, sigma, bump_data(g, 1.0, 3.0, 1.0))
        obs.append(pt)
    t0 = time.perf_counter()
    traj = it.evolve(s0, 40.0, 0.5, store=store, observers=obs)
    return {"grid": g, "s0": s0, "traj": traj, "rec": rec, "pair": pt, "elapsed": time.perf_counter() - t0}


# ---------------------------------------------------------------------------
# 1. geometry certificate


def test_criterion_1_geometry_certificate(acceptance_log):
    t0 = time.perf_counter()
    r = np.geomspace(1e-3, 50.0, 200)
    bad, small_dev, lit_dev, ext_dev = [], 0.0, {}, 0.0
    for n in range(4, 9):
        for k in range(1, 7):
            prof = ManifoldProfile(n, k)
            rep = positivity_certificate(prof, r)
            if not rep.all_pass:
                bad.append((n, k))
            c0, cinf = morawetz_asymptotic_constants(prof)
            _, nb = morawetz_weights(prof, np.array([1e-3, 50.0, 100.0]))
            v = nb * np.array([1e-3, 50.0, 100.0]) ** 3
            small_dev = max(small_dev, abs(v[0] / c0 - 1))
            lit_dev[(n, k)] = abs(v[1] / cinf - 1)
            # the approach is 1 - c/r^2, so one Richardson step gives the r -> inf limit
            ext_dev = max(ext_dev, abs((4 * v[2] - v[1]) / 3 / cinf - 1))
    elapsed = time.perf_counter() - t0
    k1_dev = max(d for (n, k), d in lit_dev.items() if k == 1)
    ok = not bad and small_dev < 0.01 and ext_dev < 0.01 and k1_dev < 0.01 and elapsed < 5.0
    acceptance_log(1, ok, f"certificate failures={bad} r->0 dev={small_dev:.2e} "
                          f"r->inf dev (extrapolated)={ext_dev:.2e} literal r=50 dev k=1 max={k1_dev:.2e} "
                          f"runtime={elapsed:.2f}s")
    assert ok


@pytest.mark.xfail(strict=True, reason="r^3(-Lap^2 a) approaches its limit as 1 - O(k/r^2); "
                                       "at r=50 the gap exceeds 1% for k >= 2")
def test_criterion_1_literal_large_r_at_50(acceptance_log):
    worst = (0.0, None)
    for n in range(4, 9):
        for k in range(1, 7):
            prof = ManifoldProfile(n, k)
            _, cinf = morawetz_asymptotic_constants(prof)
            _, nb = morawetz_weights(prof, np.array([50.0]))
            d = abs(nb[0] * 50.0**3 / cinf - 1)
            worst = max(worst, (d, (n, k)), key=lambda x: x[0])
    ok = worst[0] < 0.01
    acceptance_log("1b", ok, f"literal r=50 large-r match within 1%: worst dev {worst[0]:.2%} at (n,k)={worst[1]} "
                             "(expected failure, see notes)")
    assert ok


# ---------------------------------------------------------------------------
# 2. exponent feasibility boundary


def test_criterion_2_feasibility_boundary(acceptance_log):
    t0 = time.perf_counter()
    step = 1e-3
    sig = np.round(np.arange(step, 1.2, step), 10)
    report = []
    ok = True
    for n in (4, 5):
        top = 2.0 / (n - 2)
        for k in (1, 2, 3):
            N = (2 * k + 1) * (n - 1) + 1
            lo = 2.0 / N
            for s in sig:
                got = isinstance(solve_exponents_M(n, k, float(s)), ExponentSolution)
                want = lo < s < top
                if got != want and min(abs(s - lo), abs(s - top)) > step + 1e-12:
                    ok = False
                    report.append((n, k, float(s)))
    elapsed = time.perf_counter() - t0
    ok = ok and elapsed < 10.0
    acceptance_log(2, ok, f"mismatches beyond one step={report[:5]} runtime={elapsed:.2f}s")
    assert ok


# ---------------------------------------------------------------------------
# 3. Euclidean oracle


def _gauss_exact(r, t):
    z = 1 + 2j * t
    return z**-2 * np.exp(-(r**2) / (2 * z))


def _free_euclid(m, dt):
    g = RadialGrid(ManifoldProfile(4, 0), 20.0, m)
    out = Integrator(g, dt, nonlinear=False).free_evolve(field_from_u(g, _gauss_exact(g.r, 0.0)), 1.0)
    err = math.sqrt(mass(FieldState(1.0, out.w - field_from_u(g, _gauss_exact(g.r, 1.0)).w, g)))
    return out, err


def test_criterion_3_euclidean_oracle(acceptance_log):
    t0 = time.perf_counter()
    _, err = _free_euclid(8192, 1e-3)
    # nested grids (m+1 doubling) with dt halved: error and self-convergence ratios
    levels = [(4095, 2e-3), (8191, 1e-3), (16383, 5e-4)]
    runs = [_free_euclid(m, dt) for m, dt in levels]
    e = [x[1] for x in runs]
    err_ratios = [e[0] / e[1], e[1] / e[2]]
    wa, wb, wc = runs[0][0].w, runs[1][0].w[1::2], runs[2][0].w[3::4]
    self_ratio = np.linalg.norm(wa - wb) / np.linalg.norm(wb - wc)
    elapsed = time.perf_counter() - t0
    ok = (err <= 1e-4 and all(3.5 <= x <= 4.5 for x in err_ratios) and 3.5 <= self_ratio <= 4.5
          and elapsed < 120)
    acceptance_log(3, ok, f"L2 error={err:.3e} error ratios={[round(x, 3) for x in err_ratios]} "
                          f"self-convergence ratio={self_ratio:.3f} runtime={elapsed:.1f}s")
    assert ok


# ---------------------------------------------------------------------------
# 4 and 5. conservation and Morawetz saturation


@pytest.fixture(scope="module")
def conservation_runs():
    return {k: _long_run(k, 0.5) for k in (1, "inf")}


def test_criterion_4_conservation(conservation_runs, acceptance_log):
    parts, ok = [], True
    for k, run in conservation_runs.items():
        s = run["rec"].series()
        md = float(np.max(np.abs(s["mass"] - s["mass"][0])) / s["mass"][0])
        ed = float(np.max(np.abs(s["energy"] - s["energy"][0])) / abs(s["energy"][0]))
        leak = max(run["traj"].leak)
        ok &= md <= 1e-8 and ed <= 1e-4 and run["traj"].aborted is None
        parts.append(f"k={k}: mass drift={md:.2e} energy drift={ed:.2e} leak={leak:.1e}")
    acceptance_log(4, ok, "; ".join(parts))
    assert ok


def test_criterion_5_morawetz_saturation(conservation_runs, acceptance_log):
    parts, ok = [], True
    for k, run in conservation_runs.items():
        mr = dg.morawetz_accumulate(run["rec"], n=4)
        inc = mr.relative_increase(30.0, 40.0)
        const = float(np.max(mr.bound_ratio))
        var = mr.ratio_variation((20.0, 40.0))
        below = bool(np.all(mr.bound_ratio <= const))
        ok &= inc < 0.02 and var < 0.10 and below
        parts.append(f"k={k}: M increase [30,40]={inc:.3%} bound_ratio<=C={const:.4g} "
                     f"variation [20,40]={var:.2%}")
    acceptance_log(5, ok, "; ".join(parts))
    assert ok


# ---------------------------------------------------------------------------
# 6. scattering detection


@pytest.mark.parametrize("k,sigma", [("inf", 0.4), (1, 0.3)], ids=["hyperbolic", "k1"])
def test_criterion_6_scattering_detection(k, sigma, acceptance_log):
    run = _long_run(k, sigma, store=[10.0, 20.0, 40.0])
    t0 = time.perf_counter()
    seq = dg.defect_sequence(run["traj"], [10.0, 20.0, 40.0])
    total = run["elapsed"] + time.perf_counter() - t0
    d1, d2 = (x.value for x in seq.items)
    ratio = d1 / d2
    reliable = all(x.reliable for x in seq.items)
    ok = d1 > d2 and ratio >= 1.5 and reliable and total <= 900
    acceptance_log(6, ok, f"k={k} sigma={sigma}: defect(10,20)={d1:.4g} defect(20,40)={d2:.4g} "
                          f"ratio={ratio:.3f} reliable={reliable} runtime={total:.0f}s")
    assert ok


# ---------------------------------------------------------------------------
# 7. borderline contrast


def test_criterion_7_borderline_contrast(acceptance_log):
    fits = {}
    for k in (0, 1):
        run = _long_run(k, 0.2, tracker=True)
        pt = run["pair"]
        fits[k] = dg.longrange_indicator(pt.t, pt.D, 0.2, ManifoldProfile(4, k), mass(run["s0"]),
                                         window=(10.0, 40.0))
    diff = fits[1].beta - fits[0].beta
    ok = diff >= 0.5 and not fits[0].undetermined and not fits[1].undetermined
    acceptance_log(7, ok, f"beta(k=0)={fits[0].beta:.3f} (pred {fits[0].predicted:.1f}, resid "
                          f"{fits[0].fit.residual:.2e}) beta(k=1)={fits[1].beta:.3f} (pred "
                          f"{fits[1].predicted:.1f}, resid {fits[1].fit.residual:.2e}) difference={diff:.3f}")
    assert ok


# ---------------------------------------------------------------------------
# 8. asymptotic profile


def test_criterion_8_asymptotic_profile(acceptance_log):
    g = RadialGrid(ManifoldProfile(4, "inf"), 320.0, 32768)
    s0 = gaussian_data(g, 1.0, 1.0)
    traj = Integrator(g, DT, nonlinear=False).evolve(s0, 40.0, 1.0, mode="free", store=[20.0, 40.0])
    # the limit profile has an integrable rho^{-1/2} singularity at 0, so the
    # sup comparison starts at rho = 0.5
    rho = np.linspace(0.5, 6.0, 600)
    a = dg.extract_profile(traj.at(20.0), rho, mass(s0))
    b = dg.extract_profile(traj.at(40.0), rho, mass(s0))
    diff = dg.profile_difference(a, b)
    ok = diff < 0.05 and b.unitarity_defect < 0.02 and not b.truncated
    acceptance_log(8, ok, f"sup-relative difference F(20) vs F(40)={diff:.3%} unitarity defect "
                          f"t=20 {a.unitarity_defect:.3%} t=40 {b.unitarity_defect:.3%} leak={max(traj.leak):.1e}")
    assert ok


# ---------------------------------------------------------------------------
# 9. phase constant


def _phase(n):
    g = RadialGrid(ManifoldProfile(n, "inf"), 160.0, 16384)
    s0 = gaussian_data(g, 1.0, 1.0)
    keep = np.arange(10.0, 20.0 + 1e-9, 0.25)
    traj = Integrator(g, DT, nonlinear=False).evolve(s0, 20.0, 0.25, mode="free", store=keep)
    return dg.fit_asymptotic_phase(traj, window=(10.0, 20.0))


def test_criterion_9_phase_constant(acceptance_log):
    p3, p5 = _phase(3), _phase(5)
    ok3 = abs(p3.lambda_fit - 1.0) <= 0.05
    ok5 = p5.matched is not None
    which = {"(n-1)/2": 2, "(n-1)^2/4": 4}.get(p5.matched)
    acceptance_log(9, ok3 and ok5, f"n=3 lambda={p3.lambda_fit:.4f}; n=5 lambda={p5.lambda_fit:.4f} "
                                   f"matches {which} ({p5.matched})")
    assert ok3 and ok5


def test_reference_config_end_to_end(tmp_path):
    """Default configuration shape at reduced horizon: report with a defect sequence."""
    from radnls.config import ExperimentConfig

    cfg = ExperimentConfig.from_dict({
        "grid": {"r_max": 60.0, "m": 4096},
        "time": {"dt": 0.005, "t_final": 8.0, "sample_every": 0.5},
        "diagnostics": {"defect_times": [2.0, 4.0, 8.0]},
    })
    res = harness.run(cfg, tmp_path)
    assert res.exit_code == harness.EXIT_OK
    assert len(res.report.defects.items) == 2
    assert (tmp_path / "report.json").exists() and (tmp_path / "timeseries.csv").exists()
