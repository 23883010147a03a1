"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Ensembles are run once per session and shared. Run sizes are chosen for a
single CPU (about five minutes in total with the compiled core).
"""

import math
from functools import reduce

import numpy as np
import pytest
from scipy.linalg import expm

from cg_oracle import cg as cg_oracle
from me_oracle import StationaryAtomOracle
from qbeats import clicks as ck
from qbeats import correlator as cr
from qbeats import kernel_layout as L
from qbeats import params as P
from qbeats.angmom import clebsch_gordan
from qbeats.trajectory import SystemState, evolve_step, run_trajectory

REPORT = {}
DETAIL = {}
CURVES = []  # every finalized curve, checked by criterion 7


def report(n, ok, detail):
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    REPORT[n] = line
    DETAIL[n] = (ok, detail)
    print(line)
    return ok


def finalize(acc, **kw):
    c = acc.finalize(**kw)
    CURVES.append(c)
    return c


class Ensemble:
    def __init__(self, name, duration_us, seeds):
        self.cfg = P.load_preset(name).replace(sim__duration_us=duration_us)
        self.runs = [run_trajectory(self.cfg, seed=s) for s in seeds]
        self.accs = [cr.CorrelationAccumulator.from_trajectory(r, self.cfg) for r in self.runs]
        self.acc = reduce(lambda a, b: a.merge(b), self.accs)
        self.curve = finalize(self.acc)
        self.beat = cr.beat_frequency(self.curve.tau, self.curve.g2)

    def flux(self):
        return np.concatenate([2 * self.cfg.cavity.kappa * r.trace[:, L.TR_NH] for r in self.runs])

    def v_photons(self):
        return float(np.concatenate([r.trace[:, L.TR_V2] for r in self.runs]).mean())


@pytest.fixture(scope="session")
def fig2a():
    return Ensemble("fig2a", 500.0, [1, 2, 3, 4])


@pytest.fixture(scope="session")
def fig2b():
    return Ensemble("fig2b", 250.0, [1, 2, 3, 4])


@pytest.fixture(scope="session")
def fig3():
    return Ensemble("fig3", 250.0, [1, 2, 3, 4])


# --- 1 -----------------------------------------------------------------------------------

def test_criterion_01_derived_constants():
    d = P.load_preset("fig2a").derived()
    checks = [round(d["C1"], 3) == 0.117, round(d["C1"], 2) == 0.12,
              round(d["n0"], 2) == 5.33, round(d["n0"], 1) == 5.3,
              round(d["transit_time_us"], 2) == 2.55, round(d["transit_time_us"], 1) == 2.5]
    ok = report(1, all(checks), f"C1={d['C1']:.4f} n0={d['n0']:.3f} transit={d['transit_time_us']:.3f} us")
    assert ok


# --- 2 -----------------------------------------------------------------------------------

def test_criterion_02_one_atom_beat_frequency(fig2a):
    f = fig2a.beat.frequency
    ok = report(2, abs(f - 4.67e6) <= 0.15e6,
                f"fig2a beat {f / 1e6:.3f} +- {fig2a.beat.sigma / 1e6:.3f} MHz, target 4.67 +- 0.15 "
                f"({fig2a.curve.n_samples:.0f} samples)")
    assert ok


# --- 3 -----------------------------------------------------------------------------------

def test_criterion_03_background_envelope(fig2a):
    c = fig2a.curve
    w, A = cr.background_halfwidth(c.tau, c.g2, beat_hz=fig2a.beat.frequency)
    T = P.transit_time(fig2a.cfg.cavity, fig2a.cfg.beam)
    ok = report(3, A > 0 and abs(w - T) <= 0.3 * T,
                f"1/e half-width {w * 1e6:.3f} us vs transit {T * 1e6:.3f} us (+-30%), height {A:.2f}")
    assert ok


# --- 4 -----------------------------------------------------------------------------------

def test_criterion_04_two_atom_beat_emergence(fig2a, fig2b):
    _, Aa = cr.background_halfwidth(fig2a.curve.tau, fig2a.curve.g2, beat_hz=fig2a.beat.frequency)
    _, Ab = cr.background_halfwidth(fig2b.curve.tau, fig2b.curve.g2, beat_hz=fig2b.beat.frequency)
    contrast = Aa / Ab
    ch = fig2b.curve.channels
    f = fig2b.beat.frequency
    one = cr.beat_amplitude(fig2b.curve.tau, ch["one_atom"], f)
    two = cr.beat_amplitude(fig2b.curve.tau, ch["two_atom"], f)
    ok = report(4, contrast >= 3.0 and 0.5 <= two / one <= 2.0,
                f"background contrast ratio {contrast:.2f} (>= 3); two/one-atom beat amplitude "
                f"{two:.4f}/{one:.4f} = {two / one:.2f} (within x2)")
    assert ok


# --- 5 -----------------------------------------------------------------------------------

def test_criterion_05_v_mode_depletion(fig2a, fig2b):
    ratio = fig2b.cfg.drive.v_photons_empty / fig2b.v_photons()
    fa, fb = fig2a.beat.frequency, fig2b.beat.frequency
    ok = report(5, 1.4 <= ratio <= 2.6 and fb <= fa,
                f"empty/N=2 V-photon ratio {ratio:.2f} in [1.4, 2.6]; beat {fa / 1e6:.3f} -> {fb / 1e6:.3f} MHz "
                f"as N rises 0.2 -> 2")
    assert ok


# --- 6 -----------------------------------------------------------------------------------

def test_criterion_06_homodyne_half_frequency(fig3):
    cfg = fig3.cfg
    dg = cfg.zeeman.delta_g / (2 * math.pi)
    B = cfg.get("field", "B_gauss")
    levels = cfg.correlator.beta_sweep_percent
    curves = {bp: finalize(fig3.acc, beta_percent=bp) for bp in levels}
    top = curves[max(levels)]
    hom = np.abs(top.channels["homodyne"]).max()
    atoms = max(np.abs(top.channels[k]).max() for k in ("one_atom", "two_atom"))
    f_hom = cr.beat_frequency(top.tau, top.g2).frequency
    f_full = cr.beat_frequency(curves[0.0].tau, curves[0.0].g2).frequency
    dips = [(bp, float(((c.g2 - 1) / c.stderr).min())) for bp, c in curves.items()]
    deepest = min(dips, key=lambda x: x[1])
    ok = (hom > atoms and abs(f_hom - dg) <= 0.15e6 and abs(f_hom - f_full / 2) <= 0.15e6
          and deepest[1] < -3.0)
    report(6, ok, f"beta {max(levels):g}%: homodyne/atomic {hom / atoms:.1f}, peak {f_hom / 1e6:.3f} MHz vs "
                  f"delta_g {dg / 1e6:.3f} (B={B:g} G) and half of {f_full / 1e6:.3f}; "
                  f"deepest dip {-deepest[1]:.1f} sigma below 1 at beta {deepest[0]:g}%")
    assert ok


# --- 8 -----------------------------------------------------------------------------------

@pytest.mark.parametrize("B", [0.0, 5.0])
def test_criterion_08_master_equation_oracle(B):
    cfg = P.default_config().replace(field__B_gauss=B, sim__dt_ns=0.5)
    acc = None
    for seed in range(4):
        r = run_trajectory(cfg, duration=0.25e-3, seed=seed, stationary_atoms=[(0, 0, 0, 0)],
                           absorption=False, warmup=2e-6)
        a = cr.CorrelationAccumulator.from_trajectory(r, cfg)
        acc = a if acc is None else acc.merge(a)
    c = finalize(acc)
    t, g, e = c.positive()
    ref, _ = StationaryAtomOracle(B=B).g2_sparse(t[1] - t[0], t.size - 1)
    z = np.abs(g - ref) / e
    frac = float(np.mean(z > 3))
    ok = frac <= 0.01 and z.max() < 5
    line = (f"B={B:g} G: {c.n_samples:.0f} samples, {100 * frac:.2f}% of {z.size} bins beyond 3 SE "
            f"(max {z.max():.2f}, mean z^2 {np.mean(z ** 2):.2f})")
    prev = DETAIL.get(8)
    if prev is not None:
        ok = ok and prev[0]
        line = prev[1] + "; " + line
    report(8, ok, line)
    assert frac <= 0.01 and z.max() < 5


# --- 9 -----------------------------------------------------------------------------------

def test_criterion_09_clicks_cross_validation(fig2b):
    flux = fig2b.flux()
    dt = fig2b.runs[0].record_interval
    T = flux.size * dt
    scale = 1.2e6 / (flux.mean() * T)
    st = ck.synthesize_clicks(flux, dt, seed=7, scale=scale)
    est = ck.estimate_g2(st, 10e-9, 4e-6, blocks=16)
    c = fig2b.curve
    wf = np.interp(est.tau, c.tau, c.g2)
    wfe = np.interp(est.tau, c.tau, c.stderr)
    m = np.abs(est.tau) <= 4e-6
    chi2 = float(np.mean(((est.g2 - wf)[m]) ** 2 / (est.err[m] ** 2 + wfe[m] ** 2)))
    # the same clicks against their own flux autocorrelation (pipeline consistency)
    _, ex = ck.expected_g2(flux, dt, 10e-9, 4e-6)
    chi2_flux = ck.reduced_chi2(est, ex, m)
    ok = len(st) >= 1_000_000 and chi2 <= 2.0
    report(9, ok, f"{len(st)} clicks; reduced chi2 vs wave-function g2 {chi2:.2f} (<= 2); "
                  f"vs flux autocorrelation {chi2_flux:.3f}; g2(0) clicks {est.g2[est.tau.size // 2]:.3f} "
                  f"wave-function {c.g2[c.tau.size // 2]:.3f}")
    assert chi2_flux <= 2.0
    assert ok


# --- 10 ----------------------------------------------------------------------------------

def _ledger_ok(r):
    q_of = {L.EV_PI: 0, L.EV_SIGMA_PLUS: 1, L.EV_SIGMA_MINUS: -1}
    m, emitted = {}, {}
    for _step, kind, aid, m_after in r.events:
        q = q_of[int(kind)]
        if m_after != m.get(aid, 0) - q:
            return False
        m[aid] = int(m_after)
        emitted[aid] = emitted.get(aid, 0) + q
    st = r.final_state
    live = all(st.mc[i] == m.get(int(st.aid[i]), 0) for i in np.nonzero(st.active)[0])
    return live and all(m[a] + emitted[a] == 0 for a in m)


def _norm_vs_jump_rate(B, m0, steps=400, dt=0.5e-9):
    """Largest per-step gap between the engine's jump probability and the exact norm loss."""
    cfg = P.default_config().replace(field__B_gauss=B)
    s = SystemState(cfg, dt=dt, absorption=False, sampling=False)
    s.add_atom((0.0, 0.0, 0.0), m0=m0)
    z, sch = cfg.zeeman, cfg.scheme
    Om = cfg.cavity.g_max * math.sqrt(cfg.drive.v_photons_empty) * sch.cg_dyn(m0, 0)
    H = np.array([[m0 * z.delta_g, Om], [Om, m0 * z.delta_e - 0.5j * cfg.cavity.gamma]])
    U = expm(-1j * H * dt)
    psi = np.array([1.0, 0.0], complex)
    worst = 0.0
    for _ in range(steps):
        p = sum(evolve_step(s)[0].values())
        new = U @ psi
        worst = max(worst, abs(p - (1.0 - np.vdot(new, new).real)))
        psi = new / np.linalg.norm(new)
    return worst


def test_criterion_10_property_suites(fig2a, fig2b, fig3):
    parts = {}
    curves = [fig2a.curve, fig2b.curve, fig3.curve]
    parts["symmetry exact"] = all(np.array_equal(c.g2, c.g2[::-1]) for c in curves)
    tails = [(c.g2[-1] - 1) / c.stderr[-1] for c in curves]
    parts["g2(4us) within 3 sigma of 1"] = all(abs(x) <= 3 for x in tails)
    ledger_runs = [run_trajectory(P.load_preset(n), duration=40e-6, seed=s, record_events=True)
                   for n in ("fig2a", "fig2b", "fig3") for s in (1, 2)]
    parts["angular-momentum ledger"] = all(_ledger_ok(r) for r in ledger_runs) and \
        sum(r.events.shape[0] for r in ledger_runs) > 50
    gap = max(_norm_vs_jump_rate(B, m0) for B in (0.0, 5.0) for m0 in (0, 1, -2))
    parts[f"norm decay vs jump rate (max {gap:.1e}/step)"] = gap < 1e-8

    def n_h(nmax):
        o = StationaryAtomOracle(B=5.0, v_photons=0.05, nmax=nmax)
        rho = o.steady()
        return o.nbar(rho) / sum(o.pop(rho, n) for n in range(nmax + 1))

    dn = abs(n_h(3) - n_h(2))
    parts[f"truncation 3 vs 2 photons ({dn:.1e})"] = dn < 1e-4
    cfg = P.load_preset("fig2b")
    a = run_trajectory(cfg, duration=20e-6, seed=5, record_events=True)
    b = run_trajectory(cfg, duration=20e-6, seed=5, record_events=True)
    parts["seed determinism"] = (a.trace.tobytes() == b.trace.tobytes()
                                 and a.events.tobytes() == b.events.tobytes()
                                 and all(pa.acc.tobytes() == pb.acc.tobytes()
                                         for pa, pb in zip(a.partials, b.partials)))
    fwd = reduce(lambda x, y: x.merge(y), fig2a.accs).finalize()
    rev = reduce(lambda x, y: x.merge(y), fig2a.accs[::-1]).finalize()
    mix = fig2a.accs[2].merge(fig2a.accs[0]).merge(fig2a.accs[3].merge(fig2a.accs[1])).finalize()
    parts["merge order independence"] = all(
        np.asarray(getattr(fwd, k)).tobytes() == np.asarray(getattr(o, k)).tobytes()
        for o in (rev, mix) for k in ("g2", "stderr")) and all(
        fwd.channels[c].tobytes() == o.channels[c].tobytes() for o in (rev, mix) for c in cr.CHANNELS)
    bad = [k for k, v in parts.items() if not v]
    ok = report(10, not bad, "all of: " + "; ".join(parts) if not bad else "failing: " + "; ".join(bad))
    assert ok


# --- 11 ----------------------------------------------------------------------------------

def test_criterion_11_cg_oracle():
    worst, n = 0.0, 0
    for Fg in range(6):
        for Fe in range(max(0, Fg - 1), min(5, Fg + 1) + 1):
            if Fg == Fe == 0:
                continue
            for m in range(-Fg, Fg + 1):
                for q in (-1, 0, 1):
                    worst = max(worst, abs(clebsch_gordan(Fg, m, q, Fe) - cg_oracle(Fg, m, 1, q, Fe, m + q)))
                    n += 1
    stretched = all(clebsch_gordan(F, F, 1, F + 1) == 1.0 and clebsch_gordan(F, -F, -1, F + 1) == 1.0
                    for F in range(5))
    ok = report(11, worst < 1e-12 and stretched,
                f"{n} coefficients, worst deviation {worst:.1e}; stretched states exactly 1: {stretched}")
    assert ok


# --- 7 (last: it audits every curve finalized above) -------------------------------------

def test_criterion_07_decomposition_exactness(fig2a, fig2b, fig3):
    if not any(c is fig3.curve for c in CURVES):
        CURVES.extend([fig2a.curve, fig2b.curve, fig3.curve])
    for bp in (0.0, 1.0, 37.5, 250.0):
        CURVES.append(finalize(fig2b.acc, beta_percent=bp, beta_phase=0.7))
    worst = 0.0
    for c in CURVES:
        parts = sum(c.channels[k] for k in cr.CHANNELS)
        rel = np.abs(c.g2 - parts) / np.maximum(np.abs(c.g2), 1e-300)
        worst = max(worst, float(rel.max()))
    ok = report(7, worst <= 1e-10, f"{len(CURVES)} curves, worst relative mismatch {worst:.1e}")
    assert ok
