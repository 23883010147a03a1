import io
import math

import numpy as np
import pytest

from qbeats import kernel_layout as L
from qbeats.correlator import (CHANNELS, AccumulatorPartial, CorrelationAccumulator, InsufficientDataError,
                               beat_frequency, begin_sample, read_csv, trace_g2, write_csv)
from qbeats.params import default_config, load_preset
from qbeats.trajectory import SystemState, evolve_step, run_trajectory


@pytest.fixture(scope="module")
def fig2b_short():
    cfg = load_preset("fig2b")
    parts = [CorrelationAccumulator.from_trajectory(run_trajectory(cfg, duration=40e-6, seed=s), cfg)
             for s in (1, 2, 3)]
    return cfg, parts


def _merged(parts):
    acc = parts[0]
    for p in parts[1:]:
        acc = acc.merge(p)
    return acc


# --- begin_sample -------------------------------------------------------------

def test_zero_weight_sample_is_skipped():
    s = SystemState(default_config(), dt=0.5e-9)
    s.add_atom((0, 0, 0))
    assert begin_sample(s) == 0.0
    assert not s.slive.any()


def test_sample_copies_blocks():
    s = SystemState(default_config(), dt=0.5e-9)
    s.tables.iprm[L.Q_START] = np.iinfo(np.int64).max
    s.add_atom((0, 0, 0))
    for _ in range(200):
        evolve_step(s)
    w = begin_sample(s)
    assert w == pytest.approx(float(np.sum(np.abs(s.A1[0]) ** 2)), rel=1e-15)
    assert w > 0
    sl = 0
    assert np.array_equal(s.B1[0, sl], s.A1[0])
    assert np.array_equal(s.B2[0, sl], 2.0 * s.A2[0])


def test_sample_weight_is_expanded_inner_product():
    s = SystemState(default_config(), dt=0.5e-9)
    s.tables.iprm[L.Q_START] = np.iinfo(np.int64).max
    for y in (0.0, 20e-6):
        s.add_atom((0, y, 0))
    for _ in range(200):
        evolve_step(s)
    # one-photon sector of the product state: sum over atoms of |a'_i|^2 prod_{j != i} |a_j|^2
    a0n = [np.vdot(s.A0[i], s.A0[i]).real for i in range(2)]
    a1n = [np.vdot(s.A1[i], s.A1[i]).real for i in range(2)]
    expect = a1n[0] * a0n[1] + a1n[1] * a0n[0]
    assert begin_sample(s) == pytest.approx(expect, rel=1e-12)


# --- finalize ---------------------------------------------------------------

def test_coherent_background_only_gives_one():
    cfg = default_config().replace(beam__nbar=0.0)
    r = run_trajectory(cfg, duration=10e-6, seed=1)
    c = CorrelationAccumulator.from_trajectory(r, cfg).finalize(beta_abs2=1.0)
    np.testing.assert_array_equal(c.g2, np.ones_like(c.g2))


def test_empty_accumulator_is_insufficient():
    acc = CorrelationAccumulator(1e-8, 10)
    with pytest.raises(InsufficientDataError):
        acc.finalize()
    acc2 = CorrelationAccumulator(1e-8, 10, [AccumulatorPartial.empty(10)])
    with pytest.raises(InsufficientDataError):
        acc2.finalize()


def test_symmetric_in_tau(fig2b_short):
    _, parts = fig2b_short
    c = _merged(parts).finalize()
    np.testing.assert_array_equal(c.g2, c.g2[::-1])
    np.testing.assert_array_equal(c.tau, -c.tau[::-1])
    for ch in CHANNELS:
        np.testing.assert_array_equal(c.channels[ch], c.channels[ch][::-1])


@pytest.mark.parametrize("beta", [0.0, 5.0, 100.0, 400.0])
@pytest.mark.parametrize("phase", [0.0, 1.1])
def test_channels_add_up(fig2b_short, beta, phase):
    _, parts = fig2b_short
    c = _merged(parts).finalize(beta_percent=beta, beta_phase=phase)
    s = sum(c.channels[ch] for ch in CHANNELS)
    assert np.max(np.abs(s - c.g2) / np.abs(c.g2)) < 1e-10


def test_merge_order_independent_bitwise(fig2b_short):
    _, (a, b, c) = fig2b_short
    orders = [a.merge(b).merge(c), c.merge(a).merge(b), b.merge(c.merge(a))]
    ref = orders[0].finalize(beta_percent=50.0)
    for acc in orders[1:]:
        cur = acc.finalize(beta_percent=50.0)
        assert cur.g2.tobytes() == ref.g2.tobytes()
        assert cur.stderr.tobytes() == ref.stderr.tobytes()
        for ch in CHANNELS:
            assert cur.channels[ch].tobytes() == ref.channels[ch].tobytes()


def test_merge_sums_bins(fig2b_short):
    _, (a, b, _) = fig2b_short
    m = a.merge(b)
    ra, rb, rm = a._sums()[0], b._sums()[0], m._sums()[0]
    np.testing.assert_allclose(rm, ra + rb, rtol=1e-13, atol=1e-15 * np.abs(rm).max())
    assert m.sample_count == a.sample_count + b.sample_count


def test_merge_rejects_other_grid(fig2b_short):
    _, (a, _, _) = fig2b_short
    with pytest.raises(ValueError):
        a.merge(CorrelationAccumulator(a.dtau * 2, a.nbins))


def test_two_atom_channel_at_zero_delay(fig2b_short):
    _, parts = fig2b_short
    rows = _merged(parts)._sums()[0]
    assert rows[L.ACC_TWO, 0] == pytest.approx(rows[L.ACC_CROSS, 0], rel=1e-12)
    assert rows[L.ACC_TWO, 0] > 0


def test_long_delay_limit():
    cfg = load_preset("fig2a").replace(correlator__tau_max_us=12.0)
    c = CorrelationAccumulator.from_trajectory(run_trajectory(cfg, duration=1e-3, seed=1), cfg).finalize()
    t, g, e = c.positive()
    sel = t >= 8e-6
    assert np.all(np.abs(g[sel] - 1.0) <= 3 * e[sel])


def test_single_atom_one_atom_channel_beats_at_twice_larmor():
    cfg = default_config().replace(field__B_gauss=5.0, drive__v_photons_empty=0.2, sim__batches=4)
    r = run_trajectory(cfg, duration=0.3e-3, seed=3, stationary_atoms=[(0, 0, 0, 0)], warmup=1e-6)
    c = CorrelationAccumulator.from_trajectory(r, cfg).finalize()
    k = c.tau >= 0
    f = beat_frequency(c.tau[k], c.channels["one_atom"][k]).frequency
    assert f == pytest.approx(2 * cfg.zeeman.delta_g / (2 * math.pi), rel=0.02)


# --- homodyne term and the background phase --------------------------------------

def test_homodyne_sign_flips_with_beta_phase(fig2b_short):
    """Property as stated: rotating beta by pi flips the homodyne channel (5%)."""
    _, parts = fig2b_short
    acc = _merged(parts)
    c0 = acc.finalize(beta_percent=1.0, beta_phase=0.0)
    cpi = acc.finalize(beta_percent=1.0, beta_phase=math.pi)
    for ch in ("one_atom", "two_atom"):
        np.testing.assert_allclose(cpi.channels[ch], c0.channels[ch], rtol=1e-12)
    h0, hpi = c0.channels["homodyne"], cpi.channels["homodyne"]
    assert np.max(np.abs(hpi + h0)) <= 0.05 * np.max(np.abs(h0))


def test_homodyne_channel_is_phase_invariant(fig2b_short):
    """The cross term goes as beta conj(beta), so beta -> -beta leaves it unchanged."""
    _, parts = fig2b_short
    acc = _merged(parts)
    c0 = acc.finalize(beta_percent=1.0, beta_phase=0.0)
    cpi = acc.finalize(beta_percent=1.0, beta_phase=math.pi)
    np.testing.assert_allclose(cpi.channels["homodyne"], c0.channels["homodyne"], rtol=1e-12)
    np.testing.assert_allclose(cpi.g2, c0.g2, rtol=1e-12)
    assert np.max(np.abs(c0.channels["homodyne"])) > 0


def test_homodyne_channel_scales_with_beta(fig2b_short):
    _, parts = fig2b_short
    acc = _merged(parts)
    h1 = acc.finalize(beta_percent=1.0).channels["homodyne"]
    h2 = acc.finalize(beta_percent=2.0).channels["homodyne"]
    # |beta|^2 doubles, and the normalization by the total flux squared shrinks slightly
    den1 = acc.numerators(beta_percent=1.0)["denominator"]
    den2 = acc.numerators(beta_percent=2.0)["denominator"]
    np.testing.assert_allclose(h2 * den2 ** 2, 2 * h1 * den1 ** 2, rtol=1e-12)


# --- beat frequency ---------------------------------------------------------------

def test_beat_of_pure_cosine():
    t = np.arange(0, 4e-6 + 1e-12, 10e-9)
    b = beat_frequency(t, np.cos(2 * math.pi * 4.67e6 * t))
    assert b.found
    assert b.frequency == pytest.approx(4.67e6, abs=10e3)
    assert b.sigma <= 1 / 4e-6


def test_beat_of_noise_is_rarely_found():
    t = np.arange(0, 4e-6 + 1e-12, 10e-9)
    hits = sum(beat_frequency(t, 1 + 0.01 * np.random.default_rng(s).standard_normal(t.size)).found
               for s in range(200))
    assert hits < 20
    assert not beat_frequency(t, np.ones_like(t)).found


def test_beat_needs_a_curve():
    with pytest.raises(InsufficientDataError):
        beat_frequency(np.arange(4.0), np.ones(4))


# --- helpers ---------------------------------------------------------------------

def test_trace_g2_of_constant_is_one():
    t, g = trace_g2(np.full(1000, 3.0), 1e-8, 1e-6)
    np.testing.assert_allclose(g, 1.0, rtol=1e-12)
    assert t[-1] == pytest.approx(1e-6)


def test_csv_round_trip(fig2b_short):
    _, parts = fig2b_short
    c = _merged(parts).finalize()
    buf = io.StringIO()
    write_csv(buf, c, {"seeds": "1,2,3", "config": "[beam]\nnbar = 2.0"})
    text = buf.getvalue()
    assert text.startswith("# seeds: 1,2,3\n# config: [beam]\n# config: nbar = 2.0\n")
    d = read_csv(text)
    np.testing.assert_array_equal(d["tau_s"], c.tau)
    np.testing.assert_array_equal(d["g2_total"], c.g2)
    np.testing.assert_array_equal(d["g2_one_atom"], c.channels["one_atom"])
    np.testing.assert_array_equal(d["stderr_total"], c.stderr)
