import math
import warnings
from dataclasses import replace

import pytest
from hypothesis import given, settings, strategies as st

from qbeats import angmom
from qbeats.params import (ConfigError, arrival_rate, cooperativity, default_config, load_config,
                           load_preset, preset_names, reference, saturation_photon_number, serialize,
                           transit_time)

TP = 2 * math.pi * 1e6


def test_cooperativity_examples():
    c = default_config().cavity
    assert cooperativity(c) == pytest.approx(1.5 ** 2 / (6 * 3.2), rel=1e-14)
    assert round(cooperativity(c), 3) == 0.117
    assert round(cooperativity(c), 2) == 0.12
    assert cooperativity(replace(c, g_max=0.0)) == 0.0
    assert cooperativity(replace(c, g_max=2 * c.g_max)) == pytest.approx(4 * cooperativity(c), rel=1e-14)


def test_saturation_photon_number_examples():
    c = default_config().cavity
    assert round(saturation_photon_number(c), 2) == 5.33
    assert round(saturation_photon_number(c), 1) == 5.3
    assert saturation_photon_number(replace(c, gamma=math.sqrt(3) * c.g_max)) == pytest.approx(1.0)
    half = replace(c, gamma=c.gamma / 2)
    assert saturation_photon_number(half) == pytest.approx(saturation_photon_number(c) / 4, rel=1e-14)
    with pytest.raises(ConfigError):
        saturation_photon_number(replace(c, g_max=0.0))


def test_transit_time_examples():
    cfg = default_config()
    c, b = cfg.cavity, cfg.beam
    assert transit_time(c, b) * 1e6 == pytest.approx(2.545, abs=1e-3)
    assert round(transit_time(c, b) * 1e6, 2) == 2.55
    assert transit_time(c, replace(b, mean_speed=2 * b.mean_speed)) == pytest.approx(transit_time(c, b) / 2)
    assert transit_time(replace(c, waist=112e-6), b) * 1e6 == pytest.approx(5.09, abs=0.01)
    with pytest.raises(ConfigError):
        transit_time(c, replace(b, mean_speed=0.0))


def test_empty_drive_section_gives_defaults():
    cfg = load_config("[drive]\n")
    assert cfg.drive == default_config().drive
    assert cfg.drive.v_photons_empty == 2.5


def test_derived_beat_in_echo():
    cfg = load_config("[field]\nB_gauss = 5\n[beam]\nnbar = 0.2\n[drive]\nv_photons_empty = 2.5\n")
    d = cfg.derived()
    assert d["beat_mhz"] == pytest.approx(4.67, abs=0.01)
    z = angmom.zeeman_detunings(5.0, cfg.scheme)
    assert d["delta_g_mhz"] == pytest.approx(z.delta_g / TP, rel=1e-12)
    assert d["delta_e_mhz"] == pytest.approx(z.delta_e / TP, rel=1e-12)
    assert d["Delta_mhz"] == pytest.approx(z.Delta / TP, rel=1e-12)
    assert d["C1"] == pytest.approx(0.1171875, rel=1e-12)


def test_negative_nbar_names_key_and_line():
    with pytest.raises(ConfigError) as ei:
        load_config("[beam]\nspeed_m_s = 22\nnbar = -1\n")
    assert ei.value.key == "nbar"
    assert ei.value.line == 3
    assert "nbar" in str(ei.value)


@pytest.mark.parametrize("text, key, line", [
    ("[beam]\nbogus = 1\n", "bogus", 2),
    ("[cavity]\nkappa_mhz = fast\n", "kappa_mhz", 2),
    ("[cavity]\nkappa_mhz = 0\n", "kappa_mhz", 2),
    ("[nowhere]\n", None, 1),
    ("[beam]\nnbar = 1\nnbar = 2\n", "nbar", 3),
    ("nbar = 1\n", "nbar", 1),
])
def test_parse_errors(text, key, line):
    with pytest.raises(ConfigError) as ei:
        load_config(text)
    assert ei.value.key == key
    assert ei.value.line == line


def test_birefringence_warning():
    with pytest.warns(UserWarning):
        load_config("[cavity]\nbirefringence_mhz = 0.5\n")
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        load_config("[cavity]\nbirefringence_mhz = 0.1\n")


def test_reference_lists_every_key():
    ref = reference()
    for line in serialize(default_config()).splitlines():
        if "=" in line:
            assert line.split("=")[0].strip() in ref


@pytest.mark.parametrize("name", ["fig2a", "fig2b", "fig3", "fig4"])
def test_presets_round_trip(name):
    assert name in preset_names()
    cfg = load_preset(name)
    assert load_config(serialize(cfg)) == cfg


def test_preset_values():
    assert load_preset("fig2a").beam.nbar == 0.2
    assert load_preset("fig2b").beam.nbar == 2.0
    assert load_preset("fig3").B == 4.0
    f4 = load_preset("fig4")
    assert f4.get("beam", "tilt_deg") == 1.3
    assert f4.get("drive", "beta_percent") == 1.0
    assert f4.drive.beta_percent == pytest.approx(1.0, rel=1e-14)


def test_arrival_rate_scales_with_nbar():
    cfg = default_config()
    r1 = arrival_rate(cfg.cavity, cfg.beam)
    r2 = arrival_rate(cfg.cavity, replace(cfg.beam, nbar=2 * cfg.beam.nbar))
    assert r2 == pytest.approx(2 * r1, rel=1e-14)
    assert arrival_rate(cfg.cavity, replace(cfg.beam, nbar=0.0)) == 0.0


_finite = dict(allow_nan=False, allow_infinity=False, allow_subnormal=False)


@settings(max_examples=60, deadline=None)
@given(
    kappa=st.floats(0.1, 100, **_finite),
    g=st.floats(0.0, 10, **_finite),
    B=st.floats(0.0, 20, **_finite),
    nbar=st.floats(0.0, 10, **_finite),
    fid=st.floats(0.0, 1.0, **_finite),
    tilt=st.floats(-5, 5, **_finite),
    sw=st.booleans(),
    sweep=st.lists(st.floats(0, 1000, **_finite), max_size=4),
)
def test_serialize_round_trip(kappa, g, B, nbar, fid, tilt, sw, sweep):
    cfg = default_config().replace(cavity__kappa_mhz=kappa, cavity__g_max_mhz=g, field__B_gauss=B,
                                   beam__nbar=nbar, beam__pump_fidelity=fid, beam__tilt_deg=tilt,
                                   beam__standing_wave=sw, correlator__beta_sweep_percent=tuple(sweep))
    back = load_config(serialize(cfg))
    assert back == cfg
    assert serialize(back) == serialize(cfg)


def test_config_doc_is_current():
    from pathlib import Path

    from qbeats.params import reference

    doc = (Path(__file__).parent.parent / "docs" / "config.md").read_text()
    assert reference().rstrip("\n") in doc
