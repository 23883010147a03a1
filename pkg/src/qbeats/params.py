"""Experiment configuration: parsing, validation, unit handling, derived quantities.

Config files are flat ``key = value`` text grouped in ``[section]`` blocks.
Frequencies are entered as f/2pi in MHz, fields in gauss and lengths in um,
matching how the apparatus numbers are usually quoted. Everything is held
internally in SI (rad/s, s, m). See README.md for the key reference.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from scipy import integrate

from . import angmom

TWO_PI_MHZ = 2 * math.pi * 1e6

__all__ = [
    "BeamParams",
    "CavityParams",
    "ClickParams",
    "ConfigError",
    "CorrelatorParams",
    "DriveParams",
    "ExperimentConfig",
    "SimParams",
    "arrival_rate",
    "cooperativity",
    "default_config",
    "load_config",
    "apply_overrides",
    "load_preset",
    "preset_names",
    "saturation_photon_number",
    "serialize",
    "transit_time",
]


class ConfigError(ValueError):
    def __init__(self, msg: str, key: str | None = None, line: int | None = None):
        where = []
        if key is not None:
            where.append(f"key {key!r}")
        if line is not None:
            where.append(f"line {line}")
        super().__init__(f"{msg} ({', '.join(where)})" if where else msg)
        self.key = key
        self.line = line


@dataclass(frozen=True)
class CavityParams:
    kappa: float
    gamma: float
    g_max: float
    waist: float
    length: float
    birefringence_split: float
    wavelength: float


@dataclass(frozen=True)
class BeamParams:
    mean_speed: float
    nbar: float
    tilt: float
    pump_fidelity: float
    speed_spread: float = 0.0
    entry_halfwidth: float = 3.0  # in waists, transverse (z) extent of the entry plane
    exit_radius: float = 3.0  # in waists, entry/departure distance from the axis
    standing_wave: bool = True
    max_atoms: int = 32


@dataclass(frozen=True)
class DriveParams:
    v_photons_empty: float
    detuning: float
    beta: complex
    absorption: bool = True
    beta_follows_v: bool = False

    @property
    def beta_percent(self) -> float:
        return 100.0 * abs(self.beta) ** 2


@dataclass(frozen=True)
class SimParams:
    dt: float
    duration: float
    warmup: float
    record_interval: float
    batches: int


@dataclass(frozen=True)
class CorrelatorParams:
    sample_interval: float
    tau_max: float
    beta_sweep_percent: tuple


@dataclass(frozen=True)
class ClickParams:
    efficiency: float
    dark_rate: float
    bin_width: float
    tau_max: float
    dead_time: float
    afterpulse_prob: float


# --- schema -----------------------------------------------------------------

def _pos(v):
    return v > 0


def _nonneg(v):
    return v >= 0


def _unit(v):
    return 0 <= v <= 1


def _parse_bool(s: str) -> bool:
    t = s.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_list(s: str) -> tuple:
    s = s.strip()
    if not s:
        return ()
    return tuple(float(x) for x in s.replace(";", ",").split(","))


def _fmt_list(v: tuple) -> str:
    return ", ".join(repr(float(x)) for x in v)


# (section, key): (parser, default, check, description)
_SCHEMA: dict[tuple[str, str], tuple[Callable, Any, Callable | None, str]] = {
    ("cavity", "kappa_mhz"): (float, 3.2, _pos, "H-mode field decay rate kappa/2pi [MHz]"),
    ("cavity", "gamma_mhz"): (float, 6.0, _pos, "excited-state linewidth gamma/2pi [MHz]"),
    ("cavity", "g_max_mhz"): (float, 1.5, _nonneg, "peak coupling on m=0->m'=0, g/2pi [MHz]"),
    ("cavity", "waist_um"): (float, 56.0, _pos, "TEM00 waist [um]"),
    ("cavity", "length_um"): (float, 2200.0, _pos, "cavity length [um]"),
    ("cavity", "birefringence_mhz"): (float, 0.0, _nonneg, "H/V mode splitting /2pi [MHz]"),
    ("cavity", "wavelength_um"): (float, 0.780, _pos, "standing-wave wavelength [um]"),
    ("atom", "Fg"): (int, 3, _pos, "ground hyperfine F"),
    ("atom", "Fe"): (int, 4, _pos, "excited hyperfine F'"),
    ("atom", "J2_ground"): (int, 1, _pos, "2J of the ground fine-structure level"),
    ("atom", "J2_excited"): (int, 3, _pos, "2J of the excited fine-structure level"),
    ("atom", "I2"): (int, 5, _nonneg, "2I nuclear spin"),
    ("atom", "gJ_ground"): (float, 2.002, None, "ground gJ"),
    ("atom", "gJ_excited"): (float, 4.0 / 3.0, None, "excited gJ"),
    ("field", "B_gauss"): (float, 5.0, _nonneg, "magnetic field along the drive polarization [G]"),
    ("beam", "speed_m_s"): (float, 22.0, _pos, "mean atomic speed [m/s]"),
    ("beam", "speed_spread_m_s"): (float, 0.0, _nonneg, "Gaussian speed spread, 0 = monochromatic [m/s]"),
    ("beam", "nbar"): (float, 0.2, _nonneg, "mean of sum_i (g_i/g_max)^2"),
    ("beam", "tilt_deg"): (float, 0.0, None, "beam tilt towards the cavity axis [deg]"),
    ("beam", "pump_fidelity"): (float, 1.0, _unit, "probability to enter in m=0"),
    ("beam", "entry_halfwidth_waists"): (float, 3.0, _pos, "half-height of the entry plane [waists]"),
    ("beam", "exit_radius_waists"): (float, 3.0, _pos, "entry/exit distance from the mode axis [waists]"),
    ("beam", "standing_wave"): (_parse_bool, True, None, "include the cos(kx) standing-wave factor"),
    ("beam", "max_atoms"): (int, 32, _pos, "cap on simultaneous atoms"),
    ("drive", "v_photons_empty"): (float, 2.5, _nonneg, "V-mode photons with no atoms"),
    ("drive", "detuning_mhz"): (float, 0.0, None, "drive minus atomic frequency /2pi [MHz]"),
    ("drive", "absorption"): (_parse_bool, True, None, "atomic back-action on the V mode"),
    ("drive", "beta_percent"): (float, 0.0, _nonneg, "background |beta|^2 as % of mean H photon number"),
    ("drive", "beta_phase_deg"): (float, 0.0, None, "background phase [deg]"),
    ("drive", "beta_follows_v"): (_parse_bool, False, None, "scale background with the V amplitude"),
    ("sim", "dt_ns"): (float, 2.5, _pos, "integrator step [ns]"),
    ("sim", "duration_us"): (float, 100.0, _nonneg, "simulated time per seed after warm-up [us]"),
    ("sim", "warmup_us"): (float, -1.0, None, "warm-up time, negative = one crossing time [us]"),
    ("sim", "record_ns"): (float, 10.0, _pos, "trace and delay-bin spacing [ns]"),
    ("sim", "batches"): (int, 16, _pos, "batch-means blocks per seed"),
    ("correlator", "sample_interval_ns"): (float, 100.0, _pos, "spacing of conditional samples [ns]"),
    ("correlator", "tau_max_us"): (float, 4.0, _pos, "largest delay [us]"),
    ("correlator", "beta_sweep_percent"): (_parse_list, (), None, "extra background levels to finalize [%]"),
    ("clicks", "efficiency"): (float, 1.0, lambda v: 0 < v <= 1, "overall detection efficiency"),
    ("clicks", "dark_rate_hz"): (float, 0.0, _nonneg, "dark counts per detector [Hz]"),
    ("clicks", "bin_ns"): (float, 10.0, _pos, "histogram bin [ns]"),
    ("clicks", "tau_max_us"): (float, 4.0, _pos, "histogram half-range [us]"),
    ("clicks", "dead_time_ns"): (float, 0.0, _nonneg, "detector dead time [ns]"),
    ("clicks", "afterpulse_prob"): (float, 0.0, _unit, "afterpulse probability per click"),
}

_SECTIONS = list(dict.fromkeys(s for s, _ in _SCHEMA))


def _format(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return _fmt_list(v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated parameter set; ``values`` holds user-unit entries keyed by (section, key)."""

    values: tuple  # sorted ((section, key), value) pairs, hashable

    def __getitem__(self, sk: tuple[str, str]):
        return dict(self.values)[sk]

    def get(self, section: str, key: str):
        return dict(self.values)[(section, key)]

    def replace(self, **updates) -> "ExperimentConfig":
        """Return a copy with ``section__key=value`` overrides applied and validated."""
        vals = dict(self.values)
        for name, v in updates.items():
            sec, _, key = name.partition("__")
            if (sec, key) not in _SCHEMA:
                raise ConfigError("unknown key", f"{sec}.{key}")
            vals[(sec, key)] = v
        return _build(vals)

    @property
    def scheme(self) -> angmom.LevelScheme:
        g = self.get
        return angmom.level_scheme(g("atom", "Fg"), g("atom", "Fe"), g("atom", "J2_ground"),
                                   g("atom", "J2_excited"), g("atom", "I2"),
                                   g("atom", "gJ_ground"), g("atom", "gJ_excited"))

    @property
    def cavity(self) -> CavityParams:
        g = self.get
        return CavityParams(
            kappa=g("cavity", "kappa_mhz") * TWO_PI_MHZ,
            gamma=g("cavity", "gamma_mhz") * TWO_PI_MHZ,
            g_max=g("cavity", "g_max_mhz") * TWO_PI_MHZ,
            waist=g("cavity", "waist_um") * 1e-6,
            length=g("cavity", "length_um") * 1e-6,
            birefringence_split=g("cavity", "birefringence_mhz") * TWO_PI_MHZ,
            wavelength=g("cavity", "wavelength_um") * 1e-6,
        )

    @property
    def beam(self) -> BeamParams:
        g = self.get
        return BeamParams(
            mean_speed=g("beam", "speed_m_s"),
            nbar=g("beam", "nbar"),
            tilt=math.radians(g("beam", "tilt_deg")),
            pump_fidelity=g("beam", "pump_fidelity"),
            speed_spread=g("beam", "speed_spread_m_s"),
            entry_halfwidth=g("beam", "entry_halfwidth_waists"),
            exit_radius=g("beam", "exit_radius_waists"),
            standing_wave=g("beam", "standing_wave"),
            max_atoms=g("beam", "max_atoms"),
        )

    @property
    def drive(self) -> DriveParams:
        g = self.get
        amp = math.sqrt(g("drive", "beta_percent") / 100.0)
        ph = math.radians(g("drive", "beta_phase_deg"))
        return DriveParams(
            v_photons_empty=g("drive", "v_photons_empty"),
            detuning=g("drive", "detuning_mhz") * TWO_PI_MHZ,
            beta=complex(amp * math.cos(ph), amp * math.sin(ph)),
            absorption=g("drive", "absorption"),
            beta_follows_v=g("drive", "beta_follows_v"),
        )

    @property
    def B(self) -> float:
        return self.get("field", "B_gauss")

    @property
    def zeeman(self) -> angmom.ZeemanSplitting:
        return angmom.zeeman_detunings(self.B, self.scheme)

    @property
    def sim(self) -> SimParams:
        g = self.get
        w = g("sim", "warmup_us")
        if w < 0:
            b = self.beam
            w = 2 * b.exit_radius * self.cavity.waist / (b.mean_speed * math.cos(b.tilt)) * 1e6
        return SimParams(
            dt=g("sim", "dt_ns") * 1e-9,
            duration=g("sim", "duration_us") * 1e-6,
            warmup=w * 1e-6,
            record_interval=g("sim", "record_ns") * 1e-9,
            batches=g("sim", "batches"),
        )

    @property
    def correlator(self) -> CorrelatorParams:
        g = self.get
        return CorrelatorParams(
            sample_interval=g("correlator", "sample_interval_ns") * 1e-9,
            tau_max=g("correlator", "tau_max_us") * 1e-6,
            beta_sweep_percent=g("correlator", "beta_sweep_percent"),
        )

    @property
    def clicks(self) -> ClickParams:
        g = self.get
        return ClickParams(
            efficiency=g("clicks", "efficiency"),
            dark_rate=g("clicks", "dark_rate_hz"),
            bin_width=g("clicks", "bin_ns") * 1e-9,
            tau_max=g("clicks", "tau_max_us") * 1e-6,
            dead_time=g("clicks", "dead_time_ns") * 1e-9,
            afterpulse_prob=g("clicks", "afterpulse_prob"),
        )

    def derived(self) -> dict[str, float]:
        """Echo block of derived quantities (SI unless the name says otherwise)."""
        c, b, z = self.cavity, self.beam, self.zeeman
        sch = self.scheme
        out = {
            "C1": cooperativity(c),
            "n0": saturation_photon_number(c) if c.g_max > 0 else math.inf,
            "transit_time_us": transit_time(c, b) * 1e6,
            "gF_ground": sch.gF_ground,
            "gF_excited": sch.gF_excited,
            "delta_g_mhz": z.delta_g / TWO_PI_MHZ,
            "delta_e_mhz": z.delta_e / TWO_PI_MHZ,
            "Delta_mhz": z.Delta / TWO_PI_MHZ,
            "beat_mhz": 2 * z.delta_g / TWO_PI_MHZ,
            "homodyne_beat_mhz": z.delta_g / TWO_PI_MHZ,
            "arrival_rate_hz": arrival_rate(c, b),
            "v_amplitude_empty": math.sqrt(self.drive.v_photons_empty),
            "beta_percent": self.drive.beta_percent,
        }
        return out


# --- derived cavity-QED numbers ----------------------------------------------

def cooperativity(c: CavityParams) -> float:
    return c.g_max ** 2 / (c.gamma * c.kappa)


def saturation_photon_number(c: CavityParams) -> float:
    if c.g_max == 0:
        raise ConfigError("saturation photon number undefined for g_max=0", "g_max_mhz")
    return c.gamma ** 2 / (3 * c.g_max ** 2)


def transit_time(c: CavityParams, b: BeamParams) -> float:
    if b.mean_speed <= 0:
        raise ConfigError("mean speed must be positive", "speed_m_s")
    return c.waist / b.mean_speed


def _mean_inverse_speed(b: BeamParams) -> float:
    vy = b.mean_speed * math.cos(b.tilt)
    if b.speed_spread <= 0:
        return 1.0 / vy
    s = b.speed_spread
    lo = 0.1 * b.mean_speed
    pdf = lambda v: math.exp(-0.5 * ((v - b.mean_speed) / s) ** 2)  # noqa: E731
    hi = b.mean_speed + 10 * s
    norm = integrate.quad(pdf, lo, hi)[0]
    inv = integrate.quad(lambda v: pdf(v) / v, lo, hi)[0]
    return inv / norm / math.cos(b.tilt)


def arrival_rate(c: CavityParams, b: BeamParams) -> float:
    """Poisson arrival rate that makes the time average of sum_i (g_i/g_max)^2 equal nbar.

    Each atom crosses from -L*w to +L*w along the beam, so its integrated
    weight is E[1/v_y] * w * sqrt(pi/2) * erf(sqrt(2) L), times the average of
    exp(-2 z^2/w^2) over the entry plane and 1/2 for the standing wave.
    """
    if b.nbar == 0:
        return 0.0
    L, h = b.exit_radius, b.entry_halfwidth
    along = c.waist * math.sqrt(math.pi / 2) * math.erf(math.sqrt(2) * L)
    across = math.sqrt(math.pi / 2) * math.erf(math.sqrt(2) * h) / (2 * h)
    wave = 0.5 if b.standing_wave else 1.0
    per_atom = _mean_inverse_speed(b) * along * across * wave
    return float(b.nbar / per_atom)


# --- parsing -------------------------------------------------------------------

def _build(vals: dict) -> ExperimentConfig:
    for (sec, key), (parser, default, check, _) in _SCHEMA.items():
        v = vals.setdefault((sec, key), default)
        if check is not None and not check(v):
            raise ConfigError(f"value {v!r} out of range", key, None)
    cfg = ExperimentConfig(tuple(sorted(vals.items())))
    try:
        sch = cfg.scheme
    except angmom.AngmomError as e:
        raise ConfigError(str(e), "Fg/Fe") from None
    if cfg.get("cavity", "birefringence_mhz") > 0.2:
        warnings.warn("birefringence splitting above 200 kHz", stacklevel=3)
    del sch
    return cfg


def _parse_text(text: str, base: dict | None = None) -> ExperimentConfig:
    vals: dict = dict(base or {})
    section = None
    seen: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in _SECTIONS:
                raise ConfigError(f"unknown section [{section}]", None, lineno)
            continue
        if "=" not in line:
            raise ConfigError("expected key = value", None, lineno)
        key, _, val = (p.strip() for p in line.partition("="))
        if section is None:
            raise ConfigError("key outside any section", key, lineno)
        if (section, key) not in _SCHEMA:
            raise ConfigError("unknown key", key, lineno)
        if (section, key) in seen:
            raise ConfigError(f"duplicate key (first on line {seen[(section, key)]})", key, lineno)
        seen[(section, key)] = lineno
        parser, _, check, _ = _SCHEMA[(section, key)]
        try:
            v = parser(val)
        except ValueError:
            raise ConfigError(f"cannot parse {val!r}", key, lineno) from None
        if check is not None and not check(v):
            raise ConfigError(f"value {v!r} out of range", key, lineno)
        vals[(section, key)] = v
    return _build(vals)


def load_config(source: str | Path | None = None) -> ExperimentConfig:
    """Load from a path, from config text, or return defaults for ``None``."""
    if source is None:
        return _build({})
    if isinstance(source, Path) or ("\n" not in str(source) and "=" not in str(source)):
        p = Path(source)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        source = p.read_text()
    return _parse_text(str(source))


def apply_overrides(cfg: ExperimentConfig, text: str) -> ExperimentConfig:
    """Config text whose entries replace those of ``cfg``."""
    return _parse_text(text, base=dict(cfg.values))


def default_config() -> ExperimentConfig:
    return _build({})


def serialize(cfg: ExperimentConfig) -> str:
    vals = dict(cfg.values)
    out = []
    for sec in _SECTIONS:
        out.append(f"[{sec}]")
        for (s, key), (_, _, _, desc) in _SCHEMA.items():
            if s == sec:
                out.append(f"{key} = {_format(vals[(s, key)])}")
        out.append("")
    return "\n".join(out)


def reference() -> str:
    """Human-readable key reference."""
    lines = []
    for (sec, key), (_, default, _, desc) in _SCHEMA.items():
        lines.append(f"[{sec}] {key} (default {_format(default)}): {desc}")
    return "\n".join(lines)


_PRESET_DIR = Path(__file__).with_name("presets")


def preset_names() -> list[str]:
    return sorted(p.stem for p in _PRESET_DIR.glob("*.cfg"))


def load_preset(name: str) -> ExperimentConfig:
    p = _PRESET_DIR / f"{name}.cfg"
    if not p.exists():
        raise ConfigError(f"unknown preset {name!r}; choose from {preset_names()}")
    return _parse_text(p.read_text())
