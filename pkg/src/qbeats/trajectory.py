"""Quantum-trajectory engine for the driven atomic beam.

The state is kept to leading order in the H-mode coupling. Each atom carries
a zero-photon block ``a`` (one ground/excited pair at its center m), a
one-photon block ``a'`` (pairs at m-1, m+1) and a two-photon block ``a''``
(pairs at m-2, m, m+2). The zero-photon blocks evolve under Zeeman shifts,
the pi drive by the semiclassical V field and spontaneous emission; they are
renormalized atom by atom after every step, and the same factor is applied
to all blocks of that atom, conditional ones included.

Spontaneous emission is sampled per step from the norm loss of ``a``. H-mode
emission is never sampled in the base state: photon detections are
represented only through the conditional blocks installed by the
correlator, which is what the two-time correlation needs.

Each conditional copy exists twice. The shared-record copy (``B1``, ``B2``)
follows the jumps and normalization of the base atom; it gives the overlaps
with the base state. Its squared norm is a poor estimator, because the
ratio |C_q b'|^2 / |C_q a|^2 applied at each jump is heavy-tailed. The
own-record copy (``O1``, ``O2``) has its own waiting-time jump record and
keeps its weight fixed at the value installed, so it gives the conditional
atom's diagonal terms with no weight noise.

Sign conventions: emission of a q-polarized photon (q = -1, 0, +1) takes
e_m -> g_{m-q}; ``sigma_plus`` means q=+1, so the atom's m drops by one.
The H mode is x-polarized along the quantization axis, x = (e_- - e_+)/sqrt2,
so its sigma_{+1} component carries weight -1/sqrt2 and sigma_{-1} +1/sqrt2.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import _kernel_py
from . import kernel_layout as L
from .params import ConfigError, ExperimentConfig, arrival_rate

try:  # compiled core, falls back to numpy when unavailable
    from . import _kernel as _ext
except ImportError:  # pragma: no cover - exercised only without a compiler
    _ext = None

__all__ = [
    "AtomInstance",
    "IntegratorError",
    "JumpEvent",
    "SystemState",
    "TrajectoryResult",
    "apply_jump",
    "available_backends",
    "beam_update",
    "coupling_profile",
    "default_backend",
    "evolve_step",
    "run_trajectory",
]

W_PLUS = -1.0 / math.sqrt(2.0)
W_MINUS = 1.0 / math.sqrt(2.0)
EVENT_KINDS = ("spontaneous_pi", "spontaneous_sigma_plus", "spontaneous_sigma_minus", "cavity_H_emission")


class IntegratorError(RuntimeError):
    pass


def available_backends() -> list[str]:
    return (["cython"] if _ext is not None else []) + ["numpy"]


def default_backend() -> str:
    env = os.environ.get("QBEATS_BACKEND", "").strip().lower()
    if env:
        if env not in available_backends():
            raise ImportError(f"backend {env!r} unavailable; have {available_backends()}")
        return env
    return available_backends()[0]


def _kernel(name: str | None):
    name = name or default_backend()
    if name == "cython":
        if _ext is None:
            raise ImportError("compiled kernel not built")
        return _ext
    if name == "numpy":
        return _kernel_py
    raise ValueError(f"unknown backend {name!r}")


@dataclass(frozen=True)
class JumpEvent:
    kind: str
    atom_id: int | None
    time: float
    m_after: int | None = None

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise ValueError(f"unknown jump kind {self.kind!r}")
        if (self.atom_id is None) != (self.kind == "cavity_H_emission"):
            raise ValueError("atom_id is required exactly for spontaneous emission")


@dataclass
class AtomInstance:
    """Read-only snapshot of one atom."""

    id: int
    position: np.ndarray
    velocity: np.ndarray
    manifold_offset: int
    block_a: np.ndarray
    block_a1: np.ndarray
    block_a2: np.ndarray
    block_b1: np.ndarray | None = None
    block_b2: np.ndarray | None = None


def coupling_profile(position, cavity, tilt: float = 0.0, standing_wave: bool = True) -> float:
    """g at a point; the mode axis is x, the beam travels along y.

    ``tilt`` only affects the velocity, so it is accepted for symmetry with
    the beam description and not used for a static position.
    """
    x, y, z = (float(c) for c in position)
    g = cavity.g_max * math.exp(-(y * y + z * z) / cavity.waist ** 2)
    if standing_wave:
        g *= math.cos(2 * math.pi * x / cavity.wavelength)
    return g


# --- tables -------------------------------------------------------------------

@dataclass(frozen=True)
class Tables:
    prm: np.ndarray
    iprm: np.ndarray
    EXP: np.ndarray
    C0: np.ndarray
    HQ: np.ndarray
    CGR: np.ndarray
    gamma: float
    dt: float
    rec_every: int
    sample_every: int
    nbins: int
    S: int


def build_tables(cfg: ExperimentConfig, dt: float | None = None, *, absorption: bool | None = None,
                 sampling: bool = True) -> Tables:
    sch = cfg.scheme
    if sch.Fg > 3 or sch.Fe > 4:
        raise ConfigError("engine supports Fg <= 3 and Fe <= 4", "Fg")
    cav, drv, sim, cor = cfg.cavity, cfg.drive, cfg.sim, cfg.correlator
    z = cfg.zeeman
    dt = sim.dt if dt is None else dt
    if cav.gamma * dt > 0.1:
        raise ConfigError(f"dt={dt:.3g}s too large: gamma*dt must stay <= 0.1 so that the "
                          "per-step jump probability stays below 0.05", "dt_ns")
    rec_every = max(1, int(round(sim.record_interval / dt)))
    samp_every = max(rec_every, int(round(cor.sample_interval / dt / rec_every)) * rec_every)
    nb = int(round(cor.tau_max / (rec_every * dt))) + 1
    S = ((nb - 1) * rec_every) // samp_every + 1 if sampling else 1

    ms = np.arange(-L.MOFF, L.MOFF + 1)
    EXP = np.zeros((2, 3, L.NM, 2), dtype=np.complex128)
    kb = cav.kappa + 1j * cav.birefringence_split
    for nph in range(3):
        dg = -1j * ms * z.delta_g - nph * kb
        de = -1j * (ms * z.delta_e - drv.detuning) - 0.5 * cav.gamma - nph * kb
        for hi, hh in enumerate((0.5 * dt, dt)):
            EXP[hi, nph, :, 0] = np.exp(dg * hh)
            EXP[hi, nph, :, 1] = np.exp(de * hh)
    C0 = np.zeros(L.NM)
    HQ = np.zeros((L.NM, 2))
    CGR = np.zeros((L.NM, 3))
    for m in ms:
        if abs(m) <= sch.Fg:
            C0[m + L.MOFF] = sch.cg_dyn(m, 0) if abs(m) <= sch.Fe else 0.0
            HQ[m + L.MOFF, 0] = W_MINUS * sch.cg_dyn(m, -1)
            HQ[m + L.MOFF, 1] = W_PLUS * sch.cg_dyn(m, 1)
        if abs(m) <= sch.Fe:
            for q in (-1, 0, 1):
                if abs(m - q) <= sch.Fg:
                    CGR[m + L.MOFF, q + 1] = sch.cg_raw(m - q, q)
    prm = np.zeros(L.NPRM)
    prm[L.P_DT] = dt
    prm[L.P_GMAX] = cav.g_max
    prm[L.P_WAIST] = cav.waist
    prm[L.P_KWAVE] = 2 * math.pi / cav.wavelength
    prm[L.P_V0] = math.sqrt(drv.v_photons_empty)
    prm[L.P_KAPPA] = cav.kappa
    prm[L.P_GAMMA] = cav.gamma
    prm[L.P_STANDING] = 1.0 if cfg.beam.standing_wave else 0.0
    ab = drv.absorption if absorption is None else absorption
    prm[L.P_ABS] = 1.0 if ab else 0.0
    prm[L.P_BETAV] = 1.0 if drv.beta_follows_v else 0.0
    iprm = np.zeros(L.NIPRM, dtype=np.int64)
    iprm[L.Q_REC] = rec_every
    iprm[L.Q_SAMP] = samp_every
    iprm[L.Q_NB] = nb
    iprm[L.Q_S] = S
    iprm[L.Q_START] = np.iinfo(np.int64).max if not sampling else 0
    iprm[L.Q_MAXAT] = cfg.beam.max_atoms
    return Tables(prm, iprm, EXP, C0, HQ, CGR, cav.gamma, dt, rec_every, samp_every, nb, S)


# --- state --------------------------------------------------------------------

class SystemState:
    """All atom slots, live conditional samples and the V field."""

    def __init__(self, cfg: ExperimentConfig, *, seed: int = 0, dt: float | None = None,
                 absorption: bool | None = None, sampling: bool = True, backend: str | None = None):
        self.cfg = cfg
        self.tables = build_tables(cfg, dt, absorption=absorption, sampling=sampling)
        self.backend = backend or default_backend()
        M, S = cfg.beam.max_atoms, self.tables.S
        self.geo = np.zeros((M, 6))
        self.texit = np.full(M, np.inf)
        self.active = np.zeros(M, dtype=np.int8)
        self.aid = np.zeros(M, dtype=np.int64)
        self.mc = np.zeros(M, dtype=np.int64)
        self.A0 = np.zeros((M, 2), dtype=np.complex128)
        self.A1 = np.zeros((M, 2, 2), dtype=np.complex128)
        self.A2 = np.zeros((M, 3, 2), dtype=np.complex128)
        self.B1 = np.zeros((M, S, 2, 2), dtype=np.complex128)
        self.B2 = np.zeros((M, S, 3, 2), dtype=np.complex128)
        self.bact = np.zeros((M, S), dtype=np.int8)
        self.slive = np.zeros(S, dtype=np.int8)
        self.sstart = np.zeros(S, dtype=np.int64)
        self.sD = np.zeros(S)
        self.sr0 = np.ones(S, dtype=np.complex128)
        # own-record conditional copies (diagonal terms), see module docstring
        self.O1 = np.zeros((M, S, 2, 2), dtype=np.complex128)
        self.O2 = np.zeros((M, S, 3, 2), dtype=np.complex128)
        self.ow = np.zeros((M, S))
        self.omc = np.zeros((M, S), dtype=np.int64)
        self.othr = np.zeros((M, S))
        self.krng = np.random.SeedSequence([seed, 0x5EED]).generate_state(1, dtype=np.uint64)
        self.istate = np.zeros(L.NISTATE, dtype=np.int64)
        self.vstate = np.array([math.sqrt(cfg.drive.v_photons_empty)], dtype=np.complex128)
        self.ploss = np.zeros(M)
        self.rng = np.random.default_rng(seed)

    # convenience views
    @property
    def time(self) -> float:
        return float(self.istate[L.I_STEP]) * self.tables.dt

    @property
    def v_amplitude(self) -> complex:
        return complex(self.vstate[0])

    @property
    def n_atoms(self) -> int:
        return int(np.count_nonzero(self.active))

    def atoms(self) -> list[AtomInstance]:
        out = []
        t = self.time
        for i in np.nonzero(self.active)[0]:
            g = self.geo[i]
            pos = np.array([g[0] + g[3] * (t - g[5]), g[1] + g[4] * (t - g[5]), g[2]])
            live = self.slive != 0
            out.append(AtomInstance(
                id=int(self.aid[i]), position=pos, velocity=np.array([g[3], g[4], 0.0]),
                manifold_offset=int(self.mc[i]), block_a=self.A0[i].copy(),
                block_a1=self.A1[i].copy(), block_a2=self.A2[i].copy(),
                block_b1=self.B1[i, live].copy() if live.any() else None,
                block_b2=self.B2[i, live].copy() if live.any() else None))
        return out

    def add_atom(self, position, velocity=(0.0, 0.0, 0.0), m0: int = 0,
                 texit: float = np.inf, amplitudes=None) -> int:
        free = np.nonzero(self.active == 0)[0]
        if free.size == 0:
            raise ConfigError("atom cap reached; lower nbar or shrink the entry region", "max_atoms")
        i = int(free[0])
        t = self.time
        self.geo[i] = (position[0], position[1], position[2], velocity[0], velocity[1], t)
        self.texit[i] = texit
        self.mc[i] = m0
        self.A0[i] = (1.0, 0.0) if amplitudes is None else amplitudes
        self.A1[i] = 0.0
        self.A2[i] = 0.0
        self.B1[i] = 0.0
        self.B2[i] = 0.0
        self.bact[i] = 0
        self.aid[i] = self.istate[L.I_NEXT_ID]
        self.istate[L.I_NEXT_ID] += 1
        self.active[i] = 1
        return i

    def slot_of(self, atom_id: int) -> int:
        hit = np.nonzero((self.aid == atom_id) & (self.active != 0))[0]
        if hit.size == 0:
            raise KeyError(atom_id)
        return int(hit[0])

    def run(self, n_steps: int, uniforms: np.ndarray, arrivals: np.ndarray, acc, trace, events):
        """Advance ``n_steps`` with the selected backend."""
        T = self.tables
        k = _kernel(self.backend)
        done = k.run_chunk(T.prm, T.iprm, T.EXP, T.C0, T.HQ, T.CGR, self.geo, self.texit,
                           self.active, self.aid, self.mc, self.A0, self.A1, self.A2,
                           self.B1, self.B2, self.bact, self.slive, self.sstart, self.sD,
                           self.sr0, self.O1, self.O2, self.ow, self.omc, self.othr, self.krng,
                           self.istate, self.vstate, arrivals, uniforms, n_steps,
                           acc.acc, acc.comp, acc.nbin, acc.tot, acc.totc, trace, events)
        st = int(self.istate[L.I_STATUS])
        if st == L.ST_OVERFLOW:
            raise ConfigError(f"more than {self.cfg.beam.max_atoms} simultaneous atoms; "
                              "lower nbar or shrink the entry region", "max_atoms")
        if st == L.ST_RING:
            raise IntegratorError("conditional-sample ring overflow")
        return done


# --- single-step API -------------------------------------------------------------

_NO_ARRIVALS = np.zeros((0, 8))


class _NullAcc:
    def __init__(self, nb):
        self.acc = np.zeros((L.NACC, nb))
        self.comp = np.zeros((L.NACC, nb))
        self.nbin = np.zeros(nb, dtype=np.int64)
        self.tot = np.zeros(3)
        self.totc = np.zeros(3)


def evolve_step(state: SystemState, dt: float | None = None) -> dict[int, dict[str, float]]:
    """Advance one step without jumps; return each atom's jump probabilities.

    The keys are atom ids and the values map channel name to probability for
    the elapsed step. Blocks are renormalized afterwards (per-atom convention).
    """
    if dt is not None and abs(dt - state.tables.dt) > 1e-18:
        raise IntegratorError(f"state was built for dt={state.tables.dt}, got dt={dt}")
    before = {int(state.aid[i]): i for i in np.nonzero(state.active)[0]}
    M = state.active.size
    acc = _NullAcc(state.tables.nbins)
    trace = np.zeros((0, L.NTRACE))
    events = np.zeros((0, 4), dtype=np.int64)
    saved = _snapshot(state)
    state.run(1, np.full((1, M), 2.0), _NO_ARRIVALS, acc, trace, events)
    # the kernel renormalizes, so the loss comes from a replay of the raw step
    probs = {}
    loss = _norm_loss_replay(saved, state)
    sch = state.cfg.scheme
    for aid_, i in before.items():
        p = loss[i]
        if p > 1e-12 and not np.isfinite(p):
            raise IntegratorError(f"non-finite norm with dt={state.tables.dt}")
        if p < -1e-9:
            raise IntegratorError(f"norm increased by {-p:.3e} in one step; reduce dt={state.tables.dt}")
        m = int(state.mc[i])
        e2 = abs(state.A0[i, 1]) ** 2
        rq = {q: sch.cg_raw(m - q, q) ** 2 * e2 if abs(m - q) <= sch.Fg else 0.0 for q in (-1, 0, 1)}
        tot = sum(rq.values())
        frac = {q: (rq[q] / tot if tot > 0 else 0.0) for q in rq}
        probs[aid_] = {
            "spontaneous_pi": p * frac[0],
            "spontaneous_sigma_plus": p * frac[1],
            "spontaneous_sigma_minus": p * frac[-1],
        }
    return probs


def _snapshot(state: SystemState) -> dict:
    return {k: getattr(state, k).copy() for k in ("A0", "A1", "A2", "mc", "istate")}


def _norm_loss_replay(saved: dict, state: SystemState) -> np.ndarray:
    """Norm loss of each zero-photon block over the last step, by replay."""
    T = state.tables
    M = state.active.size
    loss = np.zeros(M)
    idx = np.nonzero(state.active)[0]
    if idx.size == 0:
        return loss
    a0 = saved["A0"][idx][:, None, :]
    m = saved["mc"][idx]
    t = float(saved["istate"][L.I_STEP]) * T.dt
    h = T.dt
    gk = [_kernel_py._coupling(T.prm, state.geo, idx, t),
          _kernel_py._coupling(T.prm, state.geo, idx, t + 0.5 * h)]
    gk.append(gk[1])
    gk.append(_kernel_py._coupling(T.prm, state.geo, idx, t + h))
    c0a = T.C0[m + L.MOFF]

    def da0(k, Y):
        v = _kernel_py._vfield(T.prm, gk[k], Y[:, 0, :], c0a)
        return _kernel_py._drive_deriv(Y, (gk[k] * v)[:, None], c0a[:, None])

    Eh2 = T.EXP[0, 0][m + L.MOFF][:, None, :]
    Eh = T.EXP[1, 0][m + L.MOFF][:, None, :]
    a0n, _ = _kernel_py._lawson(a0, Eh2, Eh, h, da0)
    loss[idx] = 1.0 - np.sum(np.abs(a0n[:, 0, :]) ** 2, axis=1)
    return loss


def apply_jump(state: SystemState, event: JumpEvent) -> SystemState:
    """Apply a jump to the state in place (and return it)."""
    if event.kind == "cavity_H_emission":
        from .correlator import begin_sample

        w = begin_sample(state)
        if w <= 0.0:
            raise IntegratorError("H-mode emission has zero probability in this state")
        return state
    q = {"spontaneous_pi": 0, "spontaneous_sigma_plus": 1, "spontaneous_sigma_minus": -1}[event.kind]
    i = state.slot_of(event.atom_id)
    m = int(state.mc[i])
    if state.tables.CGR[m + L.MOFF, q + 1] == 0.0 or abs(state.A0[i, 1]) == 0.0:
        raise IntegratorError(f"{event.kind} has zero probability for atom {event.atom_id}")
    _kernel_py._jump(i, m, q, state.A0, state.A1, state.A2, state.B1, state.B2, state.tables.CGR)
    state.mc[i] = m - q
    nrm = math.sqrt(float(np.sum(np.abs(state.A0[i]) ** 2)))
    for blk in (state.A0, state.A1, state.A2, state.B1, state.B2):
        blk[i] /= nrm
    return state


def beam_update(state: SystemState, dt: float, beam=None) -> SystemState:
    """Remove atoms that left the interaction region and inject new arrivals over ``dt``."""
    cfg = state.cfg
    beam = beam or cfg.beam
    cav = cfg.cavity
    t0 = state.time
    t1 = t0 + dt
    for i in np.nonzero(state.active)[0]:
        if state.texit[i] <= t1:
            live = (state.slive != 0) & (state.bact[i] != 0)
            for sl in np.nonzero(live)[0]:
                state.sD[sl] += float(np.sum(np.abs(state.B1[i, sl]) ** 2))
            state.active[i] = 0
            state.bact[i] = 0
    arr = draw_arrivals(state.rng, cav, beam, t0, t1)
    for row in arr:
        i = state.add_atom((row[1], row[2], row[3]), (row[4], row[5], 0.0), int(row[6]), row[7])
        state.geo[i, 5] = row[0]
    state.istate[L.I_STEP] += int(round(dt / state.tables.dt))
    return state


def draw_arrivals(rng: np.random.Generator, cav, beam, t0: float, t1: float) -> np.ndarray:
    """Poisson arrivals on [t0, t1): rows (t, x0, y0, z, vx, vy, m0, t_exit)."""
    rate = arrival_rate(cav, beam)
    if rate <= 0 or t1 <= t0:
        return np.zeros((0, 8))
    n = rng.poisson(rate * (t1 - t0))
    t = np.sort(rng.uniform(t0, t1, n))
    x0 = rng.uniform(0.0, cav.wavelength, n)
    z = rng.uniform(-beam.entry_halfwidth, beam.entry_halfwidth, n) * cav.waist
    if beam.speed_spread > 0:
        sp = rng.normal(beam.mean_speed, beam.speed_spread, n)
        bad = sp < 0.1 * beam.mean_speed
        while bad.any():
            sp[bad] = rng.normal(beam.mean_speed, beam.speed_spread, int(bad.sum()))
            bad = sp < 0.1 * beam.mean_speed
    else:
        sp = np.full(n, beam.mean_speed)
    vx = sp * math.sin(beam.tilt)
    vy = sp * math.cos(beam.tilt)
    u = rng.uniform(size=n)
    f = beam.pump_fidelity
    m0 = np.where(u < f, 0, np.where(u < f + 0.5 * (1 - f), -1, 1))
    Lw = beam.exit_radius * cav.waist
    y0 = np.full(n, -Lw)
    texit = t + 2 * Lw / vy
    return np.column_stack([t, x0, y0, z, vx, vy, m0, texit])


# --- full runs -------------------------------------------------------------------

@dataclass
class TrajectoryResult:
    seed: int
    backend: str
    dt: float
    record_interval: float
    partials: list = field(default_factory=list)  # AccumulatorPartial per batch
    trace: np.ndarray | None = None  # columns t, n_H, |v|^2, N, sum (g/gmax)^2
    events: np.ndarray | None = None  # columns step, kind, atom id, m after
    n_events: int = 0
    n_arrivals: int = 0

    def jump_events(self) -> list[JumpEvent]:
        if self.events is None:
            return []
        kinds = EVENT_KINDS
        return [JumpEvent(kinds[int(k)], int(a), float(s) * self.dt, int(m))
                for s, k, a, m in self.events]


def run_trajectory(cfg: ExperimentConfig, duration: float | None = None, seed: int = 0, *,
                   backend: str | None = None, record_trace: bool = True,
                   record_events: bool = False, sampling: bool = True,
                   stationary_atoms=None, absorption: bool | None = None,
                   warmup: float | None = None, chunk_steps: int = 20000) -> TrajectoryResult:
    """Run one beam trajectory; deterministic in (cfg, duration, seed, backend).

    ``stationary_atoms`` replaces the beam by fixed atoms given as
    ``(x, y, z, m0)`` tuples, present for the whole run.
    """
    from .correlator import AccumulatorPartial

    sim = cfg.sim
    duration = sim.duration if duration is None else duration
    warmup = (sim.warmup if stationary_atoms is None else 0.0) if warmup is None else warmup
    state = SystemState(cfg, seed=seed, absorption=absorption, sampling=sampling, backend=backend)
    T = state.tables
    n_warm = int(round(warmup / T.dt))
    n_main = int(round(duration / T.dt))
    n_tot = n_warm + n_main
    res = TrajectoryResult(seed=seed, backend=state.backend, dt=T.dt,
                           record_interval=T.rec_every * T.dt)
    if n_main <= 0:
        res.trace = np.zeros((0, L.NTRACE))
        res.events = np.zeros((0, 4), dtype=np.int64)
        return res
    ss = np.random.SeedSequence(seed)
    rng_beam, rng_jump = (np.random.default_rng(s) for s in ss.spawn(2))
    t_end = n_tot * T.dt
    if stationary_atoms is not None:
        rows = [(0.0, x, y, z, 0.0, 0.0, m0, np.inf) for (x, y, z, m0) in stationary_atoms]
        arrivals = np.array(rows, dtype=np.float64).reshape(-1, 8)
    else:
        arrivals = draw_arrivals(rng_beam, cfg.cavity, cfg.beam, 0.0, t_end)
    arrivals = np.ascontiguousarray(arrivals)
    res.n_arrivals = arrivals.shape[0]
    # sampling starts after warm-up on a sample-grid step
    start = -(-n_warm // T.sample_every) * T.sample_every
    if sampling:
        state.tables.iprm[L.Q_START] = start
    M = cfg.beam.max_atoms
    n_rec = n_tot // T.rec_every + 1
    trace = np.zeros((n_rec if record_trace else 0, L.NTRACE))
    ev_cap = 1 << 16 if record_events else 0
    events = np.zeros((ev_cap, 4), dtype=np.int64)
    ev_chunks = []

    nbatch = max(1, sim.batches)
    edges = [n_warm + (n_main * b) // nbatch for b in range(nbatch + 1)]
    edges[0] = 0
    for b in range(nbatch):
        part = AccumulatorPartial.empty(T.nbins)
        remaining = edges[b + 1] - edges[b]
        while remaining > 0:
            n = min(remaining, chunk_steps)
            u = rng_jump.random((n, M))
            state.istate[L.I_NEV] = 0
            state.run(n, u, arrivals, part, trace, events)
            ne = int(state.istate[L.I_NEV])
            res.n_events += ne
            if record_events:
                if ne > ev_cap:
                    # replay impossible; enlarge the buffer and fail loudly
                    raise IntegratorError(f"event buffer too small ({ne} > {ev_cap}); lower chunk_steps")
                ev_chunks.append(events[:ne].copy())
            remaining -= n
        res.partials.append(part)
    res.trace = trace[: int(state.istate[L.I_TRACE])] if record_trace else None
    res.events = (np.concatenate(ev_chunks) if ev_chunks else np.zeros((0, 4), dtype=np.int64)) \
        if record_events else None
    res.final_state = state
    return res


def write_event_log(path, result: TrajectoryResult) -> None:
    """One line per jump: time (s), kind, atom id."""
    with open(path, "w") as fh:
        for ev in result.jump_events():
            fh.write(f"{ev.time:.12e} {ev.kind} {ev.atom_id}\n")
