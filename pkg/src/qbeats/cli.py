"""Command-line front end: ``python -m qbeats <command> ...``.

Exit codes: 0 success, 2 configuration or input error, 3 numerical error,
4 insufficient data.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import multiprocessing as mp
import shutil
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import clicks as ck
from . import correlator as cr
from . import idealized as ideal
from . import params as P
from .trajectory import IntegratorError, run_trajectory

log = logging.getLogger("qbeats")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_DATA = 0, 2, 3, 4


# --- helpers --------------------------------------------------------------------------

def parse_seeds(text: str | None) -> list[int]:
    """'1,2,5-8' -> [1, 2, 5, 6, 7, 8]."""
    if text is None or not text.strip():
        raise P.ConfigError("explicit --seeds are required (e.g. --seeds 1-8)", "seeds")
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        lo, sep, hi = part.partition("-")
        try:
            a = int(lo)
            b = int(hi) if sep else a
        except ValueError:
            raise P.ConfigError(f"bad seed list entry {part!r}", "seeds") from None
        if b < a or a < 0:
            raise P.ConfigError(f"bad seed range {part!r}", "seeds")
        out.extend(range(a, b + 1))
    if not out:
        raise P.ConfigError("explicit --seeds are required (e.g. --seeds 1-8)", "seeds")
    if len(set(out)) != len(out):
        raise P.ConfigError("duplicate seeds", "seeds")
    return out


def _config(args) -> P.ExperimentConfig:
    if args.config and args.preset:
        raise P.ConfigError("give either --config or --preset, not both")
    cfg = P.load_preset(args.preset) if args.preset else P.load_config(args.config)
    upd = {}
    for item in getattr(args, "set", None) or []:
        key, eq, val = item.partition("=")
        sec, dot, name = key.partition(".")
        if not eq or not dot:
            raise P.ConfigError(f"--set expects section.key=value, got {item!r}")
        upd[(sec.strip(), name.strip())] = val.strip()
    if upd:
        cfg = P.apply_overrides(cfg, "\n".join(f"[{s}]\n{k} = {v}" for (s, k), v in upd.items()))
    return cfg


def _digest(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def csv_body_digest(path) -> str:
    """Digest of the non-comment lines of a CSV."""
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for line in fh:
            if not line.startswith(b"#"):
                h.update(line)
    return h.hexdigest()


def _write_manifest(out: Path, cfg, seeds, workers, wall, files, extra=None):
    man = {
        "version": __version__,
        "config": P.serialize(cfg),
        "seeds": list(seeds),
        "workers": workers,
        "wall_clock_s": round(wall, 3),
        "outputs": {f.name: {"sha256": _digest(f), "body_sha256": csv_body_digest(f) if f.suffix == ".csv" else None}
                    for f in files},
    }
    if extra:
        man.update(extra)
    (out / "manifest.json").write_text(json.dumps(man, indent=2, sort_keys=True) + "\n")
    return man


def _header(cfg, seeds, **kw):
    h = {"qbeats": __version__, "seeds": ",".join(map(str, seeds))}
    h.update({k: v for k, v in kw.items()})
    h["config"] = P.serialize(cfg)
    return h


# --- simulate -------------------------------------------------------------------------

def _one_seed(job):
    cfg_text, seed, keep_trace = job
    cfg = P.load_config(cfg_text)
    res = run_trajectory(cfg, seed=seed, record_trace=keep_trace)
    acc = cr.CorrelationAccumulator.from_trajectory(res, cfg)
    return acc, (res.trace if keep_trace else None)


def run_ensemble(cfg, seeds, workers=1, keep_trace=False):
    """Accumulators for every seed, merged in seed order; traces returned per seed if asked."""
    jobs = [(P.serialize(cfg), s, keep_trace) for s in seeds]
    if workers > 1 and len(jobs) > 1:
        with mp.get_context("fork").Pool(min(workers, len(jobs))) as pool:
            results = pool.map(_one_seed, jobs, chunksize=1)
    else:
        results = [_one_seed(j) for j in jobs]
    acc = results[0][0]
    for a, _ in results[1:]:
        acc = acc.merge(a)
    return acc, [t for _, t in results]


def cmd_simulate(args) -> int:
    cfg = _config(args)
    seeds = parse_seeds(args.seeds)
    out = Path(args.out)
    fresh = not out.exists()
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    written = []
    try:
        acc, traces = run_ensemble(cfg, seeds, args.workers, keep_trace=args.save_trace)
        d = cfg.drive
        levels = [d.beta_percent] + [b for b in cfg.correlator.beta_sweep_percent if b != d.beta_percent]
        for bp in levels:
            curve = acc.finalize(beta_percent=bp)
            name = "g2.csv" if bp == d.beta_percent else f"g2_beta{bp:g}.csv"
            f = out / name
            cr.write_csv(f, curve, _header(cfg, seeds, beta_percent=bp, samples=int(curve.n_samples)))
            written.append(f)
        if args.save_trace:
            f = out / "flux.csv"
            _write_flux(f, cfg, traces)
            written.append(f)
    except BaseException:
        for f in written:
            f.unlink(missing_ok=True)
        if fresh:
            shutil.rmtree(out, ignore_errors=True)
        raise
    man = _write_manifest(out, cfg, seeds, args.workers, time.time() - t0, written)
    print(f"wrote {', '.join(sorted(man['outputs']))} to {out}")
    return EXIT_OK


def _write_flux(path, cfg, traces):
    """H-mode output flux 2 kappa <b^dagger b> of each seed, concatenated in seed order."""
    kappa = cfg.cavity.kappa
    with open(path, "w") as fh:
        fh.write("# flux_hz = 2 kappa n_H, one block per seed\n")
        fh.write("seed_index,t_s,flux_hz\n")
        for i, tr in enumerate(traces):
            for t, nh in zip(tr[:, 0], tr[:, 1]):
                fh.write(f"{i},{float(t)!r},{float(2 * kappa * nh)!r}\n")


def read_flux(path):
    """(dt, flux) from a flux CSV; seed blocks are joined end to end."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
    if len(rows) < 2:
        raise cr.InsufficientDataError("flux file holds fewer than two samples")
    try:
        t = np.array([float(r["t_s"]) for r in rows])
        flux = np.array([float(r["flux_hz"]) for r in rows])
    except (KeyError, TypeError, ValueError) as e:
        raise P.ConfigError(f"malformed flux file {path}: {e}") from None
    dt = float(np.median(np.diff(t)[np.diff(t) > 0]))
    return dt, flux


# --- ideal ----------------------------------------------------------------------------

def ideal_curve(cfg, m: int = 0) -> cr.G2Curve:
    p = ideal.IdealBeatParams.from_config(cfg, m=m)
    dt = cfg.sim.record_interval
    k = int(round(cfg.correlator.tau_max / dt))
    tau = np.arange(-k, k + 1) * dt
    # a single atom's pair rate follows g^4 along a Gaussian mode, whose
    # autocorrelation has a 1/e half-width of w / (sqrt(2) v)
    sigma = P.transit_time(cfg.cavity, cfg.beam) / math.sqrt(2)
    y = ideal.ideal_g2(tau, p, sigma)
    ch = {c: np.zeros_like(y) for c in cr.CHANNELS}
    ch["one_atom"] = y  # the closed form is a single-atom curve
    return cr.G2Curve(tau, y, ch, np.zeros_like(y), 0.0, 0.0, 0.0)


def cmd_ideal(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    curve = ideal_curve(cfg)
    p = ideal.IdealBeatParams.from_config(cfg)
    V, th = ideal.visibility_phase(p)
    f = out / "ideal.csv"
    cr.write_csv(f, curve, _header(cfg, [], visibility=V, phase_rad=th,
                                   beat_hz=ideal.ideal_beat_frequency(p)))
    _write_manifest(out, cfg, [], 1, time.time() - t0, [f])
    print(f"beat {ideal.ideal_beat_frequency(p) / 1e6:.4f} MHz  visibility {V:.4f}  phase {th:.4f} rad")
    return EXIT_OK


# --- clicks ---------------------------------------------------------------------------

def cmd_clicks(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    if args.flux:
        dt, flux = read_flux(args.flux)
        seeds = parse_seeds(args.seeds) if args.seeds else [0]
    else:
        seeds = parse_seeds(args.seeds)
        _, traces = run_ensemble(cfg, seeds, args.workers, keep_trace=True)
        dt = float(traces[0][1, 0] - traces[0][0, 0])
        flux = np.concatenate([2 * cfg.cavity.kappa * tr[:, 1] for tr in traces])
    c = cfg.clicks
    st = ck.synthesize_clicks(flux, dt, c.efficiency, seeds[0], dark_rate=c.dark_rate, scale=args.scale,
                              dead_time=c.dead_time, afterpulse_prob=c.afterpulse_prob)
    f = out / ("clicks.bin" if args.format == "binary" else "clicks.txt")
    ck.write_timestamps(f, st, args.format)
    _write_manifest(out, cfg, seeds, args.workers, time.time() - t0, [f],
                    {"clicks": len(st), "scale": args.scale, "duration_s": st.duration})
    print(f"wrote {len(st)} clicks over {st.duration * 1e3:.4g} ms to {f}")
    return EXIT_OK


def cmd_correlate(args) -> int:
    cfg = _config(args)
    c = cfg.clicks
    bw = args.bin_ns * 1e-9 if args.bin_ns else c.bin_width
    tmax = args.tau_max_us * 1e-6 if args.tau_max_us else c.tau_max
    hist = None
    for path in args.files:
        h = ck.estimate_g2(ck.parse_timestamps(path), bw, tmax).histogram
        hist = h if hist is None else hist.merge(h)
    g2, err = hist.normalized()
    curve = cr.G2Curve(hist.tau, g2, {}, err, 0.0, float(hist.bins.sum()), float(sum(hist.singles_rates)))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    f = out / "g2_clicks.csv"
    cr.write_csv(f, curve, {"qbeats": __version__, "files": ",".join(map(str, args.files)),
                            "bin_width_s": hist.bin_width, "duration_s": hist.duration})
    print(f"{int(hist.bins.sum())} coincidences; wrote {f}")
    return EXIT_OK


def cmd_beatfreq(args) -> int:
    data = cr.read_csv(args.curve)
    col = args.column
    if col not in data:
        raise P.ConfigError(f"column {col!r} not in {sorted(data)}")
    tau, y = data["tau_s"], data[col]
    if np.all(np.isnan(y)):
        raise cr.InsufficientDataError(f"column {col!r} is empty")
    r = cr.beat_frequency(tau, y, window=args.window)
    if not r.found:
        raise cr.InsufficientDataError("no significant spectral peak")
    print(json.dumps({"column": col, "frequency_hz": r.frequency, "sigma_hz": r.sigma,
                      "peak": r.peak, "noise_floor": r.noise_floor}, indent=2))
    return EXIT_OK


def cmd_dump_derived(args) -> int:
    """Config echo, a blank line, then the derived block as ``quantity,value`` CSV."""
    cfg = _config(args)
    sys.stdout.write(P.serialize(cfg).rstrip("\n") + "\n\n")
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["quantity", "value"])
    for k, v in cfg.derived().items():
        w.writerow([k, repr(float(v))])
    return EXIT_OK


# --- entry ----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qbeats", description="ground-state quantum beats in cavity-QED photon correlations")
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, seeds=False, out=True):
        p.add_argument("--config", help="config file")
        p.add_argument("--preset", help=f"one of {', '.join(P.preset_names())}")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override one entry")
        if seeds:
            p.add_argument("--seeds", help="seed list, e.g. 1-8 or 1,3,5")
            p.add_argument("--workers", type=int, default=1)
        if out:
            p.add_argument("--out", default=".", help="output directory")

    p = sub.add_parser("simulate", help="run a trajectory ensemble and write g2 CSVs")
    common(p, seeds=True)
    p.add_argument("--save-trace", action="store_true", help="also write the H-mode flux trace")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("ideal", help="closed-form single-atom beat curve")
    common(p)
    p.set_defaults(func=cmd_ideal)

    p = sub.add_parser("clicks", help="synthesize time-stamp files")
    common(p, seeds=True)
    p.add_argument("--flux", help="flux CSV from 'simulate --save-trace'; otherwise simulate inline")
    p.add_argument("--scale", type=float, default=1.0, help="flux multiplier")
    p.add_argument("--format", choices=("binary", "text"), default="binary")
    p.set_defaults(func=cmd_clicks)

    p = sub.add_parser("correlate", help="g2 from time-stamp files")
    common(p)
    p.add_argument("files", nargs="+")
    p.add_argument("--bin-ns", type=float)
    p.add_argument("--tau-max-us", type=float)
    p.set_defaults(func=cmd_correlate)

    p = sub.add_parser("beatfreq", help="beat frequency of a curve CSV")
    p.add_argument("curve")
    p.add_argument("--column", default="g2_total")
    p.add_argument("--window", default="hann")
    p.set_defaults(func=cmd_beatfreq)

    p = sub.add_parser("dump-derived", help="print the full config and derived quantities")
    common(p, out=False)
    p.set_defaults(func=cmd_dump_derived)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (P.ConfigError, ck.ClickFormatError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (IntegratorError, FloatingPointError, np.linalg.LinAlgError) as e:
        print(f"numerical error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except cr.InsufficientDataError as e:
        print(f"insufficient data: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
