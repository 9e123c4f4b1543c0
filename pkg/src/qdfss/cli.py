"""Command-line driver: simulate, fit, stats, afm, pipeline.

Exit codes: 0 success, 2 input or configuration error, 3 one or more dots
could not be analysed.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import __version__
from . import afm, config as cfgmod, io, stats
from .doublet import DarkMeasurementError, ExcitonDoublet, mev_to_wavelength
from .fssfit import FitOptions, NoFitError, UnderdeterminedError, fit_scan
from .peakfit import NoPeakError, UnresolvedError, centroid_curve, scan_centroids
from .polar import ChannelParams
from .spectra import RNG_NAME, NoiseModel, SpectrometerConfig, scan_angles, synthesize_scan

EXIT_OK, EXIT_INPUT, EXIT_PARTIAL = 0, 2, 3
ANALYSIS_ERRORS = (UnderdeterminedError, NoFitError, NoPeakError, UnresolvedError,
                   DarkMeasurementError, np.linalg.LinAlgError)


class InputError(Exception):
    pass


def _pmap(fn: Callable, items: Sequence, workers: int) -> list:
    """Ordered map; results never depend on the worker count."""
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _dot_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=(index,)).generate_state(1, np.uint64)[0])


def dot_definitions(cfg: dict) -> list[dict]:
    """Generating parameters of every dot described by the config."""
    d = cfg["doublet"]
    ch = cfg["channel"]
    pop = cfg["population"]
    if pop is None:
        return [{
            "dot_id": "dot-000",
            "epsilon_meV": float(d["epsilon_meV"]),
            "s_ueV": float(d["s_ueV"]),
            "p": float(d["p"]),
            "theta_rad": math.radians(ch["theta_deg"]),
            "phi_rad": math.radians(ch["phi_deg"]),
            "noise_seed": _dot_seed(cfg["seed"], 0),
        }]
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(cfg["seed"])))
    dots = []
    for i in range(pop["n_dots"]):
        s, theta, phi, de = rng.random(4)
        dots.append({
            "dot_id": f"dot-{i:03d}",
            "epsilon_meV": float(d["epsilon_meV"] + pop["epsilon_spread_meV"] * (2 * de - 1)),
            "s_ueV": float(pop["s_min_ueV"] + (pop["s_max_ueV"] - pop["s_min_ueV"]) * s),
            "p": float(pop["p"]),
            "theta_rad": float(math.pi * theta),
            "phi_rad": float(math.pi * (2 * phi - 1)),
            "noise_seed": _dot_seed(cfg["seed"], i),
        })
    return dots


def _simulate_dot(args) -> dict:
    dot, cfg, outdir = args
    sc = cfg["spectrometer"]
    spectrometer = SpectrometerConfig(**sc)
    nz = cfg["noise"]
    noise = NoiseModel(kind=nz["kind"], peak_counts=nz["peak_counts"], seed=dot["noise_seed"],
                       sigma_counts=nz["sigma_counts"], background=nz["background"])
    scan = cfg["scan"]
    settings = scan_angles(scan["kind"], scan["start_deg"], scan["stop_deg"], scan["step_deg"])
    doublet = ExcitonDoublet(dot["epsilon_meV"], dot["s_ueV"], dot["p"])
    channel = ChannelParams(dot["theta_rad"], dot["phi_rad"])
    spectra = synthesize_scan(doublet, channel, settings, spectrometer, noise)
    rel_dir = Path("spectra") / dot["dot_id"]
    (Path(outdir) / rel_dir).mkdir(parents=True, exist_ok=True)
    files = []
    echo = spectrometer.to_dict()
    for k, sp in enumerate(spectra):
        rel = rel_dir / f"chi_{k:03d}.csv"
        io.write_spectrum(Path(outdir) / rel, sp, echo)
        files.append(rel.as_posix())
    return {"dot_id": dot["dot_id"], "kind": scan["kind"], "truth": dot, "files": files}


def simulate_bundle(cfg: dict, outdir: Path, workers: int = 1) -> dict:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    dots = dot_definitions(cfg)
    entries = _pmap(_simulate_dot, [(d, cfg, str(outdir)) for d in dots], workers)
    manifest = {
        "schema_version": cfgmod.SCHEMA_VERSION,
        "tool_version": __version__,
        "rng": RNG_NAME,
        "config": cfg,
        "dots": sorted(entries, key=lambda e: e["dot_id"]),
    }
    io.write_json(outdir / "manifest.json", manifest)
    return manifest


def _fit_dot(args) -> dict:
    entry, bundle, fitcfg, outdir = args
    dot_id = entry["dot_id"]
    try:
        spectra = []
        for rel in entry["files"]:
            path = Path(bundle) / rel
            if not path.exists():
                raise InputError(f"missing spectrum file {path}")
            spectra.append(io.read_spectrum(path))
        if not spectra:
            raise UnderdeterminedError("underdetermined: no spectra")
        table = scan_centroids(spectra, fitcfg["shape"], fitcfg["centroid_method"])
        io.write_centroids(Path(outdir) / "centroids" / f"{dot_id}.csv", table)
        curve, ref = centroid_curve(table)
        opts = FitOptions(fit_p=bool(fitcfg["fit_p"]), fix_p=float(fitcfg["fix_p"]),
                          reference_energy=ref)
        result = fit_scan(entry["kind"], curve, opts)
    except ANALYSIS_ERRORS as exc:
        return {"dot_id": dot_id, "error": str(exc)}
    rec = result.to_record(dot_id)
    rec["centroid_method"] = table.method
    rec["theta_deg"] = math.degrees(result.theta)
    rec["phi_deg"] = math.degrees(result.phi)
    rec["dipole_deg"] = math.degrees(result.dipole_angle)
    rec["sigmas"] = result.sigmas
    return rec


def fit_bundle(bundle: Path, outdir: Path, fitcfg: dict, workers: int = 1) -> dict:
    bundle = Path(bundle)
    mpath = bundle / "manifest.json"
    if not mpath.exists():
        raise InputError(f"manifest not found: {mpath}")
    manifest = json.loads(mpath.read_text())
    outdir = Path(outdir)
    (outdir / "centroids").mkdir(parents=True, exist_ok=True)
    for entry in manifest["dots"]:
        for rel in entry["files"]:
            if not (bundle / rel).exists():
                raise InputError(f"missing spectrum file {bundle / rel}")
    jobs = [(e, str(bundle), fitcfg, str(outdir)) for e in manifest["dots"]]
    out = _pmap(_fit_dot, jobs, workers)
    out.sort(key=lambda r: r["dot_id"])
    results = [r for r in out if "error" not in r]
    failures = [r for r in out if "error" in r]
    doc = {
        "schema_version": cfgmod.SCHEMA_VERSION,
        "tool_version": __version__,
        "fit_options": fitcfg,
        "results": results,
        "failures": failures,
    }
    io.write_json(outdir / "fits.json", doc)
    return doc


def records_from_fits(doc: dict, cohort: str = "custom") -> list[stats.DotRecord]:
    return [
        stats.DotRecord(
            dot_id=r["dot_id"], cohort=cohort,
            wavelength=float(mev_to_wavelength(r["epsilon_meV"])),
            s=r["s_ueV"], s_sigma=r["s_sigma_ueV"], dipole_angle=r["dipole_rad"],
            source_model=r["model"],
        )
        for r in doc["results"]
    ]


def stats_outputs(records: Sequence[stats.DotRecord], outdir: Path,
                  thresholds: Sequence[float] = (40.0,), bin_width: float = 10.0) -> dict:
    if not records:
        raise InputError("no dot records")
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    groups = stats.by_cohort(records)
    summary: dict = {"tool_version": __version__, "thresholds_ueV": list(thresholds), "cohorts": {}}
    hist_rows, polar_rows, scatter_rows = [], [], []
    for label, recs in groups.items():
        s = stats.summarize(recs, thresholds)
        entry = s.to_dict()
        entry["text"] = s.text()
        if len(recs) >= 3:
            try:
                entry["wavelength_correlation"] = stats.wavelength_correlation(recs)
            except ValueError as exc:
                entry["wavelength_correlation"] = {"error": str(exc)}
        summary["cohorts"][label] = entry
        for lo, hi, c in stats.histogram(recs, bin_width):
            hist_rows.append([label, float(lo), float(hi), c])
        for r in recs:
            if r.dipole_angle is not None and math.isfinite(r.dipole_angle):
                a = r.dipole_angle % math.pi
                polar_rows.append([label, r.dot_id, math.degrees(a), a, float(r.s)])
            scatter_rows.append([label, r.dot_id, float(r.wavelength), float(r.s)])
    if "SK_InP" in groups and "DE_InP" in groups:
        summary["improvement_SK_InP_vs_DE_InP"] = stats.improvement_metrics(
            stats.summarize(groups["SK_InP"]), stats.summarize(groups["DE_InP"]))
    io.write_json(outdir / "summary.json", summary)
    io.write_rows(outdir / "histogram.csv", ["cohort", "lo_ueV", "hi_ueV", "count"], hist_rows)
    io.write_rows(outdir / "polar.csv", ["cohort", "dot_id", "angle_deg", "angle_rad", "s_ueV"], polar_rows)
    io.write_rows(outdir / "scatter.csv", ["cohort", "dot_id", "wavelength_nm", "s_ueV"], scatter_rows)
    return summary


def summary_lines(summary: dict) -> list[str]:
    lines = []
    for label, entry in summary["cohorts"].items():
        fr = ", ".join(f"below {float(t):g} μeV: {100 * v:.0f}%" for t, v in entry["fraction_below"].items())
        lines.append(f"{label}: {entry['text']} (n={entry['n']}, std {entry['std']:.1f} μeV; {fr})")
    imp = summary.get("improvement_SK_InP_vs_DE_InP")
    if imp:
        lines.append(f"SK_InP / DE_InP mean ratio {imp['ratio']:.2f} ({imp['ratio_text']}), change {imp['percent_text']}")
    return lines


def afm_outputs(hm: afm.HeightMap, outdir: Path, opts: Optional[afm.SegmentOptions] = None) -> dict:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    fits = afm.analyze(hm, opts)
    rows = [[f.center[0], f.center[1], f.r_x, f.r_y, math.degrees(f.angle), f.aspect_ratio, f.height]
            for f in fits]
    io.write_rows(outdir / "dots.csv",
                  ["center_x_nm", "center_y_nm", "rx_nm", "ry_nm", "angle_deg", "aspect_ratio", "height_nm"],
                  rows)
    summary = {
        "tool_version": __version__,
        "n_dots": len(fits),
        "density_cm2": afm.dot_density(len(fits), hm),
        "pixel_size_nm": hm.pixel_size,
        "shape_px": list(hm.shape),
    }
    if fits:
        summary["morphology"] = afm.morphology_summary(fits)
    io.write_json(outdir / "afm_summary.json", summary)
    return summary


def run_pipeline(cfg: dict, outdir: Path, workers: int = 1) -> dict:
    outdir = Path(outdir)
    stage = "simulate"
    try:
        manifest = simulate_bundle(cfg, outdir / "bundle", workers)
        stage = "fit"
        fits = fit_bundle(outdir / "bundle", outdir / "fit", cfg["fit"], workers)
        stage = "stats"
        records = records_from_fits(fits, cfg["cohort"])
        summary = stats_outputs(records, outdir / "stats") if records else None
    except (InputError, ValueError) as exc:
        raise InputError(f"stage {stage}: {exc}") from exc
    by_id = {r["dot_id"]: r for r in fits["results"]}
    dots = []
    errors = []
    for entry in manifest["dots"]:
        truth = dict(entry["truth"])
        rec = by_id.get(entry["dot_id"])
        row = {"dot_id": entry["dot_id"], "truth": truth, "fit": rec}
        if rec is not None:
            row["abs_error_s_ueV"] = abs(rec["s_ueV"] - abs(truth["s_ueV"]))
            errors.append(row["abs_error_s_ueV"])
        dots.append(row)
    errs = np.array(errors) if errors else np.array([np.nan])
    report = {
        "schema_version": cfgmod.SCHEMA_VERSION,
        "tool_version": __version__,
        "rng": RNG_NAME,
        "config": cfg,
        "dots": dots,
        "failures": fits["failures"],
        "recovery": {
            "n_dots": len(dots),
            "n_failed": len(fits["failures"]),
            "fraction_within_2ueV": float(np.mean(errs < 2.0)) if errors else 0.0,
            "max_abs_error_ueV": float(np.nanmax(errs)) if errors else None,
            "median_abs_error_ueV": float(np.median(errs)) if errors else None,
        },
        "stats": summary,
    }
    io.write_json(outdir / "report.json", report)
    return report


def _load_config(args) -> dict:
    raw = json.loads(Path(args.config).read_text()) if args.config else {}
    cfg = cfgmod.resolve(raw)
    for item in args.set or []:
        key, _, value = item.partition("=")
        try:
            parsed = json.loads(value)
        except json.JSONDecodeError:
            parsed = value
        cfgmod.set_path(cfg, key, parsed)
    if args.seed is not None:
        cfg["seed"] = args.seed
    cfgmod.validate(cfg)
    return cfg


def _workers(args) -> int:
    return args.workers if args.workers is not None else (os.cpu_count() or 1)


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    manifest = simulate_bundle(cfg, Path(args.out), _workers(args))
    n = sum(len(d["files"]) for d in manifest["dots"])
    print(f"wrote {n} spectra for {len(manifest['dots'])} dot(s) to {args.out}")
    return EXIT_OK


def cmd_fit(args) -> int:
    fitcfg = dict(cfgmod.DEFAULTS["fit"])
    if args.fit_p:
        fitcfg["fit_p"] = True
    if args.method:
        fitcfg["centroid_method"] = args.method
    if args.shape:
        fitcfg["shape"] = args.shape
    out = Path(args.out or args.bundle)
    doc = fit_bundle(Path(args.bundle), out, fitcfg, _workers(args))
    for r in doc["results"]:
        print(f"{r['dot_id']} {r['model']}: s = {r['s_ueV']:.2f} ± {r['s_sigma_ueV']:.2f} μeV, "
              f"theta = {r['theta_deg']:.1f} deg, phi = {r['phi_deg']:.1f} deg")
    for f in doc["failures"]:
        print(f"{f['dot_id']} FAILED: {f['error']}", file=sys.stderr)
    return EXIT_PARTIAL if doc["failures"] else EXIT_OK


def cmd_stats(args) -> int:
    path = Path(args.records)
    if not path.exists():
        raise InputError(f"records file not found: {path}")
    records = io.read_records(path)
    if not records:
        raise InputError(f"{path}: no records")
    summary = stats_outputs(records, Path(args.out), args.threshold or [40.0], args.bin_width)
    for line in summary_lines(summary):
        print(line)
    return EXIT_OK


def cmd_afm(args) -> int:
    try:
        hm = afm.load_heightmap(args.image, args.sidecar)
    except (FileNotFoundError, KeyError, OSError) as exc:
        raise InputError(str(exc)) from exc
    opts = afm.SegmentOptions(k_sigma=args.k_sigma, min_area=args.min_area)
    summary = afm_outputs(hm, Path(args.out), opts)
    if summary["n_dots"] == 0:
        print(f"warning: no dots found in {args.image}", file=sys.stderr)
        print("0 dots found")
    else:
        m = summary["morphology"]
        print(f"{summary['n_dots']} dots, mean aspect ratio {m['mean_ar']:.2f} "
              f"(std {m['std_ar']:.2f}), density {summary['density_cm2']:.2e} cm^-2")
    return EXIT_OK


def cmd_pipeline(args) -> int:
    cfg = _load_config(args)
    report = run_pipeline(cfg, Path(args.out), _workers(args))
    rec = report["recovery"]
    print(f"{rec['n_dots']} dots, {rec['n_failed']} failed, "
          f"{100 * rec['fraction_within_2ueV']:.0f}% within 2 μeV of the true splitting")
    if report["stats"]:
        for line in summary_lines(report["stats"]):
            print(line)
    return EXIT_PARTIAL if rec["n_failed"] else EXIT_OK


def cmd_cohorts(args) -> int:
    records = stats.reported_cohort_records(args.seed, sk_lower=args.sk_lower)
    io.write_records(Path(args.out), records)
    print(f"wrote {len(records)} records to {args.out}")
    return EXIT_OK


def cmd_afm_synth(args) -> int:
    rng = np.random.Generator(np.random.PCG64(args.seed))
    hm, _ = afm.synthetic_heightmap(args.n_dots, rng, size=args.size,
                                    aspect_mean=args.aspect, aspect_spread=args.aspect_spread)
    path = afm.save_heightmap(hm, Path(args.out), "png" if args.out.endswith(".png") else "txt")
    print(f"wrote {path} and {path.with_suffix('.json')}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qdfss", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key, e.g. doublet.s_ueV=29")
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=int, help="worker processes (default: all CPUs)")
        p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("simulate", help="render synthetic waveplate scans")
    with_config(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit centroids and splitting for a scan bundle")
    p.add_argument("bundle")
    p.add_argument("--out", help="output directory (default: the bundle)")
    p.add_argument("--fit-p", action="store_true", help="fit the polarization degree")
    p.add_argument("--method", choices=["auto", "single", "doublet"])
    p.add_argument("--shape", choices=["Lorentzian", "Gaussian", "Voigt"])
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("stats", help="cohort statistics from a dot-record CSV")
    p.add_argument("records")
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, action="append", help="ueV, repeatable")
    p.add_argument("--bin-width", type=float, default=10.0)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("afm", help="segment dots and fit ellipses in an AFM map")
    p.add_argument("image")
    p.add_argument("--sidecar")
    p.add_argument("--out", required=True)
    p.add_argument("--k-sigma", type=float, default=5.0)
    p.add_argument("--min-area", type=int, default=20)
    p.set_defaults(func=cmd_afm)

    p = sub.add_parser("pipeline", help="simulate, fit and summarize in one run")
    with_config(p)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("cohorts", help="write synthetic cohorts with the reported moments")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sk-lower", type=float, default=0.0)
    p.set_defaults(func=cmd_cohorts)

    p = sub.add_parser("afm-synth", help="write a synthetic AFM map with elliptical dots")
    p.add_argument("--out", required=True, help=".txt or .png path")
    p.add_argument("--n-dots", type=int, default=12)
    p.add_argument("--size", type=int, default=512)
    p.add_argument("--aspect", type=float, default=0.53)
    p.add_argument("--aspect-spread", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_afm_synth)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except cfgmod.ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (InputError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
