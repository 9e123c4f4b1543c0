"""File formats: spectrum CSVs, centroid tables, fit records, dot records."""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .peakfit import CentroidTable
from .spectra import Spectrum
from .stats import DotRecord


def dumps(obj) -> str:
    """Canonical JSON used for every output file (stable key order)."""
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def write_json(path: Path, obj) -> None:
    Path(path).write_text(dumps(obj))


def _header(lines: list[str]) -> dict:
    meta = {}
    for line in lines:
        key, _, value = line[1:].partition(":")
        meta[key.strip()] = value.strip()
    return meta


def write_spectrum(path: Path, sp: Spectrum, config: dict) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# chi_deg: {math.degrees(float(sp.chi))!r}\n")
        fh.write(f"# chi_rad: {float(sp.chi)!r}\n")
        fh.write(f"# kind: {sp.kind.value}\n")
        for key in ("seed", "index", "rng"):
            if key in sp.meta:
                fh.write(f"# {key}: {sp.meta[key]}\n")
        fh.write(f"# config: {json.dumps(config, sort_keys=True)}\n")
        fh.write("pixel_energy_meV,counts\n")
        for e, c in zip(sp.pixel_energies, sp.counts):
            fh.write(f"{float(e)!r},{float(c)!r}\n")


def read_spectrum(path: Path) -> Spectrum:
    header, rows = [], []
    with open(path) as fh:
        for line in fh:
            if line.startswith("#"):
                header.append(line.rstrip("\n"))
            elif line.strip() and not line.startswith("pixel_energy"):
                rows.append(line)
    meta = _header(header)
    data = np.loadtxt(rows, delimiter=",", ndmin=2)
    config = json.loads(meta.get("config", "{}"))
    chi = float(meta["chi_rad"]) if "chi_rad" in meta else math.radians(float(meta["chi_deg"]))
    info = {
        "instrument_fwhm": float(config.get("instrument_fwhm", 0.0)),
        "line_fwhm": config.get("line_fwhm"),
        "shape": config.get("shape"),
    }
    for key in ("seed", "index"):
        if key in meta:
            info[key] = int(meta[key])
    return Spectrum(data[:, 0], data[:, 1], chi, meta["kind"], info)


CENTROID_COLUMNS = ["chi_deg", "kind", "centroid_meV", "centroid_sigma_ueV", "fwhm_ueV", "converged"]


def write_centroids(path: Path, table: CentroidTable) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# method: {table.method}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CENTROID_COLUMNS)
        for chi, c, s, f, ok in zip(table.chi, table.centroids, table.sigmas, table.fwhm, table.converged):
            w.writerow([repr(math.degrees(float(chi))), table.kind, repr(float(c)), repr(float(s)),
                        repr(float(f)), int(bool(ok))])


def read_centroids(path: Path) -> CentroidTable:
    method = "single"
    rows = []
    with open(path) as fh:
        lines = [ln for ln in fh if ln.strip()]
    for ln in lines:
        if ln.startswith("#"):
            meta = _header([ln.rstrip("\n")])
            method = meta.get("method", method)
    reader = csv.DictReader([ln for ln in lines if not ln.startswith("#")])
    rows = list(reader)
    if not rows:
        raise ValueError(f"{path}: empty centroid table")
    return CentroidTable(
        chi=np.radians([float(r["chi_deg"]) for r in rows]),
        kind=rows[0]["kind"],
        centroids=np.array([float(r["centroid_meV"]) for r in rows]),
        sigmas=np.array([float(r["centroid_sigma_ueV"]) for r in rows]),
        fwhm=np.array([float(r["fwhm_ueV"]) for r in rows]),
        converged=np.array([r["converged"] not in ("0", "False", "false") for r in rows]),
        method=method,
    )


RECORD_COLUMNS = ["dot_id", "cohort", "wavelength_nm", "s_ueV", "s_sigma_ueV", "dipole_rad", "model"]


def write_records(path: Path, records: Iterable[DotRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RECORD_COLUMNS)
        for r in records:
            angle = "" if r.dipole_angle is None else repr(float(r.dipole_angle))
            w.writerow([r.dot_id, r.cohort.value, repr(float(r.wavelength)), repr(float(r.s)),
                        repr(float(r.s_sigma)), angle, r.source_model])


def read_records(path: Path) -> list[DotRecord]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    records = []
    for r in rows:
        angle = r.get("dipole_rad", "")
        records.append(DotRecord(
            dot_id=r["dot_id"],
            cohort=r.get("cohort", "custom"),
            wavelength=float(r["wavelength_nm"]),
            s=float(r["s_ueV"]),
            s_sigma=float(r.get("s_sigma_ueV") or 0.0),
            dipole_angle=float(angle) if angle not in ("", None) else None,
            source_model=r.get("model") or "QWP",
        ))
    return records


def write_rows(path: Path, columns: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
