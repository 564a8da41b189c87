"""Spectral data types, wavelength zones and CSV ingestion."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

CSV_HEADER = ("wavelength_nm", "counts")


class SpectrumError(ValueError):
    """Raised for malformed spectra, files or zone definitions."""


class GridMismatchError(SpectrumError):
    pass


def _readonly(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Interval:
    """Closed wavelength interval ``[lo, hi]`` in nm."""

    lo: float
    hi: float

    def __post_init__(self):
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)) or self.hi <= self.lo:
            raise SpectrumError(f"empty or invalid interval [{self.lo}, {self.hi}]")

    @property
    def center(self) -> float:
        return 0.5 * (self.lo + self.hi)

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def mask(self, wavelengths: np.ndarray) -> np.ndarray:
        return (wavelengths >= self.lo) & (wavelengths <= self.hi)

    def overlaps(self, other: "Interval") -> bool:
        return self.lo <= other.hi and other.lo <= self.hi

    @classmethod
    def of(cls, value) -> "Interval":
        if isinstance(value, Interval):
            return value
        lo, hi = value
        return cls(float(lo), float(hi))


@dataclass(frozen=True, eq=False)
class Spectrum:
    wavelengths: np.ndarray
    intensities: np.ndarray

    def __post_init__(self):
        wl = _readonly(self.wavelengths)
        it = _readonly(self.intensities)
        if wl.ndim != 1 or it.ndim != 1:
            raise SpectrumError("spectrum arrays must be one-dimensional")
        if wl.size < 2:
            raise SpectrumError("spectrum needs at least two points")
        if wl.size != it.size:
            raise SpectrumError(
                f"length mismatch: {wl.size} wavelengths vs {it.size} intensities")
        bad = np.flatnonzero(~np.isfinite(wl))
        if bad.size:
            raise SpectrumError(f"non-finite wavelength at row {bad[0]}")
        bad = np.flatnonzero(~np.isfinite(it))
        if bad.size:
            raise SpectrumError(f"non-finite intensity at row {bad[0]}")
        steps = np.diff(wl)
        if np.any(steps <= 0):
            raise SpectrumError(
                f"wavelengths not strictly increasing at row {np.flatnonzero(steps <= 0)[0] + 1}")
        object.__setattr__(self, "wavelengths", wl)
        object.__setattr__(self, "intensities", it)

    def __len__(self) -> int:
        return self.wavelengths.size

    @property
    def span(self) -> Interval:
        return Interval(float(self.wavelengths[0]), float(self.wavelengths[-1]))

    def select(self, interval: Interval) -> tuple[np.ndarray, np.ndarray]:
        m = Interval.of(interval).mask(self.wavelengths)
        return self.wavelengths[m], self.intensities[m]

    def with_intensities(self, intensities) -> "Spectrum":
        return Spectrum(self.wavelengths, intensities)


@dataclass(frozen=True)
class PairMeta:
    temperature_K: float | None = None
    wavelength_nm: float | None = None
    power_uW: float | None = None


@dataclass(frozen=True, eq=False)
class SpectrumPair:
    """Field-off / field-on spectra sharing one wavelength grid."""

    off: Spectrum
    on: Spectrum
    field_mT: float = 100.0
    meta: PairMeta = field(default_factory=PairMeta)

    def __post_init__(self):
        if not np.array_equal(self.off.wavelengths, self.on.wavelengths):
            raise GridMismatchError("field-off and field-on spectra use different wavelength grids")
        if not math.isfinite(self.field_mT) or self.field_mT < 0:
            raise SpectrumError(f"field_mT must be finite and >= 0, got {self.field_mT}")

    @property
    def wavelengths(self) -> np.ndarray:
        return self.off.wavelengths

    def zone_data(self, interval: Interval) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return ``(wavelengths, I0, IB)`` restricted to ``interval``."""
        m = Interval.of(interval).mask(self.wavelengths)
        return self.wavelengths[m], self.off.intensities[m], self.on.intensities[m]


MIN_ZONE_POINTS = 5


@dataclass(frozen=True)
class ZoneSet:
    # Defaults bracket the NV0 (575 nm) and NV- (637 nm) zero-phonon lines.
    bg: Interval = Interval(553.0, 565.0)
    zpl0: Interval = Interval(572.0, 579.0)
    zplminus: Interval = Interval(634.0, 641.0)

    def __post_init__(self):
        for name in ("bg", "zpl0", "zplminus"):
            object.__setattr__(self, name, Interval.of(getattr(self, name)))
        zones = [self.bg, self.zpl0, self.zplminus]
        for i in range(3):
            for j in range(i + 1, 3):
                if zones[i].overlaps(zones[j]):
                    raise SpectrumError(f"zones overlap: {zones[i]} and {zones[j]}")

    def validate(self, wavelengths: np.ndarray, min_points: int = MIN_ZONE_POINTS) -> None:
        lo, hi = wavelengths[0], wavelengths[-1]
        for name in ("bg", "zpl0", "zplminus"):
            z = getattr(self, name)
            if z.lo < lo or z.hi > hi:
                raise SpectrumError(
                    f"zone {name} [{z.lo}, {z.hi}] outside spectrum span [{lo}, {hi}]")
            n = int(np.count_nonzero(z.mask(wavelengths)))
            if n < min_points:
                raise SpectrumError(f"zone {name} holds {n} grid points, need >= {min_points}")

    def to_dict(self) -> dict:
        return {k: [getattr(self, k).lo, getattr(self, k).hi] for k in ("bg", "zpl0", "zplminus")}

    @classmethod
    def from_dict(cls, d: dict | None) -> "ZoneSet":
        if not d:
            return cls()
        return cls(**{k: Interval.of(v) for k, v in d.items()})


def integrate_intensity(s: Spectrum, interval: Interval | tuple[float, float] | None = None) -> float:
    """Trapezoidal integral of ``s`` over ``interval`` (counts * nm).

    Interval ends that fall between grid points are handled by linear
    interpolation, so the result is the exact integral of the piecewise
    linear interpolant.
    """
    wl, it = s.wavelengths, s.intensities
    if interval is None:
        return float(np.trapezoid(it, wl))
    iv = Interval.of(interval)
    lo, hi = max(iv.lo, wl[0]), min(iv.hi, wl[-1])
    if hi <= lo:
        raise SpectrumError(f"interval {iv} does not overlap spectrum span {s.span}")
    inner = (wl > lo) & (wl < hi)
    x = np.concatenate(([lo], wl[inner], [hi]))
    y = np.concatenate(([np.interp(lo, wl, it)], it[inner], [np.interp(hi, wl, it)]))
    return float(np.trapezoid(y, x))


def read_spectrum_csv(path: str | Path) -> Spectrum:
    path = Path(path)
    wl: list[float] = []
    counts: list[float] = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SpectrumError(f"{path}: empty file") from None
        if tuple(h.strip() for h in header) != CSV_HEADER:
            raise SpectrumError(f"{path}: expected header {','.join(CSV_HEADER)}, got {header}")
        for row_index, row in enumerate(reader):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise SpectrumError(f"{path}: row {row_index} has {len(row)} fields, expected 2")
            try:
                x, y = float(row[0]), float(row[1])
            except ValueError:
                raise SpectrumError(f"{path}: row {row_index} is not numeric: {row}") from None
            if not (math.isfinite(x) and math.isfinite(y)):
                raise SpectrumError(f"{path}: non-finite value at row {row_index}")
            wl.append(x)
            counts.append(y)
    try:
        return Spectrum(np.array(wl), np.array(counts))
    except SpectrumError as exc:
        raise SpectrumError(f"{path}: {exc}") from None


def write_spectrum_csv(s: Spectrum, path: str | Path) -> None:
    # repr() of a Python float round-trips exactly
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(CSV_HEADER) + "\n")
        for x, y in zip(s.wavelengths.tolist(), s.intensities.tolist()):
            fh.write(f"{x!r},{y!r}\n")


def write_columns_csv(path: str | Path, columns: dict[str, Iterable[float]]) -> None:
    names = list(columns)
    data = [np.asarray(columns[n], dtype=float).tolist() for n in names]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(names) + "\n")
        for row in zip(*data):
            fh.write(",".join(repr(v) for v in row) + "\n")


def load_spectrum_pair(path_off, path_on, meta: PairMeta | dict | None = None,
                       field_mT: float = 100.0) -> SpectrumPair:
    if isinstance(meta, dict):
        meta = PairMeta(**meta)
    off = read_spectrum_csv(path_off)
    on = read_spectrum_csv(path_on)
    if not np.array_equal(off.wavelengths, on.wavelengths):
        raise GridMismatchError(f"wavelength grids differ between {path_off} and {path_on}")
    return SpectrumPair(off, on, field_mT=field_mT, meta=meta or PairMeta())


@dataclass(frozen=True)
class ManifestRecord:
    off: Path
    on: Path
    field_mT: float
    temperature_K: float | None
    wavelength_nm: float | None
    power_uW: float | None

    @property
    def meta(self) -> PairMeta:
        return PairMeta(self.temperature_K, self.wavelength_nm, self.power_uW)

    def to_dict(self) -> dict:
        return {"off": str(self.off), "on": str(self.on), "field_mT": self.field_mT,
                "temperature_K": self.temperature_K, "wavelength_nm": self.wavelength_nm,
                "power_uW": self.power_uW}


def read_manifest(path: str | Path) -> list[ManifestRecord]:
    """Parse a pair manifest; relative file paths resolve against its directory."""
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, list):
        raise SpectrumError(f"{path}: manifest must be a JSON array")
    records = []
    for i, rec in enumerate(raw):
        try:
            off, on = Path(rec["off"]), Path(rec["on"])
            field_mT = float(rec.get("field_mT", 100.0))
        except (KeyError, TypeError, ValueError) as exc:
            raise SpectrumError(f"{path}: bad manifest record {i}: {exc}") from None
        if not off.is_absolute():
            off = path.parent / off
        if not on.is_absolute():
            on = path.parent / on
        opt = {k: (None if rec.get(k) is None else float(rec[k]))
               for k in ("temperature_K", "wavelength_nm", "power_uW")}
        records.append(ManifestRecord(off, on, field_mT, **opt))
    return records


def write_manifest(records: Iterable[ManifestRecord], path: str | Path) -> None:
    path = Path(path)
    out = []
    for r in records:
        d = r.to_dict()
        for k in ("off", "on"):
            p = Path(d[k])
            try:
                d[k] = str(p.relative_to(path.parent))
            except ValueError:
                pass
        out.append(d)
    path.write_text(json.dumps(out, indent=1), encoding="utf-8")
