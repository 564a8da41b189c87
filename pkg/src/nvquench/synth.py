"""Synthetic field-off/field-on spectrum pairs with known ground truth."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .spectra import PairMeta, Spectrum, SpectrumPair


@dataclass(frozen=True)
class Band:
    center: float  # nm
    width: float  # Gaussian standard deviation, nm
    amp: float  # counts

    def __post_init__(self):
        if not self.width > 0 or self.amp < 0:
            raise ValueError("band needs width > 0 and amp >= 0")

    def __call__(self, wl):
        return self.amp * np.exp(-0.5 * ((wl - self.center) / self.width) ** 2)


@dataclass(frozen=True)
class ComponentModel:
    """Emission of one charge state: Lorentzian ZPL plus Gaussian sidebands."""

    zpl_center: float
    zpl_width: float  # Lorentzian FWHM, nm
    zpl_amp: float
    sideband: tuple[Band, ...] = ()

    def __post_init__(self):
        if not self.zpl_width > 0 or self.zpl_amp < 0:
            raise ValueError("ZPL needs width > 0 and amp >= 0")
        object.__setattr__(self, "sideband", tuple(
            b if isinstance(b, Band) else Band(**b) for b in self.sideband))

    def zpl(self, wl, width_scale: float = 1.0):
        hw = 0.5 * self.zpl_width * width_scale
        return self.zpl_amp * hw ** 2 / ((np.asarray(wl) - self.zpl_center) ** 2 + hw ** 2)

    def __call__(self, wl, width_scale: float = 1.0):
        wl = np.asarray(wl, dtype=float)
        out = self.zpl(wl, width_scale)
        for b in self.sideband:
            out = out + b(wl)
        return out

    def scaled(self, k: float) -> "ComponentModel":
        return replace(self, zpl_amp=self.zpl_amp * k,
                       sideband=tuple(replace(b, amp=b.amp * k) for b in self.sideband))


# Qualitative shapes: NV0 emission peaks around 600-620 nm, NV- around 680 nm.
DEFAULT_NV_ZERO = ComponentModel(
    zpl_center=575.0, zpl_width=1.0, zpl_amp=1000.0,
    sideband=(Band(595.0, 10.0, 250.0), Band(620.0, 18.0, 450.0), Band(655.0, 25.0, 200.0)),
)
DEFAULT_NV_MINUS = ComponentModel(
    zpl_center=637.0, zpl_width=1.0, zpl_amp=1000.0,
    sideband=(Band(660.0, 10.0, 350.0), Band(690.0, 20.0, 700.0), Band(730.0, 25.0, 350.0)),
)


def default_grid(lo: float = 540.0, hi: float = 760.0, step: float = 0.1) -> np.ndarray:
    n = int(round((hi - lo) / step)) + 1
    return lo + step * np.arange(n)


@dataclass(frozen=True, eq=False)
class SynthTruth:
    epsilon: float = 0.15
    delta: float = -0.03
    alpha: float = 0.0  # fractional NV0 ZPL width change under field
    C: float = 100.0
    sigma0: float = 10.0
    sigmaB: float = 10.0
    nv_minus: ComponentModel = DEFAULT_NV_MINUS
    nv_zero: ComponentModel = DEFAULT_NV_ZERO
    grid: np.ndarray = field(default_factory=default_grid)
    pl_fraction: float | None = None  # rescale NV- so its integrated share equals this
    noise: str = "gaussian"  # or "poisson"
    field_mT: float = 100.0

    def __post_init__(self):
        g = np.array(self.grid, dtype=float)
        if g.ndim != 1 or g.size < 2 or np.any(np.diff(g) <= 0):
            raise ValueError("grid must be strictly increasing")
        g.setflags(write=False)
        object.__setattr__(self, "grid", g)
        if self.sigma0 < 0 or self.sigmaB < 0:
            raise ValueError("noise levels must be >= 0")
        if self.pl_fraction is not None and not 0 < self.pl_fraction < 1:
            raise ValueError("pl_fraction must lie in (0, 1)")
        if self.noise not in ("gaussian", "poisson"):
            raise ValueError(f"unknown noise model {self.noise!r}")
        if not 1 + self.alpha > 0:
            raise ValueError("alpha must exceed -1")

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in ("epsilon", "delta", "alpha", "C", "sigma0", "sigmaB",
                                           "pl_fraction", "noise", "field_mT")}
        d["nv_minus"] = asdict(self.nv_minus)
        d["nv_zero"] = asdict(self.nv_zero)
        d["grid"] = {"lo": float(self.grid[0]), "hi": float(self.grid[-1]), "n": int(self.grid.size)}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthTruth":
        d = dict(d)
        for key in ("nv_minus", "nv_zero"):
            if key in d and isinstance(d[key], dict):
                d[key] = ComponentModel(**d[key])
        if "grid" in d and isinstance(d["grid"], dict):
            g = d["grid"]
            d["grid"] = np.linspace(g["lo"], g["hi"], int(g["n"]))
        return cls(**d)


@dataclass(frozen=True, eq=False)
class Components:
    """Noiseless generator inputs on the truth grid."""

    i_minus: np.ndarray
    i_zero: np.ndarray
    i_zero_on: np.ndarray  # NV0 shape under field before the (1 - delta) factor


def components(t: SynthTruth) -> Components:
    wl = t.grid
    i_zero = t.nv_zero(wl)
    i_minus = t.nv_minus(wl)
    if t.pl_fraction is not None:
        s_minus = np.trapezoid(i_minus, wl)
        s_zero = np.trapezoid(i_zero, wl)
        i_minus = i_minus * (t.pl_fraction / (1 - t.pl_fraction) * s_zero / s_minus)
    if t.alpha != 0.0:
        # stretch the NV0 ZPL about its centre, keeping its peak height
        i_zero_on = i_zero - t.nv_zero.zpl(wl) + t.nv_zero.zpl(wl, 1.0 + t.alpha)
    else:
        i_zero_on = i_zero
    return Components(i_minus, i_zero, i_zero_on)


def generate_pair(t: SynthTruth, seed: int, meta: PairMeta | None = None
                  ) -> tuple[SpectrumPair, Components]:
    """Draw a noisy pair from ``t``; identical seeds give identical pairs."""
    comp = components(t)
    clean0 = comp.i_minus + comp.i_zero + t.C
    cleanB = (1 - t.epsilon) * comp.i_minus + (1 - t.delta) * comp.i_zero_on + t.C
    rng = np.random.default_rng(seed)
    if t.noise == "gaussian":
        eta0 = rng.standard_normal(clean0.size)
        etaB = rng.standard_normal(cleanB.size)
        I0 = clean0 + t.sigma0 * eta0 if t.sigma0 else clean0.copy()
        IB = cleanB + t.sigmaB * etaB if t.sigmaB else cleanB.copy()
    else:
        I0 = rng.poisson(np.clip(clean0, 0, None)).astype(float)
        IB = rng.poisson(np.clip(cleanB, 0, None)).astype(float)
    pair = SpectrumPair(Spectrum(t.grid, I0), Spectrum(t.grid, IB), field_mT=t.field_mT,
                        meta=meta or PairMeta())
    return pair, comp


def write_truth(t: SynthTruth, path: str | Path, **extra) -> None:
    d = t.to_dict()
    d.update(extra)
    Path(path).write_text(json.dumps(d, indent=1), encoding="utf-8")
