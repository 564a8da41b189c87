"""Unmixing of a field-off/on pair into NV- and NV0 spectra, and ZPL linewidth contrast."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import curve_fit, minimize

from .spectra import Interval, Spectrum, SpectrumPair

UNMIX_FLOOR = 1e-3


class UnmixError(ValueError):
    pass


class LinewidthError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class SeparatedSpectra:
    i_minus: Spectrum
    i_zero: Spectrum
    epsilon_used: float
    delta_used: float
    C_used: float

    @property
    def wavelengths(self) -> np.ndarray:
        return self.i_minus.wavelengths


def unmix(pair: SpectrumPair, epsilon: float, delta: float, C: float,
          floor: float = UNMIX_FLOOR) -> SeparatedSpectra:
    """Invert the two-component model point by point.

    With ``x0 = I0 - C`` and ``xB = IB - C``::

        I- = [(1 - delta) x0 - xB] / (epsilon - delta)
        I0 = [xB - (1 - epsilon) x0] / (epsilon - delta)
    """
    d = epsilon - delta
    if not abs(d) > floor:
        raise UnmixError(f"|epsilon - delta| = {abs(d):.3g} is below the conditioning floor {floor}")
    x0 = pair.off.intensities - C
    xB = pair.on.intensities - C
    i_minus = ((1 - delta) * x0 - xB) / d
    i_zero = (xB - (1 - epsilon) * x0) / d
    wl = pair.wavelengths
    return SeparatedSpectra(Spectrum(wl, i_minus), Spectrum(wl, i_zero),
                            float(epsilon), float(delta), float(C))


def remix(sep: SeparatedSpectra) -> tuple[np.ndarray, np.ndarray]:
    """Forward model ``(I0, IB)`` from separated components."""
    im, iz = sep.i_minus.intensities, sep.i_zero.intensities
    I0 = im + iz + sep.C_used
    IB = (1 - sep.epsilon_used) * im + (1 - sep.delta_used) * iz + sep.C_used
    return I0, IB


def _peak_height(wl, y, zone: Interval, center: float, half: float) -> float:
    m = zone.mask(wl)
    x, v = wl[m], y[m]
    k = max(1, x.size // 10)
    xl, yl = np.mean(x[:k]), np.mean(v[:k])
    xr, yr = np.mean(x[-k:]), np.mean(v[-k:])
    base = yl + (yr - yl) * (x - xl) / (xr - xl)
    core = np.abs(x - center) <= half
    if not np.any(core):
        return 0.0
    return float(np.max((v - base)[core]))


def peak_leakage(sep: SeparatedSpectra, zone: Interval | tuple = (634.0, 641.0),
                 center: float = 637.0, half: float = 0.5) -> float:
    """Residual NV- ZPL height in the NV0 spectrum relative to its height in the NV- spectrum.

    Heights are taken above a linear baseline drawn through the zone edges.
    Near zero for a clean separation.
    """
    zone = Interval.of(zone)
    wl = sep.wavelengths
    h_minus = _peak_height(wl, sep.i_minus.intensities, zone, center, half)
    h_zero = _peak_height(wl, sep.i_zero.intensities, zone, center, half)
    if h_minus <= 0:
        return float("nan")
    return h_zero / h_minus


@dataclass(frozen=True)
class LinewidthFit:
    alpha: float
    shift: float
    vscale: float
    residual_rms: float
    alpha_sd: float = float("nan")
    center: float = float("nan")

    def __post_init__(self):
        if not 1 + self.alpha > 0 or not self.vscale > 0:
            raise ValueError("LinewidthFit requires 1 + alpha > 0 and vscale > 0")


def _window_center(wl, y) -> float:
    w = y - np.min(y)
    if not np.sum(w) > 0:
        raise LinewidthError("flat window: no peak to fit")
    return float(np.sum(wl * w) / np.sum(w))


def linewidth_contrast(pair: SpectrumPair, window: Interval | tuple | None = None, seed: int = 0,
                       background: float = 0.0, restarts: int = 4,
                       peak: float = 575.0, half_width: float = 1.5,
                       noise_ratio: float = 1.0) -> LinewidthFit:
    """Fractional width change ``alpha`` of a single peak between field-off and field-on.

    Each field-off point at ``lambda_n`` is placed at
    ``(lambda_n - c)(1 + alpha) + c + shift`` and compared, after scaling by
    ``vscale``, with a natural cubic spline through the field-on data. ``c``
    is the intensity-weighted centroid of the field-off window. The default
    window is ``peak +/- half_width``. ``background`` is subtracted from both
    spectra first.

    Both spectra are noisy, so the squared residuals are divided by their
    variance ``vscale**2 + noise_ratio**2`` (in units of the field-off noise,
    ``noise_ratio = sigmaB / sigma0``). Plain least squares would pull
    ``vscale`` below 1 and, through its correlation with the width, bias
    ``alpha`` toward zero.
    """
    if noise_ratio < 0:
        raise ValueError("noise_ratio must be >= 0")
    window = Interval.of(window) if window is not None else Interval(peak - half_width,
                                                                     peak + half_width)
    wl, I0, IB = pair.zone_data(window)
    if wl.size < 15:
        raise LinewidthError(f"window {window} holds {wl.size} points, need >= 15")
    I0 = I0 - background
    IB = IB - background
    c = _window_center(wl, I0)
    spline = CubicSpline(wl, IB, bc_type="natural", extrapolate=True)
    scale = float(np.max(np.abs(IB)))
    if not scale > 0:
        raise LinewidthError("flat window: no peak to fit")

    def residual(p):
        a, s, v = p
        return v * I0 - spline((wl - c) * (1 + a) + c + s)

    rho2 = float(noise_ratio) ** 2

    def cost(p):
        r = residual(p) / scale
        return float(r @ r) / (p[2] ** 2 + rho2)

    half = 0.5 * window.width
    bounds = [(-0.5, 0.5), (-half, half), (0.05, 20.0)]
    opts = {"xatol": 1e-10, "fatol": 1e-16, "maxiter": 4000, "maxfev": 8000}
    rng = np.random.default_rng(seed)
    starts = [np.array([0.0, 0.0, 1.0])]
    step = wl[1] - wl[0]
    for _ in range(restarts):
        starts.append(np.array([rng.uniform(-0.05, 0.05), rng.uniform(-2, 2) * step,
                                rng.uniform(0.9, 1.1)]))
    best = None
    for x0 in starts:
        res = minimize(cost, x0, method="Nelder-Mead", bounds=bounds, options=opts)
        if res.success and (best is None or res.fun < best.fun):
            best = res
    if best is None:
        raise LinewidthError(f"Nelder-Mead did not converge after {len(starts)} starts")
    # a fresh simplex around the optimum guards against early collapse
    polished = minimize(cost, best.x, method="Nelder-Mead", bounds=bounds, options=opts)
    if polished.success and polished.fun <= best.fun:
        best = polished
    a, s, v = best.x
    r = residual(best.x)
    rms = float(np.sqrt(np.mean(r * r)))
    return LinewidthFit(float(a), float(s), float(v), rms, _alpha_sd(residual, best.x, r), c)


def _alpha_sd(residual, p, r) -> float:
    n = r.size
    h = np.array([1e-6, 1e-6, 1e-6])
    J = np.empty((n, 3))
    for k in range(3):
        dp = np.zeros(3)
        dp[k] = h[k]
        J[:, k] = (residual(p + dp) - residual(p - dp)) / (2 * h[k])
    s2 = float(r @ r) / max(n - 3, 1)
    try:
        cov = s2 * np.linalg.inv(J.T @ J)
    except np.linalg.LinAlgError:
        return float("nan")
    return float(np.sqrt(max(cov[0, 0], 0.0)))


def _lorentz(x, x0, fwhm, amp, offset):
    hw = 0.5 * fwhm
    return amp * hw * hw / ((x - x0) ** 2 + hw * hw) + offset


def fit_lorentzian(s: Spectrum, window: Interval | tuple) -> tuple[float, float, float, float]:
    """Least-squares Lorentzian ``(center, fwhm, amp, offset)`` in ``window``; a diagnostic."""
    x, y = s.select(Interval.of(window))
    if x.size < 5:
        raise LinewidthError("too few points for a Lorentzian fit")
    off = float(np.min(y))
    amp = float(np.max(y) - off)
    x0 = float(x[np.argmax(y)])
    above = x[y - off > 0.5 * amp]
    fwhm = float(max(above[-1] - above[0], x[1] - x[0]))
    p, _ = curve_fit(_lorentz, x, y, p0=(x0, fwhm, amp, off), maxfev=20000)
    return float(p[0]), float(abs(p[1])), float(p[2]), float(p[3])
