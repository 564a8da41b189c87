"""Charge-state models: NV- fraction, PL ratios and field-quenching contrasts.

Three treatments of the NV- fraction ``p`` are provided: a fixed fraction,
a balance of two-photon ionization and recombination rates, and a
nitrogen-donor model with Coulomb-assisted carrier capture. All contrasts
use the convention that positive values mean the field quenches PL.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Literal

from .photodyn import HC_EV_NM, StatePopulations

# 1.945 eV (3A2-3E ZPL) minus 1.190 eV (1E-1A1 ZPL)
TRIPLET_MINUS_SINGLET_ZPL_EV = 1.945 - 1.190
# Conduction-band depth of the NV- ground state consistent with the reported
# singlet-gap pairs; the rounded literature value is 2.60 eV.
CB_DEPTH_EV = 2.61


class ModelValidityError(ValueError):
    """Model inputs fall outside the regime where the closed forms hold."""


class ModelValidityWarning(UserWarning):
    pass


@dataclass(frozen=True)
class IonizationCrossSections:
    """Photoionization / recombination cross sections (nm^2) with hard onsets.

    ``singlet_threshold_eV`` and ``ground_threshold_eV`` are the photon
    energies below which ``sigma_s_minus`` and ``sigma_g_minus`` vanish.
    Use :meth:`at` to obtain the cross sections for a given photon energy.
    """

    sigma_e_minus: float = 1e-3
    sigma_s_minus: float = 1e-4
    sigma_g_minus: float = 1e-4
    sigma_e_zero: float = 1e-3
    singlet_threshold_eV: float = 2.25
    ground_threshold_eV: float = HC_EV_NM / 485.0

    def __post_init__(self):
        for name in ("sigma_e_minus", "sigma_s_minus", "sigma_g_minus", "sigma_e_zero",
                     "singlet_threshold_eV", "ground_threshold_eV"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and >= 0, got {v}")

    def at(self, E_phot: float) -> "IonizationCrossSections":
        """Cross sections at photon energy ``E_phot`` with thresholds applied."""
        return IonizationCrossSections(
            self.sigma_e_minus,
            self.sigma_s_minus if E_phot >= self.singlet_threshold_eV else 0.0,
            self.sigma_g_minus if E_phot >= self.ground_threshold_eV else 0.0,
            self.sigma_e_zero,
            self.singlet_threshold_eV,
            self.ground_threshold_eV,
        )

    def excited_only(self) -> "IonizationCrossSections":
        return IonizationCrossSections(self.sigma_e_minus, 0.0, 0.0, self.sigma_e_zero,
                                       self.singlet_threshold_eV, self.ground_threshold_eV)

    def ionization(self, pops: StatePopulations) -> float:
        """NV- ionization rate per unit flux: n_e s_e + n_s s_s + n_g s_g."""
        return (pops.n_e_minus * self.sigma_e_minus + pops.n_s_minus * self.sigma_s_minus
                + pops.n_g_minus * self.sigma_g_minus)

    def recombination(self, pops: StatePopulations) -> float:
        return pops.n_e_zero * self.sigma_e_zero


@dataclass(frozen=True)
class EmissionConstants:
    k_eg_minus: float = 63.2e6
    k_eg_zero: float = 52e6

    def __post_init__(self):
        if not (self.k_eg_minus > 0 and self.k_eg_zero > 0):
            raise ValueError("emission rate constants must be positive")

    @property
    def ratio(self) -> float:
        """k_eg_zero / k_eg_minus."""
        return self.k_eg_zero / self.k_eg_minus


@dataclass(frozen=True)
class DonorConfig:
    """Dark concentrations (ppm), capture coefficients and N0 ionization.

    Capture coefficients share one arbitrary unit; only their ratio enters.
    """

    c_NVm_star: float = 3.0
    c_NV0_star: float = 1.5
    c_Nplus_star: float = 4.0
    gamma_e_Nplus: float = 20.0
    gamma_e_NV0: float = 1.0
    gamma_h_NVm: float = 100.0
    sigma_N0: float = 5e-3

    def __post_init__(self):
        for name in ("c_NVm_star", "c_NV0_star", "c_Nplus_star"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("gamma_e_Nplus", "gamma_e_NV0", "gamma_h_NVm", "sigma_N0"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")

    @property
    def capture_ratio(self) -> float:
        return self.gamma_e_Nplus / self.gamma_e_NV0


@dataclass(frozen=True)
class ContrastPrediction:
    epsilon: float
    delta: float
    pl_ratio: float  # Gamma0 / Gamma-, at B = 0
    p: float  # NV- fraction at B = 0

    def __post_init__(self):
        if not (0.0 <= self.p <= 1.0):
            raise ValueError(f"NV- fraction {self.p} outside [0, 1]")
        if not self.pl_ratio >= 0:
            raise ValueError("PL ratio must be non-negative")

    @property
    def pl_fraction(self) -> float:
        """NV- share of the total PL, I-/(I0 + I-)."""
        return 1.0 / (1.0 + self.pl_ratio)


def pl_ratio(p: float, pops: StatePopulations, k: EmissionConstants) -> float:
    """Gamma0/Gamma- for NV- fraction ``p``."""
    if not 0 < p <= 1:
        raise ValueError("NV- fraction must lie in (0, 1]")
    ne = pops.n_e_minus
    if ne <= 0:
        raise ValueError("zero NV- excited population")
    return (1 - p) / p * pops.n_e_zero / ne * k.ratio


def contrasts_from_p(p0: float, pB: float, pops0: StatePopulations,
                     popsB: StatePopulations) -> tuple[float, float]:
    """Contrasts for given NV- fractions at zero field and under field."""
    ne0 = pops0.n_e_minus
    if ne0 <= 0 or p0 <= 0 or p0 >= 1:
        raise ValueError("degenerate zero-field populations or fraction")
    epsilon = 1 - pB * popsB.n_e_minus / (p0 * ne0)
    delta = 1 - (1 - pB) * popsB.n_e_zero / ((1 - p0) * pops0.n_e_zero)
    return epsilon, delta


def fixed_p_prediction(p0: float, pops0: StatePopulations, popsB: StatePopulations,
                       k: EmissionConstants) -> ContrastPrediction:
    if not 0 < p0 < 1:
        raise ValueError("p0 must lie in (0, 1)")
    if pops0.n_e_minus <= 0:
        raise ValueError("zero NV- excited population at B=0")
    eps = 1 - popsB.n_e_minus / pops0.n_e_minus
    return ContrastPrediction(eps, 0.0, pl_ratio(p0, pops0, k), p0)


def balanced_rate_p(pops: StatePopulations, sig: IonizationCrossSections) -> float:
    """NV- fraction at which ionization and recombination balance.

    ``sig`` must already carry the photon-energy thresholds (see
    :meth:`IonizationCrossSections.at`).
    """
    ion = sig.ionization(pops)
    rec = sig.recombination(pops)
    if ion + rec <= 0:
        raise ValueError("no ionization or recombination channel is active")
    return rec / (ion + rec)


def balanced_rate_contrasts(pops0: StatePopulations, popsB: StatePopulations,
                            sig: IonizationCrossSections,
                            k: EmissionConstants) -> ContrastPrediction:
    """Closed-form contrasts of the balanced-rate model.

    With ``sigma_g_minus = 0`` these are the familiar expressions in
    n_e, n_s and the three cross sections; the ground-state term is kept in
    the ionization sum so the same formulas hold above the ground-state
    ionization threshold.
    """
    ne0, neB = pops0.n_e_minus, popsB.n_e_minus
    ion0, ionB = sig.ionization(pops0), sig.ionization(popsB)
    rec = sig.recombination(pops0)
    if ne0 <= 0 or ion0 <= 0 or rec <= 0:
        raise ValueError("degenerate populations or cross sections")
    if sig.recombination(popsB) != rec:
        raise ValueError("NV0 populations must not depend on field")
    epsilon = (ne0 * (ionB + rec) - neB * (ion0 + rec)) / (ne0 * (ionB + rec))
    delta = rec * (ion0 - ionB) / (ion0 * (ionB + rec))
    ratio = ion0 / (ne0 * sig.sigma_e_zero) * k.ratio
    return ContrastPrediction(epsilon, delta, ratio, rec / (ion0 + rec))


def low_doping_ratio(sig_3E: float, sig_2A: float, k: EmissionConstants) -> float:
    """I-/I0 when both charge-transfer and PL rates follow excited-state occupancy."""
    if sig_2A <= 0:
        raise ValueError("sig_2A must be positive")
    return sig_3E / sig_2A / k.ratio


def carrier_perturbation(p_prime: float, A: float, B: float) -> tuple[float, float]:
    """Shift ``x`` of the NV- fraction caused by free carriers.

    Solves ``a x^2 + b x + c = 0`` with
    ``a = A - B - 1 + 2p'``, ``b = -2A(1-p') - 2Bp' - p'(1-p')`` and
    ``c = (1-p')^2 A - p'^2 B``. Returns ``(x_exact, x_approx)`` where
    ``x_exact`` is the admissible root of smallest magnitude and
    ``x_approx = -c/b`` drops the quadratic term. At ``p' = 1/2`` the
    latter is ``D / (4 (S + 1/4))`` with ``D = A - B`` and ``S = A + B``.
    """
    if not 0 < p_prime < 1:
        raise ValueError("p' must lie in (0, 1)")
    if A < 0 or B < 0:
        raise ValueError("A and B must be non-negative")
    q = 1.0 - p_prime
    a = A - B - 1.0 + 2.0 * p_prime
    b = -2.0 * A * q - 2.0 * B * p_prime - p_prime * q
    c = q * q * A - p_prime * p_prime * B
    x_approx = -c / b
    roots = []
    if a == 0.0:
        roots.append(-c / b)
    else:
        disc = b * b - 4.0 * a * c
        if disc < 0:
            raise ModelValidityError("carrier quadratic has no real root")
        sq = math.sqrt(disc)
        # cancellation-free pair of roots
        t = -0.5 * (b + math.copysign(sq, b))
        roots.append(c / t if t != 0.0 else 0.0)
        if t != 0.0:
            roots.append(t / a)
    admissible = [x for x in roots if -p_prime <= x <= q]
    if not admissible:
        raise ModelValidityError(f"no admissible root among {roots}")
    x_exact = min(admissible, key=abs)
    return x_exact, x_approx


@dataclass(frozen=True)
class Concentrations:
    c_N0: float
    c_NVm: float
    c_NV0: float
    c_Nplus: float

    @property
    def p(self) -> float:
        return self.c_NVm / (self.c_NVm + self.c_NV0)


Regime = Literal["two_photon", "single_photon"]


def _check_capture_regime(cfg: DonorConfig) -> None:
    if cfg.capture_ratio < 10:
        warnings.warn(
            f"gamma_e_Nplus/gamma_e_NV0 = {cfg.capture_ratio:.3g} < 10: "
            "Coulomb-assisted capture does not dominate, donor model may be inaccurate",
            ModelValidityWarning, stacklevel=3)


def donor_model(cfg: DonorConfig, pops: StatePopulations, sig: IonizationCrossSections,
                J: float, regime: Regime = "two_photon",
                self_consistent: bool = False) -> Concentrations:
    """Steady-state concentrations with nitrogen donors.

    ``two_photon`` uses the lowest-order neutral-nitrogen concentration,
    which is first order in flux; ``self_consistent=True`` instead solves
    the full steady-state relation together with the conservation laws
    (a quadratic in ``c_N0``). ``single_photon`` applies when NV- ionizes
    from its ground state: NV- is almost fully converted, with a residual
    of first order in the capture-coefficient ratio.
    """
    _check_capture_regime(cfg)
    if J < 0:
        raise ValueError("photon flux must be >= 0")
    gamma_ratio = cfg.capture_ratio
    gamma_N0 = cfg.sigma_N0 * J

    if regime == "two_photon":
        if sig.sigma_g_minus != 0:
            raise ModelValidityError("two-photon regime requires sigma_g_minus = 0 at this energy")
        if J == 0:
            c_N0 = 0.0
        else:
            # Gamma_NV- / Gamma_N0: the flux cancels, leaving the populations
            k = sig.ionization(pops) * J / gamma_N0 * gamma_ratio
            a, b, c = cfg.c_NVm_star, cfg.c_Nplus_star, cfg.c_NV0_star
            if not self_consistent:
                if c <= 0:
                    raise ModelValidityError("lowest-order solution needs c_NV0_star > 0")
                c_N0 = k * a * b / c
            else:
                # c_N0 (c + c_N0) = k (a - c_N0)(b - c_N0)
                qa, qb, qc = 1.0 - k, c + k * (a + b), -k * a * b
                if abs(qa) < 1e-300:
                    c_N0 = -qc / qb
                else:
                    disc = math.sqrt(qb * qb - 4 * qa * qc)
                    t = -0.5 * (qb + math.copysign(disc, qb))
                    cands = [r for r in (qc / t, t / qa) if 0 <= r <= min(a, b)]
                    if not cands:
                        raise ModelValidityError("no physical self-consistent donor solution")
                    c_N0 = min(cands)
    elif regime == "single_photon":
        if J <= 0:
            raise ModelValidityError("single-photon regime needs illumination")
        ion = sig.ionization(pops) * J
        if ion <= 0:
            raise ModelValidityError("single-photon regime needs a non-zero NV- ionization rate")
        a = cfg.c_NVm_star
        spare_Nplus = cfg.c_Nplus_star - a
        if spare_Nplus <= 0:
            raise ModelValidityError("single-photon regime needs c_Nplus_star > c_NVm_star")
        residual = a * (gamma_N0 / ion) / gamma_ratio * (cfg.c_NV0_star + a) / spare_Nplus
        c_N0 = a - residual
    else:
        raise ValueError(f"unknown regime {regime!r}")

    if c_N0 > cfg.c_Nplus_star or c_N0 > cfg.c_NVm_star or c_N0 < 0:
        raise ModelValidityError(
            f"c_N0 = {c_N0:.4g} exceeds the available N+ ({cfg.c_Nplus_star}) "
            f"or NV- ({cfg.c_NVm_star}) concentration")
    return Concentrations(
        c_N0=c_N0,
        c_NVm=cfg.c_NVm_star - c_N0,
        c_NV0=cfg.c_NV0_star + c_N0,
        c_Nplus=cfg.c_Nplus_star - c_N0,
    )


def donor_model_contrasts(cfg: DonorConfig, pops0: StatePopulations, popsB: StatePopulations,
                          sig: IonizationCrossSections, J: float,
                          k: EmissionConstants | None = None) -> ContrastPrediction:
    """Contrasts of the donor model in the two-photon regime.

    ``epsilon`` follows from the excited-state populations alone;
    ``delta`` is the relative change of the NV0 concentration.
    """
    k = k or EmissionConstants()
    ne0 = pops0.n_e_minus
    if ne0 <= 0:
        raise ValueError("zero NV- excited population at B=0")
    conc0 = donor_model(cfg, pops0, sig, J, "two_photon")
    concB = donor_model(cfg, popsB, sig, J, "two_photon")
    epsilon = (ne0 - popsB.n_e_minus) / ne0
    delta = (conc0.c_N0 - concB.c_N0) / conc0.c_NV0
    ratio = conc0.c_NV0 * pops0.n_e_zero * k.k_eg_zero / (conc0.c_NVm * ne0 * k.k_eg_minus)
    return ContrastPrediction(epsilon, delta, ratio, conc0.p)


def pl_fraction(c_NVm: float, c_NV0: float, pops: StatePopulations, k: EmissionConstants) -> float:
    minus = c_NVm * pops.n_e_minus * k.k_eg_minus
    zero = c_NV0 * pops.n_e_zero * k.k_eg_zero
    if minus + zero <= 0:
        raise ValueError("no photoluminescence: all emission terms vanish")
    return minus / (minus + zero)


def singlet_gaps_from_threshold(E_threshold: float,
                                cb_depth: float = CB_DEPTH_EV) -> tuple[float, float]:
    """``(Delta, Sigma)`` in eV from the 1E photoionization threshold (eV).

    The 1E level lies ``E_threshold`` below the conduction band, so
    ``Sigma = cb_depth - E_threshold``; ``Delta + Sigma`` equals the
    difference of the triplet and singlet ZPL energies.
    """
    if not 0 < E_threshold < cb_depth:
        raise ValueError(f"threshold must lie in (0, {cb_depth}) eV, got {E_threshold}")
    sigma = cb_depth - E_threshold
    return TRIPLET_MINUS_SINGLET_ZPL_EV - sigma, sigma
