"""Steady-state photodynamics of NV- (five levels) and NV0 (two levels).

NV- states are ordered ``(g0, g1, e0, e1, s)``: ground and excited triplet
with the m=0 and the combined m=+-1 sublevels, and the 1E shelving singlet.
An off-axis field mixes the triplet sublevels; the mixing enters the rates
through spin-overlap weights of the field eigenstates (``FieldMixing``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

HC_EV_NM = 1239.841984
GAMMA_E_GHZ_PER_T = 28.024951
D_GS_GHZ = 2.87
D_ES_GHZ = 1.42

G0, G1, E0, E1, S = range(5)
STATE_NAMES = ("n_g0", "n_g1", "n_e0", "n_e1", "n_s")
# number of spin sublevels in the m=0 and collapsed m=+-1 groups
_MULT = np.array([1.0, 2.0])


class DegenerateModelError(ValueError):
    """The rate model has no unique steady state."""


def photon_energy(wavelength_nm):
    return HC_EV_NM / np.asarray(wavelength_nm, dtype=float)


def photon_flux(power_uW: float, wavelength_nm: float, spot_diameter_um: float = 1.0) -> float:
    """Mean photon flux density (nm^-2 s^-1) of a beam over a circular spot."""
    e_joule = photon_energy(wavelength_nm) * 1.602176634e-19
    area_nm2 = math.pi * (0.5 * spot_diameter_um * 1e3) ** 2
    return float(power_uW * 1e-6 / e_joule / area_nm2)


@dataclass(frozen=True)
class CrossSectionModel:
    sigma0: float  # nm^2
    E_max: float  # eV
    w: float  # eV

    def __post_init__(self):
        if not self.sigma0 > 0 or not self.w > 0:
            raise ValueError("cross-section model needs sigma0 > 0 and w > 0")

    def __call__(self, E_phot):
        return excitation_cross_section(E_phot, self)


def excitation_cross_section(E_phot, m: CrossSectionModel):
    """Gaussian phonon-band absorption cross section (nm^2) at photon energy ``E_phot`` (eV)."""
    E = np.asarray(E_phot, dtype=float)
    if np.any(E <= 0):
        raise ValueError("photon energy must be positive")
    out = m.sigma0 * np.exp(-((E - m.E_max) ** 2) / (2.0 * m.w ** 2))
    return float(out) if out.ndim == 0 else out


NV_MINUS_ABSORPTION = CrossSectionModel(sigma0=0.0045, E_max=2.17, w=0.21)
NV_ZERO_ABSORPTION = CrossSectionModel(sigma0=0.0045, E_max=2.28, w=0.21)


@dataclass(frozen=True)
class NvMinusRates:
    """Intrinsic NV- transition rates in s^-1.

    Defaults follow the commonly used room-temperature set: radiative decay
    63.2/us, upper ISC 10.8/us from m=0 and 60.7/us from m=+-1, singlet decay
    1.6/us split evenly between the two ground-state groups.
    ``k_spin_relax`` is the ground-state spin-lattice rate per sublevel;
    it is zero by default (low-temperature limit) which leaves the model
    without a unique steady state at exactly zero flux.
    """

    k_eg: float = 63.2e6
    k_isc_up0: float = 10.8e6
    k_isc_up1: float = 60.7e6
    k_isc_down0: float = 0.8e6
    k_isc_down1: float = 0.8e6
    k_spin_relax: float = 0.0
    pump_rate_scale: float = 1.0
    absorption: CrossSectionModel = NV_MINUS_ABSORPTION

    def __post_init__(self):
        for name in ("k_eg", "k_isc_up0", "k_isc_up1", "k_isc_down0", "k_isc_down1",
                     "k_spin_relax", "pump_rate_scale"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be a finite non-negative rate, got {v}")
        if not self.k_isc_up1 > self.k_isc_up0:
            raise ValueError("spin-dependent ISC requires k_isc_up1 > k_isc_up0")

    @classmethod
    def with_singlet_branching(cls, k_singlet: float, to_m0: float = 0.5, **kw) -> "NvMinusRates":
        """Build rates from a total singlet decay rate and its m=0 branching fraction."""
        if not 0.0 <= to_m0 <= 1.0:
            raise ValueError("branching fraction must lie in [0, 1]")
        return cls(k_isc_down0=k_singlet * to_m0, k_isc_down1=k_singlet * (1 - to_m0), **kw)

    def scaled(self, c: float) -> "NvMinusRates":
        """All intrinsic rates multiplied by ``c`` (pump mapping unchanged)."""
        return replace(self, k_eg=c * self.k_eg, k_isc_up0=c * self.k_isc_up0,
                       k_isc_up1=c * self.k_isc_up1, k_isc_down0=c * self.k_isc_down0,
                       k_isc_down1=c * self.k_isc_down1, k_spin_relax=c * self.k_spin_relax)

    def pump_rate(self, J: float, E_phot: float) -> float:
        return self.pump_rate_scale * excitation_cross_section(E_phot, self.absorption) * J


@dataclass(frozen=True)
class NvZeroRates:
    k_eg: float = 52e6
    pump_rate_scale: float = 1.0
    absorption: CrossSectionModel = NV_ZERO_ABSORPTION

    def __post_init__(self):
        if not self.k_eg > 0 or self.pump_rate_scale < 0:
            raise ValueError("NV0 rates need k_eg > 0 and pump_rate_scale >= 0")

    def pump_rate(self, J: float, E_phot: float) -> float:
        return self.pump_rate_scale * excitation_cross_section(E_phot, self.absorption) * J


def _group_weights(D_ghz: float, B_mT: float, angle_deg: float) -> np.ndarray:
    # basis (m=0, m=+1, m=-1)
    s2 = 1.0 / math.sqrt(2.0)
    sz = np.diag([0.0, 1.0, -1.0])
    sx = np.array([[0.0, s2, s2], [s2, 0.0, 0.0], [s2, 0.0, 0.0]])
    b = GAMMA_E_GHZ_PER_T * B_mT * 1e-3
    th = math.radians(angle_deg)
    h = D_ghz * sz @ sz + b * (math.cos(th) * sz + math.sin(th) * sx)
    _, vecs = np.linalg.eigh(h)
    overlap = np.abs(vecs) ** 2  # overlap[p, i] = |<p|i>|^2
    zero_like = int(np.argmax(overlap[0]))
    others = [i for i in range(3) if i != zero_like]
    w = np.empty((2, 2))
    w[0] = [overlap[0, zero_like], overlap[1:, zero_like].sum()]
    w[1] = [overlap[0, others].sum() / 2.0, overlap[1:, others].sum() / 2.0]
    return w


@dataclass(frozen=True, eq=False)
class FieldMixing:
    """Spin-character weights of the field eigenstates.

    ``ground[a, c]`` is the mean pure-spin weight of class ``c`` (0: m=0,
    1: m=+-1) carried by the eigenstates of group ``a``; same for
    ``excited``. Rows sum to one.
    """

    B_mT: float = 0.0
    angle_deg: float = 0.0
    ground: np.ndarray = field(default_factory=lambda: np.eye(2))
    excited: np.ndarray = field(default_factory=lambda: np.eye(2))

    def __post_init__(self):
        for name in ("ground", "excited"):
            w = np.array(getattr(self, name), dtype=float)
            if w.shape != (2, 2) or np.any(w < 0):
                raise ValueError(f"{name} mixing must be a non-negative 2x2 matrix")
            if np.max(np.abs(w.sum(axis=1) - 1.0)) > 1e-10:
                raise ValueError(f"{name} mixing rows must sum to 1")
            # population conservation over the sublevels: sum_a n_a w[a, c] = n_c
            if np.max(np.abs(_MULT @ w - _MULT)) > 1e-10:
                raise ValueError(f"{name} mixing is not a valid sublevel redistribution")
            w.setflags(write=False)
            object.__setattr__(self, name, w)

    @classmethod
    def from_field(cls, B_mT: float, angle_deg: float = 54.7356,
                   D_gs: float = D_GS_GHZ, D_es: float = D_ES_GHZ) -> "FieldMixing":
        if B_mT < 0:
            raise ValueError("field magnitude must be >= 0")
        if B_mT == 0:
            return cls(0.0, angle_deg)
        return cls(B_mT, angle_deg, _group_weights(D_gs, B_mT, angle_deg),
                   _group_weights(D_es, B_mT, angle_deg))

    @property
    def is_identity(self) -> bool:
        return bool(np.array_equal(self.ground, np.eye(2)) and np.array_equal(self.excited, np.eye(2)))


def _transfer(w_src: np.ndarray, w_dst: np.ndarray, k_pure: np.ndarray) -> np.ndarray:
    """Group-to-group rates for a spin-conserving transition.

    Population of source group ``a`` decomposes into pure spin classes,
    each class ``c`` transfers at ``k_pure[c]`` and lands in destination
    group ``b`` in proportion to its share of class ``c``.
    Returns ``r[a, b]``.
    """
    land = (w_dst * _MULT[:, None]) / _MULT[None, :]  # land[b, c], columns sum to 1
    return (w_src * k_pure[None, :]) @ land.T


def build_rate_matrix(rates: NvMinusRates, mix: FieldMixing, J: float, E_phot: float) -> np.ndarray:
    """Five-state generator ``G`` with ``dn/dt = G @ n`` (s^-1)."""
    if not (math.isfinite(J) and J >= 0):
        raise ValueError(f"photon flux must be finite and >= 0, got {J}")
    pump = rates.pump_rate(J, E_phot)
    r = np.zeros((5, 5))  # r[i, j]: rate i -> j
    g, e = [G0, G1], [E0, E1]
    r[np.ix_(g, e)] = _transfer(mix.ground, mix.excited, np.array([pump, pump]))
    r[np.ix_(e, g)] = _transfer(mix.excited, mix.ground, np.array([rates.k_eg, rates.k_eg]))
    r[e, S] = mix.excited @ np.array([rates.k_isc_up0, rates.k_isc_up1])
    down = np.array([rates.k_isc_down0, rates.k_isc_down1])
    r[S, g] = (mix.ground * _MULT[:, None] / _MULT[None, :]) @ down
    r[G0, G1] += 2.0 * rates.k_spin_relax
    r[G1, G0] += rates.k_spin_relax
    np.fill_diagonal(r, 0.0)
    G = r.T.copy()
    G[np.diag_indices(5)] = -r.sum(axis=1)
    return G


def nv_zero_rate_matrix(rates: NvZeroRates, J: float, E_phot: float) -> np.ndarray:
    p = rates.pump_rate(J, E_phot)
    return np.array([[-p, rates.k_eg], [p, -rates.k_eg]])


def steady_state(G: np.ndarray, cond_limit: float = 1e13) -> np.ndarray:
    """Probability vector ``n`` with ``G n = 0`` and ``sum(n) = 1``.

    One balance row is replaced by the normalisation row and the system is
    solved by LU; a near-singular system means the null space is not
    one-dimensional.
    """
    G = np.asarray(G, dtype=float)
    scale = np.max(np.abs(G))
    if scale == 0 or not np.isfinite(scale):
        raise DegenerateModelError("generator is zero or non-finite")
    A = G / scale
    A[-1, :] = 1.0
    rhs = np.zeros(G.shape[0])
    rhs[-1] = 1.0
    if np.linalg.cond(A) > cond_limit:
        raise DegenerateModelError("steady state is not unique (singular balance equations)")
    n = np.linalg.solve(A, rhs)
    if np.min(n) < -1e-9:
        raise DegenerateModelError(f"steady state has negative population {np.min(n):.3g}")
    n = np.clip(n, 0.0, None)
    return n / n.sum()


@dataclass(frozen=True, eq=False)
class StatePopulations:
    nv_minus: np.ndarray  # (g0, g1, e0, e1, s)
    nv_zero: np.ndarray  # (g, e)

    def __post_init__(self):
        for name, size in (("nv_minus", 5), ("nv_zero", 2)):
            v = np.array(getattr(self, name), dtype=float)
            if v.shape != (size,):
                raise ValueError(f"{name} must have {size} entries")
            if np.any(v < 0) or np.any(v > 1) or abs(v.sum() - 1.0) > 1e-10:
                raise ValueError(f"{name} is not a probability vector: {v}")
            v.setflags(write=False)
            object.__setattr__(self, name, v)

    @property
    def n_g_minus(self) -> float:
        return float(self.nv_minus[G0] + self.nv_minus[G1])

    @property
    def n_e_minus(self) -> float:
        return float(self.nv_minus[E0] + self.nv_minus[E1])

    @property
    def n_s_minus(self) -> float:
        return float(self.nv_minus[S])

    @property
    def n_g_zero(self) -> float:
        return float(self.nv_zero[0])

    @property
    def n_e_zero(self) -> float:
        return float(self.nv_zero[1])


def populations(rates: NvMinusRates, mix: FieldMixing, J: float, E_phot: float,
                nv0: NvZeroRates | None = None) -> StatePopulations:
    nv0 = nv0 or NvZeroRates()
    n_minus = steady_state(build_rate_matrix(rates, mix, J, E_phot))
    n_zero = steady_state(nv_zero_rate_matrix(nv0, J, E_phot))
    return StatePopulations(n_minus, n_zero)


def epsilon_intrinsic(pops0: StatePopulations, popsB: StatePopulations) -> float:
    """Fractional drop of the NV- excited-state population under field."""
    ne0 = pops0.n_e_minus
    if ne0 <= 0:
        raise ValueError("zero NV- excited population at B=0")
    return 1.0 - popsB.n_e_minus / ne0


def field_sweep(rates: NvMinusRates, B_values, angle_deg: float, J: float, E_phot: float,
                nv0: NvZeroRates | None = None) -> dict[str, np.ndarray]:
    """Populations versus field, keyed by the population-sweep CSV columns."""
    B_values = np.asarray(B_values, dtype=float)
    rows = [populations(rates, FieldMixing.from_field(b, angle_deg), J, E_phot, nv0)
            for b in B_values]
    out = {"B_mT": B_values}
    for k, name in enumerate(STATE_NAMES):
        out[name] = np.array([p.nv_minus[k] for p in rows])
    out["n_e0_nv0"] = np.array([p.n_e_zero for p in rows])
    return out
