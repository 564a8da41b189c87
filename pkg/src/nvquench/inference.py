"""Sequential Monte Carlo estimation of field-quenching contrasts.

Data are processed zone by zone: the background zone fixes a Gaussian
prior for the constant background ``C`` and the noise levels, the NV0 ZPL
zone informs ``delta``, and the NV- ZPL zone informs ``epsilon`` together
with the slope ``m`` and offset ``b`` of the locally linear NV0 emission.
Each data point multiplies the particle weights by its likelihood. When
the weights degenerate the ensemble is resampled and then moved by a few
random-walk Metropolis steps that target the current posterior, so the
result does not depend on the order in which points are processed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .spectra import SpectrumPair, ZoneSet

EPS, DEL, M, B, C = range(5)
PARAM_NAMES = ("epsilon", "delta", "m", "b", "C")
_LOG_2PI = math.log(2.0 * math.pi)


class InferenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class Normal:
    mean: float
    sd: float


@dataclass(frozen=True)
class PriorConfig:
    """Prior and sampler settings.

    ``m_prior`` / ``b_prior`` give an explicit ``(mean, sd)`` Normal prior
    for the NV0 slope and offset in the NV- zone. When left as ``None``
    the priors are scaled from the data: ``b`` is uniform on
    ``[0, b_scale * L]`` and ``m`` is Normal with sd ``m_scale * L / w``,
    where ``L`` is the background-subtracted level at the zone edges and
    ``w`` the zone width.
    """

    epsilon_range: tuple[float, float] = (-0.5, 0.5)
    delta_range: tuple[float, float] = (-0.5, 0.2)
    m_scale: float = 1.0
    b_scale: float = 1.5
    m_prior: tuple[float, float] | None = None
    b_prior: tuple[float, float] | None = None
    n_particles: int = 4000
    ess_threshold: float = 0.5
    mh_steps: int = 3
    move_scale: float | None = None  # random-walk step in posterior sds; None gives 2.38/sqrt(d)
    noise_model: str = "constant"

    def __post_init__(self):
        for name in ("epsilon_range", "delta_range"):
            lo, hi = getattr(self, name)
            if not hi > lo:
                raise ValueError(f"{name} must be a non-empty interval")
            object.__setattr__(self, name, (float(lo), float(hi)))
        if self.n_particles < 100:
            raise ValueError("n_particles must be >= 100")
        if not 0 < self.ess_threshold <= 1:
            raise ValueError("ess_threshold must lie in (0, 1]")
        if self.mh_steps < 0:
            raise ValueError("mh_steps must be >= 0")
        if self.move_scale is not None and not self.move_scale > 0:
            raise ValueError("move_scale must be positive")
        if self.m_scale <= 0 or self.b_scale <= 0:
            raise ValueError("nuisance prior scales must be positive")
        if self.noise_model not in ("constant", "shot"):
            raise ValueError(f"unknown noise model {self.noise_model!r}")
        for name in ("m_prior", "b_prior"):
            v = getattr(self, name)
            if v is not None:
                mu, sd = map(float, v)
                if sd < 0:
                    raise ValueError(f"{name} sd must be >= 0")
                object.__setattr__(self, name, (mu, sd))

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict | None) -> "PriorConfig":
        d = dict(d or {})
        for k in ("epsilon_range", "delta_range", "m_prior", "b_prior"):
            if d.get(k) is not None:
                d[k] = tuple(d[k])
        return cls(**d)


@dataclass(frozen=True)
class BackgroundEstimate:
    C: Normal
    sigma0: float
    sigmaB: float
    n_points: int


@dataclass(eq=False)
class ParticleEnsemble:
    particles: np.ndarray  # (n, 5): epsilon, delta, m, b, C
    weights: np.ndarray
    background: Normal
    noise: tuple[float, float]
    ess_history: list[float] = field(default_factory=list)
    resample_steps: list[int] = field(default_factory=list)
    acceptance: list[float] = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.particles.shape[0]

    @property
    def ess(self) -> float:
        return effective_sample_size(self.weights)


@dataclass(frozen=True)
class ContrastPosterior:
    epsilon_mean: float
    epsilon_sd: float
    delta_mean: float
    delta_sd: float
    epsilon_ci90: tuple[float, float]
    delta_ci90: tuple[float, float]
    C_mean: float
    C_sd: float
    m_mean: float = float("nan")
    b_mean: float = float("nan")
    ess_history: tuple[float, ...] = ()

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["epsilon_ci90"] = list(self.epsilon_ci90)
        d["delta_ci90"] = list(self.delta_ci90)
        d["ess_history"] = list(self.ess_history)
        return d


def effective_sample_size(weights: np.ndarray) -> float:
    return float(1.0 / np.sum(np.square(weights)))


def systematic_resample(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Indices drawn by systematic resampling (one uniform offset)."""
    n = weights.size
    positions = (rng.random() + np.arange(n)) / n
    cdf = np.cumsum(weights)
    cdf[-1] = 1.0
    return np.searchsorted(cdf, positions, side="right").clip(max=n - 1)


def weighted_quantile(values: np.ndarray, weights: np.ndarray, q) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    v, w = values[order], weights[order]
    cdf = np.cumsum(w) - 0.5 * w
    cdf /= np.sum(w)
    return np.interp(q, cdf, v)


def background_posterior(pair: SpectrumPair, zones: ZoneSet) -> BackgroundEstimate:
    """Gaussian background from pooled field-off and field-on BG-zone data.

    Also returns the per-spectrum sample sds, used as noise levels.
    """
    wl = pair.wavelengths
    if zones.bg.lo < wl[0] or zones.bg.hi > wl[-1]:
        raise InferenceError(f"BG zone {zones.bg} lies outside the spectrum span")
    _, I0, IB = pair.zone_data(zones.bg)
    if I0.size < 5:
        raise InferenceError(f"BG zone holds {I0.size} points, need >= 5")
    pooled = np.concatenate([I0, IB])
    sd = float(np.std(pooled, ddof=1))
    return BackgroundEstimate(
        C=Normal(float(np.mean(pooled)), sd / math.sqrt(pooled.size)),
        sigma0=float(np.std(I0, ddof=1)),
        sigmaB=float(np.std(IB, ddof=1)),
        n_points=int(I0.size),
    )


def _gauss_logpdf(r, var):
    return -0.5 * (_LOG_2PI + np.log(var) + r * r / var)


def likelihood_zpl0(I0, IB, delta, C, sigma0, sigmaB):
    """Log-likelihood of one NV0-ZPL point; NV- emission assumed absent."""
    one_d = 1.0 - delta
    r = one_d * I0 - IB + delta * C
    return _gauss_logpdf(r, one_d ** 2 * sigma0 ** 2 + sigmaB ** 2)


def likelihood_zplminus(I0, IB, epsilon, delta, m, b, lambda_n, lambda_bar, C, sigma0, sigmaB):
    """Log-likelihood of one NV--ZPL point with NV0 emission ``m (lambda - lambda_bar) + b``."""
    one_e = 1.0 - epsilon
    r = one_e * I0 - IB + (epsilon - delta) * (m * (lambda_n - lambda_bar) + b) + epsilon * C
    return _gauss_logpdf(r, one_e ** 2 * sigma0 ** 2 + sigmaB ** 2)


class _Sampler:
    """Weighted particles plus the cumulative log-likelihood of each one.

    ``loglik_fn(x)`` returns the log-likelihood of everything processed so
    far for an array of parameter rows; it is only called during moves.
    """

    def __init__(self, prior: PriorConfig, rng: np.random.Generator):
        self.prior = prior
        self.rng = rng
        n = prior.n_particles
        self.x = np.zeros((n, 5))
        self.logw = np.full(n, -math.log(n))
        self.loglik = np.zeros(n)
        self.bounds: dict[int, tuple[float, float]] = {EPS: prior.epsilon_range,
                                                       DEL: prior.delta_range}
        self.normals: dict[int, Normal] = {}
        self.moving: list[int] = []
        self.loglik_fn = None
        self.ess_history: list[float] = []
        self.resample_steps: list[int] = []
        self.acceptance: list[float] = []

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.logw)

    def log_prior(self, x: np.ndarray) -> np.ndarray:
        lp = np.zeros(x.shape[0])
        for d, (lo, hi) in self.bounds.items():
            lp[(x[:, d] < lo) | (x[:, d] > hi)] = -np.inf
        for d, nd in self.normals.items():
            lp -= 0.5 * ((x[:, d] - nd.mean) / nd.sd) ** 2
        return lp

    def update(self, loglik: np.ndarray, step: int, data_index: int) -> None:
        logw = self.logw + loglik
        top = np.max(logw)
        if not np.isfinite(top):
            raise InferenceError(f"all particle weights vanished at data index {data_index}")
        self.logw = logw - logsumexp(logw)
        self.loglik += loglik
        w = self.weights
        ess = effective_sample_size(w)
        self.ess_history.append(ess)
        if ess < self.prior.ess_threshold * w.size:
            self.resample(w, step)

    def resample(self, w: np.ndarray, step: int) -> None:
        n = w.size
        idx = systematic_resample(w, self.rng)
        self.x = self.x[idx]
        self.loglik = self.loglik[idx]
        self.logw = np.full(n, -math.log(n))
        self.resample_steps.append(step)
        self.move()

    def move(self) -> None:
        dims = self.moving
        if not dims or self.prior.mh_steps == 0 or self.loglik_fn is None:
            return
        n = self.x.shape[0]
        cov = np.atleast_2d(np.cov(self.x[:, dims], rowvar=False))
        vals, vecs = np.linalg.eigh(cov)
        root = vecs * np.sqrt(np.clip(vals, 0.0, None))
        scale = self.prior.move_scale or 2.38 / math.sqrt(len(dims))
        lp = self.log_prior(self.x)
        accepted = 0
        for _ in range(self.prior.mh_steps):
            prop = self.x.copy()
            prop[:, dims] += scale * self.rng.standard_normal((n, len(dims))) @ root.T
            lp_new = self.log_prior(prop)
            ok = np.isfinite(lp_new)
            ll_new = np.full(n, -np.inf)
            if np.any(ok):
                ll_new[ok] = self.loglik_fn(prop[ok])
            log_u = np.log(self.rng.uniform(size=n))
            acc = log_u < (ll_new + lp_new) - (self.loglik + lp)
            self.x[acc] = prop[acc]
            self.loglik[acc] = ll_new[acc]
            lp[acc] = lp_new[acc]
            accepted += int(acc.sum())
        self.acceptance.append(accepted / (n * self.prior.mh_steps))


def _nuisance_priors(prior: PriorConfig, lam: np.ndarray, I0: np.ndarray, C_mean: float):
    width = float(lam[-1] - lam[0])
    k = max(1, lam.size // 10)
    level = max(float(np.mean(I0[:k])), float(np.mean(I0[-k:]))) - C_mean
    level = max(level, 1e-12)
    return level, width


def _summed_loglik(x, I0, IB, dx, idx0, idxm, sigma0, sigmaB) -> np.ndarray:
    """Sum of the per-point log-likelihoods over ``idx0`` and ``idxm`` for constant noise.

    Each zone residual is linear in a few fixed basis vectors, so the sum of
    squares is a quadratic form in per-particle coefficients.
    """
    total = np.zeros(x.shape[0])
    eps, d, m, b, c = x.T
    if idx0:
        j = np.array(idx0)
        # r = (I0 - IB) - delta I0 + delta C
        basis = np.stack([I0[j] - IB[j], -I0[j], np.ones(j.size)])
        coef = np.stack([np.ones_like(d), d, d * c])
        total += _gauss_sum(basis, coef, (1 - d) ** 2 * sigma0 ** 2 + sigmaB ** 2)
    if idxm:
        j = np.array(idxm)
        # r = (I0 - IB) - eps I0 + (eps C + g b) + g m dx,  g = eps - delta
        g = eps - d
        basis = np.stack([I0[j] - IB[j], -I0[j], np.ones(j.size), dx[j]])
        coef = np.stack([np.ones_like(eps), eps, eps * c + g * b, g * m])
        total += _gauss_sum(basis, coef, (1 - eps) ** 2 * sigma0 ** 2 + sigmaB ** 2)
    return total


def _gauss_sum(basis, coef, var):
    gram = basis @ basis.T
    ss = np.einsum("in,ij,jn->n", coef, gram, coef)
    k = basis.shape[1]
    return -0.5 * (k * (_LOG_2PI + np.log(var)) + ss / var)


def _draw(s: _Sampler, d: int, nd: Normal, n: int) -> None:
    """Fill column ``d`` from ``nd``; a zero sd pins it and keeps it out of the moves."""
    s.x[:, d] = s.rng.normal(nd.mean, nd.sd, n) if nd.sd > 0 else nd.mean
    if nd.sd > 0:
        s.normals[d] = nd
        s.moving.append(d)


def smc_run(pair: SpectrumPair, zones: ZoneSet | None = None, prior: PriorConfig | None = None,
            seed: int = 0, shuffle_seed: int | None = None
            ) -> tuple[ContrastPosterior, ParticleEnsemble]:
    """Posterior over (epsilon, delta, m, b, C) for one spectrum pair.

    ``shuffle_seed`` permutes the processing order inside each zone (the
    default is increasing wavelength). Runs are deterministic for a fixed
    ``seed``.
    """
    zones = zones or ZoneSet()
    prior = prior or PriorConfig()
    zones.validate(pair.wavelengths)
    bg = background_posterior(pair, zones)
    if prior.noise_model == "constant" and (bg.sigma0 <= 0 or bg.sigmaB <= 0):
        raise InferenceError("noise estimated from the BG zone is zero; cannot form likelihoods")
    rng = np.random.default_rng(seed)
    s = _Sampler(prior, rng)
    n = prior.n_particles
    s.x[:, DEL] = rng.uniform(*prior.delta_range, n)
    s.moving.append(DEL)
    _draw(s, C, bg.C, n)

    idx_all = np.arange(pair.wavelengths.size)
    idx0 = idx_all[zones.zpl0.mask(pair.wavelengths)]
    idxm = idx_all[zones.zplminus.mask(pair.wavelengths)]
    if shuffle_seed is not None:
        perm = np.random.default_rng(shuffle_seed)
        idx0 = perm.permutation(idx0)
        idxm = perm.permutation(idxm)
    wl = pair.wavelengths
    I0, IB = pair.off.intensities, pair.on.intensities

    if prior.noise_model == "shot":
        bg_level = max(bg.C.mean, 1.0)
        g0, gB = bg.sigma0 / math.sqrt(bg_level), bg.sigmaB / math.sqrt(bg_level)
        sig0 = g0 * np.sqrt(np.maximum(I0, 1.0))
        sigB = gB * np.sqrt(np.maximum(IB, 1.0))
    else:
        sig0 = np.full(wl.size, bg.sigma0)
        sigB = np.full(wl.size, bg.sigmaB)

    done0: list[int] = []
    donem: list[int] = []
    lam_zone = wl[zones.zplminus.mask(wl)]
    lam_bar = zones.zplminus.center

    def loglik_fn(x):
        if prior.noise_model == "constant":
            return _summed_loglik(x, I0, IB, wl - lam_bar, done0, donem, bg.sigma0, bg.sigmaB)
        col = lambda d: x[:, d][:, None]
        total = np.zeros(x.shape[0])
        if done0:
            j = np.array(done0)
            total += likelihood_zpl0(I0[j], IB[j], col(DEL), col(C), sig0[j], sigB[j]).sum(axis=1)
        if donem:
            j = np.array(donem)
            total += likelihood_zplminus(I0[j], IB[j], col(EPS), col(DEL), col(M), col(B), wl[j],
                                         lam_bar, col(C), sig0[j], sigB[j]).sum(axis=1)
        return total

    s.loglik_fn = loglik_fn
    step = 0
    for i in idx0:
        done0.append(int(i))
        ll = likelihood_zpl0(I0[i], IB[i], s.x[:, DEL], s.x[:, C], sig0[i], sigB[i])
        s.update(ll, step, int(i))
        step += 1

    # epsilon, m, b are untouched by the NV0 zone, so their prior is drawn here
    level, width = _nuisance_priors(prior, lam_zone, I0[zones.zplminus.mask(wl)], bg.C.mean)
    s.x[:, EPS] = rng.uniform(*prior.epsilon_range, n)
    s.moving.append(EPS)
    if prior.m_prior is not None:
        _draw(s, M, Normal(*prior.m_prior), n)
    else:
        _draw(s, M, Normal(0.0, prior.m_scale * level / width), n)
    if prior.b_prior is not None:
        _draw(s, B, Normal(*prior.b_prior), n)
    else:
        s.bounds[B] = (0.0, prior.b_scale * level)
        s.x[:, B] = rng.uniform(0.0, prior.b_scale * level, n)
        s.moving.append(B)
    s.moving.sort()

    for i in idxm:
        donem.append(int(i))
        ll = likelihood_zplminus(I0[i], IB[i], s.x[:, EPS], s.x[:, DEL], s.x[:, M], s.x[:, B],
                                 wl[i], lam_bar, s.x[:, C], sig0[i], sigB[i])
        s.update(ll, step, int(i))
        step += 1

    ens = ParticleEnsemble(s.x, s.weights, bg.C, (bg.sigma0, bg.sigmaB),
                           s.ess_history, s.resample_steps, s.acceptance)
    return posterior_summary(ens), ens


def posterior_summary(e: ParticleEnsemble) -> ContrastPosterior:
    w = e.weights / np.sum(e.weights)
    x = e.particles
    mean = w @ x
    sd = np.sqrt(np.clip(w @ (x - mean) ** 2, 0.0, None))
    q = (0.05, 0.95)
    ci_e = weighted_quantile(x[:, EPS], w, q)
    ci_d = weighted_quantile(x[:, DEL], w, q)
    return ContrastPosterior(
        epsilon_mean=float(mean[EPS]), epsilon_sd=float(sd[EPS]),
        delta_mean=float(mean[DEL]), delta_sd=float(sd[DEL]),
        epsilon_ci90=(float(ci_e[0]), float(ci_e[1])),
        delta_ci90=(float(ci_d[0]), float(ci_d[1])),
        C_mean=float(mean[C]), C_sd=float(sd[C]),
        m_mean=float(mean[M]), b_mean=float(mean[B]),
        ess_history=tuple(e.ess_history),
    )
