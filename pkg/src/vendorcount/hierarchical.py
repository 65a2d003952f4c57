"""Hierarchical Bayesian models with cell-varying response probabilities.

Two models are supported. Both put normal hierarchies on logit p(B),
log L0(B) and log L1(B) with non-centered ("raw") parameters; ``mu_1`` is
fixed at 0 because only relative credentialed intensities enter the
likelihood.

* Model 4: Poisson uncredentialed counts and a multinomial split of ``N1``
  over cells plus the non-responding remainder. ``eta1`` sums to zero.
* Model 5: negative binomial uncredentialed counts and a multivariate
  negative hypergeometric split, driven by per-cell vendors-per-market
  ratios ``rho``. ``eta1`` is unconstrained.

Posteriors are sampled with an adaptive random-walk Metropolis kernel on the
unconstrained scale (log standard deviations).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np
from scipy.special import gammaln, log_expit

from .core import ValidationError

logger = logging.getLogger(__name__)

HYPER_NAMES = ("mu_p", "sigma_p", "mu_0", "sigma_0", "sigma_1")


class InitializationError(RuntimeError):
    """No finite starting point found for the sampler."""


# ---------------------------------------------------------------- log-masses


def nb_logmass(n, mu, rho):
    """Negative binomial log-mass, trials convention, with ``r = mu / rho``.

    Accepts scalars or broadcastable arrays. Infeasible inputs return -inf:
    ``r <= 0``, ``rho <= 1`` (so ``q = 1 - 1/rho`` is not in (0, 1)),
    ``n - r + 1 <= 0``, and ``n < 1`` (where ``lgamma(n)`` diverges).
    """
    n, mu, rho = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (n, mu, rho)))
    with np.errstate(divide="ignore", invalid="ignore"):
        r = mu / rho
        q = 1.0 - 1.0 / rho
        ok = (r > 0) & (q > 0) & (q < 1) & (n - r + 1 > 0) & (n >= 1)
        out = (
            gammaln(n)
            - gammaln(r)
            - gammaln(n - r + 1)
            + (n - r) * np.log(q)
            + r * np.log1p(-q)
        )
    out = np.where(ok, out, -np.inf)
    return float(out) if out.ndim == 0 else out


def mnh_logmass(n_aug, r) -> np.ndarray | float:
    """Multivariate negative hypergeometric log-mass, trials convention.

    ``n_aug`` and ``r`` have the category on the last axis; leading axes of
    ``r`` broadcast over a batch. Returns -inf wherever a guard fails.
    """
    n = np.asarray(n_aug, dtype=float)
    r = np.asarray(r, dtype=float)
    n, r = np.broadcast_arrays(n, r)
    N = n.sum(axis=-1)
    R = r.sum(axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ok = (R > 0) & (N - R + 1 > 0)
        ok &= np.all((n > 0) & (r > 0) & (n - r + 1 > 0), axis=-1)
        cells = gammaln(n) - gammaln(r) - gammaln(n - r + 1)
        lp = cells.sum(axis=-1) - (gammaln(N) - gammaln(R) - gammaln(N - R + 1))
    lp = np.where(ok, lp, -np.inf)
    return float(lp) if lp.ndim == 0 else lp


def _multinomial_logmass(counts: np.ndarray, log_theta: np.ndarray) -> np.ndarray:
    # counts (K+1,), log_theta (B, K+1); 0 * log 0 counts as 0
    N = counts.sum()
    const = gammaln(N + 1) - gammaln(counts + 1).sum()
    terms = np.where(counts > 0, counts * log_theta, 0.0)
    return const + terms.sum(axis=-1)


# ---------------------------------------------------------------- data/params


@dataclass(frozen=True)
class HierData:
    """Per-cell respondent counts and the citywide credentialed total."""

    n0: np.ndarray
    n1: np.ndarray
    N1: int
    rho: np.ndarray | None = None

    def __post_init__(self) -> None:
        n0 = np.asarray(self.n0, dtype=np.int64).ravel()
        n1 = np.asarray(self.n1, dtype=np.int64).ravel()
        if n0.size == 0 or n0.shape != n1.shape:
            raise ValidationError("n0 and n1 must be nonempty and of equal length")
        if np.any(n0 < 0) or np.any(n1 < 0):
            raise ValidationError("counts must be nonnegative")
        if int(self.N1) < int(n1.sum()):
            raise ValidationError(f"sum(n1) = {n1.sum()} exceeds N1 = {self.N1}")
        object.__setattr__(self, "n0", n0)
        object.__setattr__(self, "n1", n1)
        object.__setattr__(self, "N1", int(self.N1))
        if self.rho is not None:
            rho = np.asarray(self.rho, dtype=float).ravel()
            if rho.shape != n0.shape:
                raise ValidationError("rho must have one entry per cell")
            if np.any(rho < 1):
                raise ValidationError("rho (vendors per market) must be at least 1")
            object.__setattr__(self, "rho", rho)

    @property
    def K(self) -> int:
        return int(self.n0.size)

    @property
    def n1_aug(self) -> np.ndarray:
        return np.append(self.n1, self.N1 - self.n1.sum())


@dataclass(frozen=True)
class HierParams:
    """Hyperparameters and non-centered cell parameters.

    ``eta1_raw`` has K - 1 entries for Model 4 (the last cell is pinned by the
    sum-to-zero constraint) and K entries for Model 5.
    """

    mu_p: float
    sigma_p: float
    alpha_raw: np.ndarray
    mu_0: float
    sigma_0: float
    eta0_raw: np.ndarray
    sigma_1: float
    eta1_raw: np.ndarray

    def __post_init__(self) -> None:
        for name in ("alpha_raw", "eta0_raw", "eta1_raw"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).ravel())
        if self.alpha_raw.shape != self.eta0_raw.shape:
            raise ValidationError("alpha_raw and eta0_raw must have one entry per cell")
        if min(self.sigma_p, self.sigma_0, self.sigma_1) <= 0:
            raise ValidationError("hierarchy standard deviations must be positive")

    @property
    def K(self) -> int:
        return int(self.alpha_raw.size)

    @property
    def alpha(self) -> np.ndarray:
        return self.mu_p + self.sigma_p * self.alpha_raw

    @property
    def p(self) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-self.alpha))

    @property
    def eta0(self) -> np.ndarray:
        return self.mu_0 + self.sigma_0 * self.eta0_raw

    @property
    def lambda0(self) -> np.ndarray:
        return np.exp(self.eta0)

    @property
    def eta1(self) -> np.ndarray:
        head = self.sigma_1 * self.eta1_raw
        if self.eta1_raw.size == self.K - 1:
            return np.append(head, -head.sum())
        if self.eta1_raw.size == self.K:
            return head
        raise ValidationError("eta1_raw must have K - 1 (Model 4) or K (Model 5) entries")

    @property
    def r(self) -> np.ndarray:
        """Relative credentialed intensity per cell (softmax of ``eta1``)."""
        e = np.exp(self.eta1 - self.eta1.max())
        return e / e.sum()

    def vector(self) -> np.ndarray:
        """Unconstrained parameter vector (standard deviations on the log scale)."""
        return np.concatenate(
            [
                [self.mu_p, math.log(self.sigma_p)],
                self.alpha_raw,
                [self.mu_0, math.log(self.sigma_0)],
                self.eta0_raw,
                [math.log(self.sigma_1)],
                self.eta1_raw,
            ]
        )

    @classmethod
    def from_vector(cls, theta: Sequence[float], K: int) -> "HierParams":
        theta = np.asarray(theta, dtype=float)
        return cls(
            theta[0],
            math.exp(theta[1]),
            theta[2 : 2 + K],
            theta[2 + K],
            math.exp(theta[3 + K]),
            theta[4 + K : 4 + 2 * K],
            math.exp(theta[4 + 2 * K]),
            theta[5 + 2 * K :],
        )


def dimension(model: int, K: int) -> int:
    if model == 4:
        return 3 * K + 4
    if model == 5:
        return 3 * K + 5
    raise ValidationError(f"model must be 4 or 5, got {model!r}")


@dataclass(frozen=True)
class HyperPrior:
    """Priors on the hyperparameters.

    A ``None`` scale means a flat prior (the default for every entry). Means
    get normal priors ``N(loc, scale^2)``; standard deviations get half-normal
    priors with the given scale.
    """

    mu_p: tuple[float, float] | None = None
    mu_0: tuple[float, float] | None = None
    sigma_p: float | None = None
    sigma_0: float | None = None
    sigma_1: float | None = None

    @property
    def proper(self) -> bool:
        return None not in (self.mu_p, self.mu_0, self.sigma_p, self.sigma_0, self.sigma_1)

    def logdensity(self, mu_p, sigma_p, mu_0, sigma_0, sigma_1) -> np.ndarray:
        total = np.zeros(np.shape(mu_p))
        for value, setting in ((mu_p, self.mu_p), (mu_0, self.mu_0)):
            if setting is not None:
                loc, scale = setting
                total = total - 0.5 * ((value - loc) / scale) ** 2
        for value, scale in ((sigma_p, self.sigma_p), (sigma_0, self.sigma_0), (sigma_1, self.sigma_1)):
            if scale is not None:
                total = total - 0.5 * (value / scale) ** 2
        return total

    def draw(self, model: int, K: int, gen: np.random.Generator) -> HierParams:
        """Draw a full parameter set from the prior; requires a proper prior."""
        if not self.proper:
            raise ValidationError("drawing parameters needs a proper prior on every hyperparameter")
        n1raw = K - 1 if model == 4 else K
        return HierParams(
            gen.normal(*self.mu_p),
            abs(gen.normal(0.0, self.sigma_p)),
            gen.standard_normal(K),
            gen.normal(*self.mu_0),
            abs(gen.normal(0.0, self.sigma_0)),
            gen.standard_normal(K),
            abs(gen.normal(0.0, self.sigma_1)),
            gen.standard_normal(n1raw),
        )


# ---------------------------------------------------------------- log-posteriors


def _split(theta: np.ndarray, K: int):
    mu_p, ls_p = theta[:, 0], theta[:, 1]
    a_raw = theta[:, 2 : 2 + K]
    mu_0, ls_0 = theta[:, 2 + K], theta[:, 3 + K]
    e0_raw = theta[:, 4 + K : 4 + 2 * K]
    ls_1 = theta[:, 4 + 2 * K]
    e1_raw = theta[:, 5 + 2 * K :]
    return mu_p, ls_p, a_raw, mu_0, ls_0, e0_raw, ls_1, e1_raw


def _raw_normal(*raws: np.ndarray) -> np.ndarray:
    return sum(-0.5 * (x * x).sum(axis=1) for x in raws) - 0.5 * math.log(2 * math.pi) * sum(
        x.shape[1] for x in raws
    )


def _common(theta: np.ndarray, K: int, prior: HyperPrior):
    mu_p, ls_p, a_raw, mu_0, ls_0, e0_raw, ls_1, e1_raw = _split(theta, K)
    sp, s0, s1 = np.exp(ls_p), np.exp(ls_0), np.exp(ls_1)
    alpha = mu_p[:, None] + sp[:, None] * a_raw
    eta0 = mu_0[:, None] + s0[:, None] * e0_raw
    lp = _raw_normal(a_raw, e0_raw, e1_raw) + prior.logdensity(mu_p, sp, mu_0, s0, s1)
    return alpha, eta0, s1, e1_raw, lp


def logpost_model4_batch(
    theta: np.ndarray, data: HierData, prior: HyperPrior = HyperPrior(), jacobian: bool = True
) -> np.ndarray:
    """Model 4 log-posterior for a batch of unconstrained vectors ``(B, D)``.

    With ``jacobian`` the log-determinant of the log-sigma transform is added,
    giving the density of the unconstrained vector that the sampler targets.
    """
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    K = data.K
    if theta.shape[1] != dimension(4, K):
        raise ValidationError(f"Model 4 with K={K} needs {dimension(4, K)} parameters")
    alpha, eta0, s1, e1_raw, lp = _common(theta, K, prior)
    log_p = log_expit(alpha)
    log_1mp = log_expit(-alpha)
    # Poisson n0 | p * lambda0
    log_mu0 = log_p + eta0
    lp = lp + (data.n0 * log_mu0 - np.exp(log_mu0) - gammaln(data.n0 + 1)).sum(axis=1)
    # multinomial over cells and remainder; 1 - sum(p r) computed as sum((1 - p) r)
    head = s1[:, None] * e1_raw
    eta1 = np.concatenate([head, -head.sum(axis=1, keepdims=True)], axis=1)
    log_r = eta1 - np.logaddexp.reduce(eta1, axis=1, keepdims=True)
    log_theta = np.concatenate(
        [log_p + log_r, np.logaddexp.reduce(log_1mp + log_r, axis=1, keepdims=True)], axis=1
    )
    lp = lp + _multinomial_logmass(data.n1_aug, log_theta)
    if jacobian:
        lp = lp + theta[:, 1] + theta[:, 3 + K] + theta[:, 4 + 2 * K]
    return np.where(np.isnan(lp), -np.inf, lp)


def logpost_model5_batch(
    theta: np.ndarray, data: HierData, prior: HyperPrior = HyperPrior(), jacobian: bool = True
) -> np.ndarray:
    """Model 5 log-posterior for a batch of unconstrained vectors ``(B, D)``."""
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    K = data.K
    if data.rho is None:
        raise ValidationError("Model 5 needs per-cell vendors-per-market ratios rho")
    if theta.shape[1] != dimension(5, K):
        raise ValidationError(f"Model 5 with K={K} needs {dimension(5, K)} parameters")
    alpha, eta0, s1, e1_raw, lp = _common(theta, K, prior)
    p = 1.0 / (1.0 + np.exp(-alpha))
    lambda0 = np.exp(eta0)
    lp = lp + nb_logmass(data.n0[None, :], p * lambda0, data.rho[None, :]).sum(axis=1)
    eta1 = s1[:, None] * e1_raw
    share = np.exp(eta1 - eta1.max(axis=1, keepdims=True))
    share /= share.sum(axis=1, keepdims=True)
    markets = (lambda0 / data.rho).sum(axis=1, keepdims=True)
    s = np.concatenate(
        [markets * p * share, markets * ((1.0 - p) * share).sum(axis=1, keepdims=True)], axis=1
    )
    lp = lp + mnh_logmass(data.n1_aug[None, :], s)
    if jacobian:
        lp = lp + theta[:, 1] + theta[:, 3 + K] + theta[:, 4 + 2 * K]
    return np.where(np.isnan(lp), -np.inf, lp)


def logpost_model4(params: HierParams, data: HierData, prior: HyperPrior = HyperPrior()) -> float:
    """Log-posterior of Model 4 at ``params`` (no change-of-variables term)."""
    if params.K != data.K or params.eta1_raw.size != data.K - 1:
        raise ValidationError("parameter dimensions do not match Model 4 with this data")
    return float(logpost_model4_batch(params.vector()[None, :], data, prior, jacobian=False)[0])


def logpost_model5(params: HierParams, data: HierData, prior: HyperPrior = HyperPrior()) -> float:
    """Log-posterior of Model 5 at ``params`` (no change-of-variables term)."""
    if params.K != data.K or params.eta1_raw.size != data.K:
        raise ValidationError("parameter dimensions do not match Model 5 with this data")
    return float(logpost_model5_batch(params.vector()[None, :], data, prior, jacobian=False)[0])


def simulate_model4(params: HierParams, N1: int, gen: np.random.Generator) -> HierData:
    """Draw one data set from Model 4 at the given parameters."""
    p, lam0, r = params.p, params.lambda0, params.r
    n0 = gen.poisson(p * lam0)
    cells = p * r
    n1_aug = gen.multinomial(N1, np.append(cells, max(0.0, 1.0 - cells.sum())))
    return HierData(n0, n1_aug[:-1], N1)


# ---------------------------------------------------------------- sampler


@dataclass(frozen=True)
class FitConfig:
    chains: int = 4
    warmup: int = 2000
    iters: int = 2000
    seed: int = 0
    step_scale: float = 1.0
    thin: int = 1
    prior: HyperPrior = field(default_factory=HyperPrior)
    init_retries: int = 100

    def __post_init__(self) -> None:
        if min(self.chains, self.warmup, self.iters, self.thin, self.init_retries) < 1:
            raise ValidationError("chains, warmup, iters, thin and init_retries must be positive")
        if not self.step_scale > 0:
            raise ValidationError("step_scale must be positive")


@dataclass(frozen=True)
class PosteriorDraws:
    """Post-warmup draws pooled over chains.

    ``values`` has one row per retained draw and one column per entry of
    ``names``; ``total`` is the per-draw sum of ``lambda0`` plus ``N1``.
    """

    model: int
    names: tuple[str, ...]
    values: np.ndarray
    total: np.ndarray
    chain: np.ndarray
    iteration: np.ndarray
    acceptance: np.ndarray
    N1: int

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.names.index(name)]

    def chain_total(self, c: int) -> np.ndarray:
        return self.total[self.chain == c]


def _names(model: int, K: int) -> tuple[str, ...]:
    cells = [f"p[{i}]" for i in range(K)] + [f"lambda0[{i}]" for i in range(K)]
    cells += [f"r[{i}]" for i in range(K)]
    return HYPER_NAMES + tuple(cells)


def _constrained(theta: np.ndarray, model: int, K: int) -> np.ndarray:
    mu_p, ls_p, a_raw, mu_0, ls_0, e0_raw, ls_1, e1_raw = _split(theta, K)
    sp, s0, s1 = np.exp(ls_p), np.exp(ls_0), np.exp(ls_1)
    p = 1.0 / (1.0 + np.exp(-(mu_p[:, None] + sp[:, None] * a_raw)))
    lam0 = np.exp(mu_0[:, None] + s0[:, None] * e0_raw)
    head = s1[:, None] * e1_raw
    eta1 = np.concatenate([head, -head.sum(axis=1, keepdims=True)], axis=1) if model == 4 else head
    r = np.exp(eta1 - eta1.max(axis=1, keepdims=True))
    r /= r.sum(axis=1, keepdims=True)
    return np.column_stack([mu_p, sp, mu_0, s0, s1, p, lam0, r])


def _initial_point(model: int, data: HierData, gen: np.random.Generator, jitter: float) -> np.ndarray:
    K = data.K
    p_hat = min(max(data.n1.sum() / data.N1, 0.01), 0.99)
    alpha = np.full(K, math.log(p_hat / (1 - p_hat))) + jitter * gen.standard_normal(K)
    eta0 = np.log((data.n0 + 0.5) / p_hat)
    eta0 = eta0 + jitter * gen.standard_normal(K)
    log_r = np.log(data.n1 + 0.5)
    log_r = log_r - log_r.mean() + jitter * gen.standard_normal(K)

    def hier(values: np.ndarray) -> tuple[float, float, np.ndarray]:
        mu = float(values.mean())
        sd = max(float(values.std()), 0.1)
        return mu, sd, (values - mu) / sd

    mu_p, sp, a_raw = hier(alpha)
    mu_0, s0, e0_raw = hier(eta0)
    if model == 4:
        eta1 = log_r - log_r.mean()
        s1 = max(float(eta1.std()), 0.1)
        e1_raw = eta1[:-1] / s1
    else:
        s1 = max(float(log_r.std()), 0.1)
        e1_raw = log_r / s1
    return HierParams(mu_p, sp, a_raw, mu_0, s0, e0_raw, s1, e1_raw).vector()


def _target(model: int):
    return logpost_model4_batch if model == 4 else logpost_model5_batch


def fit(model: Literal[4, 5], data: HierData, config: FitConfig = FitConfig()) -> PosteriorDraws:
    """Sample the posterior with adaptive random-walk Metropolis.

    Each chain has its own generator spawned from ``config.seed``. During
    warmup the proposal covariance tracks the chain's sample covariance and
    a global scale is tuned toward 0.234 acceptance; both are frozen for the
    retained iterations, so the retained kernel is a fixed Metropolis kernel.
    """
    if model not in (4, 5):
        raise ValidationError(f"model must be 4 or 5, got {model!r}")
    K = data.K
    if model == 4 and K == 1 and not config.prior.proper:
        logger.warning("Model 4 with one cell and flat hyperpriors has an improper posterior")
    D = dimension(model, K)
    target = _target(model)
    C = config.chains
    gens = [np.random.default_rng(s) for s in np.random.SeedSequence(config.seed).spawn(C)]

    theta = np.empty((C, D))
    for c, gen in enumerate(gens):
        for attempt in range(config.init_retries):
            cand = _initial_point(model, data, gen, jitter=0.0 if attempt == 0 else 0.5)
            if attempt > 0:
                cand = cand + 0.5 * gen.standard_normal(D)
            if np.isfinite(target(cand[None, :], data, config.prior)[0]):
                theta[c] = cand
                break
        else:
            raise InitializationError(
                f"chain {c}: no finite log-posterior after {config.init_retries} attempts"
            )
    lp = target(theta, data, config.prior)

    base = 2.38**2 / D
    log_scale = np.full(C, 2.0 * math.log(config.step_scale))
    chol = np.stack([np.eye(D) * math.sqrt(0.01 / base)] * C)
    start_adapt = max(int(0.15 * config.warmup), 1)
    n_seen = 0
    mean = np.zeros((C, D))
    m2 = np.zeros((C, D, D))

    total_iters = config.warmup + config.iters
    kept = config.iters // config.thin
    out = np.empty((C, kept, D))
    accepted = np.zeros(C)
    k = 0
    for t in range(total_iters):
        z = np.stack([g.standard_normal(D) for g in gens])
        log_u = np.log(np.array([g.random() for g in gens]))
        step = np.exp(0.5 * log_scale)[:, None] * math.sqrt(base)
        prop = theta + step * np.einsum("cij,cj->ci", chol, z)
        lp_prop = target(prop, data, config.prior)
        log_ratio = np.where(np.isfinite(lp_prop), lp_prop - lp, -np.inf)
        accept = log_u < log_ratio
        theta = np.where(accept[:, None], prop, theta)
        lp = np.where(accept, lp_prop, lp)

        if t < config.warmup:
            rate = np.exp(np.minimum(log_ratio, 0.0))
            log_scale += (t + 1) ** -0.6 * (rate - 0.234) * 2.0
            if t >= start_adapt:
                n_seen += 1
                delta = theta - mean
                mean += delta / n_seen
                m2 += np.einsum("ci,cj->cij", delta, theta - mean)
                if n_seen >= 2 * D and (n_seen % 100 == 0 or t == config.warmup - 1):
                    cov = m2 / (n_seen - 1)
                    shrink = (n_seen * cov + 5e-3 * np.eye(D)) / (n_seen + 5.0)
                    chol = np.linalg.cholesky(shrink)
        else:
            accepted += accept
            i = t - config.warmup
            if (i + 1) % config.thin == 0 and k < kept:
                out[:, k] = theta
                k += 1

    acceptance = accepted / config.iters
    logger.info("model %d acceptance per chain: %s", model, np.round(acceptance, 3).tolist())
    flat = out.reshape(C * kept, D)
    values = _constrained(flat, model, K)
    total = values[:, len(HYPER_NAMES) + K : len(HYPER_NAMES) + 2 * K].sum(axis=1) + data.N1
    chain = np.repeat(np.arange(C), kept)
    iteration = np.tile(config.warmup + config.thin * (np.arange(kept) + 1), C)
    return PosteriorDraws(model, _names(model, K), values, total, chain, iteration, acceptance, data.N1)


def summarize(draws: PosteriorDraws, level: float = 0.95) -> dict:
    """Posterior mean and central credible interval of the vendor total."""
    if draws.total.size == 0:
        raise ValidationError("no posterior draws to summarize")
    if not 0 < level < 1:
        raise ValidationError("level must lie in (0, 1)")
    lo, hi = np.quantile(draws.total, [(1 - level) / 2, (1 + level) / 2])
    return {
        "mean": float(draws.total.mean()),
        "sd": float(draws.total.std(ddof=1)) if draws.total.size > 1 else 0.0,
        "ci": (float(lo), float(hi)),
        "level": level,
        "draws": int(draws.total.size),
        "acceptance": [float(a) for a in draws.acceptance],
    }


def split_rhat(draws: PosteriorDraws) -> float:
    """Split potential scale reduction of the total (Gelman-Rubin, split chains)."""
    halves = []
    for c in np.unique(draws.chain):
        x = draws.chain_total(c)
        h = x.size // 2
        halves += [x[:h], x[h : 2 * h]]
    n = min(h.size for h in halves)
    arr = np.stack([h[:n] for h in halves])
    within = arr.var(axis=1, ddof=1).mean()
    between = n * arr.mean(axis=1).var(ddof=1)
    if within == 0:
        return 1.0
    return float(math.sqrt(((n - 1) / n * within + between / n) / within))


# ---------------------------------------------------------------- calibration


@dataclass(frozen=True)
class CalibrationReport:
    truths: np.ndarray
    covered: np.ndarray
    ranks: np.ndarray
    rank_draws: int
    level: float

    @property
    def coverage(self) -> float:
        return float(self.covered.mean())


def calibrate(
    K: int,
    N1: int,
    prior: HyperPrior,
    fits: int,
    seed: int,
    config: FitConfig,
    level: float = 0.90,
    rank_draws: int = 39,
) -> CalibrationReport:
    """Simulation-based calibration of Model 4 on the vendor total.

    Each replicate draws parameters from ``prior``, simulates data, fits with
    the same prior and records whether the central ``level`` interval covers
    the true total and the rank of the truth among ``rank_draws`` evenly
    spaced posterior draws.
    """
    if not prior.proper:
        raise ValidationError("calibration needs a proper prior")
    cfg_prior = FitConfig(
        config.chains, config.warmup, config.iters, config.seed, config.step_scale, config.thin, prior
    )
    root = np.random.SeedSequence(seed)
    truths, covered, ranks = [], [], []
    for i, child in enumerate(root.spawn(fits)):
        gen = np.random.default_rng(child)
        params = prior.draw(4, K, gen)
        data = simulate_model4(params, N1, gen)
        truth = float(params.lambda0.sum() + N1)
        cfg = FitConfig(
            cfg_prior.chains, cfg_prior.warmup, cfg_prior.iters, int(gen.integers(2**63)),
            cfg_prior.step_scale, cfg_prior.thin, prior,
        )
        draws = fit(4, data, cfg)
        lo, hi = np.quantile(draws.total, [(1 - level) / 2, (1 + level) / 2])
        idx = np.linspace(0, draws.total.size - 1, rank_draws).round().astype(int)
        truths.append(truth)
        covered.append(lo <= truth <= hi)
        ranks.append(int((draws.total[idx] < truth).sum()))
    return CalibrationReport(np.array(truths), np.array(covered), np.array(ranks), rank_draws, level)
