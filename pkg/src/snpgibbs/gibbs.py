"""Gibbs sampler: full-conditional draws, missing-SNP imputation, chain
management and posterior summaries.

The model is Y = X beta + Z gamma + eps with eps ~ N(0, sigma^2 R),
gamma ~ N(0, sigma^2 phi^2 I), flat prior on beta, and inverted-gamma
priors on sigma^2 and phi^2. One sweep draws each block from its full
conditional:

  beta    ~ N((X'R^-1 X)^-1 X'R^-1 (Y - Z gamma), sigma^2 (X'R^-1 X)^-1)
  gamma   ~ N(M^-1 Z'R^-1 (Y - X beta), sigma^2 M^-1),  M = Z'R^-1 Z + I/phi^2
  sigma^2 ~ InvGamma(n/2 + s/2 + a, [(Y-Xb-Zg)'R^-1(Y-Xb-Zg) + |g|^2/phi^2 + 2b]/2)
  phi^2   ~ InvGamma(s/2 + c, (|g|^2/sigma^2 + 2d)/2)

Missing genotypes are multiply imputed inside the chain: each sweep
re-draws one SNP column (cycling), each masked cell from its discrete
conditional over the three genotype classes, and the cached M^-1 is
repaired through rank-one column-delta updates rather than re-inversion.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import linalg
from .linalg import ColumnDelta, InverseCache
from .model import (
    GENOTYPE_CODES,
    Dataset,
    ImputationPrior,
    PriorHyperparams,
    genotype_column_values,
    snp_design_matrix,
    validate_dataset,
)

logger = logging.getLogger(__name__)

__all__ = [
    "ChainNumericalError",
    "ParameterState",
    "GibbsConfig",
    "PosteriorSamples",
    "CredibleInterval",
    "sample_beta",
    "sample_gamma",
    "sample_sigma2",
    "sample_phi2",
    "imputation_probabilities",
    "impute_snp_column",
    "initial_state",
    "run_chain",
    "hpd_interval",
    "autocorrelations",
    "batch_mean_stderr",
]


class ChainNumericalError(RuntimeError):
    """Numerical failure inside the chain; carries iteration and last state."""

    def __init__(self, message: str, iteration: int = -1, state=None):
        super().__init__(message)
        self.iteration = iteration
        self.state = state


@dataclass
class ParameterState:
    """One Gibbs state: coefficients, variances and the completed genotypes."""

    beta: np.ndarray
    gamma: np.ndarray
    sigma2: float
    phi2: float
    z_imputed: np.ndarray

    def __post_init__(self):
        if not self.sigma2 > 0 or not self.phi2 > 0:
            raise ValueError("sigma2 and phi2 must be positive")

    def copy(self) -> "ParameterState":
        return ParameterState(
            self.beta.copy(),
            self.gamma.copy(),
            float(self.sigma2),
            float(self.phi2),
            self.z_imputed.copy(),
        )


@dataclass(frozen=True)
class GibbsConfig:
    """Chain length, retention and imputation settings.

    ``impute_mode`` selects how missing genotypes are refreshed per sweep:
    "cycle" re-draws one SNP column per iteration (the default), "all"
    re-draws every column, "off" disables imputation. The off/cycle paths
    are rng-identical when nothing is missing.
    """

    total_iterations: int = 50_000
    burn_in: int = 10_000
    thinning: int = 4
    seed: int = 0
    imputation_prior: ImputationPrior = field(default_factory=ImputationPrior)
    refresh_period: int = 200
    impute_mode: str = "cycle"
    r_weighted_imputation: bool = False

    def __post_init__(self):
        if not self.burn_in < self.total_iterations:
            raise ValueError("burn_in must be smaller than total_iterations")
        if self.thinning < 1:
            raise ValueError("thinning must be >= 1")
        if self.impute_mode not in ("cycle", "all", "off"):
            raise ValueError(f"unknown impute_mode {self.impute_mode!r}")

    @property
    def retained_count(self) -> int:
        return (self.total_iterations - self.burn_in) // self.thinning


@dataclass(frozen=True)
class CredibleInterval:
    lower: float
    upper: float
    level: float
    contains_zero: bool

    def __post_init__(self):
        if self.lower > self.upper:
            raise ValueError("interval bounds out of order")
        if not 0 < self.level < 1:
            raise ValueError("level must lie in (0, 1)")


class _StateView(Sequence):
    """Lazy sequence of ParameterStates backed by compact sample arrays."""

    def __init__(self, samples: "PosteriorSamples"):
        self._s = samples

    def __len__(self) -> int:
        return self._s.retained_count

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[k] for k in range(*i.indices(len(self)))]
        if i < 0:
            i += len(self)
        if not 0 <= i < len(self):
            raise IndexError(i)
        return self._s.state(i)


@dataclass
class PosteriorSamples:
    """Thinned post-burn-in draws, stored compactly.

    Genotype completions are kept only at the masked cells; ``state(i)``
    re-materializes the full ParameterState.
    """

    betas: np.ndarray
    gammas: np.ndarray
    sigma2s: np.ndarray
    phi2s: np.ndarray
    masked_values: np.ndarray  # retained x n_masked, int8
    observed_codes: np.ndarray
    missing_mask: np.ndarray
    snp_coding: str
    beta_labels: tuple
    gamma_labels: tuple
    snp_names: tuple
    config: GibbsConfig

    @property
    def retained_count(self) -> int:
        return self.betas.shape[0]

    @property
    def states(self) -> Sequence[ParameterState]:
        return _StateView(self)

    def state(self, i: int) -> ParameterState:
        z = self.observed_codes.copy()
        if self.masked_values.shape[1]:
            z[self.missing_mask] = self.masked_values[i]
        return ParameterState(
            self.betas[i].copy(),
            self.gammas[i].copy(),
            float(self.sigma2s[i]),
            float(self.phi2s[i]),
            z,
        )

    def coefficient_table(self) -> tuple[tuple, np.ndarray]:
        names = tuple(self.beta_labels) + tuple(self.gamma_labels) + ("sigma2", "phi2")
        cols = np.column_stack(
            [self.betas, self.gammas, self.sigma2s[:, None], self.phi2s[:, None]]
        )
        return names, cols

    def summary(self, level: float = 0.95):
        """Per-coefficient mean and HPD interval rows."""
        names, cols = self.coefficient_table()
        rows = []
        for k, name in enumerate(names):
            draws = cols[:, k]
            interval = hpd_interval(draws, level)
            rows.append((name, float(draws.mean()), interval))
        return rows


def _draw_inverse_gamma(rng: np.random.Generator, shape: float, scale: float) -> float:
    return float(scale / rng.gamma(shape))


class ChainWorkspace:
    """Quantities fixed for a dataset: R^-1 and the X-side factorizations."""

    def __init__(self, data: Dataset):
        self.data = data
        self.Rinv = np.linalg.inv(data.R)
        self.Rinv_diag = np.diag(self.Rinv).copy()
        self.XtRinv = data.X.T @ self.Rinv
        self.XtRinvX = self.XtRinv @ data.X
        try:
            self.Lx = np.linalg.cholesky(self.XtRinvX)
        except np.linalg.LinAlgError as exc:
            raise ChainNumericalError(f"X'R^-1X factorization failed: {exc}") from exc


def _design_of(state: ParameterState, data: Dataset, design: Optional[np.ndarray]):
    if design is not None:
        return design
    return snp_design_matrix(state.z_imputed, data.snp_coding)


def sample_beta(
    state: ParameterState,
    data: Dataset,
    rng: np.random.Generator,
    workspace: Optional[ChainWorkspace] = None,
    design: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Draw beta from its Gaussian full conditional (GLS mean)."""
    work = workspace or ChainWorkspace(data)
    Zd = _design_of(state, data, design)
    resid = data.y - Zd @ state.gamma
    mean = np.linalg.solve(work.XtRinvX, work.XtRinv @ resid)
    noise = np.linalg.solve(work.Lx.T, rng.standard_normal(mean.shape[0]))
    return mean + np.sqrt(state.sigma2) * noise


def sample_gamma(
    state: ParameterState,
    data: Dataset,
    rng: np.random.Generator,
    cache: Optional[InverseCache] = None,
    workspace: Optional[ChainWorkspace] = None,
    design: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Draw gamma from N(M^-1 Z'R^-1(Y - X beta), sigma^2 M^-1).

    M^-1 comes from the rank-one-maintained cache when given; a drifted
    cache (Cholesky failure) triggers one forced refresh and retry.
    """
    work = workspace or ChainWorkspace(data)
    Zd = _design_of(state, data, design)
    if cache is None:
        Minv = linalg.dual_form_inverse(Zd, data.R, state.phi2)
    else:
        Minv = cache.inverse
    rhs = Zd.T @ (work.Rinv @ (data.y - data.X @ state.beta))
    for attempt in (0, 1):
        try:
            L = np.linalg.cholesky(0.5 * (Minv + Minv.T))
            break
        except np.linalg.LinAlgError:
            if cache is None or attempt == 1:
                raise ChainNumericalError("gamma covariance not positive definite")
            logger.warning("inverse cache drift: forcing refresh")
            cache.refresh()
            Minv = cache.inverse
    mean = Minv @ rhs
    return mean + np.sqrt(state.sigma2) * (L @ rng.standard_normal(mean.shape[0]))


def sample_sigma2(
    state: ParameterState,
    data: Dataset,
    priors: PriorHyperparams,
    rng: np.random.Generator,
    workspace: Optional[ChainWorkspace] = None,
    design: Optional[np.ndarray] = None,
) -> float:
    """Inverted-gamma draw for sigma^2 given all other blocks."""
    work = workspace or ChainWorkspace(data)
    Zd = _design_of(state, data, design)
    resid = data.y - data.X @ state.beta - Zd @ state.gamma
    quad = float(resid @ (work.Rinv @ resid))
    s_dim = state.gamma.shape[0]
    shape = data.n / 2 + s_dim / 2 + priors.a
    scale = (quad + float(state.gamma @ state.gamma) / state.phi2 + 2 * priors.b) / 2
    return _draw_inverse_gamma(rng, shape, scale)


def sample_phi2(
    state: ParameterState, priors: PriorHyperparams, rng: np.random.Generator
) -> float:
    """Inverted-gamma draw for the coefficient-variance scale phi^2."""
    s_dim = state.gamma.shape[0]
    shape = s_dim / 2 + priors.c
    scale = (float(state.gamma @ state.gamma) / state.sigma2 + 2 * priors.d) / 2
    return _draw_inverse_gamma(rng, shape, scale)


def imputation_probabilities(
    state: ParameterState,
    data: Dataset,
    j: int,
    prior: ImputationPrior,
    rows: Optional[np.ndarray] = None,
    design: Optional[np.ndarray] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Genotype-class probabilities for the masked cells of SNP column j.

    For each masked individual the three candidate codes c are weighted by
    prior(c) * exp(-(r - contrib(c))^2 / (2 sigma^2)), where r is the
    phenotype residual with SNP j's contribution removed. Normalization is
    done in log space with max subtraction.

    Returns (rows, probs) with probs of shape (len(rows), 3) over codes
    (-1, 0, +1).
    """
    if not 0 <= j < data.s:
        raise IndexError(f"SNP index {j} out of range")
    if rows is None:
        rows = np.flatnonzero(data.genotypes.missing_mask[:, j])
    if rows.size == 0:
        return rows, np.zeros((0, 3))
    Zd = _design_of(state, data, design)
    cols = list(data.design_columns_of_snp(j))
    gsub = state.gamma[cols]
    contrib_old = Zd[np.ix_(rows, cols)] @ gsub
    full_resid = data.y - data.X @ state.beta - Zd @ state.gamma
    r = full_resid[rows] + contrib_old
    cand = genotype_column_values(GENOTYPE_CODES, data.snp_coding) @ gsub  # (3,)
    logw = prior.log_weights(rows, j) - (r[:, None] - cand[None, :]) ** 2 / (
        2.0 * state.sigma2
    )
    logw -= logw.max(axis=1, keepdims=True)
    probs = np.exp(logw)
    probs /= probs.sum(axis=1, keepdims=True)
    return rows, probs


def impute_snp_column(
    state: ParameterState,
    data: Dataset,
    j: int,
    rng: np.random.Generator,
    prior: ImputationPrior,
    design: Optional[np.ndarray] = None,
    workspace: Optional[ChainWorkspace] = None,
    r_weighted: bool = False,
) -> list[ColumnDelta]:
    """Re-draw the masked cells of SNP column j; observed cells untouched.

    Mutates ``state.z_imputed`` in place and returns the net ColumnDelta
    per affected *design* column (one for signed coding, two for additive
    + dominance coding). Zero-change columns still produce (zero) deltas
    only if some cell moved; an unchanged column yields an empty list.
    """
    rows = np.flatnonzero(data.genotypes.missing_mask[:, j])
    if rows.size == 0:
        return []
    Zd = _design_of(state, data, design)
    old_codes = state.z_imputed[rows, j].copy()

    if r_weighted:
        new_codes = _impute_r_weighted(
            state, data, j, rng, prior, rows, Zd, workspace
        )
    else:
        _, probs = imputation_probabilities(state, data, j, prior, rows, Zd)
        u = rng.random(rows.size)
        idx = (probs.cumsum(axis=1) < u[:, None]).sum(axis=1)
        new_codes = GENOTYPE_CODES[np.minimum(idx, 2)]

    state.z_imputed[rows, j] = new_codes
    if np.array_equal(new_codes, old_codes):
        return []
    old_vals = genotype_column_values(old_codes, data.snp_coding)
    new_vals = genotype_column_values(new_codes, data.snp_coding)
    deltas = []
    for k, col in enumerate(data.design_columns_of_snp(j)):
        d = np.zeros(data.n)
        d[rows] = new_vals[:, k] - old_vals[:, k]
        if np.any(d):
            deltas.append(ColumnDelta(col, d))
    return deltas


def _impute_r_weighted(state, data, j, rng, prior, rows, Zd, workspace):
    """Draw column j cells sequentially under the R^-1-coupled residual."""
    work = workspace or ChainWorkspace(data)
    Rinv, rdiag = work.Rinv, work.Rinv_diag
    cols = list(data.design_columns_of_snp(j))
    gsub = state.gamma[cols]
    cand = genotype_column_values(GENOTYPE_CODES, data.snp_coding) @ gsub  # (3,)
    mu = data.X @ state.beta + Zd @ state.gamma
    u = Rinv @ (data.y - mu)
    logprior = prior.log_weights(rows, j)
    new_codes = np.empty(rows.size, dtype=np.int8)
    for k, i in enumerate(rows):
        a_old = float(
            genotype_column_values(state.z_imputed[i : i + 1, j], data.snp_coding)[0]
            @ gsub
        )
        t_i = u[i] + rdiag[i] * a_old  # residual image with cell i's term removed
        logw = logprior[k] + (2.0 * cand * t_i - cand**2 * rdiag[i]) / (
            2.0 * state.sigma2
        )
        logw -= logw.max()
        p = np.exp(logw)
        p /= p.sum()
        draw = int((p.cumsum() < rng.random()).sum())
        code = int(GENOTYPE_CODES[min(draw, 2)])
        new_codes[k] = code
        a_new = float(
            genotype_column_values(np.array([code], dtype=np.int8), data.snp_coding)[0]
            @ gsub
        )
        if a_new != a_old:
            u -= Rinv[:, i] * (a_new - a_old)
    return new_codes


def initial_state(
    data: Dataset,
    config: GibbsConfig,
    rng: np.random.Generator,
) -> ParameterState:
    """Starting point: complete-case GLS fit for the coefficients (zeros on
    failure), sample phenotype variance for sigma^2, phi^2 = 1, and missing
    genotypes drawn from the imputation prior."""
    mask = data.genotypes.missing_mask
    z = data.genotypes.codes.copy()
    prior = config.imputation_prior
    for j in range(data.s):
        rows = np.flatnonzero(mask[:, j])
        if rows.size == 0:
            continue
        logw = prior.log_weights(rows, j)
        w = np.exp(logw - logw.max(axis=1, keepdims=True))
        w /= w.sum(axis=1, keepdims=True)
        u = rng.random(rows.size)
        idx = (w.cumsum(axis=1) < u[:, None]).sum(axis=1)
        z[rows, j] = GENOTYPE_CODES[np.minimum(idx, 2)]

    Zd = snp_design_matrix(z, data.snp_coding)
    p, sd = data.X.shape[1], Zd.shape[1]
    beta = np.zeros(p)
    gamma = np.zeros(sd)
    complete = np.flatnonzero(~mask.any(axis=1))
    if complete.size >= p + sd:
        W = np.column_stack([data.X[complete], Zd[complete]])
        Rcc = data.R[np.ix_(complete, complete)]
        try:
            RinvW = np.linalg.solve(Rcc, W)
            coef = np.linalg.solve(W.T @ RinvW, RinvW.T @ data.y[complete])
            if np.isfinite(coef).all():
                beta, gamma = coef[:p].copy(), coef[p:].copy()
        except np.linalg.LinAlgError:
            pass
    sigma2 = float(np.var(data.y)) or 1.0
    return ParameterState(beta, gamma, sigma2, 1.0, z)


def run_chain(
    data: Dataset,
    priors: PriorHyperparams,
    config: GibbsConfig,
) -> PosteriorSamples:
    """Run one seeded Gibbs chain and return the thinned retained states.

    Per iteration: re-draw missing genotypes for one SNP column (cycling
    j = t mod s), repair the cached (Z'R^-1Z + I/phi^2)^-1 through
    column-delta rank-one updates, then draw gamma, beta, sigma^2, phi^2.
    Fully deterministic for a given seed.
    """
    validate_dataset(data).raise_for_errors()
    work = ChainWorkspace(data)
    rng = np.random.default_rng(config.seed)
    state = initial_state(data, config, rng)
    Zd = snp_design_matrix(state.z_imputed, data.snp_coding)
    mask = data.genotypes.missing_mask
    masked_flat = np.flatnonzero(mask.ravel())
    n_masked = masked_flat.size
    any_missing = n_masked > 0
    use_cache = config.impute_mode in ("cycle", "off")

    cache = None
    cache_phi2 = state.phi2
    zero_delta = ColumnDelta(0, np.zeros(data.n))
    if use_cache:
        A = Zd.T @ work.Rinv @ Zd + np.eye(Zd.shape[1]) / state.phi2
        cache = InverseCache.from_matrix(A, refresh_period=config.refresh_period)

    kept = config.retained_count
    p, sd = data.X.shape[1], Zd.shape[1]
    betas = np.empty((kept, p))
    gammas = np.empty((kept, sd))
    sigma2s = np.empty(kept)
    phi2s = np.empty(kept)
    masked_values = np.empty((kept, n_masked), dtype=np.int8)

    keep_idx = 0
    for t in range(config.total_iterations):
        try:
            if use_cache and state.phi2 != cache_phi2:
                linalg.column_delta_inverse_update(
                    cache, Zd, zero_delta, work.Rinv, cache_phi2, state.phi2
                )
                cache_phi2 = state.phi2

            if any_missing and config.impute_mode != "off":
                if config.impute_mode == "cycle":
                    cols = (t % data.s,)
                else:
                    cols = range(data.s)
                for j in cols:
                    deltas = impute_snp_column(
                        state,
                        data,
                        j,
                        rng,
                        config.imputation_prior,
                        design=Zd,
                        workspace=work,
                        r_weighted=config.r_weighted_imputation,
                    )
                    for delta in deltas:
                        if use_cache:
                            linalg.column_delta_inverse_update(
                                cache, Zd, delta, work.Rinv, cache_phi2, cache_phi2
                            )
                        Zd[:, delta.column_index] += delta.delta

            state.gamma = sample_gamma(
                state, data, rng, cache=cache, workspace=work, design=Zd
            )
            state.beta = sample_beta(state, data, rng, workspace=work, design=Zd)
            state.sigma2 = sample_sigma2(
                state, data, priors, rng, workspace=work, design=Zd
            )
            state.phi2 = sample_phi2(state, priors, rng)
        except (linalg.SingularUpdateError, np.linalg.LinAlgError) as exc:
            raise ChainNumericalError(
                f"numerical failure at iteration {t}: {exc}", t, state
            ) from exc

        if __debug__:
            assert np.array_equal(
                state.z_imputed[~mask], data.genotypes.codes[~mask]
            ), "observed genotype entries were modified"

        if t >= config.burn_in and (t - config.burn_in + 1) % config.thinning == 0:
            betas[keep_idx] = state.beta
            gammas[keep_idx] = state.gamma
            sigma2s[keep_idx] = state.sigma2
            phi2s[keep_idx] = state.phi2
            if n_masked:
                masked_values[keep_idx] = state.z_imputed.ravel()[masked_flat]
            keep_idx += 1

    observed = data.genotypes.codes.copy()
    observed[mask] = 0
    return PosteriorSamples(
        betas=betas,
        gammas=gammas,
        sigma2s=sigma2s,
        phi2s=phi2s,
        masked_values=masked_values,
        observed_codes=observed,
        missing_mask=mask,
        snp_coding=data.snp_coding,
        beta_labels=data.design.names(),
        gamma_labels=data.gamma_labels(),
        snp_names=data.genotypes.names(),
        config=config,
    )


def hpd_interval(samples: np.ndarray, level: float = 0.95) -> CredibleInterval:
    """Shortest interval containing ``level`` posterior mass (sorted-window scan)."""
    draws = np.sort(np.asarray(samples, dtype=float))
    n = draws.shape[0]
    if n < 100:
        raise ValueError(f"need at least 100 draws for an HPD interval, got {n}")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    m = int(np.ceil(level * n))
    m = min(max(m, 1), n)
    widths = draws[m - 1 :] - draws[: n - m + 1]
    k = int(np.argmin(widths))
    lower, upper = float(draws[k]), float(draws[k + m - 1])
    return CredibleInterval(lower, upper, level, contains_zero=lower <= 0.0 <= upper)


def autocorrelations(x: np.ndarray, max_lag: int = 20) -> np.ndarray:
    """Sample autocorrelations at lags 1..max_lag."""
    x = np.asarray(x, dtype=float)
    x = x - x.mean()
    denom = float(x @ x)
    if denom == 0.0:
        return np.zeros(max_lag)
    return np.array(
        [float(x[k:] @ x[:-k]) / denom for k in range(1, max_lag + 1)]
    )


def batch_mean_stderr(x: np.ndarray, n_batches: int = 30) -> float:
    """Monte Carlo standard error of the mean via non-overlapping batch means."""
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    n_batches = max(2, min(n_batches, n))
    size = n // n_batches
    if size < 1:
        return float(x.std(ddof=1) / np.sqrt(n))
    means = x[: size * n_batches].reshape(n_batches, size).mean(axis=1)
    return float(means.std(ddof=1) / np.sqrt(n_batches))
