"""EM baseline: maximum-likelihood fit of the SNP regression under missing
genotypes, with an exact enumeration E-step for small missing patterns and
a Gibbs-scan Monte Carlo E-step beyond the enumeration cap.

The complete-data model here is Y_i = X_i beta + Z_i gamma + e_i with iid
N(0, sigma^2) errors; kinship is deliberately not part of this baseline.
Per individual, the missing genotypes have the discrete posterior

  P(Z_i^m = c) prop exp(-(Y_i - X_i beta - Z_i^o g^o - c g^m)^2 / (2 sigma^2))

over all genotype tuples c. The E-step collects the first two moments of
each individual's completed design row; the M-step solves

  gamma = (Z'(I-H)Z + V_Z)^{-1} Z'(I-H)Y,        H = X (X'X)^{-1} X',
  beta  = (X'X)^{-1} X'(Y - Z gamma),
  sigma^2 = (|Y - X beta - Z gamma|^2 + gamma' V_Z gamma) / n,

with Z the expected completed design and V_Z the summed within-individual
covariance. These are the exact maximizers of the expected complete-data
log likelihood
  -(n/2) log sigma^2 - (|Y - X beta - Z gamma|^2 + gamma' V_Z gamma) / (2 sigma^2),
which is what guarantees the observed log likelihood never decreases.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from itertools import product
from typing import Optional

import numpy as np

from .model import (
    GENOTYPE_CODES,
    Dataset,
    genotype_column_values,
    snp_design_matrix,
    validate_dataset,
)

logger = logging.getLogger(__name__)

__all__ = [
    "EnumerationCapError",
    "MissingPattern",
    "EmConfig",
    "EmState",
    "missing_distribution",
    "e_step",
    "m_step",
    "observed_loglik",
    "run_em",
]

GENOTYPE_ARITY = 3
DEFAULT_ENUMERATION_CAP = GENOTYPE_ARITY**6  # 729 tuples per individual


class EnumerationCapError(RuntimeError):
    """Exact enumeration would exceed the configured cap for an individual."""


@dataclass(frozen=True)
class MissingPattern:
    """Missing SNP indices per individual, with enumeration bookkeeping."""

    missing_indices: tuple[tuple[int, ...], ...]
    arity: int = GENOTYPE_ARITY

    @classmethod
    def from_dataset(cls, data: Dataset) -> "MissingPattern":
        mask = data.genotypes.missing_mask
        return cls(tuple(tuple(np.flatnonzero(mask[i])) for i in range(data.n)))

    def k(self, i: int) -> int:
        return len(self.missing_indices[i])

    def enumeration_size(self, i: int) -> int:
        return self.arity ** self.k(i)

    def individuals_with_missing(self) -> tuple[int, ...]:
        return tuple(i for i, idx in enumerate(self.missing_indices) if idx)


@dataclass(frozen=True)
class EmConfig:
    tol: float = 1e-8
    max_iterations: int = 500
    enumeration_cap: int = DEFAULT_ENUMERATION_CAP
    mc_samples: int = 400
    mc_burn_in: int = 50
    seed: int = 0


@dataclass
class EmState:
    """Current EM parameters and E-step moments of the completed design."""

    beta: np.ndarray
    gamma: np.ndarray
    sigma2: float
    expected_Z: np.ndarray  # n x design_dim, observed columns exact
    V_Z: np.ndarray  # design_dim x design_dim accumulated covariance

    def params_vector(self) -> np.ndarray:
        return np.concatenate([self.beta, self.gamma, [self.sigma2]])


@dataclass
class EmRunLog:
    iterations: int = 0
    converged: bool = False
    exact_regime: bool = True
    history: list = field(default_factory=list)  # (iteration, loglik or nan, max delta)


def _genotype_tuples(k: int) -> np.ndarray:
    """All genotype code tuples of length k, shape (3^k, k)."""
    return np.array(list(product(GENOTYPE_CODES.tolist(), repeat=k)), dtype=float)


def _tuple_design(tuples: np.ndarray, coding: str) -> np.ndarray:
    """Design contributions of genotype tuples, shape (m, k * cols_per_snp)."""
    pieces = [genotype_column_values(tuples[:, t], coding) for t in range(tuples.shape[1])]
    return np.hstack(pieces) if pieces else np.zeros((tuples.shape[0], 0))


def _observed_residual(state: EmState, data: Dataset, i: int) -> float:
    """Residual for individual i with all missing-SNP contributions removed."""
    missing = np.flatnonzero(data.genotypes.missing_mask[i])
    z_row = data.genotypes.codes[i].astype(float).copy()
    z_row[missing] = 0.0
    design_row = snp_design_matrix(z_row[None, :], data.snp_coding)[0]
    # dominance column of a masked SNP must not contribute either
    for j in missing:
        for col in data.design_columns_of_snp(int(j)):
            design_row[col] = 0.0
    return float(data.y[i] - data.X[i] @ state.beta - design_row @ state.gamma)


def _missing_design_cols(data: Dataset, missing: tuple[int, ...]) -> list[int]:
    cols: list[int] = []
    for j in missing:
        cols.extend(data.design_columns_of_snp(int(j)))
    return cols


def missing_distribution(
    state: EmState, data: Dataset, i: int, cap: int = DEFAULT_ENUMERATION_CAP
) -> tuple[np.ndarray, np.ndarray]:
    """Exact posterior over individual i's missing genotype tuples.

    Returns (tuples, probabilities); tuples has shape (3^k, k) over the
    individual's missing SNPs in index order. Raises EnumerationCapError
    when 3^k exceeds the cap (use the Monte Carlo E-step instead).
    """
    missing = tuple(np.flatnonzero(data.genotypes.missing_mask[i]))
    k = len(missing)
    size = GENOTYPE_ARITY**k
    if size > cap:
        raise EnumerationCapError(
            f"individual {i} has {k} missing SNPs ({size} completions > cap {cap})"
        )
    tuples = _genotype_tuples(k)
    if k == 0:
        return tuples.reshape(1, 0), np.ones(1)
    cols = _missing_design_cols(data, missing)
    base = _observed_residual(state, data, i)
    contrib = _tuple_design(tuples, data.snp_coding) @ state.gamma[cols]
    logp = -((base - contrib) ** 2) / (2.0 * state.sigma2)
    logp -= logp.max()
    probs = np.exp(logp)
    probs /= probs.sum()
    return tuples, probs


def _moments_exact(state, data, i, cap):
    tuples, probs = missing_distribution(state, data, i, cap)
    rows = _tuple_design(tuples, data.snp_coding)
    mean = probs @ rows
    centered = rows - mean
    cov = (centered * probs[:, None]).T @ centered
    return mean, cov


def _moments_mc(state, data, i, config, rng):
    """Gibbs-scan Monte Carlo moments of the missing design entries."""
    missing = tuple(np.flatnonzero(data.genotypes.missing_mask[i]))
    k = len(missing)
    cols = _missing_design_cols(data, missing)
    base = _observed_residual(state, data, i)
    gam = state.gamma[cols]
    per_snp = len(cols) // k
    current = np.zeros(k)  # genotype codes of the missing SNPs
    design_rows = genotype_column_values(GENOTYPE_CODES, data.snp_coding)  # (3, per_snp)
    samples = np.zeros((config.mc_samples, len(cols)))
    n_kept = 0
    for sweep in range(config.mc_burn_in + config.mc_samples):
        for t in range(k):
            gsub = gam[t * per_snp : (t + 1) * per_snp]
            others = 0.0
            for t2 in range(k):
                if t2 == t:
                    continue
                row = genotype_column_values(current[t2 : t2 + 1], data.snp_coding)[0]
                others += float(row @ gam[t2 * per_snp : (t2 + 1) * per_snp])
            r = base - others
            cand = design_rows @ gsub
            logw = -((r - cand) ** 2) / (2.0 * state.sigma2)
            logw -= logw.max()
            p = np.exp(logw)
            p /= p.sum()
            draw = int((p.cumsum() < rng.random()).sum())
            current[t] = GENOTYPE_CODES[min(draw, 2)]
        if sweep >= config.mc_burn_in:
            samples[n_kept] = _tuple_design(current[None, :], data.snp_coding)[0]
            n_kept += 1
    mean = samples.mean(axis=0)
    centered = samples - mean
    cov = centered.T @ centered / max(n_kept - 1, 1)
    return mean, cov


def e_step(
    state: EmState,
    data: Dataset,
    config: Optional[EmConfig] = None,
    rng: Optional[np.random.Generator] = None,
) -> tuple[np.ndarray, np.ndarray, bool]:
    """Expected completed design and summed covariance over individuals.

    Uses exact enumeration whenever an individual's completion count fits
    under the cap, otherwise a per-individual Gibbs-scan Monte Carlo
    estimate. Returns (expected_Z, V_Z, exact_everywhere).
    """
    config = config or EmConfig()
    pattern = MissingPattern.from_dataset(data)
    observed_design = snp_design_matrix(data.genotypes.codes, data.snp_coding)
    expected = observed_design.astype(float).copy()
    dim = expected.shape[1]
    V = np.zeros((dim, dim))
    exact_everywhere = True
    for i in pattern.individuals_with_missing():
        cols = _missing_design_cols(data, pattern.missing_indices[i])
        if pattern.enumeration_size(i) <= config.enumeration_cap:
            mean, cov = _moments_exact(state, data, i, config.enumeration_cap)
        else:
            exact_everywhere = False
            if rng is None:
                rng = np.random.default_rng(config.seed)
            mean, cov = _moments_mc(state, data, i, config, rng)
        expected[i, cols] = mean
        V[np.ix_(cols, cols)] += cov
    return expected, V, exact_everywhere


def m_step(
    expected_Z: np.ndarray, V_Z: np.ndarray, data: Dataset
) -> tuple[np.ndarray, np.ndarray, float]:
    """Closed-form maximizers of the expected complete-data log likelihood."""
    X, y = data.X, data.y
    n = y.shape[0]
    XtX = X.T @ X
    Hy = X @ np.linalg.solve(XtX, X.T @ y)
    HZ = X @ np.linalg.solve(XtX, X.T @ expected_Z)
    ZtIH = expected_Z.T @ (expected_Z - HZ)  # Z'(I-H)Z
    lhs = ZtIH + V_Z
    rhs = expected_Z.T @ (y - Hy)
    try:
        gamma = np.linalg.solve(lhs, rhs)
    except np.linalg.LinAlgError:
        logger.warning("singular M-step system; applying diagonal jitter 1e-8")
        gamma = np.linalg.solve(lhs + 1e-8 * np.eye(lhs.shape[0]), rhs)
    beta = np.linalg.solve(XtX, X.T @ (y - expected_Z @ gamma))
    resid = y - X @ beta - expected_Z @ gamma
    sigma2 = (float(resid @ resid) + float(gamma @ V_Z @ gamma)) / n
    return beta, gamma, float(sigma2)


def observed_loglik(
    state: EmState, data: Dataset, cap: int = DEFAULT_ENUMERATION_CAP
) -> float:
    """Observed-data log likelihood, summing each individual's completions.

    Only available in the exact-enumeration regime; the per-individual sums
    are evaluated with log-sum-exp.
    """
    pattern = MissingPattern.from_dataset(data)
    total = -0.5 * data.n * np.log(2.0 * np.pi * state.sigma2)
    design = snp_design_matrix(data.genotypes.codes, data.snp_coding)
    for i in range(data.n):
        k = pattern.k(i)
        if k == 0:
            r = float(data.y[i] - data.X[i] @ state.beta - design[i] @ state.gamma)
            total += -(r**2) / (2.0 * state.sigma2)
            continue
        size = pattern.enumeration_size(i)
        if size > cap:
            raise EnumerationCapError(
                f"individual {i} exceeds enumeration cap ({size} > {cap})"
            )
        base = _observed_residual(state, data, i)
        cols = _missing_design_cols(data, pattern.missing_indices[i])
        tuples = _genotype_tuples(k)
        contrib = _tuple_design(tuples, data.snp_coding) @ state.gamma[cols]
        logs = -((base - contrib) ** 2) / (2.0 * state.sigma2)
        m = logs.max()
        total += m + np.log(np.exp(logs - m).sum())
    return float(total)


def run_em(data: Dataset, config: Optional[EmConfig] = None) -> tuple[EmState, EmRunLog]:
    """Iterate E and M steps to convergence (relative parameter change).

    In the exact regime the observed log likelihood is recorded each
    iteration; non-convergence at the iteration cap returns the best state
    with the log flagged unconverged.
    """
    config = config or EmConfig()
    validate_dataset(data).raise_for_errors()
    rng = np.random.default_rng(config.seed)

    X, y = data.X, data.y
    beta = np.linalg.solve(X.T @ X, X.T @ y)
    resid = y - X @ beta
    sigma2 = float(resid @ resid) / max(data.n, 1) or 1.0
    design = snp_design_matrix(data.genotypes.codes, data.snp_coding)
    state = EmState(
        beta=beta,
        gamma=np.zeros(design.shape[1]),
        sigma2=sigma2,
        expected_Z=design.astype(float),
        V_Z=np.zeros((design.shape[1], design.shape[1])),
    )

    log = EmRunLog()
    previous = state.params_vector()
    for it in range(1, config.max_iterations + 1):
        expected, V, exact = e_step(state, data, config, rng)
        if not exact:
            log.exact_regime = False
        beta, gamma, sigma2 = m_step(expected, V, data)
        # an exactly zero variance (perfect fit) would break the next E-step
        state = EmState(beta, gamma, max(sigma2, 1e-300), expected, V)
        current = state.params_vector()
        delta = float(
            np.max(np.abs(current - previous) / (np.abs(previous) + 1e-12))
        )
        loglik = observed_loglik(state, data, config.enumeration_cap) if log.exact_regime else float("nan")
        log.history.append((it, loglik, delta))
        log.iterations = it
        previous = current
        if delta < config.tol:
            log.converged = True
            break
    if not log.converged:
        logger.warning("EM did not converge in %d iterations", config.max_iterations)
    return state, log
