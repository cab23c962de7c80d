"""Independent oracles for the test suite.

Nothing here reuses the library's estimation paths: Bayes factors come from
tensor-product Gauss-Hermite quadrature of the beta-marginalized likelihood
over the coefficient prior, and posterior state streams come from exact
conjugate Gaussian draws (sigma^2 and phi^2 held fixed).
"""

import numpy as np

from snpgibbs.gibbs import ParameterState


def _projector_complement(X, R):
    """K = R^-1 - R^-1 X (X'R^-1X)^-1 X'R^-1 (flat-prior beta marginalization)."""
    Rinv = np.linalg.inv(R)
    RX = Rinv @ X
    return Rinv - RX @ np.linalg.solve(X.T @ RX, RX.T)


def quadrature_log_marginal(y, X, Z, R, sigma2, phi2, nodes=48):
    """log of integral N(gamma; 0, sigma2 phi2 I) * exp(-Q(gamma)/(2 sigma2)) dgamma
    by tensor-product Gauss-Hermite, where Q is the beta-marginalized
    quadratic form. Constant factors common to all models are dropped.
    """
    K = _projector_complement(X, R)
    s = Z.shape[1]
    tau = np.sqrt(sigma2 * phi2)
    x, w = np.polynomial.hermite.hermgauss(nodes)
    if s == 0:
        q = float(y @ K @ y)
        return -q / (2.0 * sigma2)
    grids = np.meshgrid(*([x] * s), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1) * (np.sqrt(2.0) * tau)
    weights = np.ones(pts.shape[0])
    for g in np.meshgrid(*([w] * s), indexing="ij"):
        weights = weights * g.ravel()
    resid = y[None, :] - pts @ Z.T
    q = np.einsum("ij,jk,ik->i", resid, K, resid)
    logf = -q / (2.0 * sigma2)
    m = logf.max()
    integral = float(weights @ np.exp(logf - m))
    # pi^{-s/2} from the Gauss-Hermite change of variables
    return m + np.log(integral) - 0.5 * s * np.log(np.pi)


def quadrature_log_bayes_factor(y, X, Z, R, sigma2, phi2, included, nodes=48):
    """log BF of the model keeping ``included`` columns vs the full model."""
    num = quadrature_log_marginal(y, X, Z[:, list(included)], R, sigma2, phi2, nodes)
    den = quadrature_log_marginal(y, X, Z, R, sigma2, phi2, nodes)
    return num - den


def conjugate_posterior_states(y, X, Z, R, sigma2, phi2, count, seed, codes):
    """Independent draws from the exact (beta, gamma) posterior with sigma^2
    and phi^2 fixed: gamma from its Gaussian marginal (flat-prior beta
    integrated out), then beta from its Gaussian conditional."""
    rng = np.random.default_rng(seed)
    n, s = Z.shape
    K = _projector_complement(X, R)
    prec = (Z.T @ K @ Z + np.eye(s) / phi2) / sigma2
    cov_g = np.linalg.inv(prec)
    mean_g = cov_g @ (Z.T @ K @ y) / sigma2
    Lg = np.linalg.cholesky(0.5 * (cov_g + cov_g.T))

    Rinv = np.linalg.inv(R)
    XtRinvX = X.T @ Rinv @ X
    cov_b = sigma2 * np.linalg.inv(XtRinvX)
    Lb = np.linalg.cholesky(0.5 * (cov_b + cov_b.T))

    states = []
    for _ in range(count):
        gamma = mean_g + Lg @ rng.standard_normal(s)
        mean_b = np.linalg.solve(XtRinvX, X.T @ Rinv @ (y - Z @ gamma))
        beta = mean_b + Lb @ rng.standard_normal(X.shape[1])
        states.append(ParameterState(beta, gamma, float(sigma2), float(phi2), codes.copy()))
    return states


def dense_inverse(A):
    return np.linalg.inv(A)


def random_spd(rng, dim, cond_low=0.5, cond_high=2.0):
    """Well-conditioned random SPD matrix (eigenvalues in [cond_low, cond_high])."""
    Q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    eig = rng.uniform(cond_low, cond_high, size=dim)
    return (Q * eig) @ Q.T
