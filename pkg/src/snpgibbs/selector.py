"""Model selection: Bayes-factor estimation against the full model and a
Metropolis-Hastings stochastic search over inclusion vectors.

A model is an inclusion vector delta over the SNP-effect coefficients; the
reduced model keeps Y = X beta + Z_delta gamma_delta + eps. Each candidate
is scored by its Bayes factor against the full model, estimated from
posterior draws of the full model as a sample average of per-state terms

  (phi^2)^{dc/2} |Z_c' Z_c|^{1/2}
      * exp( |gamma_c|^2 / (2 sigma^2 phi^2) - C' P_c C / (2 sigma^2) ),

where the subscript c marks the excluded columns, C = Y - X beta -
Z_d gamma_d, and P_c projects onto the excluded-column span. The term is
the prior ratio of reduced to full model times the bridge weight
g(theta) = (2 pi sigma^2)^{-dc/2} |Z_c'Z_c|^{1/2} exp(-C'P_c C/(2 sigma^2)),
whose integral over the excluded coefficients reproduces the reduced-model
likelihood; averaging it over full-model posterior draws is strongly
consistent for the Bayes factor. Everything accumulates in log space.

The search chain accepts a proposal with min{1, BF'/BF}; proposals flip a
random coefficient with probability a and jump to an independent uniform
model otherwise (a symmetric kernel).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .gibbs import ParameterState
from .model import Dataset, snp_design_matrix

__all__ = [
    "EstimationError",
    "ModelIndicator",
    "BayesFactorEstimate",
    "SearchConfig",
    "SearchTrace",
    "g_weight",
    "bf_sample_term",
    "estimate_bayes_factor",
    "propose_model",
    "mh_model_search",
    "exhaustive_search",
]

EXHAUSTIVE_CANDIDATE_LIMIT = 20


class EstimationError(RuntimeError):
    """Bayes-factor estimation failed (no valid terms, or too few states)."""


class _SingularGram(ArithmeticError):
    """Excluded-column Gram matrix is singular for this state."""


@dataclass(frozen=True)
class ModelIndicator:
    """Binary inclusion vector over the SNP-effect coefficients."""

    bits: tuple[int, ...]

    def __post_init__(self):
        if any(b not in (0, 1) for b in self.bits):
            raise ValueError("indicator bits must be 0 or 1")

    @classmethod
    def full(cls, s: int) -> "ModelIndicator":
        return cls((1,) * s)

    @classmethod
    def null(cls, s: int) -> "ModelIndicator":
        return cls((0,) * s)

    @classmethod
    def from_included(cls, s: int, included: Iterable[int]) -> "ModelIndicator":
        bits = [0] * s
        for j in included:
            bits[j] = 1
        return cls(tuple(bits))

    @property
    def s(self) -> int:
        return len(self.bits)

    def is_full(self) -> bool:
        return all(self.bits)

    def included(self) -> tuple[int, ...]:
        return tuple(j for j, b in enumerate(self.bits) if b)

    def excluded(self) -> tuple[int, ...]:
        return tuple(j for j, b in enumerate(self.bits) if not b)

    def bitstring(self) -> str:
        return "".join(str(b) for b in self.bits)


@dataclass
class BayesFactorEstimate:
    """Sample-average Bayes-factor estimate with log-space accounting."""

    log_value: float
    sample_count: int
    log_term_mean: float
    log_term_variance: float
    invalid_count: int = 0

    @property
    def value(self) -> float:
        try:
            return math.exp(self.log_value)
        except OverflowError:
            return math.inf


@dataclass(frozen=True)
class SearchConfig:
    """Stochastic-search settings.

    ``mixture_prob`` is the probability of a one-coefficient flip move (the
    complement jumps to an independent uniform model). ``min_samples_per_bf``
    is the window of most recent posterior states every estimate uses, so
    candidate and incumbent are always compared on the same states.
    """

    mixture_prob: float = 0.5
    search_iterations: int = 500
    seed: int = 0
    min_samples_per_bf: int = 2000

    def __post_init__(self):
        if not 0.0 <= self.mixture_prob <= 1.0:
            raise ValueError("mixture_prob must lie in [0, 1]")
        if self.search_iterations < 1:
            raise ValueError("search_iterations must be >= 1")
        if self.min_samples_per_bf < 1:
            raise ValueError("min_samples_per_bf must be >= 1")


@dataclass
class SearchTrace:
    """Visited models with their estimated log Bayes factors."""

    visited: list = field(default_factory=list)  # (ModelIndicator, log_bf, accepted)
    best: Optional[tuple] = None  # (ModelIndicator, log_bf)
    skipped: int = 0

    def record(self, delta: ModelIndicator, log_bf: float, accepted: bool) -> None:
        self.visited.append((delta, log_bf, accepted))
        if self.best is None or log_bf > self.best[1]:
            self.best = (delta, log_bf)


def _state_design(state: ParameterState, data: Dataset) -> np.ndarray:
    return snp_design_matrix(state.z_imputed, data.snp_coding)


def _excluded_pieces(state, data, delta, design):
    """Gram log-determinant and projected quadratic form for the excluded set."""
    exc = list(delta.excluded())
    Zd = design if design is not None else _state_design(state, data)
    Zc = Zd[:, exc]
    G = Zc.T @ Zc
    sign, logdet = np.linalg.slogdet(G)
    if sign <= 0 or not np.isfinite(logdet):
        raise _SingularGram(f"excluded-column Gram matrix singular for {delta.bitstring()}")
    inc = list(delta.included())
    C = data.y - data.X @ state.beta
    if inc:
        C = C - Zd[:, inc] @ state.gamma[inc]
    t = Zc.T @ C
    try:
        quad = float(t @ np.linalg.solve(G, t))
    except np.linalg.LinAlgError as exc_:
        raise _SingularGram(str(exc_)) from None
    return len(exc), logdet, quad, C


def g_weight(
    state: ParameterState,
    data: Dataset,
    delta: ModelIndicator,
    design: Optional[np.ndarray] = None,
) -> float:
    """Bridge weight g(theta) for one state (computed in log space).

    g = (2 pi sigma^2)^{-dc/2} |Z_c'Z_c|^{1/2} exp(-C'P_c C / (2 sigma^2)).
    Requires a nonempty excluded set; the full model is the caller's
    trivial case.
    """
    if delta.is_full():
        raise ValueError("g_weight requires a nonempty excluded set")
    dc, logdet, quad, _ = _excluded_pieces(state, data, delta, design)
    log_g = (
        -0.5 * dc * math.log(2.0 * math.pi * state.sigma2)
        + 0.5 * logdet
        - quad / (2.0 * state.sigma2)
    )
    return math.exp(log_g)


def bf_sample_term(
    state: ParameterState,
    data: Dataset,
    delta: ModelIndicator,
    design: Optional[np.ndarray] = None,
) -> float:
    """Log of one state's Bayes-factor summand (prior ratio times g).

    The excluded-coefficient prior ratio contributes
    (2 pi sigma^2 phi^2)^{dc/2} exp(+|gamma_c|^2 / (2 sigma^2 phi^2));
    combined with g the (2 pi sigma^2) factors cancel, leaving

      (dc/2) log phi^2 + 0.5 log|Z_c'Z_c|
        + (|gamma_c|^2 / phi^2 - C'P_c C) / (2 sigma^2).

    For the full model the term is identically 0 (empty products).
    """
    if delta.is_full():
        return 0.0
    dc, logdet, quad, _ = _excluded_pieces(state, data, delta, design)
    gam_c = state.gamma[list(delta.excluded())]
    return (
        0.5 * dc * math.log(state.phi2)
        + 0.5 * logdet
        + (float(gam_c @ gam_c) / state.phi2 - quad) / (2.0 * state.sigma2)
    )


def estimate_bayes_factor(
    states: Iterable[ParameterState],
    data: Dataset,
    delta: ModelIndicator,
    min_samples: int = 1,
) -> BayesFactorEstimate:
    """Average the per-state terms over a posterior stream (streaming
    log-sum-exp; Welford statistics on the log terms).

    States with a singular excluded-column Gram matrix (for example a
    monomorphic imputed column) invalidate that term only; the invalid
    count is reported on the estimate.
    """
    shared_design = None
    if not data.genotypes.missing_mask.any():
        # completed matrix equals the observed one for every state
        shared_design = snp_design_matrix(data.genotypes.codes, data.snp_coding)

    running_max = -math.inf
    scaled_sum = 0.0
    count = 0
    invalid = 0
    mean = 0.0
    m2 = 0.0
    for state in states:
        try:
            term = bf_sample_term(state, data, delta, design=shared_design)
        except _SingularGram:
            invalid += 1
            continue
        count += 1
        if term > running_max:
            if count > 1:
                scaled_sum *= math.exp(running_max - term)
            running_max = term
            scaled_sum += 1.0
        else:
            scaled_sum += math.exp(term - running_max)
        d = term - mean
        mean += d / count
        m2 += d * (term - mean)
    total = count + invalid
    if total < min_samples:
        raise EstimationError(
            f"needed at least {min_samples} states, got {total}"
        )
    if count == 0:
        raise EstimationError(
            f"all {invalid} terms invalid for model {delta.bitstring()}"
        )
    log_bf = running_max + math.log(scaled_sum) - math.log(count)
    variance = m2 / (count - 1) if count > 1 else 0.0
    return BayesFactorEstimate(
        log_value=log_bf,
        sample_count=count,
        log_term_mean=mean,
        log_term_variance=variance,
        invalid_count=invalid,
    )


def propose_model(
    current: ModelIndicator, rng: np.random.Generator, config: SearchConfig
) -> ModelIndicator:
    """Symmetric proposal: flip one uniformly chosen coefficient with
    probability ``mixture_prob``, otherwise draw an independent uniform
    model."""
    s = current.s
    if rng.random() < config.mixture_prob:
        j = int(rng.integers(s))
        bits = list(current.bits)
        bits[j] = 1 - bits[j]
        return ModelIndicator(tuple(bits))
    return ModelIndicator(tuple(int(b) for b in rng.integers(0, 2, size=s)))


def _window(states, config: SearchConfig) -> list:
    states = list(states)
    if not states:
        raise EstimationError("empty posterior state stream")
    if len(states) > config.min_samples_per_bf:
        return states[-config.min_samples_per_bf :]
    return states


def mh_model_search(
    states: Iterable[ParameterState],
    data: Dataset,
    config: SearchConfig,
    candidates: Optional[Sequence[int]] = None,
) -> SearchTrace:
    """Metropolis-Hastings walk over inclusion vectors, targeting the
    estimated Bayes factor.

    ``candidates`` restricts proposals to a coefficient subset (everything
    else stays excluded); by default the full coefficient space is
    searched. Candidate and incumbent are always scored over the same
    window of states, and accept/reject uses only log-BF differences, so
    rescaling every estimate by a common factor changes nothing.
    """
    window = _window(states, config)
    s_full = window[0].gamma.shape[0]
    if candidates is None:
        candidates = tuple(range(s_full))
    else:
        candidates = tuple(int(j) for j in candidates)
        for j in candidates:
            if not 0 <= j < s_full:
                raise ValueError(f"candidate index {j} out of range")
    rng = np.random.default_rng(config.seed)
    trace = SearchTrace()
    cache: dict[tuple, float] = {}

    def embed(sub: ModelIndicator) -> ModelIndicator:
        bits = [0] * s_full
        for k, j in enumerate(candidates):
            bits[j] = sub.bits[k]
        return ModelIndicator(tuple(bits))

    def evaluate(delta: ModelIndicator) -> float:
        if delta.bits not in cache:
            cache[delta.bits] = estimate_bayes_factor(window, data, delta).log_value
        return cache[delta.bits]

    if not candidates:
        delta = ModelIndicator.null(s_full)
        trace.record(delta, evaluate(delta), True)
        return trace

    current_sub = ModelIndicator.full(len(candidates))
    current = embed(current_sub)
    current_log_bf = evaluate(current)
    trace.record(current, current_log_bf, True)
    for _ in range(config.search_iterations):
        proposal_sub = propose_model(current_sub, rng, config)
        proposal = embed(proposal_sub)
        try:
            proposal_log_bf = evaluate(proposal)
        except EstimationError:
            trace.skipped += 1
            continue
        accept = math.log(rng.random()) < proposal_log_bf - current_log_bf
        trace.record(proposal, proposal_log_bf, bool(accept))
        if accept:
            current_sub, current, current_log_bf = proposal_sub, proposal, proposal_log_bf
    return trace


def exhaustive_search(
    states: Iterable[ParameterState],
    data: Dataset,
    candidate_snps: Sequence[int],
    config: Optional[SearchConfig] = None,
) -> SearchTrace:
    """Score every subset of the candidate coefficients (others excluded).

    Refuses more than 20 candidates; use mh_model_search for larger spaces.
    The trace is ranked by decreasing log Bayes factor.
    """
    candidates = tuple(int(j) for j in candidate_snps)
    if len(candidates) > EXHAUSTIVE_CANDIDATE_LIMIT:
        raise ValueError(
            f"{len(candidates)} candidates exceed the exhaustive limit of "
            f"{EXHAUSTIVE_CANDIDATE_LIMIT}; use mh_model_search instead"
        )
    config = config or SearchConfig()
    window = _window(states, config)
    s_full = window[0].gamma.shape[0]
    results = []
    skipped = 0
    for mask in range(2 ** len(candidates)):
        included = [candidates[k] for k in range(len(candidates)) if mask >> k & 1]
        delta = ModelIndicator.from_included(s_full, included)
        try:
            est = estimate_bayes_factor(window, data, delta)
        except EstimationError:
            skipped += 1
            continue
        results.append((delta, est.log_value))
    if not results:
        raise EstimationError(
            f"every candidate model failed estimation ({skipped} skipped)"
        )
    results.sort(key=lambda item: item[1], reverse=True)
    trace = SearchTrace(skipped=skipped)
    for delta, log_bf in results:
        trace.record(delta, log_bf, True)
    return trace
