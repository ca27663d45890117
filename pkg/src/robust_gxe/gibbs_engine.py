"""Full-conditional updates and sweep/chain drivers for all 12 variants.

One code path serves both likelihoods. Throughout, ``r`` is the current full
residual y - W alpha - E theta - U beta and ``tau`` is the per-observation
precision weight: nu / (kappa^2 u_i) under the Laplace scale-mixture
likelihood, 1 / sigma^2 under the Gaussian one. Every coefficient block then
has a Gaussian full conditional with precision

    P = (block design)' diag(tau) (block design) + (prior precision),

assembled from per-group weighted Gram blocks that the workspace refreshes
once per sweep. Gaussian-likelihood variants with sigma^2-scaled slabs reuse
the identical formulas with prior variance c multiplied by sigma^2; the
mixture weights below are algebraically invariant to that rescaling, so no
variant needs its own weight code.

Spike-and-slab mixture weights are always formed in log-odds space. For a
slab N(0, C) against a point mass at zero the posterior odds multiply the
prior odds by |C|^{-1/2} |P|^{-1/2} exp(h' P^{-1} h / 2) with h the
tau-weighted cross product of the block design and the partial residual;
the one-sided (omega) slab carries the extra factor 2 Phi(mu/sigma) from
truncation, evaluated through the log CDF so extreme residuals stay finite.
"""

from __future__ import annotations

import dataclasses
import json
import math
import time

import numpy as np
from scipy.special import log_ndtr

from . import distributions as dist
from .data_model import ChainState, DataError, GxEDataset, MethodConfig

KAPPA2 = 8.0
LOG2 = math.log(2.0)

_U_FLOOR = 1e-300
_RESIDUAL_FLOOR = 1e-10
_BETA_SQ_FLOOR = 1e-300
_ETA_CLAMP = (1e-6, 1e6)


def _expit(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def _logit(p: float) -> float:
    if p <= 0.0:
        return -math.inf
    if p >= 1.0:
        return math.inf
    return math.log(p / (1.0 - p))


class ConditionalWorkspace:
    """Residual and Gram caches shared by the conditionals of one chain.

    Holds the transposed design (contiguous rows, so per-column dot products
    stream well), the per-group weighted Gram blocks for the current tau, and
    the live residual. The residual is rebuilt from scratch at the top of
    every sweep and updated incrementally inside it; the two must agree to
    1e-8 relative error at all times.
    """

    def __init__(self, dataset: GxEDataset):
        self.dataset = dataset
        self.n = dataset.n
        self.p = dataset.p
        self.L = dataset.n_effects_per_group
        self.ut = np.ascontiguousarray(dataset.u.T)          # (pL, n)
        self.ut3 = self.ut.reshape(self.p, self.L, self.n)   # view
        self.u3t = self.ut3.transpose(0, 2, 1)               # (p, n, L) view
        self.wt = np.ascontiguousarray(dataset.w.T)          # (q, n)
        self.et = np.ascontiguousarray(dataset.e.T)          # (k, n)
        self.r = np.zeros(self.n)
        self.tau = np.zeros(self.n)
        self.tau_r = np.zeros(self.n)
        self._tau_ut3 = np.empty_like(self.ut3)
        self.wgram = np.empty((self.p, self.L, self.L))
        # diagonal view of wgram: weighted column squares, shape (p, L)
        self.wcol_sq = np.diagonal(self.wgram, axis1=1, axis2=2)
        self.w_wgram = np.empty((dataset.q, dataset.q))
        self.e_wgram = np.empty((dataset.k, dataset.k))

    def refresh_residual(self, state: ChainState) -> None:
        r = self.dataset.y - state.beta.reshape(-1) @ self.ut
        if self.dataset.q:
            r -= self.dataset.w @ state.alpha
        if self.dataset.k:
            r -= self.dataset.e @ state.theta
        self.r = r

    def set_tau(self, tau: np.ndarray) -> None:
        self.tau = tau
        self.tau_r = tau * self.r
        np.multiply(self.ut3, tau, out=self._tau_ut3)
        np.matmul(self._tau_ut3, self.u3t, out=self.wgram)
        if self.dataset.q:
            self.w_wgram = (self.wt * tau) @ self.dataset.w
        if self.dataset.k:
            self.e_wgram = (self.et * tau) @ self.dataset.e

    def shift_group(self, j: int, delta: np.ndarray) -> None:
        """Account for beta_j -> beta_j + delta in the residual caches."""
        dr = delta @ self.ut3[j]
        self.r -= dr
        self.tau_r -= self.tau * dr

    def shift_effect(self, j: int, l: int, delta: float) -> None:
        dr = delta * self.ut3[j, l]
        self.r -= dr
        self.tau_r -= self.tau * dr

    def shift_fitted(self, delta_fit: np.ndarray) -> None:
        self.r -= delta_fit
        self.tau_r -= self.tau * delta_fit

    def recomputed_residual(self, state: ChainState) -> np.ndarray:
        r = self.dataset.y - state.beta.reshape(-1) @ self.ut
        if self.dataset.q:
            r -= self.dataset.w @ state.alpha
        if self.dataset.k:
            r -= self.dataset.e @ state.theta
        return r


def init_state(config: MethodConfig, dataset: GxEDataset,
               rng: np.random.Generator, jitter_sd: float = 0.0) -> ChainState:
    """Deterministic-structure initialization with optional overdispersion.

    Coefficients start at standard-normal draws (plus N(0, jitter_sd^2)
    jitter for multi-chain diagnostics), every indicator at 1, all latent
    scales at 1, sigma2 at the sample variance of y.
    """
    p, ell, n = dataset.p, dataset.n_effects_per_group, dataset.n
    hyper = config.hyper
    hyper.validate()
    coef = rng.standard_normal((p, ell))
    if jitter_sd > 0:
        coef = coef + jitter_sd * rng.standard_normal((p, ell))
    state = ChainState(alpha=np.zeros(dataset.q), theta=np.zeros(dataset.k),
                       beta=coef.copy())
    if config.spike_slab:
        if config.structure == "sparse-group":
            state.b = coef.copy()
            state.omega = np.ones((p, ell))
            state.phi_b = np.ones(p, dtype=np.int8)
            state.phi_w = np.ones((p, ell), dtype=np.int8)
            state.beta = state.omega * state.b
            state.s2 = 1.0
            state.pi0 = 0.5
            state.pi1 = 0.5
            state.eta = hyper.eta_init
        elif config.structure == "group":
            state.phi_b = np.ones(p, dtype=np.int8)
            state.s_group = np.ones(p)
            state.pi0 = 0.5
            state.eta = hyper.eta_init
        else:
            state.phi_w = np.ones((p, ell), dtype=np.int8)
            state.s_indiv = np.ones((p, ell))
            state.pi1 = 0.5
            state.eta = hyper.eta_init
    else:
        if config.structure == "sparse-group":
            state.r_group = np.ones(p)
            state.omega = np.ones((p, ell))   # here: variance components
            state.eta1 = hyper.eta_init
            state.eta2 = hyper.eta_init
        elif config.structure == "group":
            state.s_group = np.ones(p)
            state.eta = hyper.eta_init
        else:
            state.s_indiv = np.ones((p, ell))
            state.eta = hyper.eta_init
    if config.robust:
        state.u_latent = np.ones(n)
        state.nu = 1.0
    else:
        state.sigma2 = float(np.var(dataset.y, ddof=1)) if n > 1 else 1.0
    return state


# ---------------------------------------------------------------------------
# individual conditionals


def sample_latent_u(state: ChainState, ws: ConditionalWorkspace,
                    rng: np.random.Generator) -> None:
    """Mixture scales: 1/u_i is inverse-Gaussian given the residual.

    The conditional kernel of u_i is generalized-inverse-Gaussian with index
    +1/2, whose reciprocal is exactly InverseGaussian(sqrt(2 kappa^2 / r_i^2),
    2 nu). Residual magnitudes are floored at 1e-10 so the mean stays finite,
    and u at 1e-300 so downstream reciprocals do.
    """
    resid = np.abs(ws.r)
    np.maximum(resid, _RESIDUAL_FLOOR, out=resid)
    mean = np.sqrt(2.0 * KAPPA2 / np.square(resid))
    v = dist.sample_inverse_gaussian(mean, 2.0 * state.nu, rng)
    state.u_latent = np.maximum(1.0 / v, _U_FLOOR)


def sample_nu(state: ChainState, ws: ConditionalWorkspace, hyper,
              rng: np.random.Generator) -> None:
    u = state.u_latent
    shape = hyper.nu_shape + 1.5 * ws.n
    rate = hyper.nu_rate + float(u.sum()) \
        + float(np.square(ws.r) @ (1.0 / u)) / (2.0 * KAPPA2)
    state.nu = dist.sample_gamma(shape, rate, rng)


def _draw_gaussian_block(precision: np.ndarray, h: np.ndarray,
                         rng: np.random.Generator, context: str) -> np.ndarray:
    try:
        cho = np.linalg.cholesky(precision)
    except np.linalg.LinAlgError as exc:
        raise dist.NumericalError(
            f"covariance factorization failed in {context}") from exc
    z = np.linalg.solve(cho, h)
    return np.linalg.solve(cho.T, z + rng.standard_normal(h.shape[0]))


def sample_alpha(state: ChainState, ws: ConditionalWorkspace, hyper,
                 rng: np.random.Generator) -> None:
    q = ws.dataset.q
    if q == 0:
        return
    prec = ws.w_wgram.copy()
    prec.flat[:: q + 1] += 1.0 / hyper.alpha_prior_var
    h = ws.wt @ ws.tau_r + ws.w_wgram @ state.alpha
    new = _draw_gaussian_block(prec, h, rng, "the clinical-coefficient update")
    delta_fit = ws.dataset.w @ (new - state.alpha)
    state.alpha = new
    ws.shift_fitted(delta_fit)


def sample_theta(state: ChainState, ws: ConditionalWorkspace, hyper,
                 rng: np.random.Generator) -> None:
    k = ws.dataset.k
    if k == 0:
        return
    prec = ws.e_wgram.copy()
    prec.flat[:: k + 1] += 1.0 / hyper.theta_prior_var
    h = ws.et @ ws.tau_r + ws.e_wgram @ state.theta
    new = _draw_gaussian_block(prec, h, rng, "the environment-coefficient update")
    delta_fit = ws.dataset.e @ (new - state.theta)
    state.theta = new
    ws.shift_fitted(delta_fit)


def sample_sigma2(state: ChainState, config: MethodConfig,
                  ws: ConditionalWorkspace, rng: np.random.Generator) -> None:
    """Gaussian noise variance; slab-scaled variants add coefficient terms."""
    hyper = config.hyper
    shape = hyper.sigma2_prior_shape + 0.5 * ws.n
    scale = hyper.sigma2_prior_scale + 0.5 * float(ws.r @ ws.r)
    beta = state.beta
    if config.spike_slab:
        if config.structure == "group":
            active = np.flatnonzero(state.phi_b)
            shape += 0.5 * ws.L * active.size
            if active.size:
                scale += 0.5 * float(
                    (np.square(beta[active]).sum(axis=1) / state.s_group[active]).sum())
        elif config.structure == "individual":
            mask = state.phi_w.astype(bool)
            shape += 0.5 * int(mask.sum())
            if mask.any():
                scale += 0.5 * float(
                    (np.square(beta[mask]) / state.s_indiv[mask]).sum())
        # sparse-group: b and omega priors carry no sigma^2 factor
    else:
        shape += 0.5 * ws.p * ws.L
        if config.structure == "sparse-group":
            inv_var = (1.0 / state.r_group)[:, None] + 1.0 / state.omega
            scale += 0.5 * float((np.square(beta) * inv_var).sum())
        elif config.structure == "group":
            scale += 0.5 * float(
                (np.square(beta).sum(axis=1) / state.s_group).sum())
        else:
            scale += 0.5 * float((np.square(beta) / state.s_indiv).sum())
    state.sigma2 = dist.sample_inverse_gamma(shape, scale, rng)


def _group_slab_suffstats(state: ChainState, j: int,
                          ws: ConditionalWorkspace):
    """Cholesky factor, whitened mean, and log determinant for the b_j slab.

    The slab prior is N(0, I); the likelihood enters through the
    omega-rescaled design, so P = D_omega G_j D_omega + I with G_j the
    weighted Gram block, and h picks up the current beta_j contribution to
    stay consistent with the partial residual.
    """
    ell = ws.L
    om = state.omega[j]
    wg = ws.wgram[j]
    g = ws.ut3[j] @ ws.tau_r
    h = om * (g + wg @ state.beta[j])
    prec = (om[:, None] * wg) * om[None, :]
    prec.flat[:: ell + 1] += 1.0
    try:
        cho = np.linalg.cholesky(prec)
    except np.linalg.LinAlgError as exc:
        raise dist.NumericalError(
            "covariance factorization failed in the group slab update") from exc
    z = np.linalg.solve(cho, h)
    logdet = 2.0 * float(np.log(np.diag(cho)).sum())
    return cho, z, logdet


def group_slab_log_bayes_factor(state: ChainState, j: int,
                                ws: ConditionalWorkspace) -> float:
    """Log marginal-likelihood ratio of the b_j slab against b_j = 0.

    Integrating the N(0, I) slab against the Gaussian working likelihood
    at the current within-group scales gives |P|^(-1/2) exp(z'z / 2) with
    P and z as in the slab sufficient statistics; the returned value is
    the log of that ratio.
    """
    _, z, logdet = _group_slab_suffstats(state, j, ws)
    return 0.5 * float(z @ z) - 0.5 * logdet


def sample_group_ss(state: ChainState, j: int, ws: ConditionalWorkspace,
                    rng: np.random.Generator) -> None:
    """Sparse-group slab vector b_j: two-component spike or slab draw.

    The conditional is a mixture of the point mass at zero and the
    V-weighted Gaussian slab, mixed by pi0 times the slab Bayes factor
    against prior odds; the indicator records which component was drawn.
    The within-group scales (frozen while the group is out) enter through
    V, so a group that died with live scales faces a data-informed
    re-entry weight, and one whose scales are all zero flips at exactly
    pi0 and re-enters with a prior draw of b_j.
    """
    ell = ws.L
    cho, z, logdet = _group_slab_suffstats(state, j, ws)
    log_odds = _logit(state.pi0) + 0.5 * float(z @ z) - 0.5 * logdet
    if rng.random() < _expit(log_odds):
        bj = np.linalg.solve(cho.T, z + rng.standard_normal(ell))
        state.phi_b[j] = 1
    else:
        bj = np.zeros(ell)
        state.phi_b[j] = 0
    state.b[j] = bj
    new_beta = state.omega[j] * bj
    delta = new_beta - state.beta[j]
    state.beta[j] = new_beta
    if np.any(delta):
        ws.shift_group(j, delta)


def sample_omega_ss(state: ChainState, j: int, l: int,
                    ws: ConditionalWorkspace, rng: np.random.Generator) -> None:
    """One nonnegative scale omega_jl: spike at 0 or half-normal slab.

    Slots are refreshed only while their group is in the model; a slot
    whose group is currently out keeps its value unchanged. Holding a
    coordinate fixed based on a coordinate outside the updated block
    leaves the joint posterior invariant, and it keeps the scales of an
    excluded group carrying their last data-informed values instead of
    drifting as prior coin flips (with b_jl = 0 the slab mass equals the
    spike mass, so an unconditional update would resample the slot from
    its prior every sweep). For a live group the slab weight is
    2 (sig/s) exp(mu^2 / (2 sig^2)) Phi(mu/sig) against the spike.
    """
    if state.phi_b[j] == 0:
        return
    bjl = float(state.b[j, l])
    s2 = state.s2
    if bjl != 0.0:
        a_col = ws.wcol_sq[j, l]
        g = ws.ut3[j, l] @ ws.tau_r
        quad = bjl * bjl * a_col
        h = bjl * g + quad * state.omega[j, l]
    else:
        quad = 0.0
        h = 0.0
    sig2 = 1.0 / (quad + 1.0 / s2)
    mu = sig2 * h
    sd = math.sqrt(sig2)
    log_odds = (_logit(state.pi1) + LOG2 + 0.5 * math.log(sig2 / s2)
                + 0.5 * mu * h + float(log_ndtr(mu / sd)))
    if rng.random() < _expit(log_odds):
        new = dist.sample_truncated_normal_positive(mu, sig2, rng)
        state.phi_w[j, l] = 1
    else:
        new = 0.0
        state.phi_w[j, l] = 0
    delta = bjl * (new - state.omega[j, l])
    state.omega[j, l] = new
    state.beta[j, l] = new * bjl
    if delta != 0.0:
        ws.shift_effect(j, l, delta)


def _sample_group_slab_generic(state: ChainState, j: int,
                               ws: ConditionalWorkspace, prior_var: float,
                               rng: np.random.Generator) -> None:
    """Group spike-and-slab with slab N(0, prior_var * I) directly on beta_j."""
    ell = ws.L
    wg = ws.wgram[j]
    g = ws.ut3[j] @ ws.tau_r
    h = g + wg @ state.beta[j]
    prec = wg.copy()
    prec.flat[:: ell + 1] += 1.0 / prior_var
    try:
        cho = np.linalg.cholesky(prec)
    except np.linalg.LinAlgError as exc:
        raise dist.NumericalError(
            "covariance factorization failed in the group coefficient update"
        ) from exc
    z = np.linalg.solve(cho, h)
    logdet = 2.0 * float(np.log(np.diag(cho)).sum())
    log_odds = (_logit(state.pi0) - 0.5 * ell * math.log(prior_var)
                - 0.5 * logdet + 0.5 * float(z @ z))
    if rng.random() < _expit(log_odds):
        new = np.linalg.solve(cho.T, z + rng.standard_normal(ell))
        state.phi_b[j] = 1
    else:
        new = np.zeros(ell)
        state.phi_b[j] = 0
    delta = new - state.beta[j]
    state.beta[j] = new
    if np.any(delta):
        ws.shift_group(j, delta)


def _sample_effect_slab_generic(state: ChainState, j: int, l: int,
                                ws: ConditionalWorkspace, prior_var: float,
                                rng: np.random.Generator) -> None:
    """Scalar spike-and-slab with slab N(0, prior_var) directly on beta_jl."""
    a_col = ws.wcol_sq[j, l]
    g = ws.ut3[j, l] @ ws.tau_r
    h = g + a_col * state.beta[j, l]
    sig2 = 1.0 / (a_col + 1.0 / prior_var)
    mu = sig2 * h
    log_odds = (_logit(state.pi1) - 0.5 * math.log(prior_var)
                + 0.5 * math.log(sig2) + 0.5 * mu * h)
    if rng.random() < _expit(log_odds):
        new = mu + math.sqrt(sig2) * rng.standard_normal()
        state.phi_w[j, l] = 1
    else:
        new = 0.0
        state.phi_w[j, l] = 0
    delta = new - state.beta[j, l]
    state.beta[j, l] = new
    if delta != 0.0:
        ws.shift_effect(j, l, delta)


def _sample_group_plain(state: ChainState, j: int, ws: ConditionalWorkspace,
                        prior_prec_diag: np.ndarray,
                        rng: np.random.Generator) -> None:
    """Always-slab Gaussian block draw with diagonal prior precision."""
    ell = ws.L
    wg = ws.wgram[j]
    g = ws.ut3[j] @ ws.tau_r
    h = g + wg @ state.beta[j]
    prec = wg.copy()
    prec.flat[:: ell + 1] += prior_prec_diag
    new = _draw_gaussian_block(prec, h, rng, "the group coefficient update")
    delta = new - state.beta[j]
    state.beta[j] = new
    ws.shift_group(j, delta)


def sample_s2(state: ChainState, hyper, rng: np.random.Generator) -> None:
    """Slab scale of the omega half-normals (sparse-group spike-and-slab)."""
    n_active = int(state.phi_w.sum())
    shape = hyper.s2_prior_shape + 0.5 * n_active
    scale = state.eta + 0.5 * float(np.square(state.omega).sum())
    state.s2 = dist.sample_inverse_gamma(shape, scale, rng)


def sample_sparsity(state: ChainState, hyper, rng: np.random.Generator) -> None:
    """Conjugate Beta updates for the inclusion probabilities.

    Each probability sees the current zero pattern of its own level: pi0
    counts groups with a nonzero slab vector, pi1 counts slots with a
    nonzero scale, over all p groups and all p * L slots respectively
    (slots frozen while their group is out keep contributing their held
    value).
    """
    if state.phi_b is not None:
        n_on = int(state.phi_b.sum())
        state.pi0 = dist.sample_beta(hyper.pi0_beta_a + n_on,
                                     hyper.pi0_beta_b + state.phi_b.size - n_on,
                                     rng)
    if state.phi_w is not None:
        n_on = int(state.phi_w.sum())
        state.pi1 = dist.sample_beta(hyper.pi1_beta_a + n_on,
                                     hyper.pi1_beta_b + state.phi_w.size - n_on,
                                     rng)


def em_update_eta(s2_history, eta_prev: float) -> float:
    """Monte Carlo EM step: eta <- 1 / mean(1/s^2) over the trailing window."""
    values = np.asarray(list(s2_history), dtype=float)
    if values.size == 0:
        return eta_prev
    eta = 1.0 / float(np.mean(1.0 / values))
    return float(min(max(eta, _ETA_CLAMP[0]), _ETA_CLAMP[1]))


def _reciprocal_ig_scales(sq_norms: np.ndarray, eta: float, sigma2: float,
                          rng: np.random.Generator) -> np.ndarray:
    """Draw scales whose reciprocals are IG(sqrt(eta sigma2 / |beta|^2), eta)."""
    floored = np.maximum(sq_norms, _BETA_SQ_FLOOR)
    mean = np.sqrt(eta * sigma2 / floored)
    v = dist.sample_inverse_gaussian(mean, eta, rng)
    return 1.0 / np.asarray(v, dtype=float).reshape(np.shape(floored))


# ---------------------------------------------------------------------------
# per-variant composite stages


def _coef_scale_sigma2(state: ChainState, config: MethodConfig) -> float:
    # sigma^2-scaled coefficient priors apply to every Gaussian-likelihood
    # variant except the sparse-group spike-and-slab one
    if config.robust:
        return 1.0
    if config.spike_slab and config.structure == "sparse-group":
        return 1.0
    return state.sigma2


def sample_variant_conditionals(state: ChainState, config: MethodConfig,
                                ws: ConditionalWorkspace,
                                rng: np.random.Generator) -> None:
    """Coefficient blocks, then scale components, then sparsity, then s2/eta.

    This is the tail of a sweep: everything after alpha/theta, in the fixed
    scan order (groups ascending, elements within a group ascending).
    """
    hyper = config.hyper
    scale_s2 = _coef_scale_sigma2(state, config)
    if config.spike_slab:
        if config.structure == "sparse-group":
            for j in range(ws.p):
                sample_group_ss(state, j, ws, rng)
                for l in range(ws.L):
                    sample_omega_ss(state, j, l, ws, rng)
            sample_sparsity(state, hyper, rng)
            sample_s2(state, hyper, rng)
        elif config.structure == "group":
            for j in range(ws.p):
                _sample_group_slab_generic(state, j, ws,
                                           scale_s2 * state.s_group[j], rng)
            _update_group_laplace_scales(state, config, rng)
            sample_sparsity(state, hyper, rng)
            state.eta = dist.sample_gamma(
                hyper.eta_prior_a + 0.5 * ws.p * (ws.L + 1),
                hyper.eta_prior_b + 0.5 * float(state.s_group.sum()), rng)
        else:
            for j in range(ws.p):
                for l in range(ws.L):
                    _sample_effect_slab_generic(state, j, l, ws,
                                                scale_s2 * state.s_indiv[j, l],
                                                rng)
            _update_indiv_laplace_scales(state, config, rng)
            sample_sparsity(state, hyper, rng)
            state.eta = dist.sample_gamma(
                hyper.eta_prior_a + ws.p * ws.L,
                hyper.eta_prior_b + 0.5 * float(state.s_indiv.sum()), rng)
    else:
        if config.structure == "sparse-group":
            inv_var = ((1.0 / state.r_group)[:, None] + 1.0 / state.omega) / scale_s2
            for j in range(ws.p):
                _sample_group_plain(state, j, ws, inv_var[j], rng)
            sq = np.square(state.beta)
            state.r_group = _reciprocal_ig_scales(sq.sum(axis=1), state.eta1,
                                                  scale_s2, rng)
            state.omega = _reciprocal_ig_scales(sq, state.eta2, scale_s2, rng)
            state.eta1 = dist.sample_gamma(
                0.5 * ws.p + 1.0,
                hyper.eta_prior_a + 0.5 * float(state.r_group.sum()), rng)
            state.eta2 = dist.sample_gamma(
                ws.p * ws.L + 1.0,
                hyper.eta_prior_b + 0.5 * float(state.omega.sum()), rng)
        elif config.structure == "group":
            for j in range(ws.p):
                _sample_group_plain(
                    state, j, ws,
                    np.full(ws.L, 1.0 / (scale_s2 * state.s_group[j])), rng)
            state.s_group = _reciprocal_ig_scales(
                np.square(state.beta).sum(axis=1), state.eta, scale_s2, rng)
            state.eta = dist.sample_gamma(
                hyper.eta_prior_a + 0.5 * ws.p * (ws.L + 1),
                hyper.eta_prior_b + 0.5 * float(state.s_group.sum()), rng)
        else:
            for j in range(ws.p):
                for l in range(ws.L):
                    sig2_prior = scale_s2 * state.s_indiv[j, l]
                    a_col = ws.wcol_sq[j, l]
                    g = ws.ut3[j, l] @ ws.tau_r
                    h = g + a_col * state.beta[j, l]
                    sig2 = 1.0 / (a_col + 1.0 / sig2_prior)
                    new = sig2 * h + math.sqrt(sig2) * rng.standard_normal()
                    delta = new - state.beta[j, l]
                    state.beta[j, l] = new
                    if delta != 0.0:
                        ws.shift_effect(j, l, delta)
            state.s_indiv = _reciprocal_ig_scales(np.square(state.beta),
                                                  state.eta, scale_s2, rng)
            state.eta = dist.sample_gamma(
                hyper.eta_prior_a + ws.p * ws.L,
                hyper.eta_prior_b + 0.5 * float(state.s_indiv.sum()), rng)


def _update_group_laplace_scales(state: ChainState, config: MethodConfig,
                                 rng: np.random.Generator) -> None:
    """Group spike-and-slab scales: prior redraw when spiked, GIG when active."""
    eta = state.eta
    scale_s2 = _coef_scale_sigma2(state, config)
    active = state.phi_b.astype(bool)
    if active.any():
        sq = np.square(state.beta[active]).sum(axis=1)
        state.s_group[active] = _reciprocal_ig_scales(sq, eta, scale_s2, rng)
    n_spiked = int((~active).sum())
    if n_spiked:
        ell = state.beta.shape[1]
        state.s_group[~active] = rng.gamma(0.5 * (ell + 1), 2.0 / eta,
                                           size=n_spiked)


def _update_indiv_laplace_scales(state: ChainState, config: MethodConfig,
                                 rng: np.random.Generator) -> None:
    eta = state.eta
    scale_s2 = _coef_scale_sigma2(state, config)
    active = state.phi_w.astype(bool)
    if active.any():
        sq = np.square(state.beta[active])
        state.s_indiv[active] = _reciprocal_ig_scales(sq, eta, scale_s2, rng)
    n_spiked = int((~active).sum())
    if n_spiked:
        state.s_indiv[~active] = rng.exponential(2.0 / eta, size=n_spiked)


def gibbs_sweep(state: ChainState, config: MethodConfig, dataset: GxEDataset,
                ws: ConditionalWorkspace, rng: np.random.Generator) -> ChainState:
    """One full scan of every conditional, in the fixed order."""
    ws.refresh_residual(state)
    if config.robust:
        sample_latent_u(state, ws, rng)
        sample_nu(state, ws, config.hyper, rng)
        tau = state.nu / (KAPPA2 * state.u_latent)
    else:
        sample_sigma2(state, config, ws, rng)
        tau = np.full(ws.n, 1.0 / state.sigma2)
    ws.set_tau(tau)
    sample_alpha(state, ws, config.hyper, rng)
    sample_theta(state, ws, config.hyper, rng)
    sample_variant_conditionals(state, config, ws, rng)
    return state


# ---------------------------------------------------------------------------
# chain driver and serialization


@dataclasses.dataclass
class PosteriorSamples:
    """Post-burn-in draws of one chain (arrays indexed by stored iteration)."""

    method: str
    alpha: np.ndarray
    theta: np.ndarray
    beta: np.ndarray
    phi_b: np.ndarray | None = None
    phi_w: np.ndarray | None = None
    nu: np.ndarray | None = None
    sigma2: np.ndarray | None = None
    pi0: np.ndarray | None = None
    pi1: np.ndarray | None = None
    s2: np.ndarray | None = None
    meta: dict = dataclasses.field(default_factory=dict)

    @property
    def g(self) -> int:
        return self.beta.shape[0]

    @property
    def p(self) -> int:
        return self.beta.shape[1]

    @property
    def n_effects_per_group(self) -> int:
        return self.beta.shape[2]


def _check_finite(state: ChainState, config: MethodConfig, iteration: int) -> None:
    checks = [("coefficients", float(state.beta.sum())),
              ("clinical coefficients", float(state.alpha.sum())),
              ("environment coefficients", float(state.theta.sum()))]
    if config.robust:
        checks.append(("nu", state.nu))
    else:
        checks.append(("sigma2", state.sigma2))
    for block, value in checks:
        if not math.isfinite(value):
            raise dist.NumericalError(
                f"non-finite value in {block} at iteration {iteration}")


def run_chain(dataset: GxEDataset, config: MethodConfig,
              stream, n_iter: int | None = None, burn_in: int | None = None,
              jitter_sd: float = 0.0) -> PosteriorSamples:
    """Run one chain and keep the post-burn-in draws.

    ``stream`` is an RngStream (preferred, reproducible across processes) or
    a raw Generator. For the sparse-group spike-and-slab variants the s2
    hyperparameter eta is re-estimated by Monte Carlo EM every
    ``hyper.em_window`` sweeps from the trailing window of s2 draws
    (em_window = 0 keeps eta fixed at eta_init).
    """
    hyper = config.hyper
    n_iter = hyper.n_iter if n_iter is None else n_iter
    burn_in = hyper.burn_in if burn_in is None else burn_in
    if not 0 <= burn_in < n_iter:
        raise DataError(f"burn_in must satisfy 0 <= burn_in < n_iter, "
                        f"got burn_in={burn_in}, n_iter={n_iter}")
    rng = stream.rng() if isinstance(stream, dist.RngStream) else stream
    state = init_state(config, dataset, rng, jitter_sd=jitter_sd)
    ws = ConditionalWorkspace(dataset)
    g_keep = n_iter - burn_in
    p, ell = dataset.p, dataset.n_effects_per_group
    sparse_ss = config.spike_slab and config.structure == "sparse-group"

    alpha_st = np.empty((g_keep, dataset.q))
    theta_st = np.empty((g_keep, dataset.k))
    beta_st = np.empty((g_keep, p, ell))
    phi_b_st = np.empty((g_keep, p), dtype=np.int8) if state.phi_b is not None else None
    phi_w_st = np.empty((g_keep, p, ell), dtype=np.int8) if state.phi_w is not None else None
    nu_st = np.empty(g_keep) if config.robust else None
    sig_st = np.empty(g_keep) if not config.robust else None
    pi0_st = np.empty(g_keep) if state.pi0 is not None else None
    pi1_st = np.empty(g_keep) if state.pi1 is not None else None
    s2_st = np.empty(g_keep) if sparse_ss else None

    em_window = hyper.em_window if sparse_ss else 0
    s2_window: list[float] = []
    started = time.perf_counter()
    for it in range(n_iter):
        gibbs_sweep(state, config, dataset, ws, rng)
        _check_finite(state, config, it)
        if em_window:
            s2_window.append(state.s2)
            if (it + 1) % em_window == 0:
                state.eta = em_update_eta(s2_window, state.eta)
                s2_window.clear()
        g = it - burn_in
        if g < 0:
            continue
        alpha_st[g] = state.alpha
        theta_st[g] = state.theta
        beta_st[g] = state.beta
        if phi_b_st is not None:
            phi_b_st[g] = state.phi_b
        if phi_w_st is not None:
            phi_w_st[g] = state.phi_w
        if nu_st is not None:
            nu_st[g] = state.nu
        if sig_st is not None:
            sig_st[g] = state.sigma2
        if pi0_st is not None:
            pi0_st[g] = state.pi0
        if pi1_st is not None:
            pi1_st[g] = state.pi1
        if s2_st is not None:
            s2_st[g] = state.s2
    elapsed = time.perf_counter() - started

    meta = {"method": config.name, "n_iter": n_iter, "burn_in": burn_in,
            "n": dataset.n, "p": p, "k": dataset.k, "q": dataset.q,
            "elapsed_seconds": elapsed, "jitter_sd": jitter_sd}
    if isinstance(stream, dist.RngStream):
        meta["seed"] = stream.seed
        meta["stream_id"] = stream.stream_id
    if sparse_ss:
        meta["eta_final"] = state.eta
    elif config.structure == "sparse-group":
        meta["eta_final"] = [state.eta1, state.eta2]
    elif state.eta is not None:
        meta["eta_final"] = state.eta
    return PosteriorSamples(method=config.name, alpha=alpha_st, theta=theta_st,
                            beta=beta_st, phi_b=phi_b_st, phi_w=phi_w_st,
                            nu=nu_st, sigma2=sig_st, pi0=pi0_st, pi1=pi1_st,
                            s2=s2_st, meta=meta)


def run_chains(dataset: GxEDataset, config: MethodConfig, stream: dist.RngStream,
               n_chains: int, n_iter: int | None = None,
               burn_in: int | None = None,
               jitter_sd: float = 2.0) -> list[PosteriorSamples]:
    """Independent chains from overdispersed starts (for PSRF diagnostics)."""
    out = []
    for c in range(n_chains):
        chain_stream = dist.RngStream(stream.seed, stream.stream_id * 1000 + c)
        out.append(run_chain(dataset, config, chain_stream, n_iter=n_iter,
                             burn_in=burn_in, jitter_sd=jitter_sd))
    return out


def sample_columns(samples: PosteriorSamples) -> list[str]:
    """Column names of the serialized draw table (1-based indices)."""
    cols = [f"alpha.{i + 1}" for i in range(samples.alpha.shape[1])]
    cols += [f"theta.{i + 1}" for i in range(samples.theta.shape[1])]
    p, ell = samples.p, samples.n_effects_per_group
    cols += [f"beta.{j + 1}.{l + 1}" for j in range(p) for l in range(ell)]
    if samples.phi_b is not None:
        cols += [f"phi_b.{j + 1}" for j in range(p)]
    if samples.phi_w is not None:
        cols += [f"phi_w.{j + 1}.{l + 1}" for j in range(p) for l in range(ell)]
    for name in ("nu", "sigma2", "pi0", "pi1", "s2"):
        if getattr(samples, name) is not None:
            cols.append(name)
    return cols


def samples_to_frame(samples: PosteriorSamples):
    import pandas as pd

    g = samples.g
    blocks = [samples.alpha, samples.theta, samples.beta.reshape(g, -1)]
    if samples.phi_b is not None:
        blocks.append(samples.phi_b.astype(np.int64))
    if samples.phi_w is not None:
        blocks.append(samples.phi_w.reshape(g, -1).astype(np.int64))
    for name in ("nu", "sigma2", "pi0", "pi1", "s2"):
        arr = getattr(samples, name)
        if arr is not None:
            blocks.append(arr[:, None])
    data = np.concatenate([np.asarray(b, dtype=float) for b in blocks], axis=1)
    return pd.DataFrame(data, columns=sample_columns(samples))


def write_samples_csv(samples: PosteriorSamples, path) -> None:
    samples_to_frame(samples).to_csv(path, index=False)


def read_samples_csv(path) -> PosteriorSamples:
    """Rebuild a PosteriorSamples from its CSV (method inferred from columns)."""
    import pandas as pd

    frame = pd.read_csv(path)
    cols = list(frame.columns)
    q = sum(c.startswith("alpha.") for c in cols)
    k = sum(c.startswith("theta.") for c in cols)
    beta_cols = [c for c in cols if c.startswith("beta.")]
    if not beta_cols:
        raise DataError("samples file has no beta columns")
    p = max(int(c.split(".")[1]) for c in beta_cols)
    ell = max(int(c.split(".")[2]) for c in beta_cols)
    g = len(frame)
    if g == 0:
        raise DataError("samples file has no stored draws")

    def grab(prefix, shape, dtype=float):
        names = [c for c in cols if c == prefix or c.startswith(prefix + ".")]
        if not names:
            return None
        arr = frame[names].to_numpy(dtype=float)
        return arr.reshape((g,) + shape).astype(dtype)

    samples = PosteriorSamples(
        method="",
        alpha=frame[[f"alpha.{i+1}" for i in range(q)]].to_numpy(dtype=float)
        if q else np.zeros((g, 0)),
        theta=frame[[f"theta.{i+1}" for i in range(k)]].to_numpy(dtype=float)
        if k else np.zeros((g, 0)),
        beta=grab("beta", (p, ell)),
        phi_b=grab("phi_b", (p,), np.int8),
        phi_w=grab("phi_w", (p, ell), np.int8),
        nu=None if "nu" not in cols else frame["nu"].to_numpy(dtype=float),
        sigma2=None if "sigma2" not in cols else frame["sigma2"].to_numpy(dtype=float),
        pi0=None if "pi0" not in cols else frame["pi0"].to_numpy(dtype=float),
        pi1=None if "pi1" not in cols else frame["pi1"].to_numpy(dtype=float),
        s2=None if "s2" not in cols else frame["s2"].to_numpy(dtype=float),
        meta={"source": str(path)})
    robust = samples.nu is not None
    ss = samples.phi_b is not None or samples.phi_w is not None
    if ss:
        if samples.phi_b is not None and samples.phi_w is not None:
            structure = "sparse-group"
        elif samples.phi_b is not None:
            structure = "group"
        else:
            structure = "individual"
        samples.method = ("r" if robust else "") + \
            {"sparse-group": "bsg", "group": "bg", "individual": "bl"}[structure] + "-ss"
    return samples


def write_run_manifest(samples: PosteriorSamples, config: MethodConfig,
                       path) -> None:
    manifest = {"method": config.name,
                "hyperparameters": dataclasses.asdict(config.hyper),
                "meta": {k: v for k, v in samples.meta.items()}}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")
