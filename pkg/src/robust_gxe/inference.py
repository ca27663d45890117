"""Posterior selection rules, point estimates, and convergence diagnostics."""

from __future__ import annotations

import dataclasses

import numpy as np

from .gibbs_engine import PosteriorSamples


class InferenceError(ValueError):
    pass


@dataclasses.dataclass
class PosteriorEstimates:
    """Posterior medians of the regression coefficients."""

    alpha: np.ndarray
    theta: np.ndarray
    beta: np.ndarray


@dataclasses.dataclass
class SelectionResult:
    method: str                       # "mpm" or "ci95"
    selected: np.ndarray              # (p, L) binary
    estimates: PosteriorEstimates
    inclusion_prob: np.ndarray | None = None       # (p, L), MPM rule
    credible_intervals: np.ndarray | None = None   # (p, L, 2), CI rule


def inclusion_probabilities(samples: PosteriorSamples) -> np.ndarray:
    """Per-effect inclusion frequency over the stored draws.

    The effect-level indicator is the product phi_b * phi_w for the
    sparse-group structure, the group indicator broadcast within the group
    for group-level selection, and the elementwise indicator for
    individual-level selection.
    """
    if samples.g == 0:
        raise InferenceError("no stored draws")
    if samples.phi_b is not None and samples.phi_w is not None:
        joint = samples.phi_b[:, :, None] * samples.phi_w
        return joint.mean(axis=0)
    if samples.phi_b is not None:
        prob_groups = samples.phi_b.mean(axis=0)
        return np.repeat(prob_groups[:, None], samples.n_effects_per_group, axis=1)
    if samples.phi_w is not None:
        return samples.phi_w.mean(axis=0)
    raise InferenceError(
        "inclusion probabilities need spike-and-slab indicator draws; "
        "this sample set has none (use the ci95 rule instead)")


def mpm_select(inclusion_prob: np.ndarray) -> np.ndarray:
    """Median probability model: keep effects with probability >= 1/2."""
    return (np.asarray(inclusion_prob) >= 0.5).astype(np.int8)


def ci_select(samples: PosteriorSamples, level: float = 0.95):
    """Equal-tailed credible intervals; select effects whose CI excludes 0.

    Returns (selected, intervals) with intervals shaped (p, L, 2). A
    degenerate interval [v, v] selects the effect exactly when v is not 0.
    """
    if samples.g == 0:
        raise InferenceError("no stored draws")
    if not 0.0 < level < 1.0:
        raise InferenceError(f"level must lie in (0, 1), got {level}")
    tail = 0.5 * (1.0 - level)
    lo, hi = np.quantile(samples.beta, [tail, 1.0 - tail], axis=0)
    intervals = np.stack([lo, hi], axis=-1)
    selected = ((lo > 0.0) | (hi < 0.0)).astype(np.int8)
    return selected, intervals


def posterior_medians(samples: PosteriorSamples) -> PosteriorEstimates:
    return PosteriorEstimates(alpha=np.median(samples.alpha, axis=0),
                              theta=np.median(samples.theta, axis=0),
                              beta=np.median(samples.beta, axis=0))


def select(samples: PosteriorSamples, rule: str,
           level: float = 0.95) -> SelectionResult:
    """Apply one of the two selection rules and bundle the result."""
    estimates = posterior_medians(samples)
    if rule == "mpm":
        prob = inclusion_probabilities(samples)
        return SelectionResult(method="mpm", selected=mpm_select(prob),
                               estimates=estimates, inclusion_prob=prob)
    if rule == "ci95":
        selected, intervals = ci_select(samples, level=level)
        return SelectionResult(method="ci95", selected=selected,
                               estimates=estimates,
                               credible_intervals=intervals)
    raise InferenceError(f"unknown selection rule {rule!r}; use mpm or ci95")


def default_rule(method_name: str) -> str:
    """The reporting convention: MPM for spike-and-slab fits, CI otherwise."""
    return "mpm" if method_name.endswith("-ss") else "ci95"


def selection_records(result: SelectionResult) -> list[dict]:
    """Flatten a SelectionResult to per-effect JSON-ready records.

    Groups and interaction indices are 1-based, matching the serialized
    sample column names beta.j.l (l = 1 is the main effect).
    """
    p, ell = result.selected.shape
    records = []
    for j in range(p):
        for l in range(ell):
            rec = {"group": j + 1,
                   "index_in_group": l + 1,
                   "role": "main" if l == 0 else f"interaction({l})",
                   "selected": int(result.selected[j, l]),
                   "estimate": float(result.estimates.beta[j, l])}
            if result.inclusion_prob is not None:
                rec["prob"] = float(result.inclusion_prob[j, l])
            if result.credible_intervals is not None:
                rec["ci"] = [float(result.credible_intervals[j, l, 0]),
                             float(result.credible_intervals[j, l, 1])]
            records.append(rec)
    return records


@dataclasses.dataclass
class PsrfResult:
    value: np.ndarray      # per-parameter statistic
    degenerate: np.ndarray  # True where within-chain variance was exactly 0


def psrf(traces) -> PsrfResult:
    """Potential scale reduction factor over m parallel chains.

    ``traces`` is a sequence of m arrays, each (G, ...) with identical
    shapes: G stored draws of one parameter block per chain. Zero
    within-chain variance (a parameter stuck at one value in every chain,
    e.g. a permanently spiked coefficient) is reported as 1.0 and flagged.
    """
    arrays = [np.asarray(t, dtype=float) for t in traces]
    m = len(arrays)
    if m < 2:
        raise InferenceError("PSRF requires ≥2 chains")
    shape = arrays[0].shape
    for a in arrays[1:]:
        if a.shape != shape:
            raise InferenceError("chains must have identical stored shapes")
    g = shape[0]
    if g < 10:
        raise InferenceError(f"PSRF needs at least 10 stored draws, got {g}")
    stacked = np.stack(arrays)                     # (m, G, ...)
    within = stacked.var(axis=1, ddof=1).mean(axis=0)
    means = stacked.mean(axis=1)
    between = g * means.var(axis=0, ddof=1)
    degenerate = within == 0.0
    safe_within = np.where(degenerate, 1.0, within)
    v_hat = (g - 1) / g * within + between / g
    value = np.sqrt(v_hat / safe_within)
    value = np.where(degenerate, 1.0, value)
    return PsrfResult(value=np.asarray(value), degenerate=np.asarray(degenerate))


def psrf_report(chains: list[PosteriorSamples]) -> dict[str, PsrfResult]:
    """PSRF per parameter block across chains of one fit."""
    if len(chains) < 2:
        raise InferenceError("PSRF requires ≥2 chains")
    report = {}
    if chains[0].alpha.shape[1]:
        report["alpha"] = psrf([c.alpha for c in chains])
    if chains[0].theta.shape[1]:
        report["theta"] = psrf([c.theta for c in chains])
    report["beta"] = psrf([c.beta for c in chains])
    for scalar in ("nu", "sigma2", "pi0", "pi1", "s2"):
        if getattr(chains[0], scalar) is not None:
            report[scalar] = psrf([getattr(c, scalar) for c in chains])
    return report
