"""Synthetic-data generators: four genotype examples, six error models.

Everything is deterministic given an RngStream; truth, training data, and
test data come from disjoint child streams of the same parent so train/test
are independent draws around one shared set of true coefficients.
"""

from __future__ import annotations

import dataclasses
import json
import warnings

import numpy as np

from .data_model import DataError, GxEDataset, TrueModel, build_design
from .distributions import ParameterError, RngStream

EXAMPLES = ("gene-expr-ar", "snp-dichotomized", "snp-ld", "resample-real")

# in the numbering used by the tables: error 1..6
ERROR_MODELS = ("normal", "laplace-2", "laplace-mix", "normal-cauchy", "t2",
                "lognormal")


def canonical_example(value) -> str:
    if isinstance(value, int) or (isinstance(value, str) and value.isdigit()):
        idx = int(value)
        if not 1 <= idx <= len(EXAMPLES):
            raise DataError(f"example number must be 1..{len(EXAMPLES)}, got {idx}")
        return EXAMPLES[idx - 1]
    if value in EXAMPLES:
        return value
    raise DataError(f"unknown example {value!r}; expected one of {EXAMPLES}")


def canonical_error_model(value) -> str:
    if isinstance(value, int) or (isinstance(value, str) and value.isdigit()):
        idx = int(value)
        if not 1 <= idx <= len(ERROR_MODELS):
            raise DataError(
                f"error model number must be 1..{len(ERROR_MODELS)}, got {idx}")
        return ERROR_MODELS[idx - 1]
    if value in ERROR_MODELS:
        return value
    raise DataError(
        f"unknown error model {value!r}; expected one of {ERROR_MODELS}")


@dataclasses.dataclass(frozen=True)
class SimulationConfig:
    n: int = 500
    p: int = 100
    k: int = 5
    q: int = 3
    example: str = "gene-expr-ar"
    error_model: str = "normal"
    rho_g: float = 0.3
    rho_e: float = 0.5
    maf: float = 0.3
    r_p: float = 0.6
    n_active_groups: int = 9
    n_active_effects: int = 25
    coef_main_range: tuple[float, float] = (0.8, 1.5)
    coef_ge_range: tuple[float, float] = (0.3, 0.9)
    seed: int = 0
    source_genotypes: str | None = None

    def validate(self) -> None:
        if self.n < 2 or self.p < 1:
            raise DataError("need n >= 2 and p >= 1")
        if self.k < 0 or self.q < 0:
            raise DataError("k and q must be nonnegative")
        canonical_example(self.example)
        canonical_error_model(self.error_model)
        ell = self.k + 1
        if not 1 <= self.n_active_groups <= self.p:
            raise DataError("n_active_groups must lie in 1..p")
        if not (self.n_active_groups <= self.n_active_effects
                <= self.n_active_groups * ell):
            raise DataError(
                "n_active_effects must lie between n_active_groups and "
                "n_active_groups * (k+1)")
        for name, lohi in [("coef_main_range", self.coef_main_range),
                           ("coef_ge_range", self.coef_ge_range)]:
            if lohi[0] > lohi[1]:
                raise DataError(f"{name} must be ordered low <= high")
        if self.example == "resample-real" and not self.source_genotypes:
            raise DataError("resample-real requires source_genotypes")


def _ar_normal(n: int, ncol: int, rho: float, rng: np.random.Generator) -> np.ndarray:
    """Columns marginally N(0,1) with corr(j, j') = rho^|j-j'|."""
    z = rng.standard_normal((n, ncol))
    if ncol == 0:
        return z
    out = np.empty_like(z)
    out[:, 0] = z[:, 0]
    carry = np.sqrt(1.0 - rho * rho)
    for j in range(1, ncol):
        out[:, j] = rho * out[:, j - 1] + carry * z[:, j]
    return out


def gen_gene_expression(n: int, p: int, rho: float,
                        rng: np.random.Generator) -> np.ndarray:
    return _ar_normal(n, p, rho, rng)


def dichotomize_to_snp(expr: np.ndarray) -> np.ndarray:
    """Cut each column at its empirical quartiles into {0, 1, 2}.

    Values below Q1 map to 0, between Q1 and Q3 to 1, at or above Q3 to 2.
    """
    expr = np.asarray(expr, dtype=float)
    q1 = np.quantile(expr, 0.25, axis=0)
    q3 = np.quantile(expr, 0.75, axis=0)
    degenerate = q1 == q3
    if degenerate.any():
        warnings.warn(
            f"{int(degenerate.sum())} constant column(s) collapse to a single "
            "genotype category", stacklevel=2)
    return ((expr >= q1).astype(np.int64) + (expr >= q3)).astype(float)


def gen_snp_ld(n: int, p: int, maf: float, r_p: float,
               rng: np.random.Generator) -> np.ndarray:
    """SNPs with pairwise LD between neighbors.

    Per gamete the loci form a Markov chain: the first risk allele appears
    with probability ``maf`` and each next one conditionally with the
    haplotype frequencies implied by delta = r_p * sqrt(prod of allele
    variances). Genotype = sum of two independent gametes, so adjacent
    genotype correlation equals r_p. Equal allele frequencies at all loci.
    """
    if not 0.0 < maf < 1.0:
        raise ParameterError(f"maf must lie in (0, 1), got {maf}")
    r1 = r2 = maf
    delta = r_p * np.sqrt(r1 * (1 - r1) * r2 * (1 - r2))
    p_ab_freqs = {"AB": r1 * r2 + delta, "Ab": r1 * (1 - r2) - delta,
                  "aB": (1 - r1) * r2 - delta,
                  "ab": (1 - r1) * (1 - r2) + delta}
    bad = [k for k, v in p_ab_freqs.items() if v < 0 or v > 1]
    if bad:
        raise ParameterError(
            f"infeasible (maf={maf}, r_p={r_p}): haplotype frequency "
            f"{bad[0]} outside [0, 1]")
    prob_b_given_risk = p_ab_freqs["AB"] / r1
    prob_b_given_other = p_ab_freqs["aB"] / (1 - r1)
    gametes = np.empty((n, 2, p), dtype=bool)
    gametes[:, :, 0] = rng.random((n, 2)) < maf
    for j in range(1, p):
        prev = gametes[:, :, j - 1]
        prob = np.where(prev, prob_b_given_risk, prob_b_given_other)
        gametes[:, :, j] = rng.random((n, 2)) < prob
    return gametes.sum(axis=1).astype(float)


def gen_environment(n: int, k: int, rho: float,
                    rng: np.random.Generator) -> np.ndarray:
    """AR-correlated environment factors, last column made binary at 0."""
    e = _ar_normal(n, k, rho, rng)
    if k:
        e[:, -1] = (e[:, -1] > 0).astype(float)
    return e


def gen_clinical(n: int, q: int, rho: float,
                 rng: np.random.Generator) -> np.ndarray:
    w = _ar_normal(n, q, rho, rng)
    if q:
        w[:, -1] = (w[:, -1] > 0).astype(float)
    return w


def gen_true_coefficients(config: SimulationConfig,
                          rng: np.random.Generator) -> TrueModel:
    """Draw covariate effects and a sparse bi-level interaction truth.

    Each chosen active group receives at least one nonzero effect; the
    remaining positions are spread uniformly without replacement over the
    active groups' leftover slots, so some groups end up only partially
    active (the pattern the sparse-group prior targets).
    """
    ell = config.k + 1
    lo_m, hi_m = config.coef_main_range
    lo_g, hi_g = config.coef_ge_range
    alpha = rng.uniform(lo_m, hi_m, size=config.q)
    theta = rng.uniform(lo_m, hi_m, size=config.k)
    groups = np.sort(rng.choice(config.p, size=config.n_active_groups,
                                replace=False))
    positions = {(j, int(rng.integers(ell))) for j in groups}
    leftover = [(j, l) for j in groups for l in range(ell)
                if (j, l) not in positions]
    extra = config.n_active_effects - len(positions)
    if extra:
        idx = rng.choice(len(leftover), size=extra, replace=False)
        positions.update(leftover[i] for i in idx)
    beta = np.zeros((config.p, ell))
    effects = sorted(positions)
    values = rng.uniform(lo_g, hi_g, size=len(effects))
    for (j, l), v in zip(effects, values):
        beta[j, l] = v
    return TrueModel(alpha_true=alpha, theta_true=theta, beta_true=beta,
                     active_groups=tuple(int(j) for j in groups),
                     active_effects=tuple((int(j), int(l)) for j, l in effects))


def gen_errors(error_model: str, n: int, rng: np.random.Generator) -> np.ndarray:
    model = canonical_error_model(error_model)
    if model == "normal":
        return rng.standard_normal(n)
    if model == "laplace-2":
        return rng.laplace(0.0, 2.0, size=n)
    if model == "laplace-mix":
        scales = np.where(rng.random(n) < 0.10, 1.0, np.sqrt(5.0))
        return rng.laplace(0.0, 1.0, size=n) * scales
    if model == "normal-cauchy":
        cauchy = rng.random(n) < 0.10
        draws = rng.standard_normal(n)
        draws[cauchy] = rng.standard_cauchy(int(cauchy.sum()))
        return draws
    if model == "t2":
        return rng.standard_t(2, size=n)
    return np.exp(rng.standard_normal(n))   # lognormal(0,1), kept uncentered


def resample_real_genotypes(source: np.ndarray, n: int,
                            rng: np.random.Generator) -> np.ndarray:
    source = np.asarray(source, dtype=float)
    if n > source.shape[0]:
        raise DataError(
            f"cannot resample {n} subjects from {source.shape[0]} rows "
            "without replacement")
    rows = rng.choice(source.shape[0], size=n, replace=False)
    return source[rows]


def _gen_x(config: SimulationConfig, rng: np.random.Generator,
           source: np.ndarray | None) -> np.ndarray:
    example = canonical_example(config.example)
    if example == "gene-expr-ar":
        return gen_gene_expression(config.n, config.p, config.rho_g, rng)
    if example == "snp-dichotomized":
        return dichotomize_to_snp(
            gen_gene_expression(config.n, config.p, config.rho_g, rng))
    if example == "snp-ld":
        return gen_snp_ld(config.n, config.p, config.maf, config.r_p, rng)
    if source.shape[1] != config.p:
        raise DataError(
            f"source genotype file has {source.shape[1]} columns, "
            f"config expects p={config.p}")
    return resample_real_genotypes(source, config.n, rng)


def _assemble(config: SimulationConfig, truth: TrueModel,
              rng: np.random.Generator,
              source: np.ndarray | None) -> GxEDataset:
    x = _gen_x(config, rng, source)
    e = gen_environment(config.n, config.k, config.rho_e, rng)
    w = gen_clinical(config.n, config.q, config.rho_e, rng)
    u = build_design(x, e)
    eps = gen_errors(config.error_model, config.n, rng)
    y = (w @ truth.alpha_true + e @ truth.theta_true
         + u @ truth.beta_true.reshape(-1) + eps)
    return GxEDataset.from_components(y, w, e, x)


def _load_source(config: SimulationConfig) -> np.ndarray | None:
    if canonical_example(config.example) != "resample-real":
        return None
    return np.loadtxt(config.source_genotypes, delimiter=",", ndmin=2)


def gen_dataset(config: SimulationConfig,
                stream: RngStream | None = None
                ) -> tuple[GxEDataset, GxEDataset, TrueModel]:
    """Training set, independent test set, and the shared truth."""
    config.validate()
    if stream is None:
        stream = RngStream(config.seed, 0)
    source = _load_source(config)
    truth = gen_true_coefficients(config, stream.child(1))
    if source is not None:
        # train and test resample disjoint subject sets
        if 2 * config.n > source.shape[0]:
            raise DataError(
                f"resample-real needs at least {2 * config.n} source rows "
                f"for disjoint train/test draws, found {source.shape[0]}")
        rows = stream.child(4).choice(source.shape[0], size=2 * config.n,
                                      replace=False)
        train = _assemble(config, truth, stream.child(2), source[rows[:config.n]])
        test = _assemble(config, truth, stream.child(3), source[rows[config.n:]])
    else:
        train = _assemble(config, truth, stream.child(2), None)
        test = _assemble(config, truth, stream.child(3), None)
    return train, test, truth


def save_true_model(truth: TrueModel, path) -> None:
    """JSON with explicit 0-based index lists."""
    p, ell = truth.beta_true.shape
    payload = {
        "p": p, "n_effects_per_group": ell,
        "alpha_true": [float(v) for v in truth.alpha_true],
        "theta_true": [float(v) for v in truth.theta_true],
        "active_groups": [int(j) for j in truth.active_groups],
        "active_effects": [[int(j), int(l)] for j, l in truth.active_effects],
        "beta_nonzero": [
            {"group": int(j), "index_in_group": int(l),
             "value": float(truth.beta_true[j, l])}
            for j, l in truth.active_effects],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def load_true_model(path) -> TrueModel:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    beta = np.zeros((payload["p"], payload["n_effects_per_group"]))
    for rec in payload["beta_nonzero"]:
        beta[rec["group"], rec["index_in_group"]] = rec["value"]
    return TrueModel(
        alpha_true=np.asarray(payload["alpha_true"], dtype=float),
        theta_true=np.asarray(payload["theta_true"], dtype=float),
        beta_true=beta,
        active_groups=tuple(payload["active_groups"]),
        active_effects=tuple((j, l) for j, l in payload["active_effects"]))
