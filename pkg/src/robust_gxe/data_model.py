"""Domain types, design construction, standardization, CSV ingestion.

The dataset layout is fixed here once: the interaction design ``u`` is
group-major, group j occupying columns (j*L ... j*L+L-1) as
(X_j, X_j*E_1, ..., X_j*E_k) with L = k + 1. Everything downstream (samplers,
selection, serialization) assumes this ordering.
"""

from __future__ import annotations

import csv
import dataclasses
import re

import numpy as np
from scipy import stats

STRUCTURES = ("sparse-group", "group", "individual")

_STRUCTURE_CODE = {"sparse-group": "bsg", "group": "bg", "individual": "bl"}
_CODE_STRUCTURE = {v: k for k, v in _STRUCTURE_CODE.items()}

METHOD_NAMES = tuple(
    ("r" if robust else "") + code + ("-ss" if ss else "")
    for robust in (True, False)
    for ss in (True, False)
    for code in ("bsg", "bg", "bl")
)


class DataError(ValueError):
    """Malformed input data: shapes, CSV contents, or configuration."""


@dataclasses.dataclass(frozen=True)
class Hyperparameters:
    """Prior settings plus chain-length defaults shared by all 12 methods.

    Names describe the role rather than any one symbol: ``pi0_*`` are the
    Beta prior on the group-level inclusion probability, ``pi1_*`` on the
    individual-level one; ``nu_*`` is the Gamma prior on the Laplace rate;
    ``eta_prior_*`` the Gamma prior on the Laplacian penalty scales. A
    ``sigma2_prior_shape`` of 0 with scale 0 means the flat limit of the
    inverse-Gamma prior on the Gaussian noise variance (proper posteriors
    still result). ``em_window`` of 0 freezes the spike-slab scale
    hyperparameter ``eta_init`` instead of tuning it by trailing-window EM.
    """

    pi0_beta_a: float = 1.0
    pi0_beta_b: float = 1.0
    pi1_beta_a: float = 1.0
    pi1_beta_b: float = 1.0
    nu_shape: float = 0.1
    nu_rate: float = 0.1
    eta_prior_a: float = 1.0
    eta_prior_b: float = 1.0
    alpha_prior_var: float = 1e4
    theta_prior_var: float = 1e4
    sigma2_prior_shape: float = 0.0
    sigma2_prior_scale: float = 0.0
    s2_prior_shape: float = 1.0
    em_window: int = 100
    eta_init: float = 1.0
    n_iter: int = 15000
    burn_in: int = 7500
    seed: int = 0

    def validate(self) -> None:
        positive = [
            ("pi0_beta_a", self.pi0_beta_a), ("pi0_beta_b", self.pi0_beta_b),
            ("pi1_beta_a", self.pi1_beta_a), ("pi1_beta_b", self.pi1_beta_b),
            ("nu_shape", self.nu_shape), ("nu_rate", self.nu_rate),
            ("eta_prior_a", self.eta_prior_a), ("eta_prior_b", self.eta_prior_b),
            ("alpha_prior_var", self.alpha_prior_var),
            ("theta_prior_var", self.theta_prior_var),
            ("s2_prior_shape", self.s2_prior_shape),
            ("eta_init", self.eta_init),
        ]
        for name, value in positive:
            if not (np.isfinite(value) and value > 0):
                raise DataError(f"hyperparameter {name} must be positive, got {value}")
        for name, value in [("sigma2_prior_shape", self.sigma2_prior_shape),
                            ("sigma2_prior_scale", self.sigma2_prior_scale)]:
            if not (np.isfinite(value) and value >= 0):
                raise DataError(f"hyperparameter {name} must be nonnegative, got {value}")
        if self.em_window < 0:
            raise DataError("em_window must be a nonnegative integer")
        if not (0 <= self.burn_in < self.n_iter):
            raise DataError(
                f"burn_in must satisfy 0 <= burn_in < n_iter, got "
                f"burn_in={self.burn_in}, n_iter={self.n_iter}")


@dataclasses.dataclass(frozen=True)
class MethodConfig:
    """One cell of the 2 x 2 x 3 method grid.

    robust: Laplace (LAD-type) likelihood if True, Gaussian otherwise.
    spike_slab: point-mass spike-and-slab priors if True, pure Laplacian
    shrinkage otherwise. structure: which sparsity pattern the prior encodes.
    """

    robust: bool
    spike_slab: bool
    structure: str
    hyper: Hyperparameters = dataclasses.field(default_factory=Hyperparameters)

    def __post_init__(self) -> None:
        if self.structure not in STRUCTURES:
            raise DataError(
                f"structure must be one of {STRUCTURES}, got {self.structure!r}")

    @property
    def name(self) -> str:
        return (("r" if self.robust else "") + _STRUCTURE_CODE[self.structure]
                + ("-ss" if self.spike_slab else ""))

    @classmethod
    def from_name(cls, name: str,
                  hyper: Hyperparameters | None = None) -> "MethodConfig":
        m = re.fullmatch(r"(r?)(bsg|bg|bl)(-ss)?", name.strip().lower())
        if m is None:
            raise DataError(
                f"unknown method {name!r}; expected one of {', '.join(METHOD_NAMES)}")
        return cls(robust=bool(m.group(1)),
                   spike_slab=bool(m.group(3)),
                   structure=_CODE_STRUCTURE[m.group(2)],
                   hyper=hyper if hyper is not None else Hyperparameters())


def build_design(x: np.ndarray, e: np.ndarray) -> np.ndarray:
    """Interaction design: per group j the columns (X_j, X_j*E_1..X_j*E_k)."""
    x = np.asarray(x, dtype=float)
    e = np.asarray(e, dtype=float)
    if x.ndim != 2 or e.ndim != 2:
        raise DataError("x and e must be two-dimensional arrays")
    if x.shape[0] != e.shape[0]:
        raise DataError(
            f"x has {x.shape[0]} rows but e has {e.shape[0]}")
    n, p = x.shape
    k = e.shape[1]
    ell = k + 1
    u = np.empty((n, p * ell))
    u[:, 0::ell] = x
    for m in range(k):
        u[:, m + 1::ell] = x * e[:, [m]]
    return u


@dataclasses.dataclass
class GxEDataset:
    """Observed data plus the derived interaction design.

    ``u`` is always rebuilt from ``x`` and ``e`` by the constructors; treat
    instances as read-only once built.
    """

    y: np.ndarray
    w: np.ndarray
    e: np.ndarray
    x: np.ndarray
    u: np.ndarray

    @classmethod
    def from_components(cls, y, w, e, x) -> "GxEDataset":
        y = np.asarray(y, dtype=float).reshape(-1)
        n = y.shape[0]
        w = np.asarray(w, dtype=float).reshape(n, -1) if np.size(w) else np.zeros((n, 0))
        e = np.asarray(e, dtype=float).reshape(n, -1) if np.size(e) else np.zeros((n, 0))
        x = np.asarray(x, dtype=float).reshape(n, -1)
        ds = cls(y=y, w=w, e=e, x=x, u=build_design(x, e))
        ds.check()
        return ds

    def check(self) -> None:
        n = self.y.shape[0]
        for name, mat in [("w", self.w), ("e", self.e), ("x", self.x), ("u", self.u)]:
            if mat.shape[0] != n:
                raise DataError(f"{name} has {mat.shape[0]} rows, y has {n}")
        if self.u.shape[1] != self.p * self.n_effects_per_group:
            raise DataError("interaction design has wrong column count")

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def q(self) -> int:
        return self.w.shape[1]

    @property
    def k(self) -> int:
        return self.e.shape[1]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def n_effects_per_group(self) -> int:
        return self.k + 1


@dataclasses.dataclass(frozen=True)
class TrueModel:
    """Ground truth of a simulated dataset (0-based indices)."""

    alpha_true: np.ndarray
    theta_true: np.ndarray
    beta_true: np.ndarray
    active_groups: tuple[int, ...]
    active_effects: tuple[tuple[int, int], ...]

    def check(self) -> None:
        nz = {(j, l) for j, l in zip(*np.nonzero(self.beta_true))}
        if nz != set(self.active_effects):
            raise DataError("active_effects inconsistent with beta_true")
        if set(self.active_groups) != {j for j, _ in nz}:
            raise DataError("active_groups inconsistent with beta_true")


@dataclasses.dataclass
class ChainState:
    """Mutable state of one Gibbs chain; owned by exactly one chain.

    Only the fields a given method uses are non-None. ``beta`` is always
    kept consistent with its factors (beta = omega * b for the sparse-group
    spike-and-slab methods, direct otherwise).
    """

    alpha: np.ndarray
    theta: np.ndarray
    beta: np.ndarray
    b: np.ndarray | None = None
    omega: np.ndarray | None = None
    phi_b: np.ndarray | None = None
    phi_w: np.ndarray | None = None
    u_latent: np.ndarray | None = None
    nu: float | None = None
    sigma2: float | None = None
    pi0: float | None = None
    pi1: float | None = None
    s2: float | None = None
    s_group: np.ndarray | None = None
    s_indiv: np.ndarray | None = None
    r_group: np.ndarray | None = None
    eta1: float | None = None
    eta2: float | None = None
    eta: float | None = None


@dataclasses.dataclass(frozen=True)
class StandardizationRecord:
    """Centers/scales used by standardize, enough to invert the transform."""

    y_center: float
    w_center: np.ndarray
    w_scale: np.ndarray
    e_center: np.ndarray
    e_scale: np.ndarray
    x_center: np.ndarray
    x_scale: np.ndarray
    w_zero_variance: np.ndarray
    e_zero_variance: np.ndarray
    x_zero_variance: np.ndarray

    @property
    def any_zero_variance(self) -> bool:
        return bool(self.w_zero_variance.any() or self.e_zero_variance.any()
                    or self.x_zero_variance.any())


def _center_scale(mat: np.ndarray):
    center = mat.mean(axis=0) if mat.shape[0] else np.zeros(mat.shape[1])
    sd = mat.std(axis=0, ddof=1) if mat.shape[0] > 1 else np.zeros(mat.shape[1])
    degenerate = sd < 1e-12
    scale = np.where(degenerate, 1.0, sd)
    return (mat - center) / scale, center, scale, degenerate


def standardize(dataset: GxEDataset) -> tuple[GxEDataset, StandardizationRecord]:
    """Center y; center and unit-scale every w, e, x column; rebuild u.

    Zero-variance columns are flagged and centered only (scale kept at 1) so
    the column indexing never shifts.
    """
    if dataset.n < 2:
        raise DataError("standardization requires at least 2 observations")
    w_std, w_c, w_s, w_z = _center_scale(dataset.w)
    e_std, e_c, e_s, e_z = _center_scale(dataset.e)
    x_std, x_c, x_s, x_z = _center_scale(dataset.x)
    out = GxEDataset.from_components(dataset.y - dataset.y.mean(),
                                     w_std, e_std, x_std)
    record = StandardizationRecord(
        y_center=float(dataset.y.mean()),
        w_center=w_c, w_scale=w_s, e_center=e_c, e_scale=e_s,
        x_center=x_c, x_scale=x_s,
        w_zero_variance=w_z, e_zero_variance=e_z, x_zero_variance=x_z)
    return out, record


def unstandardize(dataset: GxEDataset, record: StandardizationRecord) -> GxEDataset:
    """Invert standardize (u is rebuilt from the restored x and e)."""
    return GxEDataset.from_components(
        dataset.y + record.y_center,
        dataset.w * record.w_scale + record.w_center,
        dataset.e * record.e_scale + record.e_center,
        dataset.x * record.x_scale + record.x_center)


def apply_standardization(dataset: GxEDataset,
                          record: StandardizationRecord) -> GxEDataset:
    """Transform new data with centers and scales learned on another set.

    This is how test data enters a fitted model: shifted and scaled by the
    training-set record, never by its own statistics.
    """
    return GxEDataset.from_components(
        dataset.y - record.y_center,
        (dataset.w - record.w_center) / record.w_scale,
        (dataset.e - record.e_center) / record.e_scale,
        (dataset.x - record.x_center) / record.x_scale)


_HEADER_RE = re.compile(r"([wex])(\d+)")


def _parse_header(fields: list[str]) -> tuple[int, int, int]:
    if not fields or fields[0] != "y":
        raise DataError("header must start with column 'y'")
    counts = {"w": 0, "e": 0, "x": 0}
    order = "wex"
    seen_phase = 0
    for pos, name in enumerate(fields[1:], start=2):
        m = _HEADER_RE.fullmatch(name)
        if m is None:
            raise DataError(f"unrecognized header column {name!r} at position {pos}")
        kind, idx = m.group(1), int(m.group(2))
        phase = order.index(kind)
        if phase < seen_phase:
            raise DataError(
                f"header column {name!r} at position {pos} out of order "
                "(expected y, w*, e*, x*)")
        seen_phase = phase
        counts[kind] += 1
        if idx != counts[kind]:
            raise DataError(
                f"header column {name!r} at position {pos}: expected "
                f"{kind}{counts[kind]}")
    return counts["w"], counts["e"], counts["x"]


def load_csv(path, schema: dict | None = None) -> GxEDataset:
    """Read a dataset CSV with header y,w1..wq,e1..ek,x1..xp.

    ``schema`` may pin expected counts, e.g. {"q": 3, "k": 5, "p": 100};
    a mismatch is an error. All cells must be numeric; parse errors report
    the 1-based data row and the column name.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError("no data rows") from None
        q, k, p = _parse_header([h.strip() for h in header])
        if schema:
            for key, have in (("q", q), ("k", k), ("p", p)):
                want = schema.get(key)
                if want is not None and want != have:
                    raise DataError(
                        f"schema mismatch: expected {key}={want}, file has {have}")
        width = 1 + q + k + p
        rows = []
        for lineno, rec in enumerate(reader, start=1):
            if not rec or (len(rec) == 1 and not rec[0].strip()):
                continue
            if len(rec) != width:
                raise DataError(
                    f"row {lineno}: expected {width} fields, found {len(rec)}")
            vals = np.empty(width)
            for jcol, cell in enumerate(rec):
                try:
                    vals[jcol] = float(cell)
                except ValueError:
                    raise DataError(
                        f"row {lineno}, column {header[jcol].strip()!r}: "
                        f"non-numeric value {cell.strip()!r}") from None
            if not np.all(np.isfinite(vals)):
                jbad = int(np.flatnonzero(~np.isfinite(vals))[0])
                raise DataError(
                    f"row {lineno}, column {header[jbad].strip()!r}: "
                    "non-finite value")
            rows.append(vals)
    if not rows:
        raise DataError("no data rows")
    data = np.array(rows)
    return GxEDataset.from_components(
        y=data[:, 0],
        w=data[:, 1:1 + q],
        e=data[:, 1 + q:1 + q + k],
        x=data[:, 1 + q + k:])


def dataset_header(q: int, k: int, p: int) -> list[str]:
    return (["y"] + [f"w{i}" for i in range(1, q + 1)]
            + [f"e{i}" for i in range(1, k + 1)]
            + [f"x{i}" for i in range(1, p + 1)])


def write_csv(dataset: GxEDataset, path) -> None:
    """Write a dataset in the load_csv schema (byte-stable float text)."""
    import pandas as pd

    cols = np.column_stack([dataset.y[:, None], dataset.w, dataset.e, dataset.x])
    frame = pd.DataFrame(cols, columns=dataset_header(dataset.q, dataset.k, dataset.p))
    frame.to_csv(path, index=False)


def prescreen_marginal(dataset: GxEDataset, p_cutoff: float) -> list[int]:
    """Retain group j when the marginal OLS F-test of its L columns rejects.

    Each group is tested alone: regress y on an intercept plus the L design
    columns of group j and compare against the intercept-only fit. Returns
    the retained group indices (0-based) in ascending order.
    """
    if not (0.0 < p_cutoff <= 1.0):
        raise DataError(f"p_cutoff must lie in (0, 1], got {p_cutoff}")
    n = dataset.n
    ell = dataset.n_effects_per_group
    if n <= ell + 1:
        raise DataError(
            f"prescreening needs n > L+1 observations (n={n}, L={ell})")
    y = dataset.y
    ss_total = float(np.sum((y - y.mean()) ** 2))
    kept = []
    for j in range(dataset.p):
        block = dataset.u[:, j * ell:(j + 1) * ell]
        design = np.column_stack([np.ones(n), block])
        coef, _, _, _ = np.linalg.lstsq(design, y, rcond=None)
        resid = y - design @ coef
        ss_resid = float(resid @ resid)
        if ss_total <= ss_resid:
            continue  # the group explains nothing
        df2 = n - ell - 1
        if ss_resid <= 0.0:
            kept.append(j)  # perfect fit
            continue
        f_stat = ((ss_total - ss_resid) / ell) / (ss_resid / df2)
        p_value = float(stats.f.sf(f_stat, ell, df2))
        if p_value < p_cutoff:
            kept.append(j)
    return kept
