"""Statistical tools used for cohort comparisons.

Mann-Whitney U, Benjamini-Hochberg FDR, Pearson chi-squared, Gwet's AC1
for two raters, Likert binning, Box-Cox and OLS with VIF.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import linalg, special
from scipy.stats import rankdata

from .errors import (
    CollinearityError,
    DegeneratePrevalenceError,
    DegenerateTableError,
    DomainError,
    RatingError,
    SampleSizeError,
)

EXACT_CUTOVER = 8
MAX_EXACT_ASSIGNMENTS = 2_000_000


# ---------------------------------------------------------------------------
# Mann-Whitney U
# ---------------------------------------------------------------------------

@dataclass
class MannWhitneyResult:
    u: float
    p: float
    method: str
    degenerate: bool = False


def mann_whitney_u(x, y, method: str = "auto") -> MannWhitneyResult:
    """Two-sided Mann-Whitney U test; ``u`` is the statistic of ``x``.

    ``method="auto"`` enumerates every rank assignment when the combined
    sample is smaller than 8 and otherwise uses the normal approximation
    with tie-corrected variance and continuity correction.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    n1, n2 = x.size, y.size
    if n1 < 1 or n2 < 1:
        raise SampleSizeError("both samples need at least one value")
    if method not in ("auto", "exact", "asymptotic"):
        raise ValueError(f"unknown method {method!r}")
    both = np.concatenate([x, y])
    ranks = rankdata(both)
    u = float(ranks[:n1].sum() - n1 * (n1 + 1) / 2.0)
    n = n1 + n2
    if np.all(both == both[0]):
        return MannWhitneyResult(u, 1.0, method, degenerate=True)
    if method == "auto":
        method = "exact" if n < EXACT_CUTOVER else "asymptotic"
    mu = n1 * n2 / 2.0

    if method == "exact":
        if math.comb(n, n1) > MAX_EXACT_ASSIGNMENTS:
            raise ValueError(f"exact enumeration of C({n},{n1}) assignments is too large")
        obs = abs(u - mu)
        offset = n1 * (n1 + 1) / 2.0
        hits = total = 0
        for idx in itertools.combinations(range(n), n1):
            total += 1
            if abs(ranks[list(idx)].sum() - offset - mu) >= obs - 1e-9:
                hits += 1
        return MannWhitneyResult(u, hits / total, "exact")

    _, counts = np.unique(both, return_counts=True)
    tie = float(np.sum(counts ** 3 - counts))
    var = n1 * n2 / 12.0 * ((n + 1) - tie / (n * (n - 1)))
    z = max(abs(u - mu) - 0.5, 0.0) / math.sqrt(var)
    p = min(1.0, math.erfc(z / math.sqrt(2.0)))
    return MannWhitneyResult(u, p, "asymptotic")


def fdr_adjust(p) -> np.ndarray:
    """Benjamini-Hochberg adjusted p-values, in input order."""
    p = np.asarray(p, dtype=np.float64).ravel()
    if p.size == 0:
        return p
    if np.any((p < 0) | (p > 1) | ~np.isfinite(p)):
        raise DomainError("p-values must lie in [0, 1]")
    m = p.size
    order = np.argsort(p, kind="mergesort")
    scaled = p[order] * m / np.arange(1, m + 1)
    adj_sorted = np.minimum.accumulate(scaled[::-1])[::-1]
    out = np.empty(m)
    out[order] = np.minimum(adj_sorted, 1.0)
    return out


# ---------------------------------------------------------------------------
# chi-squared
# ---------------------------------------------------------------------------

@dataclass
class ChiSquaredResult:
    statistic: float
    p: float
    dof: int
    expected: np.ndarray = field(repr=False)


def chi2_sf(x: float, dof: int) -> float:
    """Upper tail of the chi-squared distribution."""
    return float(special.gammaincc(dof / 2.0, x / 2.0))


def chi_squared(table) -> ChiSquaredResult:
    """Pearson chi-squared test of independence (no continuity correction)."""
    obs = np.asarray(table, dtype=np.float64)
    if obs.ndim != 2 or obs.shape[0] < 2 or obs.shape[1] < 2:
        raise DegenerateTableError(f"need at least a 2x2 table for positive dof, got shape {obs.shape}")
    if np.any(obs < 0) or not np.all(np.isfinite(obs)):
        raise DegenerateTableError("counts must be finite and non-negative")
    rows, cols = obs.sum(axis=1), obs.sum(axis=0)
    if np.any(rows == 0) or np.any(cols == 0):
        raise DegenerateTableError("table has an empty row or column")
    expected = np.outer(rows, cols) / obs.sum()
    stat = float(np.sum((obs - expected) ** 2 / expected))
    dof = (obs.shape[0] - 1) * (obs.shape[1] - 1)
    return ChiSquaredResult(stat, chi2_sf(stat, dof), dof, expected)


# ---------------------------------------------------------------------------
# inter-rater agreement
# ---------------------------------------------------------------------------

ACCEPTABLE = "Acceptable"
UNACCEPTABLE = "Unacceptable"
BAD_IMAGE = "BadImage"

LIKERT_BINS = {
    1: ACCEPTABLE,    # acceptable with no changes
    2: ACCEPTABLE,    # acceptable with minor changes
    3: UNACCEPTABLE,  # unacceptable with major changes
    4: UNACCEPTABLE,  # unacceptable and not visible
    5: BAD_IMAGE,
}


def _likert_value(r) -> int:
    if isinstance(r, str):
        r = r.strip()
        if not r.lstrip("-").isdigit():
            raise RatingError(f"rating {r!r} is not an integer")
        r = int(r)
    if isinstance(r, (bool, np.bool_)):
        raise RatingError(f"rating {r!r} is not an integer")
    if isinstance(r, (float, np.floating)):
        if not float(r).is_integer():
            raise RatingError(f"rating {r!r} is not an integer")
        r = int(r)
    if not isinstance(r, (int, np.integer)) or int(r) not in LIKERT_BINS:
        raise RatingError(f"rating {r!r} outside 1..5")
    return int(r)


def bin_likert(ratings) -> list[str]:
    """Collapse 5-point acceptability scores into three bins."""
    return [LIKERT_BINS[_likert_value(r)] for r in ratings]


def _missing(v) -> bool:
    if v is None:
        return True
    if isinstance(v, str):
        return v.strip() == ""
    try:
        return bool(np.isnan(v))
    except TypeError:
        return False


@dataclass(eq=False)
class AgreementTable:
    """Two raters' categorical ratings over the same items.

    Items with a missing rating are dropped when built with
    :meth:`from_pairs`; ``dropped`` records how many.
    """

    ratings: np.ndarray  # (n_items, 2), object
    categories: tuple
    dropped: int = 0

    def __post_init__(self):
        self.ratings = np.asarray(self.ratings, dtype=object)
        if self.ratings.ndim != 2 or self.ratings.shape[1] != 2:
            raise ValueError("ratings must have shape (n_items, 2)")
        if len(self.categories) < 2:
            raise DegeneratePrevalenceError(
                "fewer than two categories: chance agreement is certain")
        unknown = set(self.ratings.ravel()) - set(self.categories)
        if unknown:
            raise RatingError(f"ratings {sorted(map(str, unknown))} not among the categories")

    @classmethod
    def from_pairs(cls, rater1: Sequence, rater2: Sequence, categories=None) -> "AgreementTable":
        if len(rater1) != len(rater2):
            raise ValueError("raters rated different numbers of items")
        keep = [(a, b) for a, b in zip(rater1, rater2) if not (_missing(a) or _missing(b))]
        dropped = len(rater1) - len(keep)
        if categories is None:
            categories = tuple(sorted({v for pair in keep for v in pair}, key=str))
        return cls(np.array(keep, dtype=object).reshape(-1, 2), tuple(categories), dropped)

    @property
    def n_items(self) -> int:
        return int(self.ratings.shape[0])

    def counts(self) -> np.ndarray:
        """(n_items, K) number of raters choosing each category."""
        idx = {c: k for k, c in enumerate(self.categories)}
        out = np.zeros((self.n_items, len(self.categories)))
        for i, pair in enumerate(self.ratings):
            for v in pair:
                out[i, idx[v]] += 1
        return out


@dataclass
class AC1Result:
    ac1: float
    ci_low: float
    ci_high: float
    se: float
    pa: float
    pe: float
    n: int


def gwet_ac1(table: AgreementTable, z: float = 1.96) -> AC1Result:
    """Gwet's AC1 for two raters with a linearised item-level variance."""
    n = table.n_items
    if n < 2:
        raise SampleSizeError("AC1 needs at least two rated items")
    counts = table.counts()
    q = counts.shape[1]
    r = 2.0
    pa_i = np.sum(counts * (counts - 1), axis=1) / (r * (r - 1))
    pi = counts.mean(axis=0) / r
    pe = float(np.sum(pi * (1 - pi)) / (q - 1))
    if pe >= 1.0:
        raise DegeneratePrevalenceError("chance agreement equals 1")
    pa = float(pa_i.mean())
    ac1 = (pa - pe) / (1 - pe)

    pe_i = (counts / r) @ (1 - pi) / (q - 1)
    ac1_i = (pa_i - pe) / (1 - pe) - 2 * (1 - ac1) * (pe_i - pe) / (1 - pe)
    var = float(np.sum((ac1_i - ac1) ** 2) / (n * (n - 1)))
    se = math.sqrt(var)
    lo = max(-1.0, ac1 - z * se)
    hi = min(1.0, ac1 + z * se)
    return AC1Result(float(ac1), lo, hi, se, pa, pe, n)


# ---------------------------------------------------------------------------
# Box-Cox
# ---------------------------------------------------------------------------

DEFAULT_LAMBDA = 0.2


def box_cox(y, lam: float = DEFAULT_LAMBDA) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if np.any(~np.isfinite(y)) or np.any(y <= 0):
        raise DomainError("Box-Cox needs strictly positive values")
    if lam == 0:
        return np.log(y)
    return np.expm1(lam * np.log(y)) / lam


def inv_box_cox(z, lam: float = DEFAULT_LAMBDA) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if lam == 0:
        return np.exp(z)
    base = lam * z + 1.0
    if np.any(base <= 0):
        raise DomainError("value outside the range of the Box-Cox transform")
    return np.exp(np.log1p(lam * z) / lam)


def box_cox_llf(y, lam: float) -> float:
    """Profile log-likelihood of a Box-Cox model with a free mean."""
    y = np.asarray(y, dtype=np.float64)
    z = box_cox(y, lam)
    n = y.size
    return float(-n / 2.0 * np.log(np.var(z)) + (lam - 1) * np.sum(np.log(y)))


def box_cox_mle(y, lo: float = -2.0, hi: float = 2.0, step: float = 0.01) -> float:
    """Grid-search maximum-likelihood lambda."""
    grid = np.round(np.arange(lo, hi + step / 2, step), 10)
    llf = [box_cox_llf(y, lam) for lam in grid]
    return float(grid[int(np.argmax(llf))])


# ---------------------------------------------------------------------------
# OLS
# ---------------------------------------------------------------------------

@dataclass
class RegressionFit:
    names: list[str]
    coef: np.ndarray
    se: np.ndarray
    t: np.ndarray
    p: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    vif: dict[str, float]
    r2: float
    n: int
    df_resid: int
    sigma: float
    residuals: np.ndarray = field(repr=False)

    def row(self, name: str) -> dict:
        j = self.names.index(name)
        return {
            "term": name,
            "estimate": float(self.coef[j]),
            "se": float(self.se[j]),
            "ci_low": float(self.ci_low[j]),
            "ci_high": float(self.ci_high[j]),
            "p": float(self.p[j]),
            "vif": self.vif.get(name),
        }


def t_sf(t, df: int):
    """Upper tail of Student's t."""
    return special.stdtr(df, -np.asarray(t, dtype=np.float64))


def _is_constant(col: np.ndarray) -> bool:
    return bool(np.all(col == col[0])) and col[0] != 0


def _collinear_columns(x: np.ndarray, names: list[str], tol: float) -> list[str]:
    norms = np.linalg.norm(x, axis=0)
    norms[norms == 0] = 1.0
    _, s, vt = np.linalg.svd(x / norms, full_matrices=True)
    s = np.concatenate([s, np.zeros(vt.shape[0] - s.size)])
    null = vt[s <= tol * max(s[0], 1e-300)]
    involved = np.any(np.abs(null) > 1e-6, axis=0)
    return [nm for nm, hit in zip(names, involved) if hit]


def _lstsq_qr(x: np.ndarray, y: np.ndarray):
    q, r = np.linalg.qr(x)
    coef = linalg.solve_triangular(r, q.T @ y)
    return coef, r


def _r2(x: np.ndarray, y: np.ndarray, centered: bool) -> float:
    coef, _ = _lstsq_qr(x, y)
    resid = y - x @ coef
    ref = y - y.mean() if centered else y
    tss = float(ref @ ref)
    return 0.0 if tss == 0 else 1.0 - float(resid @ resid) / tss


def ols_fit(x, y, names: Sequence[str] | None = None, add_intercept: bool = False,
            level: float = 0.95, rank_tol: float = 1e-10) -> RegressionFit:
    """Least squares via QR with t-based CIs/p-values and per-predictor VIF."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    y = np.asarray(y, dtype=np.float64).ravel()
    names = list(names) if names is not None else [f"x{j}" for j in range(x.shape[1])]
    if len(names) != x.shape[1]:
        raise ValueError("one name per design column is required")
    if add_intercept:
        x = np.column_stack([np.ones(x.shape[0]), x])
        names = ["(Intercept)"] + names
    n, p = x.shape
    if y.size != n:
        raise ValueError("design and outcome lengths differ")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise DomainError("design and outcome must be finite")
    if n <= p:
        raise SampleSizeError(f"need more observations ({n}) than parameters ({p})")

    _, r_piv, _ = linalg.qr(x, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r_piv))
    if diag[0] == 0 or np.any(diag < rank_tol * diag[0]):
        cols = _collinear_columns(x, names, 1e-8)
        raise CollinearityError(f"design is rank deficient; collinear columns: {', '.join(cols)}", cols)

    coef, r = _lstsq_qr(x, y)
    resid = y - x @ coef
    df = n - p
    sigma2 = float(resid @ resid) / df
    rinv = linalg.solve_triangular(r, np.eye(p))
    cov = sigma2 * (rinv @ rinv.T)
    se = np.sqrt(np.diag(cov))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(se > 0, coef / np.where(se > 0, se, 1.0), np.copysign(np.inf, coef))
    pval = 2.0 * t_sf(np.abs(t), df)
    crit = float(special.stdtrit(df, 0.5 + level / 2.0))

    has_const = any(_is_constant(x[:, j]) for j in range(p))
    vif = {}
    for j in range(p):
        if _is_constant(x[:, j]):
            continue
        others = np.delete(x, j, axis=1)
        if not any(_is_constant(others[:, k]) for k in range(others.shape[1])):
            others = np.column_stack([np.ones(n), others])
        r2j = _r2(others, x[:, j], centered=True)
        vif[names[j]] = float("inf") if r2j >= 1.0 else 1.0 / (1.0 - r2j)

    return RegressionFit(
        names=names,
        coef=coef,
        se=se,
        t=t,
        p=pval,
        ci_low=coef - crit * se,
        ci_high=coef + crit * se,
        vif=vif,
        r2=_r2(x, y, centered=has_const),
        n=n,
        df_resid=df,
        sigma=math.sqrt(sigma2),
        residuals=resid,
    )
