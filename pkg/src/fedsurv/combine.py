"""p-value combination: four classic combiners plus share-weighted variants.

Every method consumes an EvidenceSet (per-site p-values, optionally shares
s_i, a total count n, and the null binomial probability rho) and returns
the combined p together with the underlying statistic.

Each public function has a batch twin operating on a (N, M) matrix of
p-values (column j is one evidence set) which the Monte Carlo engines
use; the scalar functions delegate to the batch kernels so the two paths
cannot drift.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import ConfigError, DomainError

CLAMP_EPS = 1e-15

METHOD_IDS = (
    "stouffer",
    "fisher",
    "pearson",
    "tippett",
    "wstouffer",
    "cstouffer",
    "wfisher",
    "goods",
    "lancaster",
)

# methods that cannot run without per-site shares
SHARE_METHODS = frozenset({"wstouffer", "cstouffer", "wfisher", "goods", "lancaster"})

__all__ = [
    "CLAMP_EPS",
    "METHOD_IDS",
    "SHARE_METHODS",
    "EvidenceSet",
    "CombinedResult",
    "stouffer",
    "fisher",
    "pearson",
    "tippett",
    "weighted_stouffer",
    "corrected_stouffer",
    "wfisher",
    "goods",
    "lancaster",
    "combine_by_id",
    "combine_matrix",
]


@dataclass(frozen=True)
class EvidenceSet:
    """Per-site p-values with optional weighting context.

    shares must be nonnegative and sum to 1; total_count and rho are only
    needed by the continuity-corrected combiner (and by the registry's
    degrees-of-freedom rule for Lancaster).
    """

    p_values: tuple[float, ...]
    shares: tuple[float, ...] | None = None
    total_count: int | None = None
    rho: float | None = None

    def __post_init__(self):
        ps = tuple(float(p) for p in self.p_values)
        if len(ps) == 0:
            raise DomainError("evidence set must contain at least one p-value")
        if any(not 0.0 <= p <= 1.0 for p in ps) or any(p != p for p in ps):
            raise DomainError("p-values must lie in [0, 1]")
        object.__setattr__(self, "p_values", ps)
        if self.shares is not None:
            sh = tuple(float(s) for s in self.shares)
            if len(sh) != len(ps):
                raise ConfigError("shares length must match p-values length")
            if any(s < 0 for s in sh):
                raise ConfigError("shares must be nonnegative")
            if abs(sum(sh) - 1.0) > 1e-9:
                raise ConfigError("shares must sum to 1 within 1e-9")
            object.__setattr__(self, "shares", sh)
        if self.total_count is not None:
            if int(self.total_count) != self.total_count or self.total_count < 0:
                raise ConfigError("total_count must be a nonnegative integer")
            object.__setattr__(self, "total_count", int(self.total_count))
        if self.rho is not None:
            rho = float(self.rho)
            if not 0.0 < rho < 1.0:
                raise ConfigError("rho must lie strictly inside (0, 1)")
            object.__setattr__(self, "rho", rho)

    @property
    def n_sites(self) -> int:
        return len(self.p_values)


@dataclass(frozen=True)
class CombinedResult:
    p: float
    statistic: float
    method: str


def _clamped(p_matrix: np.ndarray) -> np.ndarray:
    return np.clip(p_matrix, CLAMP_EPS, 1.0 - CLAMP_EPS)


def _shares_column(shares, n_sites: int) -> np.ndarray:
    """Per-site weights as a column: either one vector for every column of
    the p-matrix, shape (N,), or one vector per column, shape (N, M)."""
    sh = np.asarray(shares, dtype=float)
    if sh.ndim == 1 and sh.shape[0] == n_sites:
        return sh.reshape(n_sites, 1)
    if sh.ndim == 2 and sh.shape[0] == n_sites:
        return sh
    raise ConfigError(
        f"weights must have shape ({n_sites},) or ({n_sites}, M), got {sh.shape}"
    )


# --------------------------------------------------------------- batch kernels
# Each takes P of shape (N, M), returns (combined_p, statistic) of shape (M,).

def stouffer_matrix(p_matrix: np.ndarray):
    z = special.ndtri(_clamped(p_matrix))
    stat = z.sum(axis=0)
    n = p_matrix.shape[0]
    return special.ndtr(stat / np.sqrt(n)), stat


def fisher_matrix(p_matrix: np.ndarray):
    stat = -2.0 * np.log(_clamped(p_matrix)).sum(axis=0)
    n = p_matrix.shape[0]
    return special.gammaincc(float(n), stat / 2.0), stat


def pearson_matrix(p_matrix: np.ndarray, upper_tail: bool = False):
    stat = -2.0 * np.log1p(-_clamped(p_matrix)).sum(axis=0)
    n = p_matrix.shape[0]
    if upper_tail:
        return special.gammaincc(float(n), stat / 2.0), stat
    return special.gammainc(float(n), stat / 2.0), stat


def tippett_matrix(p_matrix: np.ndarray):
    stat = p_matrix.min(axis=0)
    n = p_matrix.shape[0]
    # min p == 1 rides through log1p as -inf and lands on exactly 1.0
    with np.errstate(divide="ignore"):
        return -np.expm1(n * np.log1p(-stat)), stat


def weighted_stouffer_matrix(p_matrix: np.ndarray, shares):
    sqrt_s = np.sqrt(_shares_column(shares, p_matrix.shape[0]))
    stat = (sqrt_s * special.ndtri(_clamped(p_matrix))).sum(axis=0)
    return special.ndtr(stat), stat


def corrected_stouffer_matrix(p_matrix: np.ndarray, shares, total_count, rho):
    n_sites = p_matrix.shape[0]
    sqrt_s = np.sqrt(_shares_column(shares, n_sites))
    base = (sqrt_s * special.ndtri(_clamped(p_matrix))).sum(axis=0)
    correction = (1.0 - n_sites) / (
        2.0 * np.sqrt(rho * (1.0 - rho) * np.asarray(total_count, dtype=float))
    )
    stat = base + correction
    return special.ndtr(stat), stat


def wfisher_matrix(p_matrix: np.ndarray, shares):
    n_sites = p_matrix.shape[0]
    shapes = _shares_column(shares, n_sites) * n_sites
    # (1-p)-quantile of Gamma(s_i*N, 1/2), via the survival inverse so tiny
    # p-values keep full precision; a zero share contributes 0 (the shape->0
    # limit of the Gamma quantile)
    sh_b, p_b = np.broadcast_arrays(shapes, _clamped(p_matrix))
    contrib = np.zeros(sh_b.shape, dtype=float)
    pos = sh_b > 0.0
    if pos.any():
        contrib[pos] = 2.0 * special.gammainccinv(sh_b[pos], p_b[pos])
    stat = contrib.sum(axis=0)
    return special.gammaincc(float(n_sites), stat / 2.0), stat


def goods_matrix(p_matrix: np.ndarray, shares):
    n_sites = p_matrix.shape[0]
    weights = _shares_column(shares, n_sites) * n_sites
    stat = (-2.0 * weights * np.log(_clamped(p_matrix))).sum(axis=0)
    return special.gammaincc(float(n_sites), stat / 2.0), stat


def lancaster_matrix(p_matrix: np.ndarray, dfs):
    dfs_col = _shares_column(dfs, p_matrix.shape[0])
    if (dfs_col <= 0).any():
        raise ConfigError("degrees of freedom must be positive")
    stat = (2.0 * special.gammainccinv(dfs_col / 2.0, _clamped(p_matrix))).sum(axis=0)
    total_df = dfs_col.sum(axis=0)
    return special.gammaincc(total_df / 2.0, stat / 2.0), stat


# --------------------------------------------------------------- scalar API

def _as_matrix(ev: EvidenceSet) -> np.ndarray:
    return np.asarray(ev.p_values, dtype=float).reshape(ev.n_sites, 1)


def _require_shares(ev: EvidenceSet, method: str):
    if ev.shares is None:
        raise ConfigError(f"{method} requires per-site shares")


def _result(pair, method: str) -> CombinedResult:
    p, stat = pair
    return CombinedResult(p=float(p[0]), statistic=float(stat[0]), method=method)


def stouffer(ev: EvidenceSet) -> CombinedResult:
    """Phi(sum of z-scores / sqrt(N)); the statistic is the raw z sum."""
    return _result(stouffer_matrix(_as_matrix(ev)), "stouffer")


def fisher(ev: EvidenceSet) -> CombinedResult:
    """Upper chi-square(2N) tail of -2 * sum(log p_i)."""
    return _result(fisher_matrix(_as_matrix(ev)), "fisher")


def pearson(ev: EvidenceSet, upper_tail: bool = False) -> CombinedResult:
    """Lower chi-square(2N) tail of -2 * sum(log(1-p_i)).

    Small p_i shrink the statistic, so evidence lies in the lower tail;
    upper_tail flips the direction for sensitivity studies.
    """
    return _result(pearson_matrix(_as_matrix(ev), upper_tail=upper_tail), "pearson")


def tippett(ev: EvidenceSet) -> CombinedResult:
    """1 - (1 - min p_i)^N; the statistic is the minimum p-value."""
    return _result(tippett_matrix(_as_matrix(ev)), "tippett")


def weighted_stouffer(ev: EvidenceSet) -> CombinedResult:
    """Phi(sum of sqrt(s_i) * z_i); equals stouffer at equal shares."""
    _require_shares(ev, "wstouffer")
    return _result(weighted_stouffer_matrix(_as_matrix(ev), ev.shares), "wstouffer")


def corrected_stouffer(ev: EvidenceSet) -> CombinedResult:
    """Weighted Stouffer plus the continuity term (1-N)/(2*sqrt(rho*(1-rho)*n)).

    The term is zero at N=1 and strictly negative otherwise, making the
    combined p-value smaller (less conservative); it needs the total count
    n >= 1 and the null probability rho.
    """
    _require_shares(ev, "cstouffer")
    if ev.total_count is None or ev.total_count < 1:
        raise ConfigError("cstouffer requires a positive total_count")
    if ev.rho is None:
        raise ConfigError("cstouffer requires rho")
    return _result(
        corrected_stouffer_matrix(_as_matrix(ev), ev.shares, ev.total_count, ev.rho),
        "cstouffer",
    )


def wfisher(ev: EvidenceSet) -> CombinedResult:
    """Share-weighted Fisher: Gamma(s_i*N, 1/2) transforms, chi-square(2N) null.

    Site i's p-value maps to the (1-p_i)-quantile of Gamma(s_i*N, 1/2), so
    the weighted degrees of freedom sum to the unweighted method's 2N and
    the statistic keeps an exact chi-square(2N) null; equal shares reduce
    to fisher.
    """
    _require_shares(ev, "wfisher")
    return _result(wfisher_matrix(_as_matrix(ev), ev.shares), "wfisher")


def goods(ev: EvidenceSet) -> CombinedResult:
    """Weighted log sum -2 * sum(s_i*N * log p_i) referred to chi-square(2N).

    The chi-square null is an approximation (the exact null of a weighted
    sum of exponentials is not chi-square); it is used here as stated in
    the method's classical formulation, with weights w_i = s_i*N chosen so
    the nominal degrees of freedom match fisher's.
    """
    _require_shares(ev, "goods")
    return _result(goods_matrix(_as_matrix(ev), ev.shares), "goods")


def lancaster(ev: EvidenceSet, dfs) -> CombinedResult:
    """General Gamma-transform combiner with caller-chosen df per site.

    Site i contributes the (1-p_i)-quantile of Gamma(df_i/2, 1/2), a
    chi-square(df_i) variable under the null, and the sum is referred to
    chi-square(sum df_i). df_i = 2 recovers fisher.
    """
    dfs = tuple(float(d) for d in dfs)
    if len(dfs) != ev.n_sites:
        raise ConfigError("dfs length must match p-values length")
    return _result(lancaster_matrix(_as_matrix(ev), dfs), "lancaster")


def _lancaster_dfs_from_counts(ev: EvidenceSet) -> tuple[float, ...]:
    """Registry rule: df_i proportional to the site's count, df_i = s_i * n.

    Degrees of freedom tied to sample sizes give the classical
    larger-total-df behavior this combiner is known for; requires shares
    and total_count.
    """
    _require_shares(ev, "lancaster")
    if ev.total_count is None or ev.total_count < 1:
        raise ConfigError("lancaster registry rule requires a positive total_count")
    return tuple(max(s * ev.total_count, 1e-6) for s in ev.shares)


def combine_by_id(method: str, ev: EvidenceSet) -> CombinedResult:
    """Dispatch by method identifier (the CLI/config vocabulary)."""
    if method == "stouffer":
        return stouffer(ev)
    if method == "fisher":
        return fisher(ev)
    if method == "pearson":
        return pearson(ev)
    if method == "tippett":
        return tippett(ev)
    if method == "wstouffer":
        return weighted_stouffer(ev)
    if method == "cstouffer":
        return corrected_stouffer(ev)
    if method == "wfisher":
        return wfisher(ev)
    if method == "goods":
        return goods(ev)
    if method == "lancaster":
        return lancaster(ev, _lancaster_dfs_from_counts(ev))
    raise ConfigError(f"unknown method {method!r}; expected one of {METHOD_IDS}")


def combine_matrix(method: str, p_matrix, shares=None, total_count=None, rho=None):
    """Batch dispatch: combine each column of an (N, M) p-value matrix.

    Returns the (M,) array of combined p-values. Weighting context follows
    the same requirements as the scalar API.
    """
    p_matrix = np.asarray(p_matrix, dtype=float)
    if p_matrix.ndim != 2 or p_matrix.shape[0] < 1:
        raise ConfigError("p_matrix must be (n_sites, n_sets) with n_sites >= 1")
    if np.isnan(p_matrix).any() or (p_matrix < 0).any() or (p_matrix > 1).any():
        raise DomainError("p-values must lie in [0, 1]")
    if method == "stouffer":
        return stouffer_matrix(p_matrix)[0]
    if method == "fisher":
        return fisher_matrix(p_matrix)[0]
    if method == "pearson":
        return pearson_matrix(p_matrix)[0]
    if method == "tippett":
        return tippett_matrix(p_matrix)[0]
    if method in SHARE_METHODS and shares is None:
        raise ConfigError(f"{method} requires per-site shares")
    if method in SHARE_METHODS:
        col_sums = _shares_column(shares, p_matrix.shape[0]).sum(axis=0)
        if np.abs(col_sums - 1.0).max() > 1e-9:
            raise ConfigError("shares must sum to 1 in every column")
    if method == "wstouffer":
        return weighted_stouffer_matrix(p_matrix, shares)[0]
    if method == "cstouffer":
        if total_count is None or rho is None:
            raise ConfigError("cstouffer requires total_count and rho")
        return corrected_stouffer_matrix(p_matrix, shares, total_count, rho)[0]
    if method == "wfisher":
        return wfisher_matrix(p_matrix, shares)[0]
    if method == "goods":
        return goods_matrix(p_matrix, shares)[0]
    if method == "lancaster":
        if total_count is None:
            raise ConfigError("lancaster requires total_count for its df rule")
        shares_col = _shares_column(shares, p_matrix.shape[0])
        totals = np.asarray(total_count, dtype=float)
        dfs = np.maximum(shares_col * totals, 1e-6)
        return lancaster_matrix(p_matrix, dfs)[0]
    raise ConfigError(f"unknown method {method!r}; expected one of {METHOD_IDS}")
