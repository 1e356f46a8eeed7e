"""Rank-based dependence measures and distance matrices.

Everything here works on ranks, so measures computed on raw data equal the
measures computed on the (unobserved) copula scale.  The module provides
the three pairwise dependence distances used to drive tree building
(Kendall's tau, Hoeffding's D, deviation of the empirical Kendall
distribution from independence), plus the empirical Kendall distribution
itself and the Cramer-von-Mises-type distances between such distributions.

Fast paths are O(n log n) merge-counting; quadratic reference
implementations (`kendall_tau_quadratic`, `hoeffding_d_quadratic`,
`dominance_counts_quadratic`) are kept as independent oracles for testing.
"""

from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.stats import rankdata

KT = "kt"
HD = "hD"
KIND = "kind"
MATRIX_KINDS = (KT, HD, KIND)


class DataError(ValueError):
    """Raised for malformed datasets or matrix inputs."""


# --------------------------------------------------------------------------- #
# Data containers
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class Dataset:
    """An n x d sample with named columns and no missing cells."""

    values: np.ndarray
    columns: tuple

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "columns", tuple(self.columns))
        if values.ndim != 2:
            raise DataError("dataset must be a 2-d array")
        if values.shape[0] < 3:
            raise DataError("dataset needs at least 3 rows")
        if values.shape[1] != len(self.columns):
            raise DataError("column name count does not match data width")
        if len(set(self.columns)) != len(self.columns):
            raise DataError("duplicate column names")
        if not np.all(np.isfinite(values)):
            raise DataError("dataset contains missing or non-finite cells")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @classmethod
    def from_csv(cls, path_or_buffer) -> "Dataset":
        """Read a comma-separated file with a header row of column names."""
        if hasattr(path_or_buffer, "read"):
            text = path_or_buffer.read()
        else:
            with open(path_or_buffer, "r", encoding="utf-8") as fh:
                text = fh.read()
        rows = list(csv.reader(io.StringIO(text)))
        rows = [r for r in rows if r]
        if len(rows) < 2:
            raise DataError("CSV needs a header row and data rows")
        header = tuple(name.strip() for name in rows[0])
        try:
            values = np.array([[float(cell) for cell in row] for row in rows[1:]])
        except ValueError as exc:
            raise DataError(f"non-numeric cell in CSV: {exc}") from None
        if any(len(row) != len(header) for row in rows[1:]):
            raise DataError("ragged CSV rows")
        return cls(values, header)

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(",".join(self.columns) + "\n")
            for row in self.values:
                fh.write(",".join(repr(float(x)) for x in row) + "\n")


@dataclass(frozen=True)
class PseudoObservations:
    """Column-wise normalized ranks, strictly inside (0,1)."""

    u: np.ndarray
    columns: tuple

    def __post_init__(self):
        object.__setattr__(self, "u", np.asarray(self.u, dtype=float))
        object.__setattr__(self, "columns", tuple(self.columns))

    @property
    def n(self) -> int:
        return self.u.shape[0]

    @property
    def d(self) -> int:
        return self.u.shape[1]

    def column(self, label) -> np.ndarray:
        return self.u[:, self.columns.index(label)]


@dataclass(frozen=True)
class DependenceMatrix:
    """Symmetric matrix of pairwise dependence distances (small = dependent)."""

    values: np.ndarray
    labels: tuple
    kind: str

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        object.__setattr__(self, "labels", tuple(self.labels))
        m = self.values
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DataError("dependence matrix must be square")
        if m.shape[0] != len(self.labels):
            raise DataError("label count does not match matrix size")
        if not np.all(np.isfinite(m)):
            raise DataError("non-finite dependence distance")
        if not np.allclose(m, m.T):
            raise DataError("dependence matrix must be symmetric")
        if np.any(np.diag(m) != 0):
            raise DataError("dependence matrix must have a zero diagonal")

    @property
    def d(self) -> int:
        return len(self.labels)

    def entry(self, a, b) -> float:
        return float(self.values[self.labels.index(a), self.labels.index(b)])

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("," + ",".join(self.labels) + "\n")
            for lab, row in zip(self.labels, self.values):
                fh.write(lab + "," + ",".join(repr(float(x)) for x in row) + "\n")


@dataclass(frozen=True)
class KendallDistribution:
    """Sorted pseudo-Kendall scores W_i of one pair of variables."""

    w: np.ndarray = field(repr=False)

    def __post_init__(self):
        w = np.sort(np.asarray(self.w, dtype=float))
        if w.size == 0:
            raise DataError("empty Kendall distribution")
        if w[0] < 0 or w[-1] > 1:
            raise DataError("Kendall scores must lie in [0,1]")
        object.__setattr__(self, "w", w)

    @property
    def n(self) -> int:
        return self.w.size

    def cdf(self, t) -> np.ndarray:
        """Right-continuous empirical CDF evaluated at t."""
        return np.searchsorted(self.w, np.asarray(t), side="right") / self.n


# --------------------------------------------------------------------------- #
# Ranks and pseudo-observations
# --------------------------------------------------------------------------- #


def pseudo_observations(data) -> PseudoObservations:
    """Column ranks scaled by 1/(n+1); ties get average ranks."""
    if isinstance(data, PseudoObservations):
        return data
    values = data.values
    n = values.shape[0]
    u = rankdata(values, axis=0, method="average") / (n + 1)
    return PseudoObservations(u, data.columns)


# --------------------------------------------------------------------------- #
# Kendall's tau
# --------------------------------------------------------------------------- #


def _merge_count_inversions(a: np.ndarray) -> int:
    """Number of strict inversions (i<j with a[i] > a[j]), by bottom-up
    merging.  Each cross-block pair is counted at exactly one merge."""
    buf = np.array(a, dtype=float, copy=True)
    n = buf.size
    total = 0
    width = 1
    while width < n:
        lo = 0
        while lo + width < n:
            mid = lo + width
            hi = min(lo + 2 * width, n)
            left = buf[lo:mid]
            right = buf[mid:hi]
            # for each right element: left elements strictly greater
            total += left.size * right.size - int(
                np.searchsorted(left, right, side="right").sum()
            )
            # stable merge via insertion offsets
            pos_r = np.searchsorted(left, right, side="right")
            pos_l = np.searchsorted(right, left, side="left")
            merged = np.empty(hi - lo, dtype=buf.dtype)
            merged[pos_r + np.arange(right.size)] = right
            merged[pos_l + np.arange(left.size)] = left
            buf[lo:hi] = merged
            lo = hi
        width *= 2
    return total


def _tie_pair_count(sorted_keys) -> int:
    """Sum of t*(t-1)/2 over runs of equal consecutive keys."""
    total = 0
    run = 1
    for i in range(1, len(sorted_keys)):
        if sorted_keys[i] == sorted_keys[i - 1]:
            run += 1
        else:
            total += run * (run - 1) // 2
            run = 1
    total += run * (run - 1) // 2
    return total


def kendall_tau(x, y) -> float:
    """Kendall's tau-a: (concordant - discordant) / C(n,2).

    Computed by inversion counting after sorting by (x, y); pairs tied in
    either coordinate count as neither concordant nor discordant, so ties
    shrink the absolute value.  Exactly matches `kendall_tau_quadratic`.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise DataError("kendall_tau needs two equal-length vectors")
    n = x.size
    if n < 2:
        raise DataError("kendall_tau needs at least two observations")
    order = np.lexsort((y, x))
    xs, ys = x[order], y[order]
    discordant = _merge_count_inversions(ys)
    n0 = n * (n - 1) // 2
    tie_x = _tie_pair_count(xs.tolist())
    tie_y = _tie_pair_count(np.sort(y).tolist())
    tie_xy = _tie_pair_count(list(zip(xs.tolist(), ys.tolist())))
    tied_either = tie_x + tie_y - tie_xy
    concordant = n0 - discordant - tied_either
    return float(concordant - discordant) / n0


def kendall_tau_quadratic(x, y) -> float:
    """O(n^2) pair-enumeration oracle for :func:`kendall_tau`."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise DataError("kendall_tau needs two equal-length vectors")
    n = x.size
    if n < 2:
        raise DataError("kendall_tau needs at least two observations")
    s = 0.0
    for i in range(n - 1):
        s += float(np.sum(np.sign(x[i + 1:] - x[i]) * np.sign(y[i + 1:] - y[i])))
    return s / (n * (n - 1) // 2)


def kendall_tau_matrix(u: np.ndarray) -> np.ndarray:
    """Pairwise tau-a over the columns of an n x d array."""
    u = np.asarray(u, dtype=float)
    d = u.shape[1]
    out = np.zeros((d, d))
    for i, j in itertools.combinations(range(d), 2):
        out[i, j] = out[j, i] = kendall_tau(u[:, i], u[:, j])
    return out


# --------------------------------------------------------------------------- #
# Dominance counts and the empirical Kendall distribution
# --------------------------------------------------------------------------- #


def _smaller_before_counts(y: np.ndarray) -> np.ndarray:
    """counts[i] = #{j < i : y[j] < y[i]}, by bottom-up merging."""
    yv = np.array(y, dtype=float, copy=True)
    n = yv.size
    counts = np.zeros(n, dtype=np.int64)
    idx = np.arange(n)
    width = 1
    while width < n:
        lo = 0
        while lo + width < n:
            mid = lo + width
            hi = min(lo + 2 * width, n)
            left = yv[lo:mid]
            right = yv[mid:hi]
            counts[idx[mid:hi]] += np.searchsorted(left, right, side="left")
            pos_r = np.searchsorted(left, right, side="right")
            pos_l = np.searchsorted(right, left, side="left")
            merged = np.empty(hi - lo, dtype=yv.dtype)
            merged_idx = np.empty(hi - lo, dtype=idx.dtype)
            merged[pos_r + np.arange(right.size)] = right
            merged_idx[pos_r + np.arange(right.size)] = idx[mid:hi]
            merged[pos_l + np.arange(left.size)] = left
            merged_idx[pos_l + np.arange(left.size)] = idx[lo:mid]
            yv[lo:hi] = merged
            idx[lo:hi] = merged_idx
            lo = hi
        width *= 2
    return counts


_BROADCAST_MAX_N = 4096


def _dominance_broadcast(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    # quadratic but vectorized; fastest below a few thousand points
    n = x.size
    out = np.empty(n, dtype=np.int64)
    step = max(1, 4_000_000 // max(n, 1))
    for lo in range(0, n, step):
        hi = min(lo + step, n)
        out[lo:hi] = np.sum((x[None, :] < x[lo:hi, None])
                            & (y[None, :] < y[lo:hi, None]), axis=1)
    return out


def dominance_counts(x, y) -> np.ndarray:
    """c[i] = #{j : x[j] < x[i] and y[j] < y[i]}.

    Small inputs use a vectorized quadratic sweep; larger ones an
    O(n log n) merge count.  Sorting by x and counting smaller-y-before
    would also count pairs tied in x; those are subtracted group by group.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.size
    if n <= _BROADCAST_MAX_N:
        return _dominance_broadcast(x, y)
    order = np.lexsort((y, x))
    ys = y[order]
    counts_sorted = _smaller_before_counts(ys)
    xs = x[order]
    # remove within-group pairs for runs of equal x
    start = 0
    for i in range(1, n + 1):
        if i == n or xs[i] != xs[start]:
            if i - start > 1:
                grp = ys[start:i]
                counts_sorted[start:i] -= _smaller_before_counts(grp)
            start = i
    counts = np.empty(n, dtype=np.int64)
    counts[order] = counts_sorted
    return counts


def dominance_counts_quadratic(x, y) -> np.ndarray:
    """O(n^2) oracle for :func:`dominance_counts`."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.size
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        out[i] = int(np.sum((x < x[i]) & (y < y[i])))
    return out


def empirical_kendall_distribution(x, y) -> KendallDistribution:
    """Pseudo-Kendall scores W_i = #{j != i : x_j < x_i, y_j < y_i}/(n-1),
    returned sorted.  The 1/(n-1) normalization keeps W_i inside [0,1]."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise DataError("empirical Kendall distribution needs equal-length vectors")
    if x.size < 2:
        raise DataError("need at least two observations")
    return KendallDistribution(dominance_counts(x, y) / (x.size - 1))


# --------------------------------------------------------------------------- #
# Cramer-von-Mises distances between Kendall distributions
# --------------------------------------------------------------------------- #


def _merged_grid(*w_arrays):
    pieces = [np.asarray(w).ravel() for w in w_arrays]
    grid = np.unique(np.concatenate([np.array([0.0, 1.0])] + pieces))
    return np.clip(grid, 0.0, 1.0)


def kendall_dist_distance(a: KendallDistribution, b: KendallDistribution) -> float:
    """Exact integral of (K_a - K_b)^2 over [0,1] for the two step
    functions; zero iff they are the same step function.  Distributions of
    different sizes are compared on the merged jump grid."""
    grid = _merged_grid(a.w, b.w)
    fa = a.cdf(grid[:-1])
    fb = b.cdf(grid[:-1])
    return float(np.sum(np.diff(grid) * (fa - fb) ** 2))


def mean_distance_to(a: KendallDistribution, b: KendallDistribution,
                     c: KendallDistribution) -> float:
    """Exact integral of ((K_a + K_b)/2 - K_c)^2 over [0,1]."""
    grid = _merged_grid(a.w, b.w, c.w)
    fm = 0.5 * (a.cdf(grid[:-1]) + b.cdf(grid[:-1]))
    fc = c.cdf(grid[:-1])
    return float(np.sum(np.diff(grid) * (fm - fc) ** 2))


def _indep_cdf_antiderivative(t: np.ndarray) -> np.ndarray:
    # antiderivative of K(t) = t - t ln t, with the t->0 limit 0
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    pos = t > 0
    tp = t[pos]
    out[pos] = 0.75 * tp**2 - 0.5 * tp**2 * np.log(tp)
    return out


def _indep_cdf_sq_antiderivative(t: np.ndarray) -> np.ndarray:
    # antiderivative of K(t)^2 = t^2 (1 - ln t)^2, with the t->0 limit 0
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    pos = t > 0
    tp = t[pos]
    lt = np.log(tp)
    out[pos] = tp**3 * (17.0 / 27.0 - (8.0 / 9.0) * lt + (1.0 / 3.0) * lt**2)
    return out


def independence_kendall_cdf(t) -> np.ndarray:
    """Kendall distribution of two independent variables:
    K(t) = t - t ln t on (0,1], K(0) = 0."""
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = t[pos] - t[pos] * np.log(t[pos])
    return np.clip(out, 0.0, 1.0)


def independence_deviation(x, y) -> float:
    """Exact Cramer-von-Mises distance between the empirical Kendall
    distribution of (x, y) and the independence Kendall distribution.

    The integral of (F - K)^2 is computed in closed form on each segment
    where the empirical CDF F is constant.
    """
    ekd = empirical_kendall_distribution(x, y)
    grid = _merged_grid(ekd.w)
    f = ekd.cdf(grid[:-1])
    t0, t1 = grid[:-1], grid[1:]
    const = f**2 * (t1 - t0)
    cross = -2.0 * f * (_indep_cdf_antiderivative(t1) - _indep_cdf_antiderivative(t0))
    square = _indep_cdf_sq_antiderivative(t1) - _indep_cdf_sq_antiderivative(t0)
    return float(np.sum(const + cross + square))


# --------------------------------------------------------------------------- #
# Hoeffding's D
# --------------------------------------------------------------------------- #


def _hoeffding_from_counts(r: np.ndarray, s: np.ndarray, c: np.ndarray) -> float:
    # c[i] = #{j: x_j < x_i, y_j < y_i}; comonotone tie-free data gives 1.0
    n = r.size
    d1 = float(np.sum(c * (c - 1)))
    d2 = float(np.sum((r - 1) * (r - 2) * (s - 1) * (s - 2)))
    d3 = float(np.sum((r - 2) * (s - 2) * c))
    num = 30.0 * ((n - 2) * (n - 3) * d1 + d2 - 2 * (n - 2) * d3)
    den = float(n * (n - 1) * (n - 2) * (n - 3) * (n - 4))
    return num / den


def hoeffding_d(x, y) -> float:
    """Hoeffding's D statistic (the classical rank-based estimator built
    from quadrant counts; requires n >= 5)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise DataError("hoeffding_d needs two equal-length vectors")
    if x.size < 5:
        raise DataError("hoeffding_d needs at least 5 observations")
    r = rankdata(x, method="average")
    s = rankdata(y, method="average")
    c = dominance_counts(x, y)
    return _hoeffding_from_counts(r, s, c)


def hoeffding_d_quadratic(x, y) -> float:
    """O(n^2) quadrant-count oracle for :func:`hoeffding_d`."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 5:
        raise DataError("hoeffding_d needs at least 5 observations")
    r = rankdata(x, method="average")
    s = rankdata(y, method="average")
    c = dominance_counts_quadratic(x, y)
    return _hoeffding_from_counts(r, s, c)


@lru_cache(maxsize=None)
def hoeffding_d_max(n: int) -> float:
    """Largest attainable D at sample size n (the comonotone value),
    computed once by the quadratic oracle."""
    grid = np.arange(1.0, n + 1)
    return hoeffding_d_quadratic(grid, grid)


# --------------------------------------------------------------------------- #
# Distance matrices
# --------------------------------------------------------------------------- #


def dependence_matrix(data, kind: str = KT) -> DependenceMatrix:
    """Pairwise dependence distances over the columns of ``data``.

    kt   : 1 - tau-hat
    hD   : D_max(n) - D-hat           (D_max = comonotone value at this n)
    kind : rescaled (max deviation - deviation) where deviation is the
           Cramer-von-Mises distance of the empirical Kendall distribution
           from independence

    All three shrink as dependence grows, which is what linkage needs.
    """
    if kind not in MATRIX_KINDS:
        raise DataError(f"unknown dependence matrix kind {kind!r}")
    obs = pseudo_observations(data)
    u = obs.u
    d = obs.d
    out = np.zeros((d, d))
    if kind == KT:
        for i, j in itertools.combinations(range(d), 2):
            out[i, j] = out[j, i] = 1.0 - kendall_tau(u[:, i], u[:, j])
    elif kind == HD:
        dmax = hoeffding_d_max(obs.n)
        for i, j in itertools.combinations(range(d), 2):
            val = max(dmax - hoeffding_d(u[:, i], u[:, j]), 0.0)
            out[i, j] = out[j, i] = val
    else:
        dev = np.zeros((d, d))
        for i, j in itertools.combinations(range(d), 2):
            dev[i, j] = dev[j, i] = independence_deviation(u[:, i], u[:, j])
        top = dev.max()
        if top > 0:
            for i, j in itertools.combinations(range(d), 2):
                out[i, j] = out[j, i] = (top - dev[i, j]) / top
    return DependenceMatrix(out, obs.columns, kind)
