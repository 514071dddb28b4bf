"""Score-based matching, weighting schemes, and covariate balance diagnostics.

Matching is 1:1 without replacement.  Greedy nearest-neighbor processes
treated subjects in descending score order under a caliper of
caliper_multiplier * std(scores); optimal matching solves the same problem as
a minimum-cost assignment where unmatched treated subjects fall back to
dummy columns.  Genetic matching searches a positive diagonal metric over
standardized covariates plus the score, scoring candidates by the mean
absolute standardized mean difference after matching.

Weighting schemes, with e = score and Z the arm indicator:

    ATE       w = Z/e + (1-Z)/(1-e)
    ATT       w = Z + (1-Z) * e/(1-e)
    overlap   w = Z*(1-e) + (1-Z)*e
    matching  w = min(e, 1-e) / (Z*e + (1-Z)*(1-e))
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.stats import chi2 as chi2_dist
from scipy.stats import t as t_dist

from .data import Cohort

SCHEMES = ("ate", "att", "overlap", "matching")


@dataclass(frozen=True)
class MatchSet:
    """1:1 pairs of (treated index, control index) plus leftover treated."""

    pairs: tuple[tuple[int, int], ...]
    unmatched_treated: tuple[int, ...]
    caliper: float

    def matched_indices(self) -> np.ndarray:
        """All subject indices in the matched subset, treated then controls."""
        if not self.pairs:
            return np.array([], dtype=int)
        arr = np.asarray(self.pairs, dtype=int)
        return np.concatenate([arr[:, 0], arr[:, 1]])


@dataclass(frozen=True)
class WeightVector:
    weights: np.ndarray
    scheme: str

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if np.any(~np.isfinite(w)) or np.any(w < 0):
            raise ValueError("weights must be finite and nonnegative")
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)


def _split_groups(z) -> tuple[np.ndarray, np.ndarray]:
    z = np.asarray(z, dtype=float)
    treated = np.flatnonzero(z == 1.0)
    control = np.flatnonzero(z == 0.0)
    if len(treated) == 0 or len(control) == 0:
        raise ValueError("both groups must be non-empty")
    return treated, control


def _weighted_mean_var(values, weights):
    """Weighted mean and variance with the effective-sample-size dof correction."""
    wsum = weights.sum()
    mean = float(weights @ values / wsum)
    n_eff = wsum**2 / float(weights @ weights)
    if n_eff <= 1:
        return mean, 0.0, n_eff
    var = float(weights @ (values - mean) ** 2 / wsum) * n_eff / (n_eff - 1.0)
    return mean, var, n_eff


def smd(values, z, weights=None) -> float:
    """Signed standardized mean difference (treated minus control).

    Continuous covariates pool the two group variances; dichotomous ones
    (values within {0,1}) use p*(1-p) in place of the sample variance.
    """
    values = np.asarray(values, dtype=float)
    treated, control = _split_groups(z)
    weights = np.ones(len(values)) if weights is None else np.asarray(weights, dtype=float)
    binary = set(np.unique(values)) <= {0.0, 1.0}

    stats = []
    for idx in (treated, control):
        mean, var, _ = _weighted_mean_var(values[idx], weights[idx])
        if binary:
            var = mean * (1.0 - mean)
        stats.append((mean, var))
    (mt, vt), (mc, vc) = stats
    pooled = (vt + vc) / 2.0
    if pooled <= 0:
        if mt == mc:
            return 0.0
        raise ValueError("degenerate covariate: zero pooled variance with unequal means")
    return (mt - mc) / math.sqrt(pooled)


def compute_weights(ps, z, scheme: str) -> WeightVector:
    """Per-subject balancing weights for the chosen scheme."""
    ps = np.asarray(ps, dtype=float)
    z = np.asarray(z, dtype=float)
    if np.any(ps <= 0.0) or np.any(ps >= 1.0):
        raise ValueError("scores must lie strictly inside (0, 1)")
    if scheme == "ate":
        w = z / ps + (1.0 - z) / (1.0 - ps)
    elif scheme == "att":
        w = z + (1.0 - z) * ps / (1.0 - ps)
    elif scheme == "overlap":
        w = z * (1.0 - ps) + (1.0 - z) * ps
    elif scheme == "matching":
        w = np.minimum(ps, 1.0 - ps) / (z * ps + (1.0 - z) * (1.0 - ps))
    else:
        raise ValueError(f"unknown scheme {scheme!r}; choose from {SCHEMES}")
    return WeightVector(w, scheme)


def score_caliper(ps, multiplier: float = 0.25) -> float:
    """Maximum allowed score distance inside a pair: multiplier * std of scores."""
    return float(multiplier * np.std(np.asarray(ps, dtype=float), ddof=1))


def _greedy_match(order, distances, caliper):
    """Greedy 1:1 match given treated processing order and a distance matrix."""
    pairs = []
    unmatched = []
    work = np.array(distances, dtype=float)  # taken controls get retired in place
    for row, _ in order:
        d = work[row]
        best = int(np.argmin(d))  # ties resolve to the lowest control index
        if np.isfinite(d[best]) and d[best] <= caliper:
            work[:, best] = np.inf
            pairs.append((row, best))
        else:
            unmatched.append(row)
    return pairs, unmatched


def nearest_neighbor_match(ps, z, caliper_multiplier: float = 0.25) -> MatchSet:
    """Greedy 1:1 matching on the score, treated visited in descending score."""
    ps = np.asarray(ps, dtype=float)
    treated, control = _split_groups(z)
    caliper = score_caliper(ps, caliper_multiplier)
    distances = np.abs(ps[treated][:, None] - ps[control][None, :])
    order = sorted(enumerate(ps[treated]), key=lambda kv: (-kv[1], kv[0]))
    rows, unmatched = _greedy_match(order, distances, caliper)
    pairs = tuple((int(treated[r]), int(control[c])) for r, c in rows)
    return MatchSet(pairs, tuple(int(treated[r]) for r in unmatched), caliper)


def optimal_match(ps, z, caliper_multiplier: float = 0.25) -> MatchSet:
    """Minimum total |score difference| 1:1 assignment under the caliper.

    Solved exactly as a rectangular assignment problem.  Each treated subject
    also sees a private dummy column priced above any full real assignment,
    so infeasible subjects are left unmatched rather than forced out of
    caliper.
    """
    ps = np.asarray(ps, dtype=float)
    treated, control = _split_groups(z)
    caliper = score_caliper(ps, caliper_multiplier)
    nt, nc = len(treated), len(control)

    real = np.abs(ps[treated][:, None] - ps[control][None, :])
    dummy_cost = caliper * nt + 1.0
    forbid = 2.0 * dummy_cost + 1.0
    cost = np.full((nt, nc + nt), forbid)
    cost[:, :nc] = np.where(real <= caliper, real, forbid)
    cost[:, nc:] = np.where(np.eye(nt, dtype=bool), dummy_cost, forbid)

    rows, cols = linear_sum_assignment(cost)
    pairs = []
    unmatched = []
    for r, c in zip(rows, cols):
        if c < nc and real[r, c] <= caliper:
            pairs.append((int(treated[r]), int(control[c])))
        else:
            unmatched.append(int(treated[r]))
    pairs.sort()
    return MatchSet(tuple(pairs), tuple(sorted(unmatched)), caliper)


def _standardize(matrix):
    matrix = np.asarray(matrix, dtype=float)
    std = matrix.std(axis=0, ddof=1)
    std[std == 0] = 1.0
    return (matrix - matrix.mean(axis=0)) / std


def _metric_match(features, ps, z, metric_weights, caliper):
    """Greedy NN match in the weighted Euclidean metric, score caliper applied.

    The caliper keeps the match selective: without it, balanced arm sizes
    would always match the whole cohort and balance could not change.
    """
    ps = np.asarray(ps, dtype=float)
    treated, control = _split_groups(z)
    scaled = features * np.sqrt(metric_weights)
    a, b = scaled[treated], scaled[control]
    sq = (a * a).sum(axis=1)[:, None] + (b * b).sum(axis=1)[None, :] - 2.0 * (a @ b.T)
    distances = np.sqrt(np.clip(sq, 0.0, None))
    distances[np.abs(ps[treated][:, None] - ps[control][None, :]) > caliper] = np.inf
    order = sorted(enumerate(ps[treated]), key=lambda kv: (-kv[1], kv[0]))
    rows, unmatched = _greedy_match(order, distances, math.inf)
    pairs = tuple((int(treated[r]), int(control[c])) for r, c in rows)
    return MatchSet(pairs, tuple(int(treated[r]) for r in unmatched), caliper)


def _mean_abs_smd(covariates, z, match: MatchSet) -> float:
    idx = match.matched_indices()
    if len(idx) == 0:
        return math.inf
    sub_cov = covariates[idx]
    sub_z = np.asarray(z)[idx]
    total = 0.0
    for j in range(covariates.shape[1]):
        col = sub_cov[:, j]
        t_vals = col[sub_z == 1]
        c_vals = col[sub_z == 0]
        mt, mc = t_vals.mean(), c_vals.mean()
        if set(np.unique(covariates[:, j])) <= {0.0, 1.0}:
            vt, vc = mt * (1 - mt), mc * (1 - mc)
        else:
            vt = t_vals.var(ddof=1) if len(t_vals) > 1 else 0.0
            vc = c_vals.var(ddof=1) if len(c_vals) > 1 else 0.0
        pooled = (vt + vc) / 2.0
        if pooled <= 0:
            total += 0.0 if mt == mc else math.inf
        else:
            total += abs(mt - mc) / math.sqrt(pooled)
    return total / covariates.shape[1]


def genetic_match(
    covariates,
    z,
    ps,
    population: int = 100,
    generations: int = 30,
    seed: int = 0,
    caliper_multiplier: float = 0.25,
) -> MatchSet:
    """Evolve a diagonal metric over (standardized covariates, score) that
    minimizes the mean |SMD| after greedy matching in that metric.

    Tournament selection of size 3, uniform crossover at rate 0.5, log-normal
    gene mutation with sigma 0.2, one elite per generation; the unit metric is
    seeded into the initial population, so the result never balances worse
    than plain nearest-neighbor matching in standardized coordinates.
    """
    covariates = np.asarray(covariates, dtype=float)
    if covariates.ndim != 2 or covariates.shape[1] < 1:
        raise ValueError("covariates must be a non-empty 2-d matrix")
    if population < 4:
        raise ValueError("population must be >= 4")
    ps = np.asarray(ps, dtype=float)
    rng = np.random.default_rng(seed)
    features = _standardize(np.column_stack([covariates, ps]))
    d = features.shape[1]
    caliper = score_caliper(ps, caliper_multiplier)

    def evaluate(genome):
        return _mean_abs_smd(covariates, z, _metric_match(features, ps, z, genome, caliper))

    genomes = np.exp(rng.normal(0.0, 0.5, size=(population, d)))
    genomes[0] = 1.0  # identity-metric candidate
    fitness = np.array([evaluate(g) for g in genomes])

    for _ in range(generations):
        elite = int(np.argmin(fitness))
        children = [genomes[elite].copy()]
        while len(children) < population:
            picks = rng.integers(0, population, size=3)
            parent_a = genomes[picks[np.argmin(fitness[picks])]]
            picks = rng.integers(0, population, size=3)
            parent_b = genomes[picks[np.argmin(fitness[picks])]]
            if rng.random() < 0.5:
                take = rng.random(d) < 0.5
                child = np.where(take, parent_a, parent_b)
            else:
                child = parent_a.copy()
            child = child * np.exp(rng.normal(0.0, 0.2, size=d))
            children.append(child)
        genomes = np.asarray(children)
        fitness = np.array([evaluate(g) for g in genomes])

    best = genomes[int(np.argmin(fitness))]
    return _metric_match(features, ps, z, best, caliper)


# ---------------------------------------------------------------------------
# balance tests
# ---------------------------------------------------------------------------


def two_sample_t_test(values, z, weights=None) -> float:
    """Welch's unequal-variance t-test p-value; weighted runs replace group
    sizes with effective sample sizes (sum w)^2 / sum w^2."""
    values = np.asarray(values, dtype=float)
    treated, control = _split_groups(z)
    if len(treated) < 2 or len(control) < 2:
        raise ValueError("each group needs at least two observations")
    weights = np.ones(len(values)) if weights is None else np.asarray(weights, dtype=float)

    (mt, vt, nt) = _weighted_mean_var(values[treated], weights[treated])
    (mc, vc, nc) = _weighted_mean_var(values[control], weights[control])
    se2 = vt / nt + vc / nc
    if se2 <= 0:
        raise ValueError("zero variance in both groups")
    t_stat = (mt - mc) / math.sqrt(se2)
    df_num = se2**2
    df_den = (vt / nt) ** 2 / (nt - 1.0) + (vc / nc) ** 2 / (nc - 1.0)
    df = df_num / df_den if df_den > 0 else nt + nc - 2.0
    return float(2.0 * t_dist.sf(abs(t_stat), df))


def chi_square_test(categories, z, weights=None) -> float:
    """Pearson chi-square on the category-by-arm table, df = k - 1."""
    categories = np.asarray(categories)
    z = np.asarray(z, dtype=float)
    weights = np.ones(len(z)) if weights is None else np.asarray(weights, dtype=float)
    levels = np.unique(categories)

    table = np.zeros((len(levels), 2))
    for i, level in enumerate(levels):
        for g, arm in enumerate((0.0, 1.0)):
            table[i, g] = weights[(categories == level) & (z == arm)].sum()
    table = table[table.sum(axis=1) > 0]
    if len(table) < 2:
        raise ValueError("need at least two non-empty categories")

    total = table.sum()
    expected = np.outer(table.sum(axis=1), table.sum(axis=0)) / total
    if np.any(expected <= 0):
        raise ValueError("expected counts must be positive")
    stat = float(np.sum((table - expected) ** 2 / expected))
    df = len(table) - 1
    return float(chi2_dist.sf(stat, df))


def chi_square_statistic(categories, z, weights=None) -> float:
    """The raw Pearson statistic (exposed for fixture checks)."""
    categories = np.asarray(categories)
    z = np.asarray(z, dtype=float)
    weights = np.ones(len(z)) if weights is None else np.asarray(weights, dtype=float)
    levels = np.unique(categories)
    table = np.zeros((len(levels), 2))
    for i, level in enumerate(levels):
        for g, arm in enumerate((0.0, 1.0)):
            table[i, g] = weights[(categories == level) & (z == arm)].sum()
    table = table[table.sum(axis=1) > 0]
    total = table.sum()
    expected = np.outer(table.sum(axis=1), table.sum(axis=0)) / total
    return float(np.sum((table - expected) ** 2 / expected))


# ---------------------------------------------------------------------------
# balance report
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BalanceRow:
    covariate: str
    smd_before: float
    smd_after: float
    test: str
    p_before: float
    p_after: float


@dataclass(frozen=True)
class BalanceReport:
    rows: tuple[BalanceRow, ...]
    mean_abs_smd_before: float
    mean_abs_smd_after: float

    def as_records(self) -> list[dict]:
        return [
            {
                "covariate": r.covariate,
                "smd_before": r.smd_before,
                "smd_after": r.smd_after,
                "test": r.test,
                "p_before": r.p_before,
                "p_after": r.p_after,
            }
            for r in self.rows
        ]


def balance_report(
    cohort: Cohort,
    ps,
    adjustment: MatchSet | WeightVector,
    covariates: Sequence[str],
) -> BalanceReport:
    """Per-covariate SMD and test p-values before and after adjustment.

    Matching adjustments evaluate the matched subset with unit weights;
    weighting adjustments reuse the full sample with the scheme's weights.
    Continuous covariates get Welch's t-test, binary and ordinal ones the
    chi-square test.
    """
    z = cohort.z
    if isinstance(adjustment, WeightVector):
        if len(adjustment.weights) != cohort.n:
            raise ValueError("weight vector length does not match the cohort")
        after_args = dict(indices=np.arange(cohort.n), weights=adjustment.weights)
    elif isinstance(adjustment, MatchSet):
        idx = adjustment.matched_indices()
        if len(idx) and idx.max() >= cohort.n:
            raise ValueError("match indices exceed the cohort")
        after_args = dict(indices=idx, weights=None)
    else:
        raise TypeError("adjustment must be a MatchSet or WeightVector")

    rows = []
    for name in covariates:
        spec = cohort.schema.variable(name)
        values = cohort.columns[name]
        test = "t-test" if spec.kind == "continuous" else "chisq"
        before_smd = smd(values, z)
        before_p = (
            two_sample_t_test(values, z)
            if test == "t-test"
            else chi_square_test(values, z)
        )
        idx = after_args["indices"]
        w = after_args["weights"]
        sub_vals, sub_z = values[idx], z[idx]
        sub_w = None if w is None else w[idx]
        after_smd = smd(sub_vals, sub_z, sub_w)
        after_p = (
            two_sample_t_test(sub_vals, sub_z, sub_w)
            if test == "t-test"
            else chi_square_test(sub_vals, sub_z, sub_w)
        )
        rows.append(BalanceRow(name, before_smd, after_smd, test, before_p, after_p))

    mean_before = float(np.mean([abs(r.smd_before) for r in rows]))
    mean_after = float(np.mean([abs(r.smd_after) for r in rows]))
    return BalanceReport(tuple(rows), mean_before, mean_after)
