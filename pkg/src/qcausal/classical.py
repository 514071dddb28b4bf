"""Classical treatment-probability baselines.

Logistic regression is fit by Newton-Raphson (IRLS) maximum likelihood with a
ridge fallback when quasi-separation sends coefficients off to infinity.  The
boosted-tree model runs stage-wise gradient boosting on binomial deviance:
each stage fits a depth-limited least-squares regression tree to the residual
y - p and the ensemble score is F0 + learning_rate * sum of tree outputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SEPARATION_BOUND = 30.0
RIDGE_FALLBACK = 1e-6


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


def _design(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("X must be a 2-d row matrix")
    return np.hstack([np.ones((len(X), 1)), X])


@dataclass
class LogisticModel:
    coefficients: np.ndarray  # intercept first
    converged: bool
    n_iter: int
    separation: bool = False


def _newton_logistic(design, y, tol, max_iter, ridge):
    beta = np.zeros(design.shape[1])
    for it in range(1, max_iter + 1):
        p = _sigmoid(design @ beta)
        score = design.T @ (y - p) - ridge * beta
        if np.max(np.abs(score)) < tol:
            return beta, True, it
        if np.max(np.abs(beta)) > SEPARATION_BOUND:
            return beta, False, it
        w = np.clip(p * (1.0 - p), 1e-12, None)
        info = design.T @ (design * w[:, None]) + ridge * np.eye(design.shape[1])
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(info, score, rcond=None)[0]
        beta = beta + step
    return beta, False, max_iter


def fit_logistic(X, y, max_iter: int = 100, tol: float = 1e-9) -> LogisticModel:
    """Maximum-likelihood fit; converged when max |score| < tol.

    Separation (any |beta_j| above 30) triggers a ridge-penalized refit with
    penalty 1e-6 and sets the separation flag; coefficients are then capped at
    the bound so downstream probabilities stay off {0, 1}.
    """
    design = _design(X)
    y = np.asarray(y, dtype=float)
    if len(y) != len(design):
        raise ValueError("X and y must have equal row counts")
    if len(y) < 2 or len(np.unique(y)) < 2:
        raise ValueError("need at least two rows with both classes present")

    beta, converged, n_iter = _newton_logistic(design, y, tol, max_iter, ridge=0.0)
    separation = np.max(np.abs(beta)) > SEPARATION_BOUND or not np.all(np.isfinite(beta))
    if separation:
        beta, converged, n_iter = _newton_logistic(
            design, y, tol, max_iter, ridge=RIDGE_FALLBACK
        )
        beta = np.clip(beta, -SEPARATION_BOUND, SEPARATION_BOUND)
        converged = False
    return LogisticModel(beta, converged, n_iter, separation)


def predict_logistic(model: LogisticModel, x):
    """Inverse-logit of the linear predictor; accepts one row or a matrix."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    design = _design(x[None, :] if single else x)
    if design.shape[1] != len(model.coefficients):
        raise ValueError(
            f"expected {len(model.coefficients) - 1} features, got {design.shape[1] - 1}"
        )
    p = _sigmoid(design @ model.coefficients)
    return float(p[0]) if single else p


def logistic_nll(beta, X, y) -> float:
    """Negative log-likelihood at beta (intercept first); grid-search helper."""
    eta = _design(X) @ np.asarray(beta, dtype=float)
    y = np.asarray(y, dtype=float)
    return float(np.sum(np.logaddexp(0.0, eta) - y * eta))


# ---------------------------------------------------------------------------
# gradient boosted regression trees on binomial deviance
# ---------------------------------------------------------------------------


@dataclass
class TreeNode:
    """Axis-aligned binary split; a node with feature=None is a leaf."""

    feature: int | None = None
    threshold: float = 0.0
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    value: float = 0.0


def _best_split(X, residuals):
    """Exact greedy SSE split; ties broken by lowest feature then threshold."""
    n, d = X.shape
    total = residuals.sum()
    best = None  # (sse, feature, threshold)
    base_sse = float(np.sum((residuals - residuals.mean()) ** 2))
    for j in range(d):
        order = np.argsort(X[:, j], kind="stable")
        xs = X[order, j]
        rs = residuals[order]
        csum = np.cumsum(rs)
        for i in range(n - 1):
            if xs[i] == xs[i + 1]:
                continue
            left_n = i + 1
            left_sum = csum[i]
            right_sum = total - left_sum
            # SSE = const - sum_children (group sum)^2 / group size
            gain = left_sum**2 / left_n + right_sum**2 / (n - left_n)
            sse = base_sse - (gain - total**2 / n)
            threshold = (xs[i] + xs[i + 1]) / 2.0
            if best is None or sse < best[0] - 1e-15:
                best = (sse, j, threshold)
    return best


def _fit_tree(X, residuals, depth) -> TreeNode:
    node = TreeNode(value=float(residuals.mean()))
    if depth == 0 or len(X) < 2 or np.allclose(residuals, residuals[0]):
        return node
    found = _best_split(X, residuals)
    if found is None:
        return node
    _, j, threshold = found
    mask = X[:, j] <= threshold
    node.feature = j
    node.threshold = threshold
    node.left = _fit_tree(X[mask], residuals[mask], depth - 1)
    node.right = _fit_tree(X[~mask], residuals[~mask], depth - 1)
    return node


def _tree_value(node: TreeNode, row) -> float:
    while node.feature is not None:
        node = node.left if row[node.feature] <= node.threshold else node.right
    return node.value


@dataclass
class GbmModel:
    trees: list[TreeNode] = field(default_factory=list)
    learning_rate: float = 0.1
    initial_score: float = 0.0


def fit_gbm(
    X,
    y,
    n_trees: int = 100,
    depth: int = 3,
    learning_rate: float = 0.1,
    seed: int = 0,
) -> GbmModel:
    """Stage-wise boosting; deterministic (the seed is accepted for interface
    stability but the exact greedy split search uses no randomness)."""
    del seed
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if n_trees < 1:
        raise ValueError("n_trees must be >= 1")
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("X must be 2-d with one label per row")
    ybar = y.mean()
    if ybar in (0.0, 1.0):
        raise ValueError("both classes must be present")

    f0 = float(np.log(ybar / (1.0 - ybar)))
    scores = np.full(len(y), f0)
    trees: list[TreeNode] = []
    for _ in range(n_trees):
        residuals = y - _sigmoid(scores)
        tree = _fit_tree(X, residuals, depth)
        trees.append(tree)
        scores = scores + learning_rate * np.array([_tree_value(tree, row) for row in X])
    return GbmModel(trees, learning_rate, f0)


def predict_gbm(model: GbmModel, x):
    """sigmoid(F0 + learning_rate * sum of tree outputs); row or matrix input."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    rows = x[None, :] if single else x
    scores = np.full(len(rows), model.initial_score)
    for tree in model.trees:
        scores = scores + model.learning_rate * np.array(
            [_tree_value(tree, row) for row in rows]
        )
    p = _sigmoid(scores)
    return float(p[0]) if single else p


def gbm_training_deviance(model: GbmModel, X, y, n_trees: int | None = None) -> float:
    """Binomial deviance of the first n_trees stages (all stages by default)."""
    sub = GbmModel(model.trees[: len(model.trees) if n_trees is None else n_trees],
                   model.learning_rate, model.initial_score)
    p = np.clip(predict_gbm(sub, np.asarray(X, dtype=float)), 1e-12, 1 - 1e-12)
    y = np.asarray(y, dtype=float)
    return float(-2.0 * np.sum(y * np.log(p) + (1 - y) * np.log1p(-p)))
