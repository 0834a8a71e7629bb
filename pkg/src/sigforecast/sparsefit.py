"""Sparse linear classifiers for standardized feature matrices.

Feature matrices are (m, M): one row per feature, one column per sample,
matching the assembly layout.  Two fitters are provided:

* `fit_lasso`: weighted logistic loss with an L1 penalty, minimized by
  cyclic coordinate descent under the global 1/4 curvature majorizer, with
  active-set screening and warm starts along a descending lambda grid;
* `fit_subset_select`: cardinality-constrained ridge logistic regression via
  sub-gradient ascent on the Lagrangian dual (top-b support selection per
  iterate) followed by a ridge-penalized refit on the selected support.

Risk scores are linear; `ema_smooth` applies the per-segment exponential
moving average without mixing windows across segments.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.signal import lfilter
from scipy.special import expit

from .errors import (
    ClassMissingError,
    ConfigError,
    DataError,
    NumericalError,
    ShapeError,
)
from .prep import Scaler


@dataclass(frozen=True)
class LassoConfig:
    lambda_count: int = 100
    lambda_min_ratio: float = 1e-4
    tol: float = 1e-7  # relative objective decrease per outer step
    kkt_goal: float = 1e-6  # stationarity target when polishing
    kkt_polish: bool = False  # iterate to kkt_goal, not just objective tol
    max_iter: int = 100_000  # coordinate updates per solve
    dev_ratio_max: float = 0.999  # stop the path once this deviance
    # fraction is explained; smaller penalties inherit the coefficients
    dev_change_min: float = 1e-5  # stop the path when one lambda step
    # improves the deviance by less than this fraction of the null deviance
    fit_intercept: bool = False
    cv_forward_only: bool = False

    def __post_init__(self):
        if self.lambda_count < 1 or not 0 < self.lambda_min_ratio <= 1:
            raise ConfigError("invalid lambda grid")


@dataclass(frozen=True)
class SubsetConfig:
    eta0: float = 1.0  # subgradient step is eta0 / sqrt(t)
    max_iter: int = 500
    patience: int = 20  # stop once the support is stable this long

    def __post_init__(self):
        if self.eta0 <= 0 or self.max_iter < 1 or self.patience < 1:
            raise ConfigError("invalid subset-select configuration")


@dataclass
class ModelCoefficients:
    """Fitted linear model; support is the set of nonzero coefficients."""

    beta: np.ndarray
    intercept: float = 0.0
    feature_names: Optional[list[str]] = None
    scaler: Optional[Scaler] = None
    classifier: str = "lasso"
    lam: Optional[float] = None
    budget: Optional[int] = None
    ridge_lambda: Optional[float] = None

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.beta)

    @property
    def n_selected(self) -> int:
        return int(np.count_nonzero(self.beta))


@dataclass
class RiskScoreSeries:
    """Per-window scores with segment provenance for boundary-aware smoothing."""

    raw: np.ndarray
    segment_ids: np.ndarray
    alpha: Optional[float] = None
    smoothed: Optional[np.ndarray] = None


@dataclass
class CVSelection:
    model: ModelCoefficients
    lambda_opt: float
    lambda_index: int
    lambdas: np.ndarray
    mean_deviance: np.ndarray
    fold_deviance: np.ndarray  # (n_folds, n_lambda), NaN for skipped folds
    skipped_folds: list[int]


def logistic_loss(z, u):
    """log(1 + exp(-z u)), elementwise, stable for large |u|."""
    z = np.asarray(z, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    return np.logaddexp(0.0, -z * u)


def _check_inputs(X, z, weights):
    if X.ndim != 2:
        raise ShapeError(f"feature matrix must be (m, M), got {X.shape}")
    m, M = X.shape
    z = np.asarray(z)
    weights = np.asarray(weights, dtype=np.float64)
    if z.shape != (M,) or weights.shape != (M,):
        raise ShapeError("labels/weights length must match sample count")
    if not np.all(np.abs(z) == 1):
        raise DataError("labels must be in {-1, +1}")
    if np.any(weights <= 0):
        raise DataError("sample weights must be positive")
    if not np.isfinite(np.asarray(X).ravel()[:: max(1, (m * M) // 4096)]).all():
        # spot check: full validation of huge matrices is done where cheap
        raise DataError("non-finite feature values")
    return z.astype(np.float64), weights


def lambda_max(X, z, weights) -> float:
    """Smallest penalty with all-zero optimum: max_j |sum_k w z X_jk| / 2."""
    wz = (np.asarray(weights) * np.asarray(z)).astype(X.dtype, copy=False)
    return float(np.max(np.abs(X @ wz)) / 2.0)


def lambda_grid(lam_max: float, config: LassoConfig = LassoConfig()) -> np.ndarray:
    if lam_max <= 0:
        raise NumericalError("lambda_max must be positive to build a grid")
    if config.lambda_count == 1:
        return np.array([lam_max])
    return np.geomspace(lam_max, lam_max * config.lambda_min_ratio, config.lambda_count)


def _objective(u, z, weights, beta, lam, intercept_unused=0.0):
    return float(np.sum(weights * logistic_loss(z, u)) + lam * np.abs(beta).sum())


class _LassoState:
    """Warm-startable proximal-Newton coordinate descent on one dataset.

    Each outer step builds the local quadratic model of the weighted
    logistic loss at the current point (IRLS curvature, floored for
    stability) and minimizes model-plus-penalty by cyclic coordinate
    descent with closed-form soft-threshold updates; a backtracking step
    on the composite direction keeps the true objective non-increasing
    across outer iterations.
    """

    _CURV_FLOOR = 1e-6
    _MAX_INNER_CYCLES = 8

    def __init__(self, X, z, weights, config: LassoConfig):
        self.X = X
        self.z = z
        self.w = weights
        self.config = config
        m, M = X.shape
        self.beta = np.zeros(m)
        self.intercept = 0.0
        self.u = np.zeros(M)
        self.active: list[int] = []
        self.updates = 0

    def _residual(self):
        # d/du of the weighted loss: -w z sigmoid(-z u)
        return -self.w * self.z * expit(-self.z * self.u)

    def _curvatures(self):
        # per-sample IRLS weights w * sigmoid'(u), floored
        s = expit(self.z * self.u)
        return self.w * np.maximum(s * (1.0 - s), self._CURV_FLOOR)

    def _inner_descent(self, lam, kkt_goal):
        """Minimize the frozen quadratic model over the active set.

        Returns (delta_beta dict, delta_intercept, delta_u) of the proposed
        composite step.
        """
        d = self._curvatures()
        v = self._residual()  # model gradient in sample space at u0
        hess = {}
        for j in self.active:
            xj = np.asarray(self.X[j], dtype=np.float64)
            hess[j] = float((xj * xj) @ d)
        h0 = float(d.sum())
        beta0 = {j: self.beta[j] for j in self.active}
        int0 = self.intercept
        du = np.zeros(len(v))
        for _ in range(self._MAX_INNER_CYCLES):
            max_move = 0.0
            for j in self.active:
                xj = self.X[j]
                grad = float(xj @ v)
                hj = hess[j]
                if hj <= 0:
                    continue
                bj = self.beta[j]
                target = hj * bj - grad
                new = np.sign(target) * max(abs(target) - lam, 0.0) / hj
                delta = new - bj
                if delta != 0.0:
                    self.beta[j] = new
                    step = delta * np.asarray(xj, dtype=np.float64)
                    du += step
                    v += d * step
                    self.updates += 1
                    max_move = max(max_move, abs(delta) * hj)
            if self.config.fit_intercept:
                grad0 = float(v.sum())
                delta0 = -grad0 / h0
                if delta0 != 0.0:
                    self.intercept += delta0
                    du += delta0
                    v += d * delta0
                    self.updates += 1
                    max_move = max(max_move, abs(delta0) * h0)
            if max_move <= kkt_goal:
                break
        dbeta = {j: self.beta[j] - beta0[j] for j in self.active}
        dint = self.intercept - int0
        # restore; the caller applies the (possibly damped) step
        for j, b in beta0.items():
            self.beta[j] = b
        self.intercept = int0
        return dbeta, dint, du

    def _apply_step(self, dbeta, dint, du, t):
        for j, dv in dbeta.items():
            self.beta[j] += t * dv
        self.intercept += t * dint
        self.u += t * du

    def outer_step(self, lam: float, obj: float):
        """One damped proximal-Newton step; never increases the objective.

        Returns (new objective, whether the iterate moved).
        """
        dbeta, dint, du = self._inner_descent(lam, self.config.kkt_goal)
        moved = dint != 0.0 or any(v != 0.0 for v in dbeta.values())
        if not moved:
            return obj, False
        t = 1.0
        while t > 2.0**-20:
            self._apply_step(dbeta, dint, du, t)
            new_obj = _objective(self.u, self.z, self.w, self.beta, lam)
            if new_obj <= obj:
                return new_obj, True
            self._apply_step(dbeta, dint, du, -t)  # undo
            t *= 0.5
        return obj, False

    def solve(self, lam: float) -> bool:
        """Fit at one penalty; False when stalled or out of budget.

        A solve is stalled when several consecutive damped steps decrease
        the objective by barely more than the tolerance: the iterate is
        crawling in an ill-conditioned corner and smaller penalties will
        not produce a usefully different model.
        """
        cfg = self.config
        budget = self.updates + cfg.max_iter
        polish_rounds = 0
        stalled_steps = 0
        healthy = True
        while True:
            # outer proximal-Newton steps on the current active set
            obj = _objective(self.u, self.z, self.w, self.beta, lam)
            while self.active or cfg.fit_intercept:
                new_obj, moved = self.outer_step(lam, obj)
                decrease = obj - new_obj
                done = (not moved) or decrease <= cfg.tol * (1.0 + abs(new_obj))
                if not cfg.kkt_polish:
                    if moved and decrease <= 100 * cfg.tol * (1.0 + abs(new_obj)):
                        stalled_steps += 1
                        if stalled_steps >= 3 and not done:
                            healthy = False
                            done = True
                    else:
                        stalled_steps = 0
                obj = new_obj
                if done or self.updates >= budget:
                    break
            # screening: bring in coordinates violating |g_j| <= lam
            resid = self._residual()
            grad = self.X @ resid.astype(self.X.dtype, copy=False)
            grad = np.asarray(grad, dtype=np.float64)
            violations = np.abs(grad) > lam + 0.5 * cfg.kkt_goal
            violations[self.active] = False
            violations[self.beta != 0.0] = False
            if violations.any() and self.updates < budget:
                new = np.flatnonzero(violations)
                self.active = sorted(set(self.active) | set(new.tolist()))
                continue
            if cfg.kkt_polish and self.updates < budget and polish_rounds < 200:
                # gate on the true stationarity residuals
                nz = self.beta != 0.0
                res_zero = float(np.max(np.abs(grad[~nz]) - lam, initial=0.0))
                res_sup = float(
                    np.max(
                        np.abs(grad[nz] + lam * np.sign(self.beta[nz])), initial=0.0
                    )
                )
                if max(res_zero, res_sup) > cfg.kkt_goal:
                    polish_rounds += 1
                    continue
            break
        self.active = [j for j in self.active if self.beta[j] != 0.0]
        return healthy and self.updates < budget

    def kkt_residuals(self, lam):
        grad = self.X @ self._residual().astype(self.X.dtype, copy=False)
        grad = np.asarray(grad, dtype=np.float64)
        nz = self.beta != 0.0
        res_zero = max(0.0, float(np.max(np.abs(grad[~nz]) - lam, initial=0.0)))
        res_nonzero = float(
            np.max(np.abs(grad[nz] + lam * np.sign(self.beta[nz])), initial=0.0)
        )
        return res_zero, res_nonzero


def fit_lasso(
    X,
    z,
    weights,
    lam: float,
    config: LassoConfig = LassoConfig(),
    feature_names=None,
    scaler=None,
) -> ModelCoefficients:
    """L1-penalized weighted logistic regression at a single penalty."""
    z, weights = _check_inputs(X, z, weights)
    if lam < 0:
        raise ConfigError("lambda must be non-negative")
    state = _LassoState(X, z, weights, config)
    state.solve(lam)
    return ModelCoefficients(
        beta=state.beta,
        intercept=state.intercept,
        feature_names=feature_names,
        scaler=scaler,
        classifier="lasso",
        lam=lam,
    )


def solve_lasso_path(X, z, weights, lambdas, config: LassoConfig = LassoConfig()):
    """Warm-started solutions along a descending lambda grid.

    Returns (betas, intercepts): betas has shape (n_lambda, m).
    """
    z, weights = _check_inputs(X, z, weights)
    lambdas = np.asarray(lambdas, dtype=np.float64)
    if np.any(np.diff(lambdas) > 0):
        raise ConfigError("lambda grid must be non-increasing")
    state = _LassoState(X, z, weights, config)
    betas = np.empty((len(lambdas), X.shape[0]))
    intercepts = np.empty(len(lambdas))
    null_dev = float(np.sum(weights * logistic_loss(z, np.zeros(len(z)))))
    prev_explained = 0.0
    for i, lam in enumerate(lambdas):
        clean = state.solve(float(lam))
        betas[i] = state.beta
        intercepts[i] = state.intercept
        dev = float(np.sum(weights * logistic_loss(z, state.u)))
        explained = null_dev - dev
        saturated = null_dev > 0 and (
            explained / null_dev >= config.dev_ratio_max
            or (
                explained > 0
                and explained - prev_explained < config.dev_change_min * explained
            )
        )
        prev_explained = explained
        if saturated or not clean:
            # saturated or stalled: smaller penalties inherit the coefficients
            betas[i + 1 :] = state.beta
            intercepts[i + 1 :] = state.intercept
            break
    return betas, intercepts


def kkt_residuals(X, z, weights, model: ModelCoefficients, lam=None):
    """Stationarity residuals (zero-set, support) of a fitted lasso model."""
    z, weights = _check_inputs(X, z, weights)
    lam = model.lam if lam is None else lam
    u = model.beta @ X + model.intercept
    resid = -weights * z * expit(-z * np.asarray(u, dtype=np.float64))
    grad = np.asarray(X @ resid.astype(X.dtype, copy=False), dtype=np.float64)
    nz = model.beta != 0.0
    res_zero = max(0.0, float(np.max(np.abs(grad[~nz]) - lam, initial=0.0)))
    res_nonzero = float(
        np.max(np.abs(grad[nz] + lam * np.sign(model.beta[nz])), initial=0.0)
    )
    return res_zero, res_nonzero


def _weighted_mean_deviance(u, z, weights) -> float:
    w = np.asarray(weights)
    return float(np.sum(w * logistic_loss(z, u)) / np.sum(w))


def make_folds(fold_ids: np.ndarray, forward_only: bool = False):
    """(train_indices, held_indices) pairs from contiguous fold labels."""
    fold_ids = np.asarray(fold_ids)
    folds = np.unique(fold_ids[fold_ids >= 0])
    pairs = []
    for f in folds:
        held = np.flatnonzero(fold_ids == f)
        if forward_only:
            train = np.flatnonzero((fold_ids >= 0) & (fold_ids < f))
        else:
            train = np.flatnonzero((fold_ids >= 0) & (fold_ids != f))
        pairs.append((int(f), train, held))
    return pairs


def cv_select_lambda(
    X,
    z,
    weights,
    fold_ids,
    config: LassoConfig = LassoConfig(),
    lambdas=None,
    feature_names=None,
    scaler=None,
) -> CVSelection:
    """Tune lambda by blocked cross-validation, then refit on all folds.

    The grid is anchored at the full training set's lambda_max; each fold is
    scored by the weighted mean logistic deviance of its held-out block.
    Ties pick the largest (sparsest) lambda.  Folds whose training or
    held-out block is single-class are skipped with a warning.
    """
    z, weights = _check_inputs(X, z, weights)
    if lambdas is None:
        lambdas = lambda_grid(lambda_max(X, z, weights), config)
    lambdas = np.asarray(lambdas, dtype=np.float64)
    pairs = make_folds(fold_ids, config.cv_forward_only)
    if not pairs:
        raise DataError("no folds given")
    fold_dev = np.full((len(pairs), len(lambdas)), np.nan)
    skipped = []
    for row, (f, train, held) in enumerate(pairs):
        if (
            train.size == 0
            or held.size == 0
            or len(np.unique(z[train])) < 2
            or len(np.unique(z[held])) < 2
        ):
            skipped.append(f)
            warnings.warn(f"fold {f} skipped: single-class block", stacklevel=2)
            continue
        betas, intercepts = solve_lasso_path(
            X[:, train], z[train], weights[train], lambdas, config
        )
        held_X = X[:, held]
        scores = betas.astype(held_X.dtype, copy=False) @ held_X
        scores = np.asarray(scores, dtype=np.float64) + intercepts[:, None]
        for i in range(len(lambdas)):
            fold_dev[row, i] = _weighted_mean_deviance(
                scores[i], z[held], weights[held]
            )
    if len(skipped) == len(pairs):
        raise DataError("all cross-validation folds were skipped")
    mean_dev = np.nanmean(fold_dev, axis=0)
    best = int(np.argmin(mean_dev))
    lam_opt = float(lambdas[best])
    betas, intercepts = solve_lasso_path(
        X, z, weights, lambdas[: best + 1], config
    )
    model = ModelCoefficients(
        beta=betas[-1],
        intercept=float(intercepts[-1]),
        feature_names=feature_names,
        scaler=scaler,
        classifier="lasso",
        lam=lam_opt,
    )
    return CVSelection(
        model, lam_opt, best, lambdas, mean_dev, fold_dev, skipped
    )


# ---------------------------------------------------------------------------
# SubsetSelect


def _ridge_logistic_refit(Xs, z, weights, ridge_lambda, max_iter=100):
    """Damped-Newton minimizer of the ridge-penalized weighted logistic loss."""
    b, M = Xs.shape
    Xs64 = np.asarray(Xs, dtype=np.float64)
    beta = np.zeros(b)
    u = np.zeros(M)

    def objective(bvec, uvec):
        return float(
            np.sum(weights * logistic_loss(z, uvec))
            + 0.5 * bvec @ bvec / ridge_lambda
        )

    obj = objective(beta, u)
    for _ in range(max_iter):
        p = expit(-z * u)
        grad = Xs64 @ (-weights * z * p) + beta / ridge_lambda
        gnorm = float(np.linalg.norm(grad))
        if gnorm <= 1e-10 * (1.0 + float(np.linalg.norm(beta)) / ridge_lambda):
            break
        d = weights * p * (1.0 - p)
        hess = (Xs64 * d) @ Xs64.T
        hess[np.diag_indices_from(hess)] += 1.0 / ridge_lambda
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError as exc:  # pragma: no cover
            raise NumericalError(f"singular Hessian in ridge refit: {exc}")
        decrement = float(grad @ step)
        eta = 1.0
        while eta > 2.0**-30:
            cand = beta - eta * step
            ucand = u - eta * (step @ Xs64)
            new_obj = objective(cand, ucand)
            if new_obj <= obj - 1e-4 * eta * decrement:
                break
            eta *= 0.5
        beta = beta - eta * step
        u = u - eta * (step @ Xs64)
        new_obj = objective(beta, u)
        if obj - new_obj <= 1e-12 * (1.0 + abs(obj)):
            obj = new_obj
            break
        obj = new_obj
    return beta


def subset_objective(X, z, weights, beta, ridge_lambda) -> float:
    """Primal value: weighted logistic loss plus the ridge term."""
    u = np.asarray(beta @ X, dtype=np.float64)
    return float(
        np.sum(weights * logistic_loss(z, u)) + 0.5 * beta @ beta / ridge_lambda
    )


def fit_subset_select(
    X,
    z,
    weights,
    budget: int,
    ridge_lambda: Optional[float] = None,
    config: SubsetConfig = SubsetConfig(),
    feature_names=None,
    scaler=None,
) -> ModelCoefficients:
    """Budget-constrained ridge logistic regression.

    Sub-gradient ascent on the Lagrangian dual over sample variables alpha:
    each iterate scores features by (Lambda/2)(X_j . alpha)^2, keeps the
    top-b (ties to the lower index), and steps alpha along the gradient of
    the conjugate loss plus the support-restricted quadratic with step
    eta0/sqrt(t).  After the support stabilizes, the coefficients are
    refitted by ridge-penalized logistic regression on the support.
    """
    z, weights = _check_inputs(X, z, weights)
    m, M = X.shape
    if budget < 1 or budget > m:
        raise ConfigError(f"budget {budget} outside 1..{m}")
    if ridge_lambda is None:
        ridge_lambda = M ** (-0.5)
    if ridge_lambda <= 0:
        raise ConfigError("ridge scale must be positive")

    if budget >= m:
        candidates = [tuple(range(m))]
    else:
        eps = 1e-12
        s = np.full(M, 0.5)
        alpha = -z * weights * s
        visited: dict[tuple, None] = {}
        prev_support = None
        stable = 0
        for t in range(1, config.max_iter + 1):
            v = np.asarray(X @ alpha.astype(X.dtype, copy=False), dtype=np.float64)
            scores = 0.5 * ridge_lambda * v * v
            order = np.argsort(-scores, kind="stable")
            support = tuple(np.sort(order[:budget]).tolist())
            visited.pop(support, None)
            visited[support] = None  # most-recent position
            if support == prev_support:
                stable += 1
                if stable >= config.patience:
                    break
            else:
                stable = 0
            prev_support = support
            s_in = np.clip(s, eps, 1.0 - eps)
            grad = z * np.log(s_in / (1.0 - s_in))
            Xs = X[list(support)]
            inner = np.asarray(
                Xs @ alpha.astype(Xs.dtype, copy=False), dtype=np.float64
            )
            grad -= ridge_lambda * np.asarray(
                inner.astype(Xs.dtype, copy=False) @ Xs, dtype=np.float64
            )
            gnorm = float(np.linalg.norm(grad))
            if gnorm == 0.0:
                break
            # normalized direction: eta_t then measures the step length, so
            # the schedule matches the bounded dual domain
            alpha = alpha + (config.eta0 / np.sqrt(t)) * (grad / gnorm)
            s = np.clip(-z * alpha / weights, 0.0, 1.0)
            alpha = -z * weights * s
        # primal recovery: refit the recently visited candidate supports and
        # keep the best primal objective
        candidates = list(visited)[-64:]

    best_obj, best_beta = np.inf, None
    for support in candidates:
        idx = list(support)
        beta_s = _ridge_logistic_refit(
            np.asarray(X[idx], dtype=np.float64), z, weights, ridge_lambda
        )
        beta = np.zeros(m)
        beta[idx] = beta_s
        obj = subset_objective(X, z, weights, beta, ridge_lambda)
        if obj < best_obj:
            best_obj, best_beta = obj, beta
    return ModelCoefficients(
        beta=best_beta,
        intercept=0.0,
        feature_names=feature_names,
        scaler=scaler,
        classifier="subset",
        budget=budget,
        ridge_lambda=ridge_lambda,
    )


# ---------------------------------------------------------------------------
# scoring and smoothing


def predict_scores(model: ModelCoefficients, X) -> np.ndarray:
    """Raw risk scores beta . theta + intercept on standardized features."""
    X = np.asarray(X)
    if X.ndim != 2 or X.shape[0] != len(model.beta):
        raise ShapeError(
            f"feature matrix {X.shape} incompatible with {len(model.beta)} "
            "coefficients"
        )
    scores = model.beta.astype(X.dtype, copy=False) @ X
    return np.asarray(scores, dtype=np.float64) + model.intercept


def ema_smooth(
    series: RiskScoreSeries, alpha: float, recursive: bool = True
) -> RiskScoreSeries:
    """Exponential moving average within segments, reset at boundaries.

    Recursive form: s_1 = z_1, s_k = (z_k + alpha * s_{k-1}) / (1 + alpha).
    The single-step variant replaces s_{k-1} by the previous raw score.
    """
    if alpha < 0:
        raise ConfigError(f"alpha {alpha} must be non-negative")
    raw = np.asarray(series.raw, dtype=np.float64)
    seg = np.asarray(series.segment_ids)
    if raw.shape != seg.shape:
        raise ShapeError("scores and segment ids must align")
    out = np.empty_like(raw)
    if raw.size:
        boundaries = np.flatnonzero(np.diff(seg) != 0) + 1
        edges = np.concatenate(([0], boundaries, [raw.size]))
        scale = 1.0 / (1.0 + alpha)
        for lo, hi in zip(edges[:-1], edges[1:]):
            block = raw[lo:hi]
            if alpha == 0.0 or hi - lo == 1:
                out[lo:hi] = block
            elif recursive:
                zi = np.array([block[0] * alpha * scale])
                out[lo:hi] = lfilter([scale], [1.0, -alpha * scale], block, zi=zi)[0]
                out[lo] = block[0]  # s_1 = z_1 exactly
            else:
                out[lo] = block[0]
                out[lo + 1 : hi] = (block[1:] + alpha * block[:-1]) * scale
    return RiskScoreSeries(raw=raw, segment_ids=seg, alpha=alpha, smoothed=out)


# ---------------------------------------------------------------------------
# model file format


def save_model(
    path,
    model: ModelCoefficients,
    *,
    alpha: float,
    sigma_min: float,
    delta_sec: float,
    feature_set: str,
    provenance: str = "",
):
    """Write the text model format: header lines then one nonzero coef/line."""
    if model.feature_names is None or model.scaler is None:
        raise DataError("model must carry feature names and a scaler to be saved")
    lines = []
    if provenance:
        lines.append(f"# {provenance}")
    lines.append(f"classifier={model.classifier}")
    lines.append(f"alpha={alpha:.17g}")
    lines.append(f"sigma_min={sigma_min:.17g}")
    lines.append(f"delta_sec={delta_sec:.17g}")
    lines.append(f"feature_set={feature_set}")
    lines.append(f"intercept={model.intercept:.17g}")
    if model.lam is not None:
        lines.append(f"lambda={model.lam:.17g}")
    if model.budget is not None:
        lines.append(f"budget={model.budget}")
    if model.ridge_lambda is not None:
        lines.append(f"ridge_lambda={model.ridge_lambda:.17g}")
    for j in model.support:
        lines.append(
            f"{model.feature_names[j]}\t{model.beta[j]:.17g}"
            f"\t{model.scaler.mean[j]:.17g}\t{model.scaler.std[j]:.17g}"
        )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


@dataclass
class LoadedModel:
    classifier: str
    alpha: float
    sigma_min: float
    delta_sec: float
    feature_set: str
    intercept: float
    names: list[str]
    coefs: np.ndarray
    means: np.ndarray
    stds: np.ndarray
    extras: dict = field(default_factory=dict)

    def score_raw_features(self, values: np.ndarray, names: Sequence[str]):
        """Scores from raw (unstandardized) features matched by name."""
        index = {n: i for i, n in enumerate(names)}
        for n in self.names:
            if n not in index:
                raise DataError(f"feature-name mismatch: model needs {n!r}")
        if not len(self.names):
            return np.full(np.asarray(values).shape[1], self.intercept)
        rows = np.array([index[n] for n in self.names])
        sub = np.asarray(values[rows], dtype=np.float64)
        standardized = (sub - self.means[:, None]) / self.stds[:, None]
        return self.coefs @ standardized + self.intercept


def load_model(path) -> LoadedModel:
    header = {}
    names, coefs, means, stds = [], [], [], []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            if "\t" in line:
                parts = line.split("\t")
                if len(parts) != 4:
                    raise DataError(f"{path}: bad coefficient line {line!r}")
                names.append(parts[0])
                coefs.append(float(parts[1]))
                means.append(float(parts[2]))
                stds.append(float(parts[3]))
            elif "=" in line:
                key, value = line.split("=", 1)
                header[key] = value
            else:
                raise DataError(f"{path}: unparseable line {line!r}")
    required = ("classifier", "alpha", "sigma_min", "delta_sec", "feature_set",
                "intercept")
    missing = [k for k in required if k not in header]
    if missing:
        raise DataError(f"{path}: missing header keys {missing}")
    extras = {k: v for k, v in header.items() if k not in required}
    return LoadedModel(
        classifier=header["classifier"],
        alpha=float(header["alpha"]),
        sigma_min=float(header["sigma_min"]),
        delta_sec=float(header["delta_sec"]),
        feature_set=header["feature_set"],
        intercept=float(header["intercept"]),
        names=names,
        coefs=np.array(coefs),
        means=np.array(means),
        stds=np.array(stds),
        extras=extras,
    )
