"""Poisson regression with a log link, fitted by IRLS."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.special import gammaln, xlogy
from scipy.stats import norm

from .network import ModelingTable

MODEL_TERMS = {
    "m1": ("const", "traffic", "max_speed", "road_type_primary", "road_type_secondary"),
    "m2": ("const", "visible_percentage", "traffic", "max_speed", "road_type_primary", "road_type_secondary"),
}


class GlmError(ValueError):
    pass


@dataclass(frozen=True)
class DesignMatrix:
    X: np.ndarray
    y: np.ndarray
    names: tuple[str, ...]

    def __post_init__(self):
        if self.X.ndim != 2 or self.X.shape[0] != self.y.shape[0]:
            raise GlmError("design and response shapes disagree")
        if self.X.shape[1] != len(self.names):
            raise GlmError("column names do not match design width")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.y))):
            raise GlmError("design contains non-finite entries")
        if np.any(self.y < 0) or np.any(self.y != np.round(self.y)):
            raise GlmError("response must be non-negative integer counts")

    @property
    def n_obs(self) -> int:
        return int(self.X.shape[0])


def build_design(table: ModelingTable, model: str) -> DesignMatrix:
    """Columns in model order with a leading intercept; response is accident_count."""
    if model in ("1", "2"):
        model = "m" + model
    if model not in MODEL_TERMS:
        raise GlmError(f"unknown model {model!r}")
    if len(table) == 0:
        raise GlmError("empty modeling table")
    names = MODEL_TERMS[model]
    cols = [np.ones(len(table))]
    for name in names[1:]:
        try:
            cols.append(table.column(name))
        except KeyError as exc:
            raise GlmError(f"schema error: column {exc.args[0]!r} unavailable") from None
    return DesignMatrix(np.column_stack(cols), table.column("accident_count"), names)


def independent_columns(X: np.ndarray, tol: float = 1e-9) -> list[int]:
    """Greedy left-to-right selection of linearly independent columns.

    A column is dropped when its residual after projection onto the columns
    already kept is below ``tol`` times its own norm, so of two collinear
    columns the leftmost survives.
    """
    kept: list[int] = []
    Q = np.zeros((X.shape[0], 0))
    for j in range(X.shape[1]):
        x = X[:, j]
        nx = np.linalg.norm(x)
        if nx == 0:
            continue
        r = x - Q @ (Q.T @ x)
        # second pass of Gram-Schmidt for stability
        r = r - Q @ (Q.T @ r)
        if np.linalg.norm(r) <= tol * nx:
            continue
        kept.append(j)
        Q = np.column_stack([Q, r / np.linalg.norm(r)])
    return kept


def log_likelihood(y: np.ndarray, mu: np.ndarray) -> float:
    return float(np.sum(xlogy(y, mu) - mu - gammaln(y + 1)))


def deviance(y: np.ndarray, mu: np.ndarray) -> float:
    return float(2.0 * np.sum(xlogy(y, y / mu) - (y - mu)))


def pearson_chi2(y: np.ndarray, mu: np.ndarray) -> float:
    return float(np.sum((y - mu) ** 2 / mu))


def pseudo_r2_cs(ll_model: float, ll_null: float, n: int) -> float:
    """Cox-Snell pseudo R-squared."""
    return 1.0 - math.exp(-(2.0 / n) * (ll_model - ll_null))


def implied_null_loglik(r2: float, ll_model: float, n: int) -> float:
    """Null log-likelihood that gives Cox-Snell ``r2`` for ``ll_model``."""
    return ll_model + (n / 2.0) * math.log(1.0 - r2)


def aic(ll: float, k: int) -> float:
    return -2.0 * ll + 2.0 * k


def bic_standard(ll: float, k: int, n: int) -> float:
    return -2.0 * ll + k * math.log(n)


def bic_deviance(dev: float, df_residual: int, n: int) -> float:
    """Deviance-based BIC, ``deviance - df_residual * ln(n)``."""
    return dev - df_residual * math.log(n)


@dataclass(frozen=True)
class Coefficient:
    name: str
    estimate: float
    std_err: float = math.nan
    z: float = math.nan
    p: float = math.nan


@dataclass(frozen=True)
class GlmFit:
    coefficients: tuple[Coefficient, ...]
    dropped_columns: tuple[str, ...]
    log_likelihood: float
    deviance: float
    pearson_chi2: float
    pseudo_r2_cs: float
    aic: float
    bic_deviance: float
    bic_standard: float
    df_residual: int
    n_obs: int
    iterations: int
    converged: bool
    null_log_likelihood: float = math.nan
    max_abs_score: float = math.nan
    cov_params: tuple[tuple[float, ...], ...] = field(default=(), repr=False)

    @property
    def k(self) -> int:
        return len(self.coefficients)

    def params(self) -> dict[str, float]:
        return {c.name: c.estimate for c in self.coefficients}

    def to_dict(self) -> dict:
        d = asdict(self)
        d["coefficients"] = [asdict(c) for c in self.coefficients]
        d["dropped_columns"] = list(self.dropped_columns)
        d["cov_params"] = [list(r) for r in self.cov_params]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GlmFit":
        d = dict(d)
        d["coefficients"] = tuple(Coefficient(**c) for c in d["coefficients"])
        d["dropped_columns"] = tuple(d["dropped_columns"])
        d["cov_params"] = tuple(tuple(r) for r in d["cov_params"])
        return cls(**d)


def _irls(X: np.ndarray, y: np.ndarray, tol: float, max_iter: int):
    eta = np.log(y + 0.5)
    mu = np.exp(eta)
    beta = None
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        z = eta + (y - mu) / mu
        w = np.sqrt(mu)
        new, *_ = np.linalg.lstsq(X * w[:, None], z * w, rcond=None)
        eta = np.clip(X @ new, -700.0, 700.0)
        mu = np.exp(eta)
        if beta is not None and np.max(np.abs(new - beta)) < tol:
            beta = new
            converged = True
            break
        beta = new
    return beta, mu, it, converged


def fit_poisson_irls(
    design: DesignMatrix,
    tol: float = 1e-8,
    max_iter: int = 25,
    null_fit: bool = True,
) -> GlmFit:
    """Fit by iteratively reweighted least squares from eta = log(y + 0.5).

    Exactly collinear columns are dropped (rightmost first) before fitting.
    Non-convergence is reported through ``converged`` rather than raised.
    """
    X, y = design.X, design.y.astype(float)
    if not np.any(y > 0):
        raise GlmError("all-zero response")
    keep = independent_columns(X)
    names = [design.names[j] for j in keep]
    dropped = tuple(n for j, n in enumerate(design.names) if j not in keep)
    Xk = X[:, keep]
    n, k = Xk.shape
    if n <= k:
        raise GlmError(f"need more observations ({n}) than retained columns ({k})")

    beta, mu, iterations, converged = _irls(Xk, y, tol, max_iter)
    ll = log_likelihood(y, mu)
    dev = deviance(y, mu)
    df_resid = n - k

    if null_fit:
        null = fit_poisson_irls(DesignMatrix(np.ones((n, 1)), y, ("const",)), tol, max_iter, null_fit=False)
        ll_null = null.log_likelihood
    else:
        ll_null = ll
    score = Xk.T @ (y - mu)

    fit = GlmFit(
        coefficients=tuple(Coefficient(nm, float(b)) for nm, b in zip(names, beta)),
        dropped_columns=dropped,
        log_likelihood=ll,
        deviance=dev,
        pearson_chi2=pearson_chi2(y, mu),
        pseudo_r2_cs=pseudo_r2_cs(ll, ll_null, n),
        aic=aic(ll, k),
        bic_deviance=bic_deviance(dev, df_resid, n),
        bic_standard=bic_standard(ll, k, n),
        df_residual=df_resid,
        n_obs=n,
        iterations=iterations,
        converged=converged,
        null_log_likelihood=ll_null,
        max_abs_score=float(np.max(np.abs(score))),
        cov_params=_covariance(Xk, mu),
    )
    return wald_stats(fit)


def _covariance(X: np.ndarray, mu: np.ndarray) -> tuple[tuple[float, ...], ...]:
    info = X.T @ (X * mu[:, None])
    try:
        cov = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        return ()
    return tuple(tuple(float(v) for v in row) for row in cov)


def wald_stats(fit: GlmFit) -> GlmFit:
    """Standard errors, z statistics and two-sided normal p-values."""
    if not fit.cov_params:
        raise GlmError("singular information matrix")
    cov = np.asarray(fit.cov_params)
    var = np.diag(cov)
    if np.any(~np.isfinite(var)) or np.any(var <= 0):
        raise GlmError("singular information matrix")
    coefs = []
    for c, v in zip(fit.coefficients, var):
        se = math.sqrt(v)
        z = c.estimate / se
        coefs.append(Coefficient(c.name, c.estimate, se, z, float(2.0 * norm.sf(abs(z)))))
    return replace(fit, coefficients=tuple(coefs))


@dataclass(frozen=True)
class ModelComparison:
    fits: tuple[GlmFit, GlmFit]
    delta_aic: float
    delta_bic_deviance: float
    delta_bic_standard: float
    preferred: str

    def to_dict(self) -> dict:
        return {
            "delta_aic": self.delta_aic,
            "delta_bic_deviance": self.delta_bic_deviance,
            "delta_bic_standard": self.delta_bic_standard,
            "preferred": self.preferred,
        }


def information_deltas(aic1: float, aic2: float, bic1: float, bic2: float) -> tuple[float, float]:
    """Model 1 minus model 2; positive values favour model 2."""
    return aic1 - aic2, bic1 - bic2


def compare_models(fit1: GlmFit, fit2: GlmFit, names: Sequence[str] = ("model_1", "model_2")) -> ModelComparison:
    if fit1.n_obs != fit2.n_obs:
        raise GlmError("fits use different observations")
    d_aic, d_bic = information_deltas(fit1.aic, fit2.aic, fit1.bic_deviance, fit2.bic_deviance)
    return ModelComparison(
        fits=(fit1, fit2),
        delta_aic=d_aic,
        delta_bic_deviance=d_bic,
        delta_bic_standard=fit1.bic_standard - fit2.bic_standard,
        preferred=names[1] if fit2.aic < fit1.aic else names[0],
    )
