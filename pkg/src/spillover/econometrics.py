"""
Estimators: Pearson correlation, VIF, OLS, global Moran's I with a
permutation test, and the SLX model with direct/indirect/total effects.

Least squares goes through a QR factorization. Inference is classical:
sigma^2 = RSS / (n - k) for standard errors, Student-t p-values, and a
Gaussian log-likelihood with the ML variance RSS / n, so that
AIC = 2k - 2 logL with k the number of coefficients.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import linalg, stats

from .weights import SpatialWeights, spatial_lag

VIF_SEVERE = 10.0

STAR_CONVENTIONS = {
    # threshold -> stars, checked in order with strict "<"
    "table2": ((0.01, "***"), (0.05, "**"), (0.10, "*")),
    "strict": ((0.001, "***"), (0.01, "**"), (0.05, "*")),
}


class RankDeficientError(np.linalg.LinAlgError):
    """Design matrix does not have full column rank."""


def significance_stars(p, convention="table2"):
    """Stars for a p-value: '***', '**', '*' or ''.

    ``table2`` uses 1%/5%/10%; ``strict`` uses 0.1%/1%/5%.
    """
    if p is None or not np.isfinite(p):
        return ""
    for cut, stars in STAR_CONVENTIONS[convention]:
        if p < cut:
            return stars
    return ""


def pearson_correlation(x, y):
    """Sample correlation and its two-sided t-test p-value."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.size
    if n != y.size:
        raise ValueError("x and y differ in length")
    if n < 3:
        raise ValueError("need at least 3 observations")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = dx @ dx, dy @ dy
    if sxx == 0 or syy == 0:
        raise ValueError("zero variance")
    r = float(np.clip((dx @ dy) / np.sqrt(sxx * syy), -1.0, 1.0))
    if abs(r) == 1.0:
        return r, 0.0
    t = r * np.sqrt((n - 2) / (1.0 - r * r))
    return r, float(2 * stats.t.sf(abs(t), n - 2))


@dataclass
class RegressionFit:
    params: np.ndarray
    bse: np.ndarray
    tvalues: np.ndarray
    pvalues: np.ndarray
    cov_params: np.ndarray
    resid: np.ndarray
    fitted: np.ndarray
    rsquared: float
    rsquared_adj: float
    llf: float
    aic: float
    nobs: int
    k: int
    names: list = field(default_factory=list)

    @property
    def df_resid(self):
        return self.nobs - self.k

    def summary_frame(self):
        return pd.DataFrame({"coef": self.params, "se": self.bse, "t": self.tvalues,
                             "p": self.pvalues}, index=self.names)

    def to_dict(self):
        return {
            "coefficients": {n: {"coef": float(b), "se": float(s), "t": float(t), "p": float(p)}
                             for n, b, s, t, p in zip(self.names, self.params, self.bse,
                                                      self.tvalues, self.pvalues)},
            "r2": self.rsquared, "adj_r2": self.rsquared_adj, "log_likelihood": self.llf,
            "aic": self.aic, "n": self.nobs, "k": self.k,
        }


def _lstsq_qr(Z, y):
    n, k = Z.shape
    if n <= k:
        raise RankDeficientError(f"need n > k (n={n}, k={k})")
    q, r = linalg.qr(Z, mode="economic")
    diag = np.abs(np.diag(r))
    tol = diag.max() * max(n, k) * np.finfo(float).eps if diag.size else 0.0
    if diag.size == 0 or diag.min() <= tol or np.linalg.matrix_rank(Z) < k:
        raise RankDeficientError(f"design matrix is rank deficient ({k} columns)")
    beta = linalg.solve_triangular(r, q.T @ y)
    rinv = linalg.solve_triangular(r, np.eye(k))
    return beta, rinv @ rinv.T


def fit_ols(y, X=None, names=None, add_constant=True) -> RegressionFit:
    """Ordinary least squares.

    Parameters
    ----------
    y : array_like, shape (n,)
    X : array_like, shape (n, p), optional
        Regressors without the constant. None fits an intercept-only model.
    names : list of str, optional
        Regressor names; ``'const'`` is prepended when a constant is added.
    """
    y = np.asarray(y, dtype=float)
    n = y.size
    X = np.empty((n, 0)) if X is None else np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if names is None:
        names = [f"x{i + 1}" for i in range(X.shape[1])]
    names = list(names)
    if add_constant:
        X = np.column_stack([np.ones(n), X])
        names = ["const"] + names
    k = X.shape[1]
    beta, xtx_inv = _lstsq_qr(X, y)
    fitted = X @ beta
    resid = y - fitted
    rss = float(resid @ resid)
    sigma2 = rss / (n - k)
    cov = sigma2 * xtx_inv
    bse = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(bse > 0, beta / np.where(bse > 0, bse, 1.0),
                     np.where(beta == 0, 0.0, np.copysign(np.inf, beta)))
    p = 2 * stats.t.sf(np.abs(t), n - k)
    if add_constant:
        tss = float(((y - y.mean()) ** 2).sum())
    else:
        tss = float(y @ y)
    r2 = 1.0 - rss / tss if tss > 0 else np.nan
    dof_model = n - 1 if add_constant else n
    r2_adj = 1.0 - (1.0 - r2) * dof_model / (n - k) if tss > 0 else np.nan
    with np.errstate(divide="ignore"):
        llf = -0.5 * n * (np.log(2 * np.pi) + np.log(rss / n) + 1.0)
    aic = 2.0 * k - 2.0 * llf
    return RegressionFit(beta, bse, t, p, cov, resid, fitted, float(r2), float(r2_adj),
                         float(llf), float(aic), n, k, names)


def vif(X, names=None, threshold=VIF_SEVERE) -> pd.DataFrame:
    """Variance inflation factor of each column against the others.

    Exactly collinear columns get ``inf`` rather than an error.

    Returns
    -------
    DataFrame with columns vif, severe (vif >= threshold).
    """
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    if p < 2:
        raise ValueError("VIF needs at least two columns")
    if n <= p:
        raise ValueError("VIF needs more rows than columns")
    names = list(names) if names is not None else [f"x{i + 1}" for i in range(p)]
    out = []
    for j in range(p):
        yj = X[:, j]
        others = np.column_stack([np.ones(n), np.delete(X, j, axis=1)])
        coef, *_ = np.linalg.lstsq(others, yj, rcond=None)
        resid = yj - others @ coef
        tss = float(((yj - yj.mean()) ** 2).sum())
        rss = float(resid @ resid)
        if tss == 0 or rss <= 1e-12 * tss:
            out.append(np.inf)
        else:
            out.append(tss / rss)
    v = np.array(out)
    return pd.DataFrame({"vif": v, "severe": v >= threshold}, index=names)


@dataclass
class MoranResult:
    I: float
    p_value: float
    permutations: int
    alternative: str
    expected: float
    null_mean: float
    null_std: float
    z_sim: float

    def to_dict(self):
        return {"I": self.I, "p_value": self.p_value, "permutations": self.permutations,
                "alternative": self.alternative, "expected": self.expected,
                "null_mean": self.null_mean, "null_std": self.null_std, "z_sim": self.z_sim}


def _as_operator(W):
    m = W.matrix if isinstance(W, SpatialWeights) else W
    if hasattr(m, "toarray"):
        density = m.nnz / float(m.shape[0] * m.shape[1])
        # dense BLAS is faster once the permutation block meets a dense-ish W
        return m.toarray() if density > 0.05 else m
    return np.asarray(m, dtype=float)


def moran_statistic(x, W):
    """Global Moran's I, n / S0 * z'Wz / z'z."""
    x = np.asarray(x, dtype=float)
    m = _as_operator(W)
    z = x - x.mean()
    zz = float(z @ z)
    if zz == 0:
        raise ValueError("Moran's I undefined for a constant variable")
    s0 = float(m.sum())
    return x.size / s0 * float(z @ (m @ z)) / zz


def morans_i(x, W, permutations=999, seed=None, alternative="two-sided") -> MoranResult:
    """Global Moran's I with a conditional-randomization (permutation) test.

    Two-sided p = (1 + #{|I_perm| >= |I_obs|}) / (1 + permutations);
    'greater' and 'less' count one tail. The same `seed` reproduces the
    p-value exactly.
    """
    x = np.asarray(x, dtype=float)
    m = _as_operator(W)
    if m.shape[0] != x.size:
        raise ValueError("x and W are not on the same index")
    z = x - x.mean()
    zz = float(z @ z)
    if zz == 0:
        raise ValueError("Moran's I undefined for a constant variable")
    n = x.size
    scale = n / float(m.sum()) / zz
    obs = scale * float(z @ (m @ z))
    expected = -1.0 / (n - 1)
    if permutations <= 0:
        return MoranResult(obs, np.nan, 0, alternative, expected, np.nan, np.nan, np.nan)
    rng = np.random.default_rng(seed)
    sims = np.empty(permutations)
    block = max(1, min(permutations, 2_000_000 // max(n, 1)))
    done = 0
    while done < permutations:
        b = min(block, permutations - done)
        Z = rng.permuted(np.tile(z, (b, 1)), axis=1).T
        sims[done:done + b] = scale * np.einsum("ij,ij->j", Z, m @ Z)
        done += b
    if alternative == "two-sided":
        extreme = np.sum(np.abs(sims) >= abs(obs))
    elif alternative == "greater":
        extreme = np.sum(sims >= obs)
    elif alternative == "less":
        extreme = np.sum(sims <= obs)
    else:
        raise ValueError(f"unknown alternative {alternative!r}")
    p = (1.0 + extreme) / (1.0 + permutations)
    sd = float(sims.std(ddof=1)) if permutations > 1 else np.nan
    zsim = (obs - sims.mean()) / sd if sd and sd > 0 else np.nan
    return MoranResult(obs, float(p), permutations, alternative, expected,
                       float(sims.mean()), sd, float(zsim))


@dataclass
class SlxFit:
    fit: RegressionFit
    effects: pd.DataFrame
    names: list
    dropped_lags: list

    @property
    def rho(self):
        """Coefficients on the lag block, keyed by variable."""
        return self.effects["indirect"]

    def to_dict(self):
        d = self.fit.to_dict()
        d["effects"] = {v: {c: _jsonable(row[c]) for c in self.effects.columns}
                        for v, row in self.effects.iterrows()}
        d["dropped_lags"] = list(self.dropped_lags)
        return d


def _jsonable(v):
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    return float(v)


def slx_from_lags(y, X, WX, names=None) -> SlxFit:
    """SLX fit on a precomputed lag block (y = b0 + X b + WX theta + e).

    Lag columns with no variation are dropped with a warning: they are
    either all zero (isolates everywhere) or collapse into the intercept.
    """
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    WX = np.asarray(WX, dtype=float)
    if X.ndim == 1:
        X, WX = X[:, None], WX[:, None]
    p = X.shape[1]
    names = list(names) if names is not None else [f"x{i + 1}" for i in range(p)]
    keep = [c for c in range(p) if np.ptp(WX[:, c]) > 0]
    dropped = [names[c] for c in range(p) if c not in keep]
    if dropped:
        warnings.warn(f"dropping constant spatial lag column(s): {dropped}", RuntimeWarning,
                      stacklevel=2)
    lag_names = [f"W_{names[c]}" for c in keep]
    fit = fit_ols(y, np.column_stack([X, WX[:, keep]]), names=names + lag_names)
    cov = fit.cov_params
    df = fit.df_resid
    rows = []
    for c in range(p):
        bi = 1 + c
        direct, dvar = fit.params[bi], cov[bi, bi]
        if c in keep:
            li = 1 + p + keep.index(c)
            indirect, ivar, cv = fit.params[li], cov[li, li], cov[bi, li]
        else:
            indirect, ivar, cv = 0.0, 0.0, 0.0
        total = direct + indirect
        tvar = dvar + ivar + 2.0 * cv
        rows.append((direct, np.sqrt(max(dvar, 0.0)), indirect, np.sqrt(max(ivar, 0.0)),
                     total, np.sqrt(max(tvar, 0.0)), c not in keep))
    eff = pd.DataFrame(rows, index=pd.Index(names, name="variable"),
                       columns=["direct", "direct_se", "indirect", "indirect_se",
                                "total", "total_se", "lag_dropped"])
    for col in ("direct", "indirect", "total"):
        eff[f"{col}_p"] = _t_pvalues(eff[col].to_numpy(), eff[f"{col}_se"].to_numpy(), df)
    eff.loc[eff["lag_dropped"], "indirect_p"] = np.nan
    eff = eff[["direct", "direct_se", "direct_p", "indirect", "indirect_se", "indirect_p",
               "total", "total_se", "total_p", "lag_dropped"]]
    return SlxFit(fit, eff, names, dropped)


def _t_pvalues(est, se, df):
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(se > 0, est / np.where(se > 0, se, 1.0),
                     np.where(est == 0, 0.0, np.copysign(np.inf, est)))
    return 2 * stats.t.sf(np.abs(t), df)


def fit_slx(y, X, W, names=None) -> SlxFit:
    """Spatial lag of X model; W is a :class:`SpatialWeights` or matrix."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return slx_from_lags(y, X, spatial_lag(W, X), names)
