"""
Spatial reach, spatial decay and heterogeneity of the decay field.

The reach sweep refits the SLX model under inverse-distance weights
thresholded at each distance D on a grid and records the effect
decomposition per D. Lags come from :class:`~spillover.weights.DistanceBandLags`,
so the whole grid costs one pass over the sorted pairs plus one small
least-squares solve per threshold.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import stats

from .econometrics import RankDeficientError, slx_from_lags
from .weights import DistanceBandLags, spatial_lag

logger = logging.getLogger(__name__)

PROFILE_COLUMNS = ["D", "variable", "direct", "indirect", "total",
                   "p_direct", "p_indirect", "p_total", "skipped"]


def threshold_grid(start=0.1, stop=70.0, step=0.1):
    """Inclusive grid start, start+step, ..., stop without drift."""
    if step <= 0:
        raise ValueError("step must be positive")
    count = int(np.floor((stop - start) / step + 1e-9)) + 1
    return np.round(start + step * np.arange(count), 10)


@dataclass
class ReachProfile:
    """Effect decomposition as a function of the distance threshold.

    `table` is long-format with :data:`PROFILE_COLUMNS`; `reference` holds
    the indirect effect of each variable under unthresholded weights,
    whose sign fixes the extremum orientation.
    """
    table: pd.DataFrame
    reference: dict = field(default_factory=dict)
    power: float = 1.0

    @property
    def thresholds(self):
        return np.unique(self.table["D"].to_numpy())

    @property
    def variables(self):
        return list(dict.fromkeys(self.table["variable"]))

    def curve(self, variable):
        sub = self.table.loc[(self.table["variable"] == variable) & ~self.table["skipped"]]
        return sub.sort_values("D").reset_index(drop=True)

    def summary(self, alpha=0.10):
        rows = []
        for v in self.variables:
            cutoff, extremum = locate_cutoff_and_extremum(self, v, alpha=alpha)
            rows.append({"variable": v, "cutoff_distance": cutoff,
                         "extremum_distance": extremum,
                         "orientation": "min" if self.reference.get(v, -1.0) < 0 else "max",
                         "reference_indirect": self.reference.get(v, np.nan)})
        return pd.DataFrame(rows)


def sweep_spatial_reach(y, X, coords, thresholds=None, names=None, focal=None,
                        power=1.0) -> ReachProfile:
    """Fit SLX at every threshold D of `thresholds`.

    Parameters
    ----------
    y : array_like, shape (n,)
    X : array_like, shape (n, p)
    coords : array_like, shape (n, 2)
        Planar coordinates in miles.
    thresholds : array_like, optional
        Strictly increasing distances; defaults to 0.1..70 by 0.1.
    names : list of str, optional
    focal : list of str, optional
        Variables to record; all by default.
    power : float
        Distance exponent of the weights (2 for inverse square).

    Thresholds whose weights are empty or whose augmented design is
    rank deficient are kept in the table with ``skipped=True``.
    """
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    names = list(names) if names is not None else [f"x{i + 1}" for i in range(X.shape[1])]
    focal = list(focal) if focal is not None else names
    missing = set(focal) - set(names)
    if missing:
        raise KeyError(f"focal variables not in design: {sorted(missing)}")
    thresholds = threshold_grid() if thresholds is None else np.asarray(thresholds, dtype=float)
    band = DistanceBandLags(coords, power=power)

    records = []
    for D, wx, _, n_pairs in band.lags(X, thresholds):
        fit = None
        if n_pairs > 0:
            try:
                fit = _quiet_slx(y, X, wx, names)
            except RankDeficientError:
                logger.debug("threshold %.2f: rank-deficient design", D)
        for v in focal:
            if fit is None:
                records.append((D, v, np.nan, np.nan, np.nan, np.nan, np.nan, np.nan, True))
                continue
            e = fit.effects.loc[v]
            records.append((D, v, e["direct"], e["indirect"], e["total"],
                            e["direct_p"], e["indirect_p"], e["total_p"], False))
    table = pd.DataFrame(records, columns=PROFILE_COLUMNS)

    reference = {}
    try:
        _, wx_all, _, _ = next(band.lags(X, [band.max_distance]))
        ref = _quiet_slx(y, X, wx_all, names)
        reference = {v: float(ref.effects.loc[v, "indirect"]) for v in focal}
    except RankDeficientError:
        logger.warning("unthresholded SLX fit is rank deficient; extremum orientation "
                       "falls back to 'min'")
    return ReachProfile(table, reference, power)


def _quiet_slx(y, X, wx, names):
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return slx_from_lags(y, X, wx, names)


def locate_cutoff_and_extremum(profile, variable, alpha=0.10, orientation=None):
    """Cut-off and extremum distances of one variable's indirect effect.

    The cut-off is the largest D whose indirect-effect p-value is at most
    `alpha` (significance need not be contiguous from the start of the
    grid); None when never significant. The extremum is the D of the
    smallest indirect effect for inhibitory variables and of the largest
    for facilitating ones. Orientation comes from the sign of the
    unthresholded indirect effect unless given ('min' or 'max').
    """
    curve = profile.curve(variable)
    if curve.empty:
        return None, None
    sig = curve.loc[curve["p_indirect"] <= alpha, "D"]
    cutoff = float(sig.max()) if len(sig) else None
    if orientation is None:
        orientation = "min" if profile.reference.get(variable, -1.0) < 0 else "max"
    vals = curve["indirect"].to_numpy()
    idx = int(np.argmin(vals)) if orientation == "min" else int(np.argmax(vals))
    return cutoff, float(curve["D"].iloc[idx])


@dataclass
class DecayField:
    """Per-CBG decay coefficients k; excluded units carry a reason instead."""
    k: pd.Series
    excluded: pd.Series
    rr0: float
    weighted_damage: pd.Series
    rr: pd.Series
    feature: str = "nc"
    mode: str = "neighbors"

    def to_frame(self):
        ids = self.rr.index
        return pd.DataFrame({"cbg_id": ids,
                             "k": self.k.reindex(ids).to_numpy(),
                             "excluded_reason": self.excluded.reindex(ids).fillna("").to_numpy()})

    def identity_residual(self):
        """max |RR_i - RR0 / (1 + k_i * S_i)| over included units."""
        if self.k.empty:
            return 0.0
        s = self.weighted_damage.loc[self.k.index]
        back = self.rr0 / (1.0 + self.k * s)
        return float(np.max(np.abs(back - self.rr.loc[self.k.index])))


def compute_decay_coefficients(rr, damage, W, rr0=None, mode="neighbors",
                               feature="nc") -> DecayField:
    """k_i = (RR0 - RR_i) / (RR_i * S_i).

    ``mode='neighbors'`` uses S_i = sum_j w_ij * damage_j; ``mode='literal'``
    reproduces the own-unit reading S_i = damage_i * sum_j w_ij. RR0
    defaults to the largest recovery rate. Units with RR_i = 0, a missing
    RR_i or S_i = 0 are excluded with a reason, never given NaN.
    """
    rr = pd.Series(rr, dtype=float)
    damage = pd.Series(np.asarray(damage, dtype=float), index=rr.index)
    if rr.empty:
        raise ValueError("empty recovery-rate field")
    if mode == "neighbors":
        s = spatial_lag(W, damage.to_numpy())
    elif mode == "literal":
        m = W.matrix if hasattr(W, "matrix") else W
        s = np.asarray(m.sum(axis=1)).ravel() * damage.to_numpy()
    else:
        raise ValueError(f"unknown decay mode {mode!r}")
    s = pd.Series(np.asarray(s, dtype=float), index=rr.index)
    if rr0 is None:
        rr0 = float(rr.max())
    reasons = pd.Series("", index=rr.index, dtype=object)
    reasons[rr.isna()] = "missing recovery rate"
    reasons[(reasons == "") & (rr == 0)] = "zero recovery rate"
    reasons[(reasons == "") & (s == 0)] = "zero weighted damage"
    ok = reasons == ""
    k = (rr0 - rr[ok]) / (rr[ok] * s[ok])
    return DecayField(k.rename("k"), reasons[~ok], float(rr0), s, rr, feature, mode)


def ecdf(values):
    """Empirical CDF as (sorted distinct values, F at each value)."""
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0:
        raise ValueError("empty sample")
    xs, counts = np.unique(v, return_counts=True)
    return xs, np.cumsum(counts) / v.size


def one_way_anova(*groups):
    """F = MSB / MSW with (g - 1, N - g) degrees of freedom."""
    groups = [np.asarray(g, dtype=float) for g in groups]
    if len(groups) < 2 or any(g.size == 0 for g in groups):
        raise ValueError("ANOVA needs at least two nonempty groups")
    allv = np.concatenate(groups)
    N, g = allv.size, len(groups)
    if N <= g:
        raise ValueError("ANOVA needs more observations than groups")
    grand = allv.mean()
    ssb = sum(x.size * (x.mean() - grand) ** 2 for x in groups)
    ssw = sum(((x - x.mean()) ** 2).sum() for x in groups)
    df1, df2 = g - 1, N - g
    if ssw == 0:
        f = 0.0 if ssb == 0 else np.inf
    else:
        f = (ssb / df1) / (ssw / df2)
    p = float(stats.f.sf(f, df1, df2)) if np.isfinite(f) else 0.0
    return float(f), (df1, df2), p


@dataclass
class HeterogeneityResult:
    feature: str
    split_value: float
    groups: dict
    cdfs: dict
    f_stat: float
    df: tuple
    p_value: float

    def to_dict(self):
        return {
            "feature": self.feature, "split_value": self.split_value,
            "group_sizes": {k: int(len(v)) for k, v in self.groups.items()},
            "group_means": {k: float(np.mean(v)) for k, v in self.groups.items()},
            "ecdf": {k: {"x": xs.tolist(), "F": fs.tolist()} for k, (xs, fs) in self.cdfs.items()},
            "anova": {"F": self.f_stat, "df": list(self.df), "p_value": self.p_value},
        }


def heterogeneity_test(k, feature, name="feature") -> HeterogeneityResult:
    """Split units at the feature mean (high: above the mean) and compare k.

    Raises
    ------
    ValueError
        When one side of the split is empty, e.g. a constant feature.
    """
    k = pd.Series(k, dtype=float)
    feature = pd.Series(feature, dtype=float).reindex(k.index)
    keep = k.notna() & feature.notna()
    k, feature = k[keep], feature[keep]
    split = float(feature.mean())
    high = k[feature > split].to_numpy()
    low = k[feature <= split].to_numpy()
    if high.size == 0 or low.size == 0:
        raise ValueError(f"mean split of {name!r} leaves an empty group")
    f, df, p = one_way_anova(low, high)
    return HeterogeneityResult(name, split, {"low": low, "high": high},
                               {"low": ecdf(low), "high": ecdf(high)}, f, df, p)
