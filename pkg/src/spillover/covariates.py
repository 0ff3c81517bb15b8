"""
Control variables: population, POI and road densities, minority and
income segregation (dissimilarity index), and the human mobility index.
"""
from __future__ import annotations

import warnings

import numpy as np
import pandas as pd

CONTROL_COLUMNS = ["pop", "ms", "is", "hmi", "poi", "rd"]


def min_max_scale(values):
    """Scale to [0, 1]. A constant vector maps to zeros with a warning."""
    x = np.asarray(values, dtype=float)
    if x.size == 0:
        raise ValueError("cannot scale an empty vector")
    lo, hi = np.min(x), np.max(x)
    if hi == lo:
        warnings.warn("min-max scaling of a constant vector; returning zeros",
                      RuntimeWarning, stacklevel=2)
        out = np.zeros_like(x)
    else:
        out = (x - lo) / (hi - lo)
    if isinstance(values, pd.Series):
        return pd.Series(out, index=values.index, name=values.name)
    return out


def dissimilarity_index(focus, reference):
    """DI = 1/2 * sum_i |x_i / X - y_i / Y| over subunits i.

    Parameters
    ----------
    focus, reference : array_like
        Counts of the focus and reference groups per subunit.
    """
    x = np.asarray(focus, dtype=float)
    y = np.asarray(reference, dtype=float)
    if x.shape != y.shape:
        raise ValueError("group count vectors differ in length")
    if (x < 0).any() or (y < 0).any():
        raise ValueError("group counts must be nonnegative")
    X, Y = x.sum(), y.sum()
    if X <= 0 or Y <= 0:
        raise ValueError("dissimilarity index undefined: a group total is zero")
    return 0.5 * float(np.abs(x / X - y / Y).sum())


def tract_dissimilarity(census: pd.DataFrame, focus_cols, reference_cols) -> pd.Series:
    """DI of each tract over its member CBGs, broadcast back to the CBGs.

    Tracts where either group total is zero get NaN.
    """
    focus = census[list(focus_cols)].sum(axis=1)
    ref = census[list(reference_cols)].sum(axis=1)
    values = {}
    for tract, idx in census.groupby("tract_id").groups.items():
        try:
            values[tract] = dissimilarity_index(focus.loc[idx], ref.loc[idx])
        except ValueError:
            values[tract] = np.nan
    return pd.Series(census["tract_id"].map(values).to_numpy(dtype=float),
                     index=pd.Index(census["cbg_id"], name="cbg_id"))


def minority_segregation(census):
    return tract_dissimilarity(census, ["pop_nhblack", "pop_nhasian"], ["pop_nhwhite"])


def income_segregation(census):
    return tract_dissimilarity(census, ["income_q1", "income_q2"], ["income_q3", "income_q4"])


def count_visits(stops: pd.DataFrame, start, end, min_dwell_hours=4.0) -> pd.Series:
    """Visits (stops of at least `min_dwell_hours`) per destination CBG in a window."""
    date = stops["start"].dt.tz_convert("UTC").dt.tz_localize(None).dt.normalize()
    sel = ((date >= pd.Timestamp(start)) & (date <= pd.Timestamp(end))
           & (stops["dwell_hours"] >= min_dwell_hours))
    return stops.loc[sel].groupby("cbg_id").size()


def human_mobility_index(visit_counts: pd.Series, days=28, cbg_ids=None):
    """Mean daily visits per CBG, min-max scaled across CBGs.

    Returns
    -------
    raw, scaled : Series
    """
    if cbg_ids is not None:
        visit_counts = visit_counts.reindex(pd.Index(cbg_ids), fill_value=0)
    if (visit_counts < 0).any():
        raise ValueError("visit counts must be nonnegative")
    if len(visit_counts) < 2:
        raise ValueError("HMI scaling needs at least two CBGs")
    raw = visit_counts.astype(float) / days
    return raw, min_max_scale(raw)


def density_features(land_area, population=None, poi_count=None, segment_count=None):
    """Per-square-mile densities. Each argument is an aligned Series."""
    area = pd.Series(land_area, dtype=float)
    if (area <= 0).any():
        raise ValueError("land area must be positive")
    out = {}
    for name, counts in (("pop", population), ("poi", poi_count), ("rd", segment_count)):
        if counts is not None:
            out[name] = pd.Series(counts, dtype=float).reindex(area.index) / area
    return pd.DataFrame(out, index=area.index)


def build_controls(cbgs, census, poi, roads, visit_counts, hmi_days):
    """Assemble the six controls per CBG (raw HMI is already min-max scaled).

    CBGs missing any input come back with NaN in the affected column;
    the regression stage drops them with a logged reason.
    """
    ids = pd.Index(cbgs["cbg_id"], name="cbg_id")
    area = pd.Series(cbgs["land_area_sqmi"].to_numpy(dtype=float), index=ids)
    census_i = census.set_index("cbg_id").reindex(ids)
    dens = density_features(
        area,
        population=census_i["pop_total"],
        poi_count=poi.set_index("cbg_id")["poi_count"].reindex(ids),
        segment_count=roads.set_index("cbg_id")["segment_count"].reindex(ids),
    )
    _, hmi = human_mobility_index(visit_counts, days=hmi_days, cbg_ids=ids)
    out = pd.DataFrame(index=ids)
    out["pop"] = dens["pop"]
    out["ms"] = minority_segregation(census).reindex(ids)
    out["is"] = income_segregation(census).reindex(ids)
    out["hmi"] = hmi
    out["poi"] = dens["poi"]
    out["rd"] = dens["rd"]
    return out.reset_index()
