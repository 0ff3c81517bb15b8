"""
Recovery rates from stop records.

Pipeline: home CBG per device -> daily movement rate (MR) per home CBG ->
weekday baseline -> percent change PC -> minimum t_s, new steady state
t_n -> recovery rate RR = (PC[t_n] - PC[t_s]) / (t_n - t_s), in PC units
per day.
"""
from __future__ import annotations

import statistics
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

HOME_DWELL_HOURS = 24.0
VISIT_DWELL_HOURS = 4.0
STEADY_TOL = 0.10
PERTURBATION_FLOOR = 0.05
MAX_GAP_DAYS = 2

RECOVERED = "recovered"
NO_PERTURBATION = "no_perturbation"
CENSORED = "censored"


def detect_home_cbgs(stops: pd.DataFrame, home_dwell_hours=HOME_DWELL_HOURS) -> pd.Series:
    """Home CBG per device: where it made a stop longer than `home_dwell_hours`.

    Several qualifying CBGs are resolved by the largest summed dwell of
    qualifying stops, then by the smallest cbg_id. Devices with no
    qualifying stop are left out.
    """
    if len(stops) == 0:
        raise ValueError("no stops")
    q = stops.loc[stops["dwell_hours"] > home_dwell_hours]
    tot = q.groupby(["device_id", "cbg_id"], as_index=False)["dwell_hours"].sum()
    tot = tot.sort_values(["device_id", "dwell_hours", "cbg_id"],
                          ascending=[True, False, True], kind="mergesort")
    first = tot.drop_duplicates("device_id", keep="first")
    return pd.Series(first["cbg_id"].to_numpy(), index=pd.Index(first["device_id"], name="device_id"),
                     name="home_cbg")


def compute_daily_movement(stops, homes, visit_dwell_hours=VISIT_DWELL_HOURS, dates=None):
    """Daily movement rate per home CBG.

    MR is the share of residents observed that day who made at least one
    stop of `visit_dwell_hours` or more in another CBG. Stops are dated by
    their UTC start.

    Parameters
    ----------
    stops : DataFrame
        device_id, cbg_id, start (tz-aware), dwell_hours.
    homes : Series
        device_id -> home cbg_id, from :func:`detect_home_cbgs`.
    dates : (start, end), optional
        Inclusive date span. Dates in the span without observed residents
        come back with ``residents = 0`` and ``mr = NaN``.

    Returns
    -------
    DataFrame with columns cbg_id, date, residents, visitors, mr.
    """
    s = stops.loc[stops["device_id"].isin(homes.index),
                  ["device_id", "cbg_id", "start", "dwell_hours"]].copy()
    s["home"] = s["device_id"].map(homes)
    s["date"] = s["start"].dt.tz_convert("UTC").dt.tz_localize(None).dt.normalize()
    if dates is not None:
        lo, hi = pd.Timestamp(dates[0]), pd.Timestamp(dates[1])
        s = s.loc[(s["date"] >= lo) & (s["date"] <= hi)]
    residents = s.groupby(["home", "date"])["device_id"].nunique()
    away = s.loc[(s["cbg_id"] != s["home"]) & (s["dwell_hours"] >= visit_dwell_hours)]
    visitors = away.groupby(["home", "date"])["device_id"].nunique()
    out = pd.DataFrame({"residents": residents})
    out["visitors"] = visitors.reindex(out.index).fillna(0).astype(int)
    if dates is not None:
        full = pd.MultiIndex.from_product(
            [sorted(homes.unique()), pd.date_range(lo, hi, freq="D")], names=["home", "date"])
        out = out.reindex(full)
        out["residents"] = out["residents"].fillna(0).astype(int)
        out["visitors"] = out["visitors"].fillna(0).astype(int)
    out["mr"] = out["visitors"] / out["residents"].where(out["residents"] > 0)
    out = out.reset_index().rename(columns={"home": "cbg_id"})
    return out[["cbg_id", "date", "residents", "visitors", "mr"]]


def movement_series(daily: pd.DataFrame, cbg_id) -> pd.Series:
    """MR of one CBG as a date-indexed series."""
    sub = daily.loc[daily["cbg_id"] == cbg_id]
    return pd.Series(sub["mr"].to_numpy(dtype=float), index=pd.DatetimeIndex(sub["date"]),
                     name=cbg_id)


def compute_baseline(series: pd.Series, start, end) -> np.ndarray:
    """Mean MR per weekday (Monday = 0) over the inclusive window.

    Means are correctly rounded, so a constant series gives back its value.

    Raises
    ------
    ValueError
        If some weekday has no observation in the window.
    """
    win = series.loc[pd.Timestamp(start):pd.Timestamp(end)].dropna()
    means = win.groupby(win.index.dayofweek).agg(lambda v: float(statistics.mean(v)))
    missing = sorted(set(range(7)) - set(means.index))
    if missing:
        raise ValueError(f"baseline window lacks weekday(s) {missing}")
    return means.sort_index().to_numpy(dtype=float)


def percent_change(series: pd.Series, baseline) -> pd.Series:
    """PC = (MR - BL) / BL with BL matched on weekday."""
    bl = np.asarray(baseline, dtype=float)[series.index.dayofweek]
    return (series - bl) / bl


@dataclass
class RecoveryResult:
    cbg_id: object
    status: str
    baseline: np.ndarray
    pc: pd.Series = field(repr=False)
    t_s: pd.Timestamp | None = None
    t_n: pd.Timestamp | None = None
    rr: float = np.nan
    recovery_extent: float = np.nan
    reason: str = ""

    @property
    def recovered(self):
        return self.status == RECOVERED


def recovery_from_pc(pc: pd.Series, steady_tol=STEADY_TOL,
                     perturbation_floor=PERTURBATION_FLOOR):
    """Locate t_s and t_n on a daily PC path and compute the recovery rate.

    `pc` must be indexed by consecutive days (a DatetimeIndex or integer
    day numbers) with no missing values.

    Returns
    -------
    (status, t_s, t_n, rr, extent)
    """
    if len(pc) == 0:
        raise ValueError("empty PC path")
    values = pc.to_numpy(dtype=float)
    i_s = int(np.argmin(values))
    if values[i_s] > -perturbation_floor:
        return NO_PERTURBATION, pc.index[i_s], None, np.nan, np.nan
    steps = np.abs(np.diff(values))
    # steps[t-1] compares day t with day t-1; search strictly after t_s
    ok = np.flatnonzero(steps[i_s:] <= steady_tol)
    if ok.size == 0:
        return CENSORED, pc.index[i_s], None, np.nan, np.nan
    i_n = i_s + int(ok[0]) + 1
    days = _day_span(pc.index[i_s], pc.index[i_n])
    rr = (values[i_n] - values[i_s]) / days
    # level reached relative to 90% of baseline, in PC units (0.9 BL <-> PC = -0.1)
    extent = values[i_n] - (0.9 - 1.0)
    return RECOVERED, pc.index[i_s], pc.index[i_n], float(rr), float(extent)


def _day_span(a, b):
    if isinstance(a, pd.Timestamp):
        return (b - a).days
    return b - a


def compute_recovery_rate(series: pd.Series, baseline, event_start, event_end,
                          steady_tol=STEADY_TOL, perturbation_floor=PERTURBATION_FLOOR,
                          max_gap_days=MAX_GAP_DAYS, cbg_id=None) -> RecoveryResult:
    """Recovery rate of one CBG over the event window.

    Gaps of at most `max_gap_days` consecutive days inside the window are
    linearly interpolated in MR; longer gaps, or gaps at the window edges,
    censor the CBG. So does a zero baseline on any weekday.
    """
    baseline = np.asarray(baseline, dtype=float)
    days = pd.date_range(pd.Timestamp(event_start), pd.Timestamp(event_end), freq="D")
    if len(days) == 0:
        raise ValueError("empty event window")
    mr = series.reindex(days)
    empty = pd.Series(dtype=float)

    def censored(reason):
        return RecoveryResult(cbg_id, CENSORED, baseline, empty, reason=reason)

    if (baseline == 0).any() or not np.isfinite(baseline).all():
        return censored("zero baseline")
    if mr.isna().any():
        run = mr.isna().astype(int)
        runs = run.groupby((run != run.shift()).cumsum()).transform("sum") * run
        if runs.max() > max_gap_days or mr.iloc[0] != mr.iloc[0] or mr.iloc[-1] != mr.iloc[-1]:
            return censored("mobility gap")
        mr = mr.interpolate(method="linear", limit_area="inside")
    pc = percent_change(mr, baseline)
    status, t_s, t_n, rr, extent = recovery_from_pc(pc, steady_tol, perturbation_floor)
    reason = {CENSORED: "no steady state in window",
              NO_PERTURBATION: "no perturbation"}.get(status, "")
    return RecoveryResult(cbg_id, status, baseline, pc, t_s, t_n, rr, extent, reason)


def recovery_table(daily: pd.DataFrame, baseline_window, event_window, **kw):
    """Run baseline + recovery for every CBG in `daily`.

    Returns
    -------
    recovery : DataFrame
        cbg_id, t_s, t_n, rr, recovery_extent, status.
    pc_series : DataFrame
        cbg_id, date, mr, bl, pc over the baseline and event windows.
    """
    rows, pcs = [], []
    for cbg_id in sorted(daily["cbg_id"].unique()):
        mr = movement_series(daily, cbg_id)
        try:
            bl = compute_baseline(mr, *baseline_window)
        except ValueError:
            rows.append({"cbg_id": cbg_id, "t_s": None, "t_n": None, "rr": np.nan,
                         "recovery_extent": np.nan, "status": CENSORED})
            continue
        res = compute_recovery_rate(mr, bl, *event_window, cbg_id=cbg_id, **kw)
        rows.append({"cbg_id": cbg_id,
                     "t_s": res.t_s.date().isoformat() if res.t_s is not None else None,
                     "t_n": res.t_n.date().isoformat() if res.t_n is not None else None,
                     "rr": res.rr, "recovery_extent": res.recovery_extent,
                     "status": res.status})
        span = mr.loc[pd.Timestamp(baseline_window[0]):pd.Timestamp(event_window[1])]
        bls = bl[span.index.dayofweek]
        pcs.append(pd.DataFrame({"cbg_id": cbg_id, "date": span.index.strftime("%Y-%m-%d"),
                                 "mr": span.to_numpy(), "bl": bls,
                                 "pc": (span.to_numpy() - bls) / bls}))
    recovery = pd.DataFrame(rows, columns=["cbg_id", "t_s", "t_n", "rr",
                                           "recovery_extent", "status"])
    pc = (pd.concat(pcs, ignore_index=True) if pcs
          else pd.DataFrame(columns=["cbg_id", "date", "mr", "bl", "pc"]))
    return recovery, pc
