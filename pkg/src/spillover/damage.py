"""
Property damage extent (PDE) and its CBG-level summaries.

IA assessments are put on the NFIP payment scale with a log-log bridge
fitted on paired samples, claims are snapped to the nearest parcel
centroid, and each damaged parcel gets ``pde = claim_value / market_value``.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.spatial import cKDTree

from .geo import project_miles

logger = logging.getLogger(__name__)

MAJOR_DAMAGE_PDE = 0.5


@dataclass(frozen=True)
class BridgeModel:
    """log(nfip) = intercept + slope * log(ia)."""
    slope: float
    intercept: float
    rsquared: float
    n: int

    def apply(self, ia_amount):
        ia_amount = np.asarray(ia_amount, dtype=float)
        return np.exp(self.intercept) * ia_amount ** self.slope

    def to_dict(self):
        return {"slope": self.slope, "intercept": self.intercept,
                "rsquared": self.rsquared, "n": self.n}


def fit_ia_nfip_bridge(ia_amount, nfip_amount) -> BridgeModel:
    """Least-squares fit of log(nfip) on log(ia).

    Raises
    ------
    ValueError
        Fewer than 3 pairs, a nonpositive amount, or a constant IA column.
    """
    ia = np.asarray(ia_amount, dtype=float)
    nfip = np.asarray(nfip_amount, dtype=float)
    if ia.shape != nfip.shape or ia.ndim != 1:
        raise ValueError("paired samples must be 1-d and of equal length")
    if ia.size < 3:
        raise ValueError(f"bridge needs at least 3 pairs, got {ia.size}")
    if (ia <= 0).any() or (nfip <= 0).any():
        raise ValueError("bridge amounts must be strictly positive")
    lx, ly = np.log(ia), np.log(nfip)
    if np.ptp(lx) == 0:
        raise ValueError("degenerate regressor: all IA amounts identical")
    design = np.column_stack([np.ones_like(lx), lx])
    (intercept, slope), *_ = np.linalg.lstsq(design, ly, rcond=None)
    resid = ly - design @ np.array([intercept, slope])
    tss = float(((ly - ly.mean()) ** 2).sum())
    r2 = 1.0 - float(resid @ resid) / tss if tss > 0 else 1.0
    if slope <= 0:
        warnings.warn(f"IA->NFIP bridge slope is {slope:.4g}; transform is not monotone "
                      "increasing", RuntimeWarning, stacklevel=2)
    return BridgeModel(float(slope), float(intercept), float(r2), int(ia.size))


def match_claims_to_parcels(claims: pd.DataFrame, parcels: pd.DataFrame,
                            max_distance=0.25, ref_lat=None):
    """Snap each claim to its nearest parcel centroid.

    Distances are planar miles. Ties go to the lexicographically smallest
    parcel_id. Claims farther than `max_distance` from every parcel are
    returned separately rather than forced onto a parcel.

    Returns
    -------
    matched : DataFrame
        Claim rows with ``parcel_id`` and ``distance_miles`` columns added.
    unmatched : DataFrame
        Claim rows with ``distance_miles`` to the nearest parcel.
    """
    claims = claims.reset_index(drop=True)
    if len(parcels) == 0 or len(claims) == 0:
        raise ValueError("matching requires nonempty claims and parcels")
    if ref_lat is None:
        ref_lat = float(parcels["lat"].mean())
    pxy = project_miles(parcels["lon"], parcels["lat"], ref_lat)
    cxy = project_miles(claims["lon"], claims["lat"], ref_lat)
    pids = parcels["parcel_id"].to_numpy(dtype=object)

    tree = cKDTree(pxy)
    dmin, _ = tree.query(cxy, k=1)
    best = np.empty(len(claims), dtype=object)
    best_d = np.empty(len(claims))
    # small radius slack so every exactly-equidistant candidate is gathered
    slack = 1e-9 * np.maximum(dmin, 1.0)
    for i, cands in enumerate(tree.query_ball_point(cxy, dmin + slack)):
        cands = np.asarray(cands, dtype=int)
        d = np.hypot(pxy[cands, 0] - cxy[i, 0], pxy[cands, 1] - cxy[i, 1])
        tied = cands[d == d.min()]
        j = tied[np.argmin(pids[tied].astype(str))] if tied.size > 1 else tied[0]
        best[i] = pids[j]
        best_d[i] = d.min()

    out = claims.copy()
    if "parcel_id" in out:
        out = out.rename(columns={"parcel_id": "parcel_hint"})
    out["parcel_id"] = best
    out["distance_miles"] = best_d
    ok = best_d <= max_distance
    unmatched = out.loc[~ok].drop(columns="parcel_id").reset_index(drop=True)
    return out.loc[ok].reset_index(drop=True), unmatched


def exhaustive_match(claims, parcels, ref_lat=None):
    """O(n*m) nearest-parcel scan with the same tie rule; a test oracle."""
    if ref_lat is None:
        ref_lat = float(parcels["lat"].mean())
    pxy = project_miles(parcels["lon"], parcels["lat"], ref_lat)
    cxy = project_miles(claims["lon"], claims["lat"], ref_lat)
    pids = [str(p) for p in parcels["parcel_id"]]
    result = []
    for cx, cy in cxy:
        best = None
        for pid, (px, py) in zip(pids, pxy):
            d = float(np.hypot(px - cx, py - cy))
            if best is None or d < best[0] or (d == best[0] and pid < best[1]):
                best = (d, pid)
        result.append(best)
    return result


def compute_pde(matched: pd.DataFrame, parcels: pd.DataFrame, bridge=None, pde_cap=1.0):
    """One PDE record per damaged parcel.

    NFIP amounts win whenever a parcel has any NFIP claim; otherwise the
    IA amount is moved to the NFIP scale with `bridge`. Several claims of
    the same source on one parcel are summed.

    Returns
    -------
    DataFrame
        Columns parcel_id, cbg_id, claim_value, market_value, pde, capped, source.
    """
    cols = ["parcel_id", "cbg_id", "claim_value", "market_value", "pde", "capped", "source"]
    if len(matched) == 0:
        return pd.DataFrame(columns=cols)
    totals = (matched.groupby(["parcel_id", "source"], sort=True)["amount"].sum()
              .unstack("source"))
    for src in ("NFIP", "IA"):
        if src not in totals:
            totals[src] = np.nan
    has_nfip = totals["NFIP"].notna()
    if (~has_nfip).any():
        if bridge is None:
            raise ValueError("IA-only parcels present but no IA->NFIP bridge supplied")
        ia_value = pd.Series(bridge.apply(totals.loc[~has_nfip, "IA"]),
                             index=totals.index[~has_nfip])
    else:
        ia_value = pd.Series(dtype=float)
    claim_value = totals["NFIP"].where(has_nfip, ia_value)

    info = parcels.set_index("parcel_id").loc[claim_value.index, ["cbg_id", "market_value"]]
    mv = info["market_value"].to_numpy(dtype=float)
    assert (mv > 0).all(), "market values must be positive (rejected at ingest)"
    raw = claim_value.to_numpy(dtype=float) / mv
    capped = raw > pde_cap
    out = pd.DataFrame({
        "parcel_id": claim_value.index.to_numpy(),
        "cbg_id": info["cbg_id"].to_numpy(),
        "claim_value": claim_value.to_numpy(dtype=float),
        "market_value": mv,
        "pde": np.minimum(raw, pde_cap),
        "capped": capped,
        "source": np.where(has_nfip.to_numpy(), "NFIP", "IA"),
    })
    return out[cols]


def paired_bridge_samples(matched: pd.DataFrame) -> pd.DataFrame:
    """(ia_amount, nfip_amount) pairs from parcels that carry both records."""
    totals = matched.groupby(["parcel_id", "source"])["amount"].sum().unstack("source")
    if not {"IA", "NFIP"} <= set(totals.columns):
        return pd.DataFrame(columns=["ia_amount", "nfip_amount"])
    both = totals.dropna(subset=["IA", "NFIP"])
    return pd.DataFrame({"ia_amount": both["IA"].to_numpy(),
                         "nfip_amount": both["NFIP"].to_numpy()})


def aggregate_cbg_damage(pde_records: pd.DataFrame, cbg_ids, threshold=MAJOR_DAMAGE_PDE):
    """NC, MP, SDP and MDP per CBG.

    SDP uses the n-1 denominator and is 0 for CBGs with fewer than two
    records. CBGs without records get all-zero metrics.
    """
    cbg_ids = pd.Index(list(cbg_ids), name="cbg_id")
    unknown = set(pde_records["cbg_id"]) - set(cbg_ids)
    if unknown:
        raise ValueError(f"PDE records reference unknown CBGs: {sorted(unknown)[:5]}")
    g = pde_records.groupby("cbg_id")["pde"]
    out = pd.DataFrame({
        "nc": g.size(),
        "mp": g.mean(),
        "sdp": g.std(ddof=1),
        "mdp": g.apply(lambda s: int((s > threshold).sum())),
    }).reindex(cbg_ids).astype(float)
    out["sdp"] = out["sdp"].where(out["nc"] > 1, 0.0)
    out = out.fillna(0.0)
    out["nc"] = out["nc"].astype(int)
    out["mdp"] = out["mdp"].astype(int)
    return out.reset_index()
