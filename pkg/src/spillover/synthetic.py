"""
Synthetic scenarios with planted ground truth, and brute-force oracles.

Two kinds of data are produced here.

* :func:`generate_scenario` writes a complete raw input set (CBGs,
  parcels, claims, stops, census, POIs, roads) whose pipeline estimands
  are known. The recovery rate of every CBG is planted as

      RR = beta0 + beta * x + theta * (W x)

  where x is the min-max scaled claim count and W the weights the
  pipeline will rebuild from the written coordinates. With ``sigma = 0``
  every quantity on the way (claim counts, movement rates, percent
  changes) is a dyadic rational, so the pipeline recovers the planted
  coefficients up to least-squares round-off.

* :func:`planted_reach_frame` and :func:`planted_slx_frame` return arrays
  for estimator-level checks, including a field whose spillover acts only
  within a radius R.

All randomness flows from one seed through named ``SeedSequence``
streams, so each stream is independent of the order in which the others
are drawn.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.spatial import Delaunay
from scipy.spatial.distance import pdist, squareform

from .geo import project_miles, unproject_miles
from .ingest import write_table
from .weights import build_weights

# named random streams
_LAYOUT, _DAMAGE, _COVARIATES, _NOISE, _MOBILITY, _FIELD = range(6)


def _rng(seed, *key):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))


@dataclass
class ScenarioSpec:
    """Parameters of a synthetic scenario (JSON round-trippable)."""
    seed: int = 0
    n_cbgs: int = 64
    layout: str = "lattice"              # 'lattice' (square grid) or 'cloud' (uniform)
    extent_miles: float = 14.0
    origin_lon: float = -95.0
    origin_lat: float = 30.0
    truth_scheme: str = "knn"            # weights used to plant the spillover
    truth_k: int = 4
    truth_radius: float | None = None    # threshold for inverse-distance truth weights
    beta0: float = 3.25
    beta: float = 2.0
    theta: float = -3.0
    sigma: float = 0.0
    max_claims: int = 4                  # claim counts per CBG are drawn from 0..max_claims
    extra_parcels: int = 2               # undamaged parcels per CBG
    ia_only_share: float = 0.3
    dual_share: float = 0.2              # damaged parcels carrying both NFIP and IA records
    bridge_slope: float = 1.1
    bridge_intercept: float = 0.2
    baseline_start: str = "2021-06-07"
    baseline_days: int = 21
    event_days: int = 9
    baseline_rate: float = 0.0625        # movement rate before the event
    dip_depth: float = 0.5               # percent-change drop on the dip day
    min_residents: int = 16
    residents_per_cbg: int = 128         # quantization when sigma > 0

    def validate(self):
        if self.n_cbgs < 10:
            raise ValueError("a scenario needs at least 10 CBGs")
        if self.layout not in ("lattice", "cloud"):
            raise ValueError(f"unknown layout {self.layout!r}")
        if self.layout == "lattice" and math.isqrt(self.n_cbgs) ** 2 != self.n_cbgs:
            raise ValueError("lattice layout needs a square number of CBGs")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if self.truth_radius is not None and self.truth_radius > self.extent_miles * math.sqrt(2):
            raise ValueError("spillover radius exceeds the layout extent")
        if self.truth_scheme == "inverse_distance" and self.truth_radius is None:
            raise ValueError("inverse-distance truth weights need truth_radius")
        if not 0 <= self.dip_depth < 1:
            raise ValueError("dip_depth must lie in [0, 1)")
        if self.max_claims < 1:
            raise ValueError("max_claims must be at least 1")
        if Fraction(self.baseline_rate).denominator > 1024:
            raise ValueError("baseline_rate must be a short dyadic fraction such as 1/16")
        return self

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))

    @property
    def dates(self):
        start = pd.Timestamp(self.baseline_start)
        return {
            "baseline": (start, start + pd.Timedelta(days=self.baseline_days - 1)),
            "event": (start + pd.Timedelta(days=self.baseline_days),
                      start + pd.Timedelta(days=self.baseline_days + self.event_days - 1)),
        }


@dataclass
class GroundTruth:
    """Planted parameters and the exact intermediate fields."""
    spec: ScenarioSpec
    cbg_ids: list
    coords: np.ndarray
    nc: np.ndarray
    x: np.ndarray
    wx: np.ndarray
    rr: np.ndarray
    k: np.ndarray
    status: list = field(default_factory=list)

    def to_dict(self):
        return {
            "beta0": self.spec.beta0, "beta": self.spec.beta, "theta": self.spec.theta,
            "truth_scheme": self.spec.truth_scheme, "truth_k": self.spec.truth_k,
            "truth_radius": self.spec.truth_radius, "sigma": self.spec.sigma,
            "cbgs": [{"cbg_id": c, "nc": int(n), "x": float(a), "wx": float(w), "rr": float(r),
                      "k": None if not np.isfinite(kk) else float(kk), "status": s}
                     for c, n, a, w, r, kk, s in zip(self.cbg_ids, self.nc, self.x, self.wx,
                                                    self.rr, self.k, self.status)],
        }


def _layout(spec):
    if spec.layout == "lattice":
        side = math.isqrt(spec.n_cbgs)
        step = spec.extent_miles / (side - 1)
        gx, gy = np.meshgrid(np.arange(side) * step, np.arange(side) * step)
        return np.column_stack([gx.ravel(), gy.ravel()])
    rng = _rng(spec.seed, _LAYOUT)
    return rng.uniform(0.0, spec.extent_miles, (spec.n_cbgs, 2))


def _adjacency(spec, xy, ids):
    if spec.layout == "lattice":
        side = math.isqrt(spec.n_cbgs)
        pairs = []
        for r in range(side):
            for c in range(side):
                i = r * side + c
                if c + 1 < side:
                    pairs.append((i, i + 1))
                if r + 1 < side:
                    pairs.append((i, i + side))
    else:
        tri = Delaunay(xy)
        pairs = {tuple(sorted((int(s[a]), int(s[b]))))
                 for s in tri.simplices for a, b in ((0, 1), (1, 2), (0, 2))}
        pairs = sorted(pairs)
    rows = [(ids[a], ids[b]) for a, b in pairs] + [(ids[b], ids[a]) for a, b in pairs]
    return pd.DataFrame(sorted(rows), columns=["cbg_id_a", "cbg_id_b"])


def _truth_weights(spec, coords, ids, adjacency):
    if spec.truth_scheme == "knn":
        return build_weights(coords, "knn", k=spec.truth_k)
    if spec.truth_scheme == "contiguity":
        return build_weights(None, "contiguity", ids=ids,
                             adjacency=zip(adjacency["cbg_id_a"], adjacency["cbg_id_b"]))
    if spec.truth_scheme in ("inverse_distance", "inverse_square"):
        return build_weights(coords, spec.truth_scheme, threshold=spec.truth_radius)
    raise ValueError(f"unknown truth scheme {spec.truth_scheme!r}")


def _claim_counts(spec):
    rng = _rng(spec.seed, _DAMAGE)
    nc = rng.integers(0, spec.max_claims + 1, spec.n_cbgs)
    # force both extremes so the scaled feature is exactly nc / max_claims
    pos = rng.permutation(spec.n_cbgs)[:2]
    nc[pos[0]], nc[pos[1]] = 0, spec.max_claims
    return nc


def _damage_tables(spec, ids, lonlat, nc):
    """Parcels around each CBG centroid; claims placed exactly on parcels."""
    n_parcels = spec.max_claims + spec.extra_parcels
    ring = 0.05  # miles from the centroid
    parcels, claims = [], []
    ref_lat = spec.origin_lat
    cx, cy = project_miles(lonlat[0], lonlat[1], ref_lat).T
    dual_done = 0
    for i, cbg in enumerate(ids):
        rng = _rng(spec.seed, _DAMAGE, i)
        ang = 2 * np.pi * np.arange(n_parcels) / n_parcels
        pxy = np.column_stack([cx[i] + ring * np.cos(ang), cy[i] + ring * np.sin(ang)])
        plon, plat = unproject_miles(pxy, ref_lat)
        mv = np.round(rng.uniform(80_000, 400_000, n_parcels), 0)
        pde = rng.uniform(0.05, 0.95, n_parcels)
        kind = rng.uniform(size=n_parcels)
        for j in range(n_parcels):
            pid = f"P{i:04d}{j:02d}"
            parcels.append((pid, plon[j], plat[j], mv[j], cbg))
            if j >= nc[i]:
                continue
            nfip = round(float(pde[j] * mv[j]), 2)
            ia = round(float(np.exp((np.log(nfip) - spec.bridge_intercept)
                                    / spec.bridge_slope)), 2)
            dual = kind[j] < spec.dual_share or dual_done < 3
            if dual:
                dual_done += 1
                claims.append((f"N{i:04d}{j:02d}", "NFIP", plon[j], plat[j], nfip))
                claims.append((f"I{i:04d}{j:02d}", "IA", plon[j], plat[j], ia))
            elif kind[j] < spec.dual_share + spec.ia_only_share:
                claims.append((f"I{i:04d}{j:02d}", "IA", plon[j], plat[j], ia))
            else:
                claims.append((f"N{i:04d}{j:02d}", "NFIP", plon[j], plat[j], nfip))
    parcels = pd.DataFrame(parcels, columns=["parcel_id", "lon", "lat", "market_value", "cbg_id"])
    claims = pd.DataFrame(claims, columns=["claim_id", "source", "lon", "lat", "amount"])
    return parcels, claims


def _covariate_tables(spec, ids):
    rng = _rng(spec.seed, _COVARIATES)
    n = len(ids)
    tracts = [f"T{i // 4:04d}" for i in range(n)]
    groups = rng.integers(20, 600, (n, 7))
    census = pd.DataFrame({
        "cbg_id": ids, "tract_id": tracts,
        "pop_total": groups[:, :3].sum(axis=1) + rng.integers(0, 200, n),
        "pop_nhwhite": groups[:, 0], "pop_nhblack": groups[:, 1], "pop_nhasian": groups[:, 2],
        "income_q1": groups[:, 3], "income_q2": groups[:, 4],
        "income_q3": groups[:, 5], "income_q4": groups[:, 6],
    })
    poi = pd.DataFrame({"cbg_id": ids, "poi_count": rng.integers(0, 40, n)})
    roads = pd.DataFrame({"cbg_id": ids, "segment_count": rng.integers(5, 90, n)})
    area = np.round(rng.uniform(0.3, 3.0, n), 3)
    return census, poi, roads, area


def _movement_targets(spec, rr):
    """Exact movement rates per event day for every CBG (Fractions)."""
    b = Fraction(spec.baseline_rate)
    a = Fraction(spec.dip_depth)
    out = []
    for y in rr:
        pcs = [Fraction(0)] * spec.event_days
        if a > 0:
            pcs[1] = -a
            for t in range(2, spec.event_days):
                pcs[t] = -a + 2 * y
        out.append([b * (1 + pc) for pc in pcs])
    return out


def _encode_rr(spec, y_float):
    """Recovery rate as encoded in movement counts.

    Exact for sigma = 0. With noise the jump-day movement rate is rounded
    to a multiple of 1/residents_per_cbg and the encoded RR is returned.
    """
    if spec.sigma == 0:
        return [Fraction(v) for v in y_float]
    b, a = Fraction(spec.baseline_rate), Fraction(spec.dip_depth)
    R = spec.residents_per_cbg
    out = []
    for y in y_float:
        mr = Fraction(round(float(b * (1 - a) + 2 * b * Fraction(y)) * R), R)
        out.append((mr / b - 1 + a) / 2)
    return out


def _stops_table(spec, ids, event_mr):
    """One stop per observed resident per day, plus a long home stop."""
    b = Fraction(spec.baseline_rate)
    dates = spec.dates
    base_days = pd.date_range(*dates["baseline"], freq="D")
    event_days = pd.date_range(*dates["event"], freq="D")
    n = len(ids)
    rows = []
    for i, cbg in enumerate(ids):
        rng = _rng(spec.seed, _MOBILITY, i)
        plan = [(d, b) for d in base_days] + list(zip(event_days, event_mr[i]))
        counts = []
        for day, mr in plan:
            den = mr.denominator
            residents = den * -(-spec.min_residents // den)
            counts.append((day, residents, int(mr * residents)))
        pool = max(r for _, r, _ in counts)
        devices = [f"D{i:04d}_{j:04d}" for j in range(pool)]
        home_start = base_days[0] - pd.Timedelta(days=2)
        for dev in devices:
            rows.append((dev, cbg, home_start, 30.0))
        for day, residents, visitors in counts:
            dest = rng.integers(0, n - 1, visitors)
            dest = np.where(dest >= i, dest + 1, dest)
            start = day + pd.Timedelta(hours=9)
            for j in range(residents):
                if j < visitors:
                    rows.append((devices[j], ids[dest[j]], start, 5.0))
                else:
                    rows.append((devices[j], cbg, start, 2.0))
    stops = pd.DataFrame(rows, columns=["device_id", "cbg_id", "start", "dwell_hours"])
    stops["start"] = pd.to_datetime(stops["start"]).dt.tz_localize("UTC")
    return stops


def generate_scenario(spec: ScenarioSpec):
    """Build the raw input tables and the ground truth of a scenario.

    Returns
    -------
    tables : dict of DataFrame
        Keyed by ingest kind: cbgs, adjacency, parcels, claims, stops,
        census, poi, roads.
    truth : GroundTruth

    Raises
    ------
    ValueError
        For an infeasible spec, including planted recovery rates that
        the movement encoding cannot represent.
    """
    spec.validate()
    ids = [f"G{i:04d}" for i in range(spec.n_cbgs)]
    xy = _layout(spec)
    lon, lat = unproject_miles(xy, spec.origin_lat, (spec.origin_lon, spec.origin_lat))
    cbg_lonlat = (lon, lat)
    census, poi, roads, area = _covariate_tables(spec, ids)
    cbgs = pd.DataFrame({"cbg_id": ids, "lon": lon, "lat": lat, "land_area_sqmi": area})
    adjacency = _adjacency(spec, xy, ids)

    # the pipeline projects around the mean CBG latitude; plant on those coordinates
    coords = project_miles(cbgs["lon"], cbgs["lat"])
    W = _truth_weights(spec, coords, ids, adjacency)
    nc = _claim_counts(spec)
    x = nc / float(spec.max_claims)
    wx = W.lag(x)
    y = spec.beta0 + spec.beta * x + spec.theta * wx
    if spec.sigma > 0:
        y = y + spec.sigma * _rng(spec.seed, _NOISE).standard_normal(spec.n_cbgs)

    status = ["recovered" if spec.dip_depth > 0 else "no_perturbation"] * spec.n_cbgs
    if spec.dip_depth > 0:
        rr_exact = _encode_rr(spec, y)
        lo, hi = min(rr_exact), max(rr_exact)
        top = (1 / Fraction(spec.baseline_rate) - 1 + Fraction(spec.dip_depth)) / 2
        if lo <= Fraction(1, 20):
            raise ValueError("planted recovery rates must exceed 0.05; raise beta0")
        if hi > top:
            raise ValueError(f"planted recovery rate {float(hi):.3f} exceeds the encodable "
                             f"maximum {float(top):.3f}; lower beta0 or baseline_rate")
        rr = np.array([float(v) for v in rr_exact])
    else:
        rr_exact = [Fraction(0)] * spec.n_cbgs
        rr = np.full(spec.n_cbgs, np.nan)

    parcels, claims = _damage_tables(spec, ids, cbg_lonlat, nc)
    stops = _stops_table(spec, ids, _movement_targets(spec, rr_exact))

    k = np.full(spec.n_cbgs, np.nan)
    if spec.dip_depth > 0:
        s = wx  # neighbours' scaled claim counts under the truth weights
        rr0 = rr.max()
        ok = (rr > 0) & (s > 0)
        k[ok] = (rr0 - rr[ok]) / (rr[ok] * s[ok])

    tables = {"cbgs": cbgs, "adjacency": adjacency, "parcels": parcels, "claims": claims,
              "stops": stops, "census": census, "poi": poi, "roads": roads}
    truth = GroundTruth(spec, ids, coords, nc, x, wx, rr, k, status)
    return tables, truth


def scenario_config(spec: ScenarioSpec, input_dir=".") -> dict:
    """Pipeline configuration matching a scenario's layout and windows."""
    from .pipeline import default_config

    d = spec.dates
    cfg = default_config()
    cfg["inputs"] = {kind: str(Path(input_dir) / f"{kind}.csv")
                     for kind in ("cbgs", "adjacency", "parcels", "claims", "stops",
                                  "census", "poi", "roads")}
    cfg["inputs"]["bridge_pairs"] = None
    cfg["mobility"]["baseline_window"] = [d["baseline"][0].date().isoformat(),
                                          d["baseline"][1].date().isoformat()]
    cfg["mobility"]["event_window"] = [d["event"][0].date().isoformat(),
                                       d["event"][1].date().isoformat()]
    cfg["covariates"]["hmi_window"] = list(cfg["mobility"]["baseline_window"])
    cfg["weights"]["scheme"] = spec.truth_scheme
    cfg["weights"]["k"] = spec.truth_k
    cfg["weights"]["threshold"] = spec.truth_radius
    cfg["seed"] = spec.seed
    return cfg


def write_scenario(spec: ScenarioSpec, out_dir):
    """Write CSVs, scenario.json, truth.json and a matching config.yaml."""
    import yaml

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tables, truth = generate_scenario(spec)
    for kind, table in tables.items():
        if kind in ("cbgs", "parcels", "claims", "stops", "adjacency"):
            write_table(table, out / f"{kind}.csv", kind)
        else:
            table.to_csv(out / f"{kind}.csv", index=False, lineterminator="\n")
    (out / "scenario.json").write_text(spec.to_json() + "\n")
    (out / "truth.json").write_text(json.dumps(truth.to_dict(), indent=2, sort_keys=True) + "\n")
    cfg = scenario_config(spec, ".")
    (out / "config.yaml").write_text(yaml.safe_dump(cfg, sort_keys=False))
    return tables, truth


# ---------------------------------------------------------------------------
# estimator-level planted data


def planted_slx_frame(n=100, beta0=0.5, beta=2.0, theta=-3.0, sigma=0.0, k=5, seed=0,
                      extent=20.0):
    """y = beta0 + beta x + theta W x (+ noise) on a uniform cloud with kNN weights.

    Returns
    -------
    dict with coords, W (SpatialWeights), x, wx, y.
    """
    rng = _rng(seed, _FIELD)
    coords = rng.uniform(0, extent, (n, 2))
    W = build_weights(coords, "knn", k=k)
    x = rng.standard_normal(n)
    wx = W.lag(x)
    y = beta0 + beta * x + theta * wx + sigma * rng.standard_normal(n)
    return {"coords": coords, "W": W, "x": x, "wx": wx, "y": y}


def planted_reach_frame(n=500, radius=10.0, extent=70.0, seed=0, amplitude=20.0,
                        length_scale=None, beta0=0.5, beta=2.0, theta=-3.0, sigma=0.0):
    """Field whose spillover acts only within `radius` miles.

    x mixes white noise with a smooth Gaussian-kernel field of length
    scale `length_scale` (default 2 * radius). Without the smooth part the
    row-standardized lag of a thresholded matrix only dilutes as D grows
    and the fitted indirect effect keeps growing past the planted radius;
    the smooth component makes the lag informative so the indirect effect
    peaks near `radius`. With a weak smooth part (`amplitude` of 10 or less)
    the far-threshold lags can still dominate on some draws, so the default
    amplitude is 20.

    Returns
    -------
    dict with coords, x, wx (true lag), y, radius.
    """
    if radius > extent:
        raise ValueError("radius exceeds the layout extent")
    ell = 2.0 * radius if length_scale is None else length_scale
    rng = _rng(seed, _FIELD)
    coords = rng.uniform(0, extent, (n, 2))
    d = squareform(pdist(coords))
    e = rng.standard_normal(n)
    z = rng.standard_normal(n)
    g = np.exp(-0.5 * (d / ell) ** 2) @ z
    g = (g - g.mean()) / g.std()
    x = e + amplitude * g
    W = build_weights(coords, "inverse_distance", threshold=radius)
    wx = W.lag(x)
    y = beta0 + beta * x + theta * wx + sigma * rng.standard_normal(n)
    return {"coords": coords, "x": x, "wx": wx, "y": y, "radius": radius}


# ---------------------------------------------------------------------------
# brute-force oracles


def moran_double_sum(x, W):
    """Moran's I by explicit loops over i and j."""
    x = [float(v) for v in np.asarray(x, dtype=float)]
    W = np.asarray(W, dtype=float)
    n = len(x)
    xbar = sum(x) / n
    num = 0.0
    s0 = 0.0
    for i in range(n):
        for j in range(n):
            num += W[i, j] * (x[i] - xbar) * (x[j] - xbar)
            s0 += W[i, j]
    den = sum((v - xbar) ** 2 for v in x)
    return n / s0 * num / den


def ols_normal_equations(y, X, add_constant=True):
    """beta = (X'X)^-1 X'y solved directly."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if add_constant:
        X = np.column_stack([np.ones(len(X)), X])
    return np.linalg.solve(X.T @ X, X.T @ np.asarray(y, dtype=float))


def dense_lag(W, x):
    """Wx by an explicit dense product."""
    W = np.asarray(W, dtype=float)
    x = np.asarray(x, dtype=float)
    return np.array([sum(W[i, j] * x[j] for j in range(len(x))) for i in range(W.shape[0])])


def decay_substitution(k, rr0, s):
    """RR implied by decay coefficients: RR0 / (1 + k * S)."""
    return rr0 / (1.0 + np.asarray(k, dtype=float) * np.asarray(s, dtype=float))


def oracle_checks(y, X, W, ols_fit=None, moran=None, decay=None, names=None) -> dict:
    """Recompute estimator outputs by brute force and report deviations.

    Parameters
    ----------
    y, X : arrays of the regression frame (X without constant).
    W : SpatialWeights
    ols_fit : RegressionFit, optional
    moran : MoranResult for `y`, optional
    decay : DecayField, optional

    Returns
    -------
    dict mapping check name to {"max_abs_deviation", "n"}.
    """
    X = np.asarray(X, dtype=float)
    n = len(y)
    if n > 200:
        raise ValueError("dense oracles are limited to n <= 200")
    Wd = W.dense() if hasattr(W, "dense") else np.asarray(W)
    report = {}
    if ols_fit is not None:
        beta = ols_normal_equations(y, X)
        report["ols_normal_equations"] = {
            "max_abs_deviation": float(np.max(np.abs(beta - ols_fit.params))), "n": n}
    if moran is not None:
        report["moran_double_sum"] = {
            "max_abs_deviation": float(abs(moran_double_sum(y, Wd) - moran.I)), "n": n}
    lag = W.lag(X) if hasattr(W, "lag") else Wd @ X
    oracle = np.column_stack([dense_lag(Wd, X[:, c]) for c in range(X.shape[1])])
    report["dense_lag"] = {"max_abs_deviation": float(np.max(np.abs(lag - oracle))), "n": n}
    if decay is not None and len(decay.k):
        s = decay.weighted_damage.loc[decay.k.index].to_numpy()
        back = decay_substitution(decay.k.to_numpy(), decay.rr0, s)
        dev = np.max(np.abs(back - decay.rr.loc[decay.k.index].to_numpy()))
        report["decay_substitution"] = {"max_abs_deviation": float(dev), "n": int(len(decay.k))}
    return report


__all__ = ["ScenarioSpec", "GroundTruth", "generate_scenario", "write_scenario",
           "scenario_config", "planted_slx_frame", "planted_reach_frame",
           "moran_double_sum", "ols_normal_equations", "dense_lag", "decay_substitution",
           "oracle_checks"]
