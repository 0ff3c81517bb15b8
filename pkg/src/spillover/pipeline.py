"""
Stage runner: ingest -> damage -> mobility -> covariates -> regression ->
sweep -> decay -> heterogeneity.

Each stage reads its inputs (raw files or upstream artifacts), writes into
its own subdirectory of the artifact directory and records the SHA-256 of
everything it read and wrote in ``manifest.json``. A stage whose recorded
inputs, configuration and outputs are unchanged is skipped on rerun.
Nothing written depends on the wall clock or on the artifact directory's
location, so reruns are byte-identical.
"""
from __future__ import annotations

import copy
import hashlib
import io
import json
import logging
import warnings
from pathlib import Path

import numpy as np
import pandas as pd
import yaml

from . import covariates as cov
from . import damage as dmg
from . import ingest
from . import mobility as mob
from .econometrics import (RankDeficientError, fit_ols, fit_slx, morans_i, pearson_correlation,
                           significance_stars, vif)
from .geo import project_miles
from .spatial_analysis import (compute_decay_coefficients, heterogeneity_test,
                               locate_cutoff_and_extremum, sweep_spatial_reach, threshold_grid)
from .synthetic import oracle_checks
from .weights import build_weights

logger = logging.getLogger(__name__)

STAGES = ["ingest", "damage", "mobility", "covariates", "regression", "sweep", "decay",
          "heterogeneity"]

RAW_KINDS = ["cbgs", "adjacency", "parcels", "claims", "stops", "census", "poi", "roads",
             "bridge_pairs"]

# raw tables each stage needs (bridge_pairs and adjacency are optional)
STAGE_INPUTS = {
    "ingest": ["cbgs"],
    "damage": ["cbgs", "parcels", "claims"],
    "mobility": ["cbgs", "stops"],
    "covariates": ["cbgs", "stops", "census", "poi", "roads"],
}

DEFAULT_CONFIG_TEXT = """\
# Pipeline configuration. Relative input paths resolve against this file's directory.
inputs:
  cbgs: cbgs.csv              # cbg_id, lon, lat, land_area_sqmi
  adjacency: adjacency.csv    # cbg_id_a, cbg_id_b (both directions)
  parcels: parcels.csv        # parcel_id, lon, lat, market_value, cbg_id
  claims: claims.csv          # claim_id, source (NFIP|IA), lon, lat, amount
  stops: stops.csv            # device_id, cbg_id, start_iso8601, dwell_hours
  census: census.csv          # cbg_id, tract_id, pop_total, pop_nh*, income_q1..q4
  poi: poi.csv                # cbg_id, poi_count
  roads: roads.csv            # cbg_id, segment_count
  bridge_pairs: null          # ia_amount, nfip_amount; null = parcels with both records
output_dir: artifacts
seed: 0
ingest:
  strict: true                # orphan records or one-way adjacency fail validation
damage:
  pde_cap: 1.0                # claim above market value is truncated and flagged
  match_max_distance_miles: 0.25
  major_damage_pde: 0.5       # MDP counts parcels with PDE strictly above this
mobility:
  home_dwell_hours: 24.0      # a stop longer than this marks the home CBG
  visit_dwell_hours: 4.0      # minimum dwell of an away stop counted as a visit
  steady_tol: 0.10            # max day-to-day change in PC at the new steady state
  perturbation_floor: 0.05    # min PC above -floor means no perturbation
  max_gap_days: 2             # longer runs of missing days censor a CBG
  baseline_window: ["2017-08-01", "2017-08-21"]
  event_window: ["2017-08-25", "2017-09-30"]
covariates:
  hmi_window: ["2019-04-01", "2019-04-28"]   # normal-period stop window
  hmi_days: null              # null = number of days in hmi_window
regression:
  damage_features: [nc, mp, sdp, mdp]
  controls: [pop, ms, is, hmi, poi, rd]
  permutations: 999
  robustness_schemes: [contiguity, knn, inverse_square]
  robustness_k: 5
weights:
  scheme: inverse_distance    # inverse_distance | inverse_square | knn | contiguity
  threshold: null             # miles; null = no distance band
  k: 5
sweep:
  start: 0.1
  stop: 70.0
  step: 0.1
  schemes: [inverse_distance, inverse_square]
  focal: null                 # null = every regressor
  alpha: 0.10                 # significance level for the cut-off distance
decay:
  feature: nc                 # scaled damage feature whose neighbours drive decay
  mode: neighbors             # neighbors (sum_j w_ij d_j) | literal (d_i sum_j w_ij)
  distance: null              # miles; null = extremum distance of the feature
heterogeneity:
  features: [poi, rd]
report:
  stars: table2               # table2 (1/5/10%) | strict (0.1/1/5%)
"""


class StageError(RuntimeError):
    """A stage could not run; earlier outputs are left in place."""

    def __init__(self, stage, message):
        super().__init__(f"{stage}: {message}")
        self.stage = stage


class MissingInputError(StageError):
    pass


class ValidationFailure(StageError):
    pass


def default_config() -> dict:
    return yaml.safe_load(DEFAULT_CONFIG_TEXT)


def _deep_update(base, extra):
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _deep_update(base[key], value)
        else:
            base[key] = value
    return base


def set_path(cfg, dotted, value):
    """Set ``a.b.c`` in a nested dict, creating levels as needed."""
    keys = dotted.split(".")
    node = cfg
    for k in keys[:-1]:
        node = node.setdefault(k, {})
    node[keys[-1]] = value


class PipelineConfig:
    """Nested configuration with validation and path resolution."""

    def __init__(self, data=None, base_dir="."):
        self.data = _deep_update(default_config(), copy.deepcopy(data or {}))
        self.base_dir = Path(base_dir)

    @classmethod
    def load(cls, path, overrides=None):
        path = Path(path)
        data = yaml.safe_load(path.read_text()) or {}
        cfg = cls(data, base_dir=path.parent)
        for key, value in (overrides or {}).items():
            cfg.set(key, value)
        return cfg

    def get(self, dotted, default=None):
        node = self.data
        for k in dotted.split("."):
            if not isinstance(node, dict) or k not in node:
                return default
            node = node[k]
        return node

    def set(self, dotted, value):
        set_path(self.data, dotted, value)

    def input_path(self, kind):
        p = self.data["inputs"].get(kind)
        if p is None:
            return None
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def output_dir(self):
        p = Path(self.data["output_dir"])
        return p if p.is_absolute() else self.base_dir / p

    def validate(self):
        m = self.data["mobility"]
        b0, b1 = (pd.Timestamp(d) for d in m["baseline_window"])
        e0, e1 = (pd.Timestamp(d) for d in m["event_window"])
        if not (b0 <= b1 < e0 <= e1):
            raise ValueError("baseline and event windows must be ordered and non-overlapping")
        s = self.data["sweep"]
        if s["step"] <= 0 or s["start"] <= 0 or s["stop"] < s["start"]:
            raise ValueError("sweep grid needs 0 < start <= stop and step > 0")
        for key in ("home_dwell_hours", "visit_dwell_hours", "steady_tol", "perturbation_floor"):
            if m[key] <= 0:
                raise ValueError(f"mobility.{key} must be positive")
        for key in ("pde_cap", "match_max_distance_miles"):
            if self.data["damage"][key] <= 0:
                raise ValueError(f"damage.{key} must be positive")
        if self.data["report"]["stars"] not in ("table2", "strict"):
            raise ValueError("report.stars must be 'table2' or 'strict'")
        return self

    def section_hash(self, *sections):
        blob = json.dumps({s: self.data.get(s) for s in sections}, sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o)}")


def _clean(o):
    """Replace non-finite floats by None so JSON stays standard."""
    if isinstance(o, dict):
        return {str(k): _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    if isinstance(o, (float, np.floating)):
        return float(o) if np.isfinite(o) else None
    return o


def dump_json(obj):
    return json.dumps(_clean(obj), indent=2, sort_keys=True, default=_json_default) + "\n"


class StageContext:
    """File I/O for one stage that records what was read and written."""

    def __init__(self, name, root: Path, config: PipelineConfig):
        self.name = name
        self.root = root
        self.dir = root / name
        self.config = config
        self.inputs = {}
        self.outputs = {}

    # -- reading
    def raw_path(self, kind, required=True):
        p = self.config.input_path(kind)
        if p is None or not p.exists():
            if required:
                shown = self.config.data["inputs"].get(kind) or f"{kind}.csv"
                raise MissingInputError(self.name, f"missing input {kind!r} ({shown})")
            return None
        self.inputs[f"input:{kind}"] = sha256_file(p)
        return p

    def artifact(self, rel):
        p = self.root / rel
        if not p.exists():
            raise MissingInputError(self.name, f"missing upstream artifact {rel!r}; "
                                               "run the producing stage first")
        self.inputs[rel] = sha256_file(p)
        return p

    def read_csv(self, rel, **kw):
        return pd.read_csv(self.artifact(rel), float_precision="round_trip", **kw)

    def read_json(self, rel):
        return json.loads(self.artifact(rel).read_text())

    # -- writing
    def _record(self, path):
        self.outputs[str(path.relative_to(self.root))] = sha256_file(path)

    def write_csv(self, frame: pd.DataFrame, name):
        self.dir.mkdir(parents=True, exist_ok=True)
        p = self.dir / name
        frame.to_csv(p, index=False, lineterminator="\n")
        self._record(p)
        return p

    def write_json(self, obj, name):
        self.dir.mkdir(parents=True, exist_ok=True)
        p = self.dir / name
        p.write_text(dump_json(obj))
        self._record(p)
        return p

    def write_table(self, frame, name, kind):
        self.dir.mkdir(parents=True, exist_ok=True)
        p = self.dir / name
        ingest.write_table(frame, p, kind)
        self._record(p)
        return p


# ---------------------------------------------------------------------------
# stages


def _load_raw(ctx, kinds, optional=()):
    paths = {k: ctx.raw_path(k) for k in kinds}
    for k in optional:
        p = ctx.raw_path(k, required=False)
        if p is not None:
            paths[k] = p
    try:
        return ingest.load_tables(paths)
    except ingest.SchemaError as exc:
        raise ValidationFailure(ctx.name, str(exc)) from exc


def stage_ingest(ctx):
    kinds = [k for k in RAW_KINDS if ctx.config.input_path(k) is not None
             and ctx.config.input_path(k).exists()]
    required = [k for k in kinds if k != "bridge_pairs"]
    data = _load_raw(ctx, ["cbgs"] + [k for k in required if k != "cbgs"],
                     optional=["bridge_pairs"])
    report = ingest.validate_dataset(data, ctx.config.get("damage.match_max_distance_miles"))
    counts = {k: int(len(t)) for k, t in sorted(data.tables.items())}
    ctx.write_json({"validation": report.to_dict(), "row_counts": counts}, "validation.json")
    ctx.write_csv(data.rejected_frame(), "rejected_rows.csv")
    if ctx.config.get("ingest.strict") and not report.ok:
        raise ValidationFailure(ctx.name, f"validation failed: {report.to_dict()}")


def stage_damage(ctx):
    cfg = ctx.config
    data = _load_raw(ctx, STAGE_INPUTS["damage"], optional=["bridge_pairs"])
    parcels, claims = data["parcels"], data["claims"]
    matched, unmatched = dmg.match_claims_to_parcels(
        claims, parcels, max_distance=cfg.get("damage.match_max_distance_miles"))
    if "bridge_pairs" in data:
        pairs = data["bridge_pairs"]
        basis = "bridge_pairs table"
    else:
        pairs = dmg.paired_bridge_samples(matched)
        basis = "parcels with both NFIP and IA records"
    bridge = None
    bridge_info = {"basis": basis, "n_pairs": int(len(pairs))}
    needs_bridge = bool((matched["source"] == "IA").any())
    if len(pairs) >= 3:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            bridge = dmg.fit_ia_nfip_bridge(pairs["ia_amount"], pairs["nfip_amount"])
        bridge_info.update(bridge.to_dict())
        bridge_info["warnings"] = [str(w.message) for w in caught]
    elif needs_bridge:
        ia_only = matched.groupby("parcel_id")["source"].agg(set).map(lambda s: s == {"IA"})
        if ia_only.any():
            raise StageError(ctx.name, f"IA-only parcels present but only {len(pairs)} "
                                       "bridge pair(s) available (need 3)")
    pde = dmg.compute_pde(matched, parcels, bridge, pde_cap=cfg.get("damage.pde_cap"))
    agg = dmg.aggregate_cbg_damage(pde, data["cbgs"]["cbg_id"],
                                   threshold=cfg.get("damage.major_damage_pde"))
    ctx.write_csv(pde, "pde_records.csv")
    ctx.write_csv(agg, "cbg_damage.csv")
    ctx.write_csv(unmatched, "unmatched_claims.csv")
    ctx.write_json(bridge_info, "bridge.json")


def stage_mobility(ctx):
    cfg = ctx.config
    m = cfg.data["mobility"]
    data = _load_raw(ctx, STAGE_INPUTS["mobility"])
    stops = data["stops"]
    if len(stops) == 0:
        raise StageError(ctx.name, "stops table is empty")
    homes = mob.detect_home_cbgs(stops, m["home_dwell_hours"])
    daily = mob.compute_daily_movement(stops, homes, m["visit_dwell_hours"],
                                       dates=(m["baseline_window"][0], m["event_window"][1]))
    recovery, pc = mob.recovery_table(
        daily, m["baseline_window"], m["event_window"], steady_tol=m["steady_tol"],
        perturbation_floor=m["perturbation_floor"], max_gap_days=m["max_gap_days"])
    daily = daily.assign(date=daily["date"].dt.strftime("%Y-%m-%d"))
    ctx.write_csv(homes.reset_index(), "homes.csv")
    ctx.write_csv(daily, "daily_movement.csv")
    ctx.write_csv(recovery, "recovery.csv")
    ctx.write_csv(pc, "pc_series.csv")


def stage_covariates(ctx):
    cfg = ctx.config
    data = _load_raw(ctx, STAGE_INPUTS["covariates"])
    w0, w1 = cfg.get("covariates.hmi_window")
    days = cfg.get("covariates.hmi_days") or (pd.Timestamp(w1) - pd.Timestamp(w0)).days + 1
    visits = cov.count_visits(data["stops"], w0, w1, cfg.get("mobility.visit_dwell_hours"))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        controls = cov.build_controls(data["cbgs"], data["census"], data["poi"], data["roads"],
                                      visits, days)
    scaled = controls.copy()
    for col in cov.CONTROL_COLUMNS:
        ok = scaled[col].notna()
        if ok.sum() >= 1:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                scaled.loc[ok, col] = cov.min_max_scale(scaled.loc[ok, col].to_numpy())
    ctx.write_csv(controls, "controls.csv")
    ctx.write_csv(scaled, "controls_scaled.csv")
    ctx.write_json({"hmi_days": days, "warnings": sorted({str(w.message) for w in caught})},
                   "covariates.json")


def _regressor_names(cfg):
    return list(cfg.get("regression.damage_features")) + list(cfg.get("regression.controls"))


def _weights_for(scheme, frame, adjacency=None, k=5, threshold=None):
    coords = frame[["x_miles", "y_miles"]].to_numpy()
    ids = frame["cbg_id"].tolist()
    if scheme == "contiguity":
        if adjacency is None:
            raise ValueError("contiguity weights need an adjacency table")
        pairs = zip(adjacency["cbg_id_a"], adjacency["cbg_id_b"])
        return build_weights(None, "contiguity", adjacency=pairs, ids=ids)
    if scheme == "knn":
        return build_weights(coords, "knn", k=k, ids=ids)
    return build_weights(coords, scheme, threshold=threshold, ids=ids)


def _regression_frame(ctx):
    cfg = ctx.config
    cbgs = _load_raw(ctx, ["cbgs"])["cbgs"]
    damage = ctx.read_csv("damage/cbg_damage.csv", dtype={"cbg_id": str})
    recovery = ctx.read_csv("mobility/recovery.csv", dtype={"cbg_id": str})
    controls = ctx.read_csv("covariates/controls.csv", dtype={"cbg_id": str})
    xy = project_miles(cbgs["lon"], cbgs["lat"])
    frame = pd.DataFrame({"cbg_id": cbgs["cbg_id"], "x_miles": xy[:, 0], "y_miles": xy[:, 1]})
    frame = (frame.merge(recovery[["cbg_id", "rr", "status"]], on="cbg_id", how="left")
             .merge(damage, on="cbg_id", how="left")
             .merge(controls, on="cbg_id", how="left"))
    names = _regressor_names(cfg)
    reasons = pd.Series("", index=frame.index, dtype=object)
    reasons[frame["status"].isna()] = "no resident devices"
    st = frame["status"].fillna("")
    reasons[(reasons == "") & (st != mob.RECOVERED)] = "recovery status " + st
    for col in names:
        if col not in frame:
            raise StageError(ctx.name, f"unknown regressor {col!r}")
        reasons[(reasons == "") & frame[col].isna()] = f"missing {col}"
    excluded = frame.loc[reasons != "", ["cbg_id"]].assign(reason=reasons[reasons != ""])
    frame = frame.loc[reasons == ""].reset_index(drop=True)
    return frame, excluded, names


def _descriptive(frame, names):
    rows = []
    for col in ["rr"] + names:
        v = frame[col].to_numpy(dtype=float)
        rows.append({"variable": col, "min": v.min(), "max": v.max(), "mean": v.mean(),
                     "std": v.std(ddof=1) if v.size > 1 else 0.0})
    return pd.DataFrame(rows)


def _morans(y_by_name, W, permutations, seed):
    out = {}
    for name, values in y_by_name.items():
        try:
            out[name] = morans_i(values, W, permutations=permutations, seed=seed).to_dict()
        except ValueError as exc:
            out[name] = {"error": str(exc)}
    return out


def _slx_block(y, X, W, names, convention):
    slx = fit_slx(y, X, W, names)
    d = slx.to_dict()
    for v, row in d["effects"].items():
        for col in ("direct", "indirect", "total"):
            row[f"{col}_stars"] = significance_stars(row[f"{col}_p"], convention)
    return slx, d


def stage_regression(ctx):
    cfg = ctx.config
    conv = cfg.get("report.stars")
    frame, excluded, names = _regression_frame(ctx)
    n = len(frame)
    if n <= 2 * len(names) + 1:
        raise StageError(ctx.name, f"only {n} CBGs left for {2 * len(names) + 1} SLX terms")
    design = frame[["cbg_id", "x_miles", "y_miles", "rr"]].copy()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        for col in names:
            design[col] = cov.min_max_scale(frame[col].to_numpy(dtype=float))
    y = design["rr"].to_numpy()
    X = design[names].to_numpy()

    adjacency = None
    adj_path = ctx.raw_path("adjacency", required=False)
    if adj_path is not None:
        adjacency = _load_raw(ctx, ["cbgs", "adjacency"])["adjacency"]

    scheme = cfg.get("weights.scheme")
    try:
        W = _weights_for(scheme, design, adjacency, cfg.get("weights.k"),
                         cfg.get("weights.threshold"))
        ols = fit_ols(y, X, names)
        slx, slx_dict = _slx_block(y, X, W, names, conv)
    except (ValueError, RankDeficientError) as exc:
        raise StageError(ctx.name, str(exc)) from exc

    perms, seed = cfg.get("regression.permutations"), cfg.get("seed")
    moran = _morans({"rr": y, **{c: design[c].to_numpy() for c in names}}, W, perms, seed)
    ols_dict = ols.to_dict()
    for v, row in ols_dict["coefficients"].items():
        row["stars"] = significance_stars(row["p"], conv)
    pearson = {}
    for c in names:
        try:
            r, p = pearson_correlation(design[c], y)
            pearson[c] = {"r": r, "p": p, "stars": significance_stars(p, conv)}
        except ValueError as exc:
            pearson[c] = {"error": str(exc)}
    vif_table = vif(X, names).reset_index(names="variable")

    report = {
        "n": n, "n_excluded": int(len(excluded)), "dependent": "rr", "regressors": names,
        "weights": W.label, "star_convention": conv, "ols": ols_dict, "slx": slx_dict,
        "moran": moran, "pearson": pearson,
        "scaling_warnings": sorted({str(w.message) for w in caught}),
    }

    robustness = {}
    for rs in cfg.get("regression.robustness_schemes") or []:
        try:
            Wr = _weights_for(rs, design, adjacency, cfg.get("regression.robustness_k"))
            _, rd = _slx_block(y, X, Wr, names, conv)
            robustness[rs] = {"weights": Wr.label, "slx": rd,
                              "moran_rr": _morans({"rr": y}, Wr, perms, seed)["rr"]}
        except (ValueError, RankDeficientError) as exc:
            robustness[rs] = {"error": str(exc)}

    ctx.write_csv(frame, "frame.csv")
    ctx.write_csv(design, "design.csv")
    ctx.write_csv(excluded, "excluded.csv")
    ctx.write_csv(_descriptive(frame, names), "descriptive.csv")
    ctx.write_csv(vif_table, "vif.csv")
    ctx.write_json(report, "regression_report.json")
    ctx.write_json(robustness, "robustness.json")
    if n <= 200:
        mres = morans_i(y, W, permutations=0)
        ctx.write_json(oracle_checks(y, X, W, ols_fit=ols, moran=mres), "oracle_report.json")


def _grid(cfg):
    s = cfg.data["sweep"]
    return threshold_grid(s["start"], s["stop"], s["step"])


def stage_sweep(ctx):
    cfg = ctx.config
    design = ctx.read_csv("regression/design.csv", dtype={"cbg_id": str})
    names = _regressor_names(cfg)
    focal = cfg.get("sweep.focal") or names
    coords = design[["x_miles", "y_miles"]].to_numpy()
    y, X = design["rr"].to_numpy(), design[names].to_numpy()
    alpha = cfg.get("sweep.alpha")
    summaries = []
    for scheme in cfg.get("sweep.schemes"):
        power = {"inverse_distance": 1.0, "inverse_square": 2.0}.get(scheme)
        if power is None:
            raise StageError(ctx.name, f"sweep needs a distance scheme, got {scheme!r}")
        profile = sweep_spatial_reach(y, X, coords, _grid(cfg), names, focal, power)
        cols = ["D", "variable", "direct", "indirect", "total", "p_indirect", "skipped"]
        suffix = "" if scheme == "inverse_distance" else f"_{scheme}"
        ctx.write_csv(profile.table[cols], f"reach_profile{suffix}.csv")
        ctx.write_csv(profile.table, f"reach_curve{suffix}.csv")
        summ = profile.summary(alpha).assign(scheme=scheme)
        summ["skipped_thresholds"] = int(profile.table.groupby("D")["skipped"].first().sum())
        summaries.append(summ)
    ctx.write_csv(pd.concat(summaries, ignore_index=True), "reach_summary.csv")


def stage_decay(ctx):
    cfg = ctx.config
    design = ctx.read_csv("regression/design.csv", dtype={"cbg_id": str})
    feature = cfg.get("decay.feature")
    distance = cfg.get("decay.distance")
    if distance is None:
        summary = ctx.read_csv("sweep/reach_summary.csv")
        row = summary.loc[(summary["scheme"] == "inverse_distance")
                          & (summary["variable"] == feature)]
        if row.empty or pd.isna(row["extremum_distance"].iloc[0]):
            raise StageError(ctx.name, f"no extremum distance for {feature!r} in the sweep")
        distance = float(row["extremum_distance"].iloc[0])
    W = build_weights(design[["x_miles", "y_miles"]].to_numpy(), "inverse_distance",
                      threshold=distance)
    rr = pd.Series(design["rr"].to_numpy(), index=design["cbg_id"])
    field = compute_decay_coefficients(rr, design[feature].to_numpy(), W,
                                       mode=cfg.get("decay.mode"), feature=feature)
    ctx.write_csv(field.to_frame(), "decay.csv")
    ctx.write_json({"feature": feature, "distance_miles": distance, "mode": field.mode,
                    "rr0": field.rr0, "n_included": int(len(field.k)),
                    "n_excluded": int(len(field.excluded)),
                    "identity_residual": field.identity_residual()}, "decay.json")


def stage_heterogeneity(ctx):
    cfg = ctx.config
    design = ctx.read_csv("regression/design.csv", dtype={"cbg_id": str})
    decay = ctx.read_csv("decay/decay.csv", dtype={"cbg_id": str})
    k = decay.dropna(subset=["k"]).set_index("cbg_id")["k"]
    out = {}
    for feat in cfg.get("heterogeneity.features"):
        values = design.set_index("cbg_id")[feat]
        try:
            out[feat] = heterogeneity_test(k, values, name=feat).to_dict()
        except ValueError as exc:
            out[feat] = {"error": str(exc)}
    ctx.write_json(out, "heterogeneity.json")


STAGE_FUNCS = {
    "ingest": stage_ingest, "damage": stage_damage, "mobility": stage_mobility,
    "covariates": stage_covariates, "regression": stage_regression, "sweep": stage_sweep,
    "decay": stage_decay, "heterogeneity": stage_heterogeneity,
}

# configuration sections that affect each stage
STAGE_CONFIG = {
    "ingest": ("inputs", "ingest", "damage"),
    "damage": ("inputs", "damage"),
    "mobility": ("inputs", "mobility"),
    "covariates": ("inputs", "covariates", "mobility"),
    "regression": ("inputs", "regression", "weights", "seed", "report"),
    "sweep": ("regression", "sweep"),
    "decay": ("decay", "sweep"),
    "heterogeneity": ("heterogeneity",),
}


def _read_manifest(root):
    p = root / "manifest.json"
    if p.exists():
        return json.loads(p.read_text())
    return {"stages": {}}


def _write_manifest(root, manifest):
    manifest["stage_order"] = [s for s in STAGES if s in manifest["stages"]]
    (root / "manifest.json").write_text(dump_json(manifest))


def _up_to_date(root, entry, config_hash):
    if not entry or entry.get("status") != "completed" or entry.get("config") != config_hash:
        return False
    for rel, digest in entry.get("outputs", {}).items():
        p = root / rel
        if not p.exists() or sha256_file(p) != digest:
            return False
    return True


def _current_input_hashes(root, config, entry):
    hashes = {}
    for key in entry.get("inputs", {}):
        if key.startswith("input:"):
            p = config.input_path(key.split(":", 1)[1])
        else:
            p = root / key
        if p is None or not p.exists():
            return None
        hashes[key] = sha256_file(p)
    return hashes


def run_pipeline(config: PipelineConfig, stages=None, output_dir=None, resume=True):
    """Run the requested stages in pipeline order.

    Parameters
    ----------
    config : PipelineConfig
    stages : iterable of str, optional
        Subset of :data:`STAGES`; all by default.
    output_dir : path, optional
        Overrides ``config.output_dir``.
    resume : bool
        Skip stages whose inputs, configuration and outputs are unchanged.

    Returns
    -------
    dict
        The manifest.

    Raises
    ------
    StageError
        From the first failing stage; its manifest entry is marked failed
        and earlier outputs are untouched.
    """
    config.validate()
    wanted = list(STAGES) if stages is None else [s for s in STAGES if s in set(stages)]
    unknown = set(stages or []) - set(STAGES)
    if unknown:
        raise ValueError(f"unknown stage(s): {sorted(unknown)}")
    root = Path(output_dir) if output_dir is not None else config.output_dir
    root.mkdir(parents=True, exist_ok=True)
    manifest = _read_manifest(root)
    for name in wanted:
        chash = config.section_hash(*STAGE_CONFIG[name])
        entry = manifest["stages"].get(name)
        if resume and _up_to_date(root, entry, chash):
            current = _current_input_hashes(root, config, entry)
            if current == entry.get("inputs"):
                logger.info("stage %s up to date; skipped", name)
                continue
        ctx = StageContext(name, root, config)
        logger.info("running stage %s", name)
        try:
            try:
                STAGE_FUNCS[name](ctx)
            except (ValueError, KeyError, np.linalg.LinAlgError) as exc:
                raise StageError(name, f"{type(exc).__name__}: {exc}") from exc
        except StageError as exc:
            manifest["stages"][name] = {"status": "failed", "error": str(exc),
                                        "config": chash}
            _write_manifest(root, manifest)
            raise
        manifest["stages"][name] = {"status": "completed", "config": chash,
                                    "inputs": dict(sorted(ctx.inputs.items())),
                                    "outputs": dict(sorted(ctx.outputs.items()))}
        _write_manifest(root, manifest)
    return manifest


def completed_stages(manifest):
    return [s for s in STAGES if manifest["stages"].get(s, {}).get("status") == "completed"]


def config_to_yaml(config: PipelineConfig):
    buf = io.StringIO()
    yaml.safe_dump(config.data, buf, sort_keys=False)
    return buf.getvalue()
