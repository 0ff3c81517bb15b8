"""
Loading and validation of the input tables.

Every table is a header-bearing UTF-8 CSV. Rows that violate a record
invariant are never fatal: they are dropped from the returned table and
collected as row-numbered diagnostics. A missing column is fatal
(:class:`SchemaError`) because nothing in the file can be trusted then.

Row numbers in diagnostics count data rows from 1 (the header is row 0).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .geo import project_miles

logger = logging.getLogger(__name__)

# kind -> (columns in file order, id columns, numeric columns)
SCHEMAS: dict[str, tuple[list[str], list[str], list[str]]] = {
    "parcels": (["parcel_id", "lon", "lat", "market_value", "cbg_id"],
                ["parcel_id", "cbg_id"], ["lon", "lat", "market_value"]),
    "claims": (["claim_id", "source", "lon", "lat", "amount"],
               ["claim_id", "source"], ["lon", "lat", "amount"]),
    "stops": (["device_id", "cbg_id", "start_iso8601", "dwell_hours"],
              ["device_id", "cbg_id", "start_iso8601"], ["dwell_hours"]),
    "cbgs": (["cbg_id", "lon", "lat", "land_area_sqmi"],
             ["cbg_id"], ["lon", "lat", "land_area_sqmi"]),
    "adjacency": (["cbg_id_a", "cbg_id_b"], ["cbg_id_a", "cbg_id_b"], []),
    "census": (["cbg_id", "tract_id", "pop_total", "pop_nhwhite", "pop_nhblack",
                "pop_nhasian", "income_q1", "income_q2", "income_q3", "income_q4"],
               ["cbg_id", "tract_id"],
               ["pop_total", "pop_nhwhite", "pop_nhblack", "pop_nhasian",
                "income_q1", "income_q2", "income_q3", "income_q4"]),
    "poi": (["cbg_id", "poi_count"], ["cbg_id"], ["poi_count"]),
    "roads": (["cbg_id", "segment_count"], ["cbg_id"], ["segment_count"]),
    "bridge_pairs": (["ia_amount", "nfip_amount"], [], ["ia_amount", "nfip_amount"]),
}

# optional columns accepted when present
OPTIONAL_COLUMNS = {"claims": ["parcel_id"]}

# tables whose cbg columns must reference the CBG index
CBG_COLUMNS = {
    "parcels": ["cbg_id"],
    "stops": ["cbg_id"],
    "adjacency": ["cbg_id_a", "cbg_id_b"],
    "census": ["cbg_id"],
    "poi": ["cbg_id"],
    "roads": ["cbg_id"],
}

UNIQUE_KEYS = {"parcels": "parcel_id", "claims": "claim_id", "cbgs": "cbg_id",
               "census": "cbg_id", "poi": "cbg_id", "roads": "cbg_id"}

LOAD_ORDER = ["cbgs", "adjacency", "parcels", "claims", "stops",
              "census", "poi", "roads", "bridge_pairs"]


class SchemaError(ValueError):
    """A table's header does not carry the declared columns."""


@dataclass(frozen=True)
class RowDiagnostic:
    table: str
    row: int
    reason: str


@dataclass
class LoadResult:
    table: pd.DataFrame
    rejected: list[RowDiagnostic] = field(default_factory=list)

    @property
    def warning_count(self):
        return len(self.rejected)


@dataclass
class Dataset:
    """All loaded tables keyed by kind, plus the rejected-row sidecar."""
    tables: dict[str, pd.DataFrame]
    rejected: list[RowDiagnostic] = field(default_factory=list)

    def __getitem__(self, kind):
        return self.tables[kind]

    def __contains__(self, kind):
        return kind in self.tables

    def rejected_frame(self):
        return pd.DataFrame([vars(d) for d in self.rejected],
                            columns=["table", "row", "reason"])


def _parse_timestamps(values: pd.Series) -> pd.Series:
    return pd.to_datetime(values, utc=True, errors="coerce", format="ISO8601")


_NUMBER = r"[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?"


def _parse_numeric(values: pd.Series) -> pd.Series:
    """Strings to float64 with correctly rounded conversion; junk becomes NaN.

    ``pd.to_numeric`` uses a fast parser that can be off by one ulp, which
    would break byte-exact round trips of coordinates.
    """
    s = values.astype(str).str.strip()
    ok = s.str.fullmatch(_NUMBER)
    out = pd.Series(np.nan, index=values.index)
    out[ok] = s[ok].astype(float)
    return out


def parse_table(raw: pd.DataFrame, kind: str, known_cbgs=None) -> LoadResult:
    """Validate an all-string frame against the schema for `kind`."""
    if kind not in SCHEMAS:
        raise KeyError(f"unknown table kind {kind!r}")
    columns, id_cols, num_cols = SCHEMAS[kind]
    missing = [c for c in columns if c not in raw.columns]
    if missing:
        raise SchemaError(f"{kind}: missing column(s) {', '.join(missing)}")
    keep = columns + [c for c in OPTIONAL_COLUMNS.get(kind, []) if c in raw.columns]
    raw = raw[keep].reset_index(drop=True)

    reasons = pd.Series("", index=raw.index, dtype=object)

    def flag(mask, reason):
        mask = np.asarray(mask, dtype=bool) & (reasons == "").to_numpy()
        reasons[mask] = reason

    out = pd.DataFrame(index=raw.index)
    for col in id_cols:
        out[col] = raw[col].astype(str).str.strip()
        if col != "start_iso8601":
            flag(out[col] == "", f"empty {col}")
    for col in num_cols:
        vals = _parse_numeric(raw[col])
        flag(vals.isna() | ~np.isfinite(vals.to_numpy(dtype=float, na_value=np.nan)),
             f"unparsable numeric in {col}")
        out[col] = vals.astype(float)
    for col in OPTIONAL_COLUMNS.get(kind, []):
        if col in raw.columns:
            out[col] = raw[col].astype(str).str.strip()

    if "lon" in out:
        flag((out["lon"].abs() > 180) | (out["lat"].abs() > 90), "coordinate out of range")
    if kind == "parcels":
        flag(out["market_value"] <= 0, "nonpositive market value")
    elif kind == "claims":
        out["source"] = out["source"].str.upper()
        flag(~out["source"].isin(["NFIP", "IA"]), "unknown claim source")
        flag(out["amount"] == 0, "zero damage value")
        flag(out["amount"] < 0, "negative damage value")
    elif kind == "stops":
        ts = _parse_timestamps(raw["start_iso8601"].str.strip())
        flag(ts.isna(), "unparsable timestamp")
        flag(out["dwell_hours"] < 0, "negative dwell")
        out = out.drop(columns="start_iso8601")
        out.insert(2, "start", ts)
    elif kind == "cbgs":
        flag(out["land_area_sqmi"] <= 0, "nonpositive land area")
    elif kind in ("census", "poi", "roads"):
        flag((out[num_cols] < 0).any(axis=1), "negative count")
    elif kind == "bridge_pairs":
        flag((out[num_cols] <= 0).any(axis=1), "nonpositive amount")

    if known_cbgs is not None:
        known = pd.Index(known_cbgs)
        for col in CBG_COLUMNS.get(kind, []):
            flag(~out[col].isin(known), f"unknown cbg_id in {col}")

    key = UNIQUE_KEYS.get(kind)
    if key is not None:
        ok = (reasons == "")
        dup = out[key].where(ok).duplicated(keep="first") & ok
        flag(dup, f"duplicate {key}")

    bad = reasons != ""
    rejected = [RowDiagnostic(kind, int(i) + 1, reasons[i]) for i in np.flatnonzero(bad)]
    table = out.loc[~bad].reset_index(drop=True)
    return LoadResult(table, rejected)


def load_table(path, kind, known_cbgs=None) -> LoadResult:
    """Read one CSV file of the given kind.

    Parameters
    ----------
    path : str or Path
    kind : str
        One of the keys of :data:`SCHEMAS`.
    known_cbgs : iterable of str, optional
        CBG identifiers used for referential checks on cbg columns.
    """
    raw = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    result = parse_table(raw, kind, known_cbgs)
    if result.rejected:
        logger.info("%s: rejected %d row(s)", kind, len(result.rejected))
    return result


def load_tables(paths: dict, strict_cbgs=True) -> Dataset:
    """Load a set of tables; the CBG table (when given) is loaded first."""
    tables, rejected = {}, []
    known = None
    for kind in LOAD_ORDER:
        if kind not in paths or paths[kind] is None:
            continue
        res = load_table(paths[kind], kind, known_cbgs=known if strict_cbgs else None)
        tables[kind] = res.table
        rejected.extend(res.rejected)
        if kind == "cbgs":
            known = res.table["cbg_id"].tolist()
    unknown = set(paths) - set(LOAD_ORDER)
    if unknown:
        raise KeyError(f"unknown table kind(s): {sorted(unknown)}")
    return Dataset(tables, rejected)


def write_table(table: pd.DataFrame, path, kind):
    """Write a table back in its input schema; reloading yields an equal table."""
    columns = list(SCHEMAS[kind][0])
    out = table.copy()
    if kind == "stops":
        out["start_iso8601"] = out["start"].map(lambda t: t.isoformat())
    columns += [c for c in OPTIONAL_COLUMNS.get(kind, []) if c in out.columns]
    out[columns].to_csv(path, index=False, lineterminator="\n")


@dataclass
class ValidationReport:
    orphan_stops: int = 0
    orphan_parcels: int = 0
    orphan_adjacency: int = 0
    claims_without_parcel: int = 0
    asymmetric_adjacency: list[tuple[str, str]] = field(default_factory=list)
    rejected_rows: int = 0

    @property
    def orphan_count(self):
        return (self.orphan_stops + self.orphan_parcels + self.orphan_adjacency
                + self.claims_without_parcel)

    @property
    def ok(self):
        return self.orphan_count == 0 and not self.asymmetric_adjacency

    def to_dict(self):
        return {
            "orphan_stops": self.orphan_stops,
            "orphan_parcels": self.orphan_parcels,
            "orphan_adjacency": self.orphan_adjacency,
            "claims_without_parcel": self.claims_without_parcel,
            "asymmetric_adjacency": [list(p) for p in self.asymmetric_adjacency],
            "rejected_rows": self.rejected_rows,
            "ok": self.ok,
        }


def asymmetric_pairs(adjacency: pd.DataFrame) -> list[tuple[str, str]]:
    """Directed pairs (a, b) whose reverse (b, a) is absent."""
    pairs = set(zip(adjacency["cbg_id_a"], adjacency["cbg_id_b"]))
    return sorted((a, b) for a, b in pairs if (b, a) not in pairs)


def validate_dataset(dataset, max_distance_miles=0.25) -> ValidationReport:
    """Cross-table referential checks. Report-only; never raises."""
    tables = dataset.tables if isinstance(dataset, Dataset) else dict(dataset)
    report = ValidationReport()
    if isinstance(dataset, Dataset):
        report.rejected_rows = len(dataset.rejected)
    cbgs = tables.get("cbgs")
    known = set(cbgs["cbg_id"]) if cbgs is not None else None

    if known is not None:
        if "stops" in tables:
            report.orphan_stops = int((~tables["stops"]["cbg_id"].isin(known)).sum())
        if "parcels" in tables:
            report.orphan_parcels = int((~tables["parcels"]["cbg_id"].isin(known)).sum())
        if "adjacency" in tables:
            adj = tables["adjacency"]
            report.orphan_adjacency = int(
                (~adj["cbg_id_a"].isin(known) | ~adj["cbg_id_b"].isin(known)).sum())
    if "adjacency" in tables:
        report.asymmetric_adjacency = asymmetric_pairs(tables["adjacency"])

    parcels, claims = tables.get("parcels"), tables.get("claims")
    if parcels is not None and claims is not None and len(claims):
        if len(parcels) == 0:
            report.claims_without_parcel = len(claims)
        else:
            from scipy.spatial import cKDTree

            ref = float(parcels["lat"].mean())
            tree = cKDTree(project_miles(parcels["lon"], parcels["lat"], ref))
            d, _ = tree.query(project_miles(claims["lon"], claims["lat"], ref), k=1)
            report.claims_without_parcel = int((d > max_distance_miles).sum())
    return report
