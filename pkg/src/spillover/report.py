"""
Human- and machine-readable reports built from stage artifacts.

Nothing is re-estimated here: every number is read from the regression,
sweep and covariate artifacts. Each table is written twice, as CSV (the
machine contract) and as aligned text.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pandas as pd

from .econometrics import significance_stars

LABELS = {
    "rr": ("Dependent Variable", "Recovery rate", "RR"),
    "nc": ("Independent Variables", "Number of claims", "NC"),
    "mp": ("Independent Variables", "Mean of PDE", "MP"),
    "sdp": ("Independent Variables", "Standard deviation of PDE", "SDP"),
    "mdp": ("Independent Variables", "Major damage level of PDE", "MDP"),
    "pop": ("Control Variables", "Population density", "POP"),
    "ms": ("Control Variables", "Minority segregation", "MS"),
    "is": ("Control Variables", "Income segregation", "IS"),
    "hmi": ("Control Variables", "Human mobility index", "HMI"),
    "poi": ("Control Variables", "POI density", "POI"),
    "rd": ("Control Variables", "Road density", "RD"),
}

SCHEME_TITLES = {
    "inverse_distance": "Inverse Distance",
    "contiguity": "Shared Boundary",
    "knn": "K Nearest Neighbors",
    "inverse_square": "Inverse Square of Geographical Distance",
}


def _label(var):
    return LABELS.get(var, ("Variables", var, var.upper()))


def _fmt(value, stars=""):
    if value is None or (isinstance(value, float) and not np.isfinite(value)):
        return ""
    text = f"{value:.3f}"
    if text == "-0.000":
        text = "0.000"
    return f"{text}{stars}"


def _text_table(header, rows, title=None, notes=()):
    widths = [max(len(str(h)), *(len(str(r[i])) for r in rows)) if rows else len(str(h))
              for i, h in enumerate(header)]
    lines = [] if title is None else [title]
    lines.append("  ".join(str(h).ljust(w) for h, w in zip(header, widths)).rstrip())
    lines.append("  ".join("-" * w for w in widths))
    for r in rows:
        lines.append("  ".join(str(c).ljust(w) for c, w in zip(r, widths)).rstrip())
    lines.extend(notes)
    return "\n".join(lines) + "\n"


def star_note(convention):
    if convention == "strict":
        return "***, **, and * refer to the significance level at 0.1%, 1%, and 5%, respectively."
    return "***, **, and * refer to the significance level at 1%, 5%, and 10%, respectively."


def descriptive_table(descriptive: pd.DataFrame):
    """Table-1 layout: type, name, abbreviation, min, max, mean, std."""
    rows = []
    for _, r in descriptive.iterrows():
        vtype, name, abbr = _label(r["variable"])
        rows.append({"variable_type": vtype, "variable": name, "abbreviation": abbr,
                     "min": r["min"], "max": r["max"], "mean": r["mean"], "std_dev": r["std"]})
    csv = pd.DataFrame(rows)
    text_rows = [[r["variable_type"], r["variable"], r["abbreviation"]]
                 + [f"{r[c]:.3f}" for c in ("min", "max", "mean", "std_dev")] for r in rows]
    text = _text_table(["Variable Type", "Variables", "Abbreviation", "Min", "Max", "Mean",
                        "Std Dev"], text_rows, title="Descriptive statistics of variables")
    return csv, text


def _moran_header(moran, convention):
    if not moran or "I" not in moran:
        return ""
    p = moran.get("p_value")
    stars = significance_stars(p, convention) if p is not None else ""
    p_txt = "n/a" if p is None else f"{p:.3f}{stars}"
    return f"Global Moran's I: {moran['I']:.3f}, P value: {p_txt}"


def regression_table(report: dict, convention: str):
    """Table-2 layout; SLX columns are omitted when no SLX fit exists."""
    names = report["regressors"]
    ols = report["ols"]["coefficients"]
    slx = report.get("slx")
    has_slx = bool(slx and slx.get("effects"))
    rows = []
    for v in names:
        group, _, abbr = _label(v)
        row = {"section": group, "variable": abbr,
               "ols_coefficient": ols[v]["coef"],
               "ols_stars": significance_stars(ols[v]["p"], convention)}
        if has_slx:
            e = slx["effects"][v]
            row.update({"slx_coefficient": slx["coefficients"][v]["coef"],
                        "slx_stars": significance_stars(slx["coefficients"][v]["p"],
                                                        convention)})
            for col in ("direct", "indirect", "total"):
                row[col] = e[col]
                row[f"{col}_stars"] = significance_stars(e[f"{col}_p"], convention)
        rows.append(row)
    perf = [("R2", "r2"), ("Adjusted R2", "adj_r2"), ("Log-likelihood", "log_likelihood"),
            ("AIC", "aic")]
    for label, key in perf:
        row = {"section": "Model Performance", "variable": label,
               "ols_coefficient": report["ols"][key], "ols_stars": ""}
        if has_slx:
            row.update({"slx_coefficient": slx[key], "slx_stars": ""})
        rows.append(row)
    csv = pd.DataFrame(rows)

    moran = _moran_header(report.get("moran", {}).get("rr"), convention)
    header = ["Variables", "OLS Coefficient"]
    if has_slx:
        header += ["SLX Coefficient", "Direct effect", "Indirect effect", "Total effect"]
    text_rows, section = [], None
    for r in rows:
        if r["section"] != section:
            section = r["section"]
            text_rows.append([f"{section}:"] + [""] * (len(header) - 1))
        cells = [r["variable"], _fmt(r["ols_coefficient"], r["ols_stars"])]
        if has_slx:
            cells.append(_fmt(r["slx_coefficient"], r["slx_stars"]))
            for col in ("direct", "indirect", "total"):
                cells.append(_fmt(r.get(col), r.get(f"{col}_stars", "")) if col in r else "")
        text_rows.append(cells)
    title = "Regression result and model performance of OLS and SLX model"
    if has_slx and moran:
        title += f"\nSLX model ({report.get('weights', '')}; {moran})"
    notes = [f"Note: Number of observations: {report['n']} CBGs; {star_note(convention)}"]
    return csv, _text_table(header, text_rows, title=title, notes=notes)


def robustness_table(robustness: dict, reach_summary: pd.DataFrame | None, convention: str,
                     names, main_scheme="inverse_distance"):
    """Table-S1 layout: one block of Coefficient/Direct/Indirect/Total per scheme.

    Cut-off and extremum rows (with deviation from the main scheme) appear
    only for schemes that have a distance sweep.
    """
    rows = []
    texts = []
    main = None
    if reach_summary is not None:
        main = reach_summary.loc[reach_summary["scheme"] == main_scheme].set_index("variable")
    for scheme, block in robustness.items():
        if "error" in block:
            texts.append(f"{SCHEME_TITLES.get(scheme, scheme)}: not estimated ({block['error']})")
            continue
        slx = block["slx"]
        for v in names:
            e = slx["effects"][v]
            c = slx["coefficients"][v]
            rows.append({"scheme": scheme, "row": _label(v)[2],
                         "coefficient": c["coef"],
                         "coefficient_stars": significance_stars(c["p"], convention),
                         **{col: e[col] for col in ("direct", "indirect", "total")},
                         **{f"{col}_stars": significance_stars(e[f"{col}_p"], convention)
                            for col in ("direct", "indirect", "total")}})
        for label, key in (("R2", "r2"), ("Adjusted R2", "adj_r2"),
                           ("Log-likelihood", "log_likelihood"), ("AIC", "aic")):
            rows.append({"scheme": scheme, "row": label, "coefficient": slx[key]})
        if reach_summary is not None and scheme in set(reach_summary["scheme"]):
            summ = reach_summary.loc[reach_summary["scheme"] == scheme].set_index("variable")
            for v in names:
                if v not in summ.index:
                    continue
                for label, col in (("Cut-off distance", "cutoff_distance"),
                                   ("Min/max distance", "extremum_distance")):
                    val = summ.loc[v, col]
                    ref = main.loc[v, col] if main is not None and v in main.index else np.nan
                    dev = (val - ref) / ref * 100 if pd.notna(val) and pd.notna(ref) and ref else np.nan
                    rows.append({"scheme": scheme, "row": f"{label} ({_label(v)[2]})",
                                 "coefficient": val, "deviation_pct": dev})
    csv = pd.DataFrame(rows)

    for scheme, block in robustness.items():
        if "error" in block:
            continue
        sub = csv.loc[csv["scheme"] == scheme]
        header = ["Variables", "Coefficient", "Direct", "Indirect", "Total"]
        trows = []
        for _, r in sub.iterrows():
            if "deviation_pct" in r and pd.notna(r.get("deviation_pct")):
                trows.append([r["row"], f"{r['coefficient']:.1f} ({r['deviation_pct']:+.2f}%)",
                              "", "", ""])
            elif r["row"].startswith(("Cut-off", "Min/max")):
                trows.append([r["row"], "" if pd.isna(r["coefficient"])
                              else f"{r['coefficient']:.1f}", "", "", ""])
            elif pd.isna(r.get("direct")):
                trows.append([r["row"], _fmt(r["coefficient"]), "", "", ""])
            else:
                trows.append([r["row"], _fmt(r["coefficient"], r["coefficient_stars"])]
                             + [_fmt(r[c], r[f"{c}_stars"]) for c in ("direct", "indirect", "total")])
        title = f"{SCHEME_TITLES.get(scheme, scheme)} ({_moran_header(block.get('moran_rr'), convention)})"
        texts.append(_text_table(header, trows, title=title))
    text = "Regression result and model performance of SLX models with different spatial " \
           "weight matrices\n\n" + "\n".join(texts) + star_note(convention) + "\n"
    return csv, text


def emit_report(artifact_dir, out_dir=None, convention=None):
    """Write table1/table2/table_s1 (.csv and .txt) and reach_curve.csv.

    Parameters
    ----------
    artifact_dir : path
        Pipeline artifact directory holding at least ``regression/``.
    out_dir : path, optional
        Defaults to ``<artifact_dir>/report``.
    convention : {'table2', 'strict'}, optional
        Star convention; defaults to the one recorded by the regression stage.

    Returns
    -------
    list of Path
    """
    root = Path(artifact_dir)
    reg = root / "regression" / "regression_report.json"
    if not reg.exists():
        raise FileNotFoundError(f"missing regression artifacts under {root}")
    report = json.loads(reg.read_text())
    convention = convention or report.get("star_convention", "table2")
    out = Path(out_dir) if out_dir is not None else root / "report"
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def save(frame, text, stem):
        frame.to_csv(out / f"{stem}.csv", index=False, lineterminator="\n",
                     float_format="%.6f")
        (out / f"{stem}.txt").write_text(text)
        written.extend([out / f"{stem}.csv", out / f"{stem}.txt"])

    desc = root / "regression" / "descriptive.csv"
    if desc.exists():
        save(*descriptive_table(pd.read_csv(desc)), "table1")
    save(*regression_table(report, convention), "table2")

    rob = root / "regression" / "robustness.json"
    summary_path = root / "sweep" / "reach_summary.csv"
    summary = pd.read_csv(summary_path) if summary_path.exists() else None
    if rob.exists():
        robustness = json.loads(rob.read_text())
        if robustness:
            save(*robustness_table(robustness, summary, convention, report["regressors"]),
                 "table_s1")
    curve = root / "sweep" / "reach_curve.csv"
    if curve.exists():
        target = out / "reach_curve.csv"
        target.write_bytes(curve.read_bytes())
        written.append(target)
    return written
