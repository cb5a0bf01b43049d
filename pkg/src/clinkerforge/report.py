"""Report tables built from evaluation artifacts: model comparison, parity,
error histograms with sigma markers, time series with bands and radar data.

All inputs are long prediction tables with columns
``family, phase, repeat, split, timestamp, y_true, y_pred``.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
import pandas as pd

from .datamodel import PHASES, read_csv, write_csv
from .eval_tune import mae, mape, r2
from .models import FAMILY_LABELS
from .phase_equations import error_histogram

MARKS = ("best", "second", "third")
PREDICTIONS_FILE = "predictions.csv"
FEATURE_SET_FILE = "feature_sets.csv"


class MissingArtifacts(FileNotFoundError):
    pass


def metric_rows(preds: pd.DataFrame, split: str = "Test") -> pd.DataFrame:
    """Per family, phase and repeat: MAE, R^2 and MAPE on ``split``."""
    sub = preds[preds["split"] == split]
    rows = []
    for (fam, phase, rep), g in sub.groupby(["family", "phase", "repeat"], sort=False):
        yt, yp = g["y_true"].to_numpy(), g["y_pred"].to_numpy()
        rows.append({"family": fam, "phase": phase, "repeat": rep, "MAE": mae(yt, yp), "R2": r2(yt, yp),
                     "MAPE": mape(yt, yp)})
    return pd.DataFrame(rows)


def comparison_table(preds: pd.DataFrame, split: str = "Test") -> pd.DataFrame:
    """One row per model, MAE / R2 / MAPE per phase averaged over repeats, plus MAPE rank marks."""
    m = metric_rows(preds, split)
    families = list(dict.fromkeys(m["family"]))
    table = pd.DataFrame({"model": [FAMILY_LABELS.get(f, f) for f in families]})
    for phase in PHASES:
        sub = m[m["phase"] == phase].groupby("family", sort=False)[["MAE", "R2", "MAPE"]].mean()
        for metric in ("MAE", "R2", "MAPE"):
            table[f"{phase}_{metric}"] = [sub.loc[f, metric] if f in sub.index else np.nan for f in families]
    for phase in PHASES:
        col = table[f"{phase}_MAPE"].to_numpy()
        marks = np.full(len(table), "", dtype=object)
        order = [i for i in np.argsort(col, kind="stable") if np.isfinite(col[i])]
        for label, i in zip(MARKS, order):
            marks[i] = label
        table[f"{phase}_mark"] = marks
    return table


def seed_table(preds: pd.DataFrame, split: str = "Test") -> pd.DataFrame:
    """Mean and sample sd over repeats of every metric."""
    m = metric_rows(preds, split)
    g = m.groupby(["family", "phase"], sort=False)[["MAE", "R2", "MAPE"]]
    mean = g.mean().add_suffix("_mean")
    sd = g.std(ddof=1).fillna(0.0).add_suffix("_sd")
    out = pd.concat([mean, sd], axis=1).reset_index()
    out.insert(2, "repeats", g.size().to_numpy())
    return out


def parity_data(preds: pd.DataFrame, repeat: int = 0) -> pd.DataFrame:
    sub = preds[preds["repeat"] == repeat]
    return sub[["family", "phase", "split", "timestamp", "y_true", "y_pred"]].reset_index(drop=True)


def error_histograms(preds: pd.DataFrame, split: str = "Test", width: float = 0.5,
                     repeat: int = 0) -> tuple[pd.DataFrame, pd.DataFrame]:
    """Signed-error histograms per model and phase, and the +/-2 and +/-4 sigma marker positions."""
    sub = preds[(preds["split"] == split) & (preds["repeat"] == repeat)]
    hists, bands = [], []
    for (fam, phase), g in sub.groupby(["family", "phase"], sort=False):
        err = (g["y_pred"] - g["y_true"]).to_numpy()
        h = error_histogram(err, width)
        h.insert(0, "phase", phase)
        h.insert(0, "family", fam)
        hists.append(h)
        sd = float(err.std(ddof=1)) if len(err) > 1 else 0.0
        bands.append({"family": fam, "phase": phase, "mean_error": float(err.mean()), "sigma": sd,
                      "minus4": -4 * sd, "minus2": -2 * sd, "plus2": 2 * sd, "plus4": 4 * sd,
                      "within2": float(np.mean(np.abs(err) <= 2 * sd)),
                      "within4": float(np.mean(np.abs(err) <= 4 * sd))})
    return pd.concat(hists, ignore_index=True), pd.DataFrame(bands)


def band_series(preds: pd.DataFrame, repeat: int = 0, k: float = 3.0) -> pd.DataFrame:
    """Time-ordered holdout predictions (test rows if no holdout) with +/- k sigma bands.

    Sigma is the sd of training residuals of the same model and phase.
    """
    sub = preds[preds["repeat"] == repeat]
    target = "Holdout" if (sub["split"] == "Holdout").any() else "Test"
    out = []
    for (fam, phase), g in sub.groupby(["family", "phase"], sort=False):
        tr = g[g["split"] == "Train"]
        sd = float((tr["y_pred"] - tr["y_true"]).std(ddof=1)) if len(tr) > 1 else 0.0
        s = g[g["split"] == target].sort_values("timestamp", kind="stable")
        out.append(pd.DataFrame({"family": fam, "phase": phase, "split": target,
                                 "timestamp": s["timestamp"].to_numpy(), "y_true": s["y_true"].to_numpy(),
                                 "y_pred": s["y_pred"].to_numpy(), "lower": s["y_pred"].to_numpy() - k * sd,
                                 "upper": s["y_pred"].to_numpy() + k * sd}))
    return pd.concat(out, ignore_index=True)


def radar_data(scores: pd.DataFrame) -> pd.DataFrame:
    """Feature-set x phase MAPE (mean over repeats), one row per feature set."""
    piv = scores.groupby(["feature_set", "phase"], sort=False)["MAPE"].mean().unstack("phase")
    order = list(dict.fromkeys(scores["feature_set"]))
    piv = piv.reindex(index=order, columns=[p for p in PHASES if p in piv.columns])
    return piv.reset_index()


def read_header(path) -> str:
    with open(path, encoding="utf-8") as fh:
        first = fh.readline().rstrip("\n")
    return first[2:] if first.startswith("# ") else ""


def build_report(results_dir, out_dir=None, hist_width: float = 0.5) -> dict[str, Path]:
    """Write the report bundle next to (or away from) the evaluation artifacts."""
    results_dir = Path(results_dir)
    out_dir = Path(out_dir) if out_dir is not None else results_dir
    pred_path = results_dir / PREDICTIONS_FILE
    if not pred_path.exists():
        raise MissingArtifacts(f"{pred_path} not found; run evaluate or pipeline first")
    header = read_header(pred_path)
    preds = read_csv(pred_path)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = {}

    def emit(name, df):
        path = out_dir / name
        write_csv(df, path, header)
        written[name] = path

    emit("model_comparison.csv", comparison_table(preds))
    emit("seed_summary.csv", seed_table(preds))
    emit("parity.csv", parity_data(preds))
    hists, bands = error_histograms(preds, width=hist_width)
    emit("error_histograms.csv", hists)
    emit("error_bands.csv", bands)
    emit("series.csv", band_series(preds))
    fs_path = results_dir / FEATURE_SET_FILE
    if fs_path.exists():
        emit("radar.csv", radar_data(read_csv(fs_path)))
    return written
