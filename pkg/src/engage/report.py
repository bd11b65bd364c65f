"""JSON run reports and the CSV tables aggregated from them.

Every command that evaluates something writes one report::

    {"format": "engage.report", "version": 1, "kind": ..., ...}

``kind`` is ``"loso"`` (``folds``), ``"subject"`` (``runs``), ``"train"``
(``train``: training-set evaluation) or ``"trajectory"`` (``windows`` and
``rho``).  :func:`aggregate` merges any mix of them into CSV tables.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .errors import ReportError

REPORT_FORMAT = "engage.report"
REPORT_VERSION = 1
KINDS = ("loso", "subject", "train", "trajectory")


def make_report(kind: str, **payload) -> dict:
    if kind not in KINDS:
        raise ValueError(f"unknown report kind {kind!r}")
    return {"format": REPORT_FORMAT, "version": REPORT_VERSION, "kind": kind, **payload}


def write_report(doc: dict, path) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_report(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise ReportError(f"{path}: unreadable report ({exc})") from exc
    if not isinstance(doc, dict) or doc.get("format") != REPORT_FORMAT:
        raise ReportError(f"{path}: not an engage report")
    if doc.get("version") != REPORT_VERSION:
        raise ReportError(f"{path}: report version {doc.get('version')!r}, expected {REPORT_VERSION}")
    if doc.get("kind") not in KINDS:
        raise ReportError(f"{path}: unknown report kind {doc.get('kind')!r}")
    return doc


def _evaluations(doc):
    kind = doc["kind"]
    if kind == "loso":
        return doc["folds"]
    if kind == "subject":
        return doc["runs"]
    if kind == "train":
        return [doc["train"]]
    return []


def _fmt(x) -> str:
    return "" if x is None else f"{x:.4f}"


def _mean_std(values):
    v = np.asarray(values, dtype=np.float64)
    return float(v.mean()), float(v.std())


def aggregate(reports, out_dir) -> list[Path]:
    """Write accuracy, confusion, window and correlation tables; returns the paths written.

    Tables with no contributing report are not written.
    """
    docs = list(reports)
    if not docs:
        raise ReportError("no reports to aggregate")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    evals = [(doc["kind"], ev) for doc in docs for ev in _evaluations(doc)]
    if evals:
        path = out_dir / "accuracy.csv"
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["protocol", "subject", "n", "accuracy", "f1_disengaged", "f1_engaged"])
            for kind in KINDS:
                rows = [ev for k, ev in evals if k == kind]
                for ev in rows:
                    w.writerow([kind, ev["subject_id"], ev["n"], _fmt(ev["accuracy"]),
                                _fmt(ev["f1"][0]), _fmt(ev["f1"][1])])
                if rows:
                    mean, std = _mean_std([ev["accuracy"] for ev in rows])
                    w.writerow([kind, "mean", sum(ev["n"] for ev in rows), _fmt(mean), "", ""])
                    w.writerow([kind, "std", "", _fmt(std), "", ""])
        written.append(path)

        path = out_dir / "confusion.csv"
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["protocol", "subject", "true", "predicted", "count"])
            names = ("disengaged", "engaged")
            for kind, ev in evals:
                for i in range(2):
                    for j in range(2):
                        w.writerow([kind, ev["subject_id"], names[i], names[j], ev["confusion"][i][j]])
        written.append(path)

    trajectories = [doc for doc in docs if doc["kind"] == "trajectory"]
    if trajectories:
        path = out_dir / "windows.csv"
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["subject", "window", "start_s", "end_s", "n_trials",
                        "percent_engaged", "percent_disengaged"])
            for doc in trajectories:
                for k, win in enumerate(doc["windows"]):
                    frac = win["fraction_engaged"]
                    w.writerow([doc["subject_id"], k + 1, win["start_s"], win["end_s"], win["n_trials"],
                                "" if frac is None else f"{100 * frac:.2f}",
                                "" if frac is None else f"{100 * (1 - frac):.2f}"])
        written.append(path)

        rhos = [(doc["subject_id"], doc.get("rho")) for doc in trajectories]
        path = out_dir / "correlation.csv"
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["subject", "correlation"])
            for sid, rho in rhos:
                w.writerow([sid, "" if rho is None else f"{rho:.2f}"])
            values = [r for _, r in rhos if r is not None]
            if values:
                mean, std = _mean_std(values)
                w.writerow(["mean±std", f"{mean:.2f}±{std:.2f}"])
        written.append(path)
    return written
