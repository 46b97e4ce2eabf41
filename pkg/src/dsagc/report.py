"""Consolidate metrics CSVs into a methods x N accuracy table."""
from __future__ import annotations

import csv
import json
from collections import defaultdict
from pathlib import Path

import numpy as np

from dsagc.errors import ConfigError, ProtocolError


def format_cell(mean: float, std: float) -> str:
    """Percentages as ``85.98±06.21``; the std keeps two integer digits."""
    return f"{100 * mean:.2f}±{100 * std:05.2f}"


def find_metric_files(root) -> list[Path]:
    root = Path(root)
    if root.is_file():
        return [root]
    return sorted(p for p in root.rglob("*.csv") if p.name != "report.csv")


def read_metrics(path) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if rows and not {"method", "N", "row", "accuracy"} <= set(rows[0]):
        return []
    return rows


def _dataset_manifest(csv_path: Path):
    m = csv_path.parent / "dataset.json"
    return json.loads(m.read_text(encoding="utf-8")) if m.exists() else None


def build_table(root):
    """Return ``(labels, ns, cells)`` with ``cells[(label, N)] = (mean, std, n_folds)``.

    Fold accuracies of every seed of a (method, E_t, N) run are pooled. Runs
    over different datasets, or repeated runs that disagree, raise
    :class:`ProtocolError` naming the offending files.
    """
    files = find_metric_files(root)
    runs: dict[tuple, dict[str, tuple]] = defaultdict(dict)
    manifests: dict[str, list[Path]] = defaultdict(list)
    for path in files:
        rows = read_metrics(path)
        if not rows:
            continue
        man = _dataset_manifest(path)
        if man is not None:
            manifests[json.dumps(man, sort_keys=True)].append(path)
        for r in rows:
            if r["row"] != "fold":
                continue
            key = (r["method"], int(r["E_t"]), int(r["N"]), r["seed"])
            runs[key].setdefault(path, tuple())
            runs[key][path] += ((r["target_subject"], r["accuracy"]),)
    if not runs:
        raise ConfigError(f"no metrics CSV with fold rows under {root}")
    if len(manifests) > 1:
        offenders = [str(p) for group in manifests.values() for p in group]
        raise ProtocolError("metrics come from different datasets: " + ", ".join(offenders))
    conflicts = []
    for key, by_file in runs.items():
        variants = {tuple(sorted(v)) for v in by_file.values()}
        if len(variants) > 1:
            conflicts.append(f"{key}: " + ", ".join(str(p) for p in by_file))
    if conflicts:
        raise ProtocolError("conflicting results for the same run: " + "; ".join(conflicts))

    et_by_method = defaultdict(set)
    for method, et, _, _ in runs:
        et_by_method[method].add(et)
    pooled = defaultdict(list)
    for (method, et, n, _), by_file in runs.items():
        label = method if len(et_by_method[method]) == 1 else f"{method} E_t={et}"
        accs = next(iter(by_file.values()))
        pooled[(label, n)] += [float(a) for _, a in accs]
    cells = {k: (float(np.mean(v)), float(np.std(v)), len(v)) for k, v in pooled.items()}
    labels = sorted({k[0] for k in cells}, key=lambda s: (s != "DS-AGC", s))
    ns = sorted({k[1] for k in cells})
    return labels, ns, cells


def render_report(labels, ns, cells) -> tuple[str, str]:
    """CSV text and aligned plain-text table."""
    header = ["method"] + [f"N={n}" for n in ns]
    body = [[lab] + [format_cell(*cells[(lab, n)][:2]) if (lab, n) in cells else "-" for n in ns]
            for lab in labels]
    csv_text = "\n".join(",".join(r) for r in [header] + body) + "\n"
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in
                       enumerate(zip(r, widths))).rstrip() for r in [header] + body]
    return csv_text, "\n".join(lines) + "\n"
