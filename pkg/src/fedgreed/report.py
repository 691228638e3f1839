"""Per-round CSV, run summaries and dependency-free SVG charts."""
from __future__ import annotations

import csv
import io
import json
import math
import statistics
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

from .data import PartitionPlan
from .engine import RoundRecord
from .errors import FormatError, InvalidInputError
from .model import Dataset

CSV_HEADER = ["round", "accuracy", "server_loss", "attacked", "stop_j", "v_min", "v_max"]
PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
           "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"]


def _fmt(x: float) -> str:
    return f"{float(x):.6f}"


def _write_text(path, text: str) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def write_round_csv(records: Sequence[RoundRecord], path) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in records:
        v = r.client_losses
        writer.writerow([
            r.round,
            _fmt(r.centralized_accuracy),
            _fmt(r.server_eval_loss),
            int(r.attacked),
            "" if r.stop_j is None else r.stop_j,
            _fmt(min(v)) if v else "",
            _fmt(max(v)) if v else "",
        ])
    _write_text(path, buf.getvalue())


def read_round_csv(path) -> list[dict]:
    """Parse a file written by :func:`write_round_csv` back into typed rows."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CSV_HEADER:
            raise FormatError(f"{path}: unexpected header {header}")
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if len(row) != len(CSV_HEADER):
                raise FormatError(f"{path}: line {line_no} has {len(row)} fields")
            rows.append({
                "round": int(row[0]),
                "accuracy": float(row[1]),
                "server_loss": float(row[2]),
                "attacked": bool(int(row[3])),
                "stop_j": int(row[4]) if row[4] else None,
                "v_min": float(row[5]) if row[5] else None,
                "v_max": float(row[6]) if row[6] else None,
            })
    return rows


@dataclass
class RunSummary:
    config_hash: str
    mean_post_attack_accuracy: float
    final_accuracy: float
    rounds: int
    warnings: list[str] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


def summarize(records: Sequence[RoundRecord], activation_round: int,
              config_hash: str = "", warnings: Sequence[str] = ()) -> RunSummary:
    """Mean accuracy over rounds ``t >= activation_round``; all rounds if none qualify."""
    if not records:
        raise InvalidInputError("cannot summarize an empty run")
    ordered = sorted(records, key=lambda r: r.round)
    notes = list(warnings)
    window = [r.centralized_accuracy for r in ordered if r.round >= activation_round]
    if not window:
        notes.append(
            f"activation_round {activation_round} >= T={len(ordered)}; mean taken over all rounds"
        )
        window = [r.centralized_accuracy for r in ordered]
    return RunSummary(
        config_hash=config_hash,
        mean_post_attack_accuracy=float(np.mean(window)),
        final_accuracy=float(ordered[-1].centralized_accuracy),
        rounds=len(ordered),
        warnings=notes,
    )


def write_summary(summary: RunSummary, path) -> None:
    _write_text(path, summary.to_json())


def read_summary(path) -> RunSummary:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
        return RunSummary(**raw)
    except (OSError, json.JSONDecodeError, TypeError) as exc:
        raise FormatError(f"{path}: not a run summary ({exc})") from None


def combine_summaries(summaries: Sequence[RunSummary], labels: Sequence | None = None) -> dict:
    """Mean and sample standard deviation of post-attack accuracy across runs."""
    if not summaries:
        raise InvalidInputError("no summaries to combine")
    acc = [s.mean_post_attack_accuracy for s in summaries]
    return {
        "n_runs": len(summaries),
        "mean_post_attack_accuracy": float(np.mean(acc)),
        "std_post_attack_accuracy": float(statistics.stdev(acc)) if len(acc) > 1 else 0.0,
        "mean_final_accuracy": float(np.mean([s.final_accuracy for s in summaries])),
        "config_hashes": [s.config_hash for s in summaries],
        "runs": [
            {"label": str(lab), "mean_post_attack_accuracy": s.mean_post_attack_accuracy}
            for lab, s in zip(labels if labels is not None else range(len(summaries)), summaries)
        ],
    }


def _c(x: float) -> str:
    return f"{x:.2f}"


def render_accuracy_svg(series: Sequence[tuple[str, Sequence[int], Sequence[float]]], path,
                        activation_round: int | None = None, title: str = "Centralized accuracy") -> None:
    """Line chart of accuracy (0..1) against round, one polyline per series."""
    if not series:
        raise InvalidInputError("render_accuracy_svg needs at least one series")
    width, height = 720, 420
    left, right, top, bottom = 60, 170, 40, 50
    pw, ph = width - left - right, height - top - bottom
    max_round = max((max(r) for _, r, _ in series if len(r)), default=1)
    max_round = max(max_round, 1)

    def sx(t):
        return left + pw * t / max_round

    def sy(a):
        return top + ph * (1.0 - min(max(a, 0.0), 1.0))

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{left + pw / 2:.2f}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<g class="axes" stroke="black" stroke-width="1">'
        f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}"/>'
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}"/></g>',
    ]
    for k in range(6):
        a = k / 5
        out.append(f'<line x1="{left - 4}" y1="{_c(sy(a))}" x2="{left}" y2="{_c(sy(a))}" stroke="black"/>'
                   f'<text x="{left - 8}" y="{_c(sy(a) + 4)}" text-anchor="end">{a:.1f}</text>')
    step = max(1, int(math.ceil(max_round / 10)))
    for t in range(0, max_round + 1, step):
        out.append(f'<line x1="{_c(sx(t))}" y1="{top + ph}" x2="{_c(sx(t))}" y2="{top + ph + 4}" stroke="black"/>'
                   f'<text x="{_c(sx(t))}" y="{top + ph + 18}" text-anchor="middle">{t}</text>')
    out.append(f'<text x="{left + pw / 2:.2f}" y="{height - 10}" text-anchor="middle">round</text>')
    out.append(f'<text x="16" y="{top + ph / 2:.2f}" text-anchor="middle" '
               f'transform="rotate(-90 16 {top + ph / 2:.2f})">accuracy</text>')
    if activation_round is not None and 0 <= activation_round <= max_round:
        x = _c(sx(activation_round))
        out.append(f'<line class="activation" x1="{x}" y1="{top}" x2="{x}" y2="{top + ph}" '
                   f'stroke="#555" stroke-dasharray="4 3"/>')
    for k, (name, rounds, accs) in enumerate(series):
        color = PALETTE[k % len(PALETTE)]
        pts = " ".join(f"{_c(sx(t))},{_c(sy(a))}" for t, a in zip(rounds, accs))
        out.append(f'<polyline class="series" data-name="{escape(str(name))}" fill="none" '
                   f'stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        ly = top + 10 + 18 * k
        out.append(f'<g class="legend-entry"><line x1="{left + pw + 15}" y1="{ly}" x2="{left + pw + 35}" '
                   f'y2="{ly}" stroke="{color}" stroke-width="2"/>'
                   f'<text x="{left + pw + 40}" y="{ly + 4}">{escape(str(name))}</text></g>')
    out.append("</svg>")
    _write_text(path, "\n".join(out) + "\n")


def render_partition_svg(plan: PartitionPlan, data: Dataset, path) -> None:
    """Clients x classes bubble chart; circle area is proportional to the sample count."""
    n = len(data)
    for idx in plan.assignments:
        if idx.size and (idx.min() < 0 or idx.max() >= n):
            raise InvalidInputError("partition references samples outside the dataset")
    union = np.concatenate(plan.assignments) if plan.assignments else np.empty(0, dtype=np.int64)
    if np.unique(union).size != union.size:
        raise InvalidInputError("partition assigns a sample to more than one client")
    counts = plan.class_counts(data)
    n_clients, n_classes = counts.shape
    cell = 40
    left, top = 70, 40
    width = left + cell * n_classes + 20
    height = top + cell * n_clients + 50
    rmax = cell * 0.48
    cmax = max(int(counts.max()), 1)
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.2f}" y="20" text-anchor="middle" font-size="13">'
        f'Dirichlet partition (alpha={plan.alpha:g})</text>',
    ]
    for i in range(n_clients):
        cy = top + cell * i + cell / 2
        out.append(f'<text x="{left - 8}" y="{_c(cy + 4)}" text-anchor="end">client {i}</text>')
    for c in range(n_classes):
        cx = left + cell * c + cell / 2
        out.append(f'<text x="{_c(cx)}" y="{top + cell * n_clients + 18}" text-anchor="middle">{c}</text>')
    out.append(f'<text x="{left + cell * n_classes / 2:.2f}" y="{height - 8}" text-anchor="middle">class</text>')
    for i in range(n_clients):
        for c in range(n_classes):
            k = int(counts[i, c])
            if k == 0:
                continue
            r = rmax * math.sqrt(k / cmax)
            cx = left + cell * c + cell / 2
            cy = top + cell * i + cell / 2
            out.append(f'<circle cx="{_c(cx)}" cy="{_c(cy)}" r="{_c(r)}" fill="#1f77b4" fill-opacity="0.6" '
                       f'data-client="{i}" data-class="{c}" data-count="{k}"/>')
    out.append("</svg>")
    _write_text(path, "\n".join(out) + "\n")
