"""Rendering of aggregated results: Markdown summary table, per-classifier
curve CSVs, and accuracy-vs-label-count figures."""

from __future__ import annotations

import os
from typing import Dict, List, Optional, Sequence, Tuple

from .harness import CLASSIFIER_KINDS, GroupSummary

TABLE_LABEL_COLUMNS = (10, 100, 1000, 10000, 50000)

DISPLAY_NAMES = {
    "assoc": "Assoc.",
    "go": "Go",
    "nogo": "No-go",
    "gonogo": "Go/No-go",
    "linear": "Linear",
}

CURVE_HEADER = "classifier,n_labels,mean_pct,sd_pct"


def _row_groups(summaries: Sequence[GroupSummary]):
    """Summaries keyed by (hidden size, classifier), preserving aggregate order."""
    rows: Dict[Tuple[int, str], List[GroupSummary]] = {}
    for s in summaries:
        rows.setdefault((s.n_hc_hid, s.classifier), []).append(s)
    return rows


def _cell_text(s: Optional[GroupSummary]) -> str:
    if s is None:
        return "-"
    marker = "*" if s.degenerate else ""
    return f"{s.mean_pct:.1f}±{s.sd_pct:.1f}{marker}"


def markdown_table(summaries: Sequence[GroupSummary],
                   label_columns: Sequence[int] = TABLE_LABEL_COLUMNS) -> str:
    """Markdown accuracy table, one row per (hidden size, classifier)."""
    rows = _row_groups(summaries)
    lines = ["| Model | " + " | ".join(str(n) for n in label_columns) + " |",
             "|" + "---|" * (len(label_columns) + 1)]
    degenerate = False
    for (n_hc, kind), group in rows.items():
        by_n = {s.n_labels: s for s in group}
        name = DISPLAY_NAMES.get(kind, kind)
        cells = [_cell_text(by_n.get(n)) for n in label_columns]
        degenerate = degenerate or any(s.degenerate for s in group if s.n_labels in label_columns)
        lines.append(f"| BCPNN-{n_hc} + {name} | " + " | ".join(cells) + " |")
    text = "\n".join(lines) + "\n"
    if degenerate:
        text += "\n\\* single run: standard deviation undefined, reported as 0.\n"
    return text


def write_markdown_table(summaries: Sequence[GroupSummary], path,
                         label_columns: Sequence[int] = TABLE_LABEL_COLUMNS):
    with open(path, "w", newline="\n") as fh:
        fh.write(markdown_table(summaries, label_columns))


def write_curves(summaries: Sequence[GroupSummary], out_dir) -> List[str]:
    """One CSV per (hidden size, classifier): label count vs mean and s.d.,
    sorted ascending by label count."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for (n_hc, kind), group in _row_groups(summaries).items():
        path = os.path.join(out_dir, f"curve_h{n_hc}_{kind}.csv")
        with open(path, "w", newline="\n") as fh:
            fh.write(CURVE_HEADER + "\n")
            for s in sorted(group, key=lambda s: s.n_labels):
                fh.write(f"{kind},{s.n_labels},{s.mean_pct:.4f},{s.sd_pct:.4f}\n")
        paths.append(path)
    return paths


def render_figures(summaries: Sequence[GroupSummary], out_dir) -> List[str]:
    """Accuracy-vs-label-count curves, one PNG per hidden size."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    os.makedirs(out_dir, exist_ok=True)
    by_hidden: Dict[int, Dict[str, List[GroupSummary]]] = {}
    for s in summaries:
        by_hidden.setdefault(s.n_hc_hid, {}).setdefault(s.classifier, []).append(s)

    paths = []
    for n_hc in sorted(by_hidden):
        fig, ax = plt.subplots(figsize=(6.0, 4.0))
        kinds = sorted(by_hidden[n_hc],
                       key=lambda k: CLASSIFIER_KINDS.index(k) if k in CLASSIFIER_KINDS else 99)
        for kind in kinds:
            pts = sorted(by_hidden[n_hc][kind], key=lambda s: s.n_labels)
            x = [s.n_labels for s in pts]
            y = [s.mean_pct for s in pts]
            err = [s.sd_pct for s in pts]
            ax.errorbar(x, y, yerr=err, marker="o", markersize=3, capsize=2,
                        label=DISPLAY_NAMES.get(kind, kind))
        ax.set_xscale("log")
        ax.set_xlabel("labelled samples")
        ax.set_ylabel("validation accuracy (%)")
        ax.set_title(f"hidden layer {n_hc}x100")
        ax.grid(True, alpha=0.3)
        ax.legend()
        fig.tight_layout()
        path = os.path.join(out_dir, f"accuracy_h{n_hc}.png")
        fig.savefig(path, dpi=150)
        plt.close(fig)
        paths.append(path)
    return paths
