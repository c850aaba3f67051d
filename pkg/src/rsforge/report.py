"""Run reporting: funnel tables, delimited data, and rendered figures.

Reads the per-stage markers of a run directory and produces one
consistent summary in four shapes: a human-readable text table, CSV
files, a JSON summary, and PNG figures.  All four derive from a single
loaded structure, so they cannot disagree.  Interrupted runs yield a
partial report flagged as such rather than an error.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Any

from .pipeline import STAGE_ORDER, report_path, stage_dir

__all__ = ["load_run_summary", "write_report"]


def load_run_summary(run_dir: str | Path) -> dict[str, Any]:
    """Collect stage counts and cluster sizes from a run directory."""
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise FileNotFoundError(f"run directory does not exist: {run_dir}")
    stages: list[dict[str, Any]] = []
    for name in STAGE_ORDER:
        marker_file = stage_dir(run_dir, name) / "stage.json"
        if not marker_file.is_file():
            break
        marker = json.loads(marker_file.read_text(encoding="utf-8"))
        counts = marker["counts"]
        stages.append(
            {
                "stage": name,
                "input": counts["input"],
                "kept": counts["kept"],
                "rejected": dict(counts.get("rejected", {})),
                "extra": dict(counts.get("extra", {})),
            }
        )
    partial = len(stages) < len(STAGE_ORDER)

    clusters: list[dict[str, int]] = []
    sizes_file = stage_dir(run_dir, "sample") / "cluster_sizes.json"
    if sizes_file.is_file():
        clusters = json.loads(sizes_file.read_text(encoding="utf-8"))

    summary: dict[str, Any] = {
        "run_dir": str(run_dir),
        "partial": partial,
        "stages": stages,
        "clusters": clusters,
        "final_pairs": stages[-1]["kept"] if stages and not partial else None,
    }
    rp = report_path(run_dir)
    if rp.is_file():
        run_report = json.loads(rp.read_text(encoding="utf-8"))
        summary["status"] = run_report.get("status")
        summary["config_hash"] = run_report.get("config_hash")
        summary["seed"] = run_report.get("seed")
        if run_report.get("failed_stage"):
            summary["failed_stage"] = run_report["failed_stage"]
            summary["error"] = run_report.get("error")
    return summary


def _reason_text(rejected: dict[str, int]) -> str:
    if not rejected:
        return ""
    return ", ".join(f"{reason}={count}" for reason, count in sorted(rejected.items()))


def format_funnel(summary: dict[str, Any]) -> str:
    """Fixed-width funnel table, one row per completed stage."""
    lines = []
    header = f"{'stage':<20} {'input':>8} {'kept':>8} {'rejected':>9}  reasons"
    lines.append(header)
    lines.append("-" * len(header))
    for row in summary["stages"]:
        rejected = sum(row["rejected"].values())
        lines.append(
            f"{row['stage']:<20} {row['input']:>8} {row['kept']:>8} {rejected:>9}"
            f"  {_reason_text(row['rejected'])}"
        )
    if summary["partial"]:
        done = len(summary["stages"])
        lines.append(f"[partial run: {done}/{len(STAGE_ORDER)} stages completed]")
        if summary.get("failed_stage"):
            lines.append(f"[failed at {summary['failed_stage']}: {summary.get('error')}]")
    elif summary["final_pairs"] is not None:
        lines.append(f"final pairs: {summary['final_pairs']}")
    return "\n".join(lines) + "\n"


def _write_funnel_csv(path: Path, summary: dict[str, Any]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["stage", "input", "kept", "rejected", "reasons"])
        for row in summary["stages"]:
            writer.writerow(
                [
                    row["stage"],
                    row["input"],
                    row["kept"],
                    sum(row["rejected"].values()),
                    _reason_text(row["rejected"]),
                ]
            )


def _write_clusters_csv(path: Path, summary: dict[str, Any]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cluster", "before", "after"])
        for row in summary["clusters"]:
            writer.writerow([row["cluster"], row["before"], row["after"]])


def _render_figures(out_dir: Path, summary: dict[str, Any]) -> list[Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rendered: list[Path] = []

    if summary["stages"]:
        names = [row["stage"] for row in summary["stages"]]
        kept = [row["kept"] for row in summary["stages"]]
        fig, ax = plt.subplots(figsize=(8, 0.45 * len(names) + 1.2))
        ax.barh(range(len(names)), kept, color="#4878a8")
        ax.set_yticks(range(len(names)))
        ax.set_yticklabels(names)
        ax.invert_yaxis()
        ax.set_xlabel("records kept")
        ax.set_title("pipeline funnel")
        fig.tight_layout()
        path = out_dir / "funnel.png"
        fig.savefig(path, dpi=110)
        plt.close(fig)
        rendered.append(path)

    if summary["clusters"]:
        clusters = [row["cluster"] for row in summary["clusters"]]
        before = [row["before"] for row in summary["clusters"]]
        after = [row["after"] for row in summary["clusters"]]
        x = range(len(clusters))
        fig, ax = plt.subplots(figsize=(max(6, 0.5 * len(clusters) + 2), 4))
        ax.bar([i - 0.2 for i in x], before, width=0.4, label="before cap", color="#b0b0b0")
        ax.bar([i + 0.2 for i in x], after, width=0.4, label="after cap", color="#4878a8")
        ax.set_xticks(list(x))
        ax.set_xticklabels([str(c) for c in clusters])
        ax.set_xlabel("image cluster")
        ax.set_ylabel("pairs")
        ax.set_title("cluster distribution before/after balance sampling")
        ax.legend()
        fig.tight_layout()
        path = out_dir / "cluster_distribution.png"
        fig.savefig(path, dpi=110)
        plt.close(fig)
        rendered.append(path)

    return rendered


def write_report(run_dir: str | Path, out_dir: str | Path | None = None) -> dict[str, Any]:
    """Write report.txt, funnel.csv, cluster_sizes.csv, summary.json, figures.

    Returns the summary dict with a "files" entry listing what was
    written.
    """
    run_dir = Path(run_dir)
    summary = load_run_summary(run_dir)
    out = Path(out_dir) if out_dir is not None else run_dir / "report"
    out.mkdir(parents=True, exist_ok=True)

    files: list[Path] = []
    text = format_funnel(summary)
    text_path = out / "report.txt"
    text_path.write_text(text, encoding="utf-8")
    files.append(text_path)

    funnel_csv = out / "funnel.csv"
    _write_funnel_csv(funnel_csv, summary)
    files.append(funnel_csv)

    if summary["clusters"]:
        clusters_csv = out / "cluster_sizes.csv"
        _write_clusters_csv(clusters_csv, summary)
        files.append(clusters_csv)

    files.extend(_render_figures(out, summary))

    summary_path = out / "summary.json"
    summary_path.write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    files.append(summary_path)

    summary["files"] = [str(p) for p in files]
    return summary
