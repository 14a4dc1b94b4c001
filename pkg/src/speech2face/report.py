"""Report files: metrics JSON and CSV, plus static plots."""
from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import numpy as np

from .errors import IOFailure
from .evaluation.protocol import MetricsReport


def _csv_text(report: MetricsReport) -> str:
    keys = ["run", "cosine_mean", "l1_mean", "vfs"] + [f"recall@{k}" for k in report.ks]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(keys)
    for row in report.runs:
        w.writerow([row[k] for k in keys])
    agg = report.aggregate
    w.writerow(["mean"] + [agg[k] for k in keys[1:]])
    w.writerow(["vfs_std", "", "", agg["vfs_std"]] + [""] * len(report.ks))
    return buf.getvalue()


def _plot_losses(losses, path: Path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    it = np.array([r["iter"] for r in losses])
    fig, axes = plt.subplots(1, 2, figsize=(10, 3.5))
    for key in ("l1", "l_g", "l_c", "l_p"):
        axes[0].plot(it, [r[key] for r in losses], label=key, lw=0.8)
    axes[0].set_yscale("log")
    axes[0].set_xlabel("iteration")
    axes[0].legend()
    axes[1].plot(it, [r["conj"] for r in losses], label="conjugated", lw=0.8)
    axes[1].plot(it, [r["d_loss"] for r in losses], label="discriminator", lw=0.8)
    axes[1].set_xlabel("iteration")
    axes[1].legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def _plot_metrics(report: MetricsReport, path: Path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    agg = report.aggregate
    rec = [f"recall@{k}" for k in report.ks]
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.2))
    axes[0].bar(rec, [agg[k] for k in rec], color="tab:blue")
    axes[0].set_ylim(0, 100)
    axes[0].set_ylabel("%")
    axes[1].bar(["cosine", "L1", "VFS"], [agg["cosine_mean"], agg["l1_mean"], agg["vfs"]],
                yerr=[0, 0, agg["vfs_std"]], color="tab:orange")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def _plot_samples(samples, path: Path):
    """``samples`` is ``(generated, groundtruth)``: two stacks of (N, 3, H, W) images in [-1, 1]."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    gen, real = (np.asarray(s) for s in samples)
    n = min(len(gen), len(real), 8)
    fig, axes = plt.subplots(2, n, figsize=(1.4 * n, 3), squeeze=False)
    for j in range(n):
        for row, stack in enumerate((real, gen)):
            ax = axes[row, j]
            ax.imshow(np.clip((np.transpose(stack[j], (1, 2, 0)) + 1) / 2, 0, 1))
            ax.set_xticks([])
            ax.set_yticks([])
        axes[0, 0].set_ylabel("real")
        axes[1, 0].set_ylabel("generated")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def emit_report(report: MetricsReport, losses, out_dir, samples=None) -> dict:
    """Write ``metrics.json``, ``metrics.csv`` and the plots into ``out_dir``.

    JSON and CSV are byte-deterministic for a given report. With an empty loss
    curve all plots are skipped and a note is recorded.
    """
    out_dir = Path(out_dir)
    written, notes = {}, []
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "metrics.json").write_text(report.to_json() + "\n")
        (out_dir / "metrics.csv").write_text(_csv_text(report))
        written["json"] = out_dir / "metrics.json"
        written["csv"] = out_dir / "metrics.csv"
        if not losses:
            notes.append("loss curve is empty; plots skipped")
        else:
            _plot_losses(losses, out_dir / "losses.png")
            _plot_metrics(report, out_dir / "metrics.png")
            written["loss_plot"] = out_dir / "losses.png"
            written["metric_plot"] = out_dir / "metrics.png"
            if samples is not None:
                _plot_samples(samples, out_dir / "samples.png")
                written["sample_grid"] = out_dir / "samples.png"
        if notes:
            (out_dir / "NOTES.txt").write_text("\n".join(notes) + "\n")
    except OSError as exc:
        raise IOFailure(f"cannot write report into {out_dir}: {exc}") from exc
    written["notes"] = notes
    return written


def load_report(path) -> MetricsReport:
    try:
        return MetricsReport.from_dict(json.loads(Path(path).read_text()))
    except (OSError, ValueError, KeyError) as exc:
        raise IOFailure(f"cannot read report {path}: {exc}") from exc
