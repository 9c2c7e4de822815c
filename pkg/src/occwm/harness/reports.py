"""Report rendering: JSON, aligned plain-text tables, and matplotlib figures.

Every eval writes three artifacts side by side: <name>.json (machine),
<name>.txt (aligned table mirroring the result-table layout), and
<name>.png charts. matplotlib is imported lazily with the Agg backend so
library use never needs a display.
"""

from __future__ import annotations

import json
from pathlib import Path


def _plt():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def render_table(headers: list[str], rows: list[list], title: str = "") -> str:
    cells = [[str(h) for h in headers]]
    for row in rows:
        cells.append([f"{v:.2f}" if isinstance(v, float) else str(v) for v in row])
    widths = [max(len(r[i]) for r in cells) for i in range(len(headers))]
    lines = []
    if title:
        lines.append(title)
    sep = "-+-".join("-" * w for w in widths)
    lines.append(" | ".join(h.ljust(w) for h, w in zip(cells[0], widths)))
    lines.append(sep)
    for row in cells[1:]:
        lines.append(" | ".join(c.ljust(w) for c, w in zip(row, widths)))
    return "\n".join(lines) + "\n"


def forecast_table(report: dict) -> str:
    headers = ["Metric", "Recon."] + [f"+{r['horizon']}" for r in report["per_horizon"]] + ["Avg."]
    miou_row = (["mIoU (%)", 100 * report["recon"]["miou"]]
                + [100 * r["miou"] for r in report["per_horizon"]]
                + [100 * report["avg"]["miou"]])
    iou_row = (["IoU (%)", 100 * report["recon"]["iou"]]
               + [100 * r["iou"] for r in report["per_horizon"]]
               + [100 * report["avg"]["iou"]])
    return render_table(headers, [miou_row, iou_row], "4D occupancy forecasting")


def plan_table(report: dict) -> str:
    headers = ["Metric"] + [f"+{r['horizon']}" for r in report["per_horizon"]] + ["Avg."]
    l2_row = ["L2 (m)"] + [r["l2"] for r in report["per_horizon"]] + [report["avg"]["l2"]]
    coll_row = (["Coll. (%)"] + [r["collision_pct"] for r in report["per_horizon"]]
                + [report["avg"]["collision_pct"]])
    return render_table(headers, [l2_row, coll_row], f"Motion planning ({report['mode']})")


def qa_table(report: dict) -> str:
    headers = ["Category", "h0 (%)", "h1 (%)", "all (%)", "n"]
    rows = []
    for cat, vals in sorted(report["by_category"].items()):
        rows.append([cat, 100 * vals["h0"], 100 * vals["h1"], 100 * vals["all"], vals["n"]])
    rows.append(["overall", "", "", 100 * report["overall"], report["items"]])
    return render_table(headers, rows, "Question answering (top-1 accuracy)")


def forecast_figure(report: dict, path) -> None:
    plt = _plt()
    hs = [r["horizon"] for r in report["per_horizon"]]
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(hs, [100 * r["miou"] for r in report["per_horizon"]], "o-", label="mIoU")
    ax.plot(hs, [100 * r["iou"] for r in report["per_horizon"]], "s-", label="IoU")
    ax.axhline(100 * report["recon"]["miou"], ls="--", lw=0.8, color="gray",
               label="recon. bound (mIoU)")
    ax.set_xlabel("horizon (steps)")
    ax.set_ylabel("%")
    ax.set_xticks(hs)
    ax.set_ylim(0, 105)
    ax.legend(fontsize=8)
    ax.set_title("Occupancy forecasting")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plan_figure(report: dict, path) -> None:
    plt = _plt()
    hs = [r["horizon"] for r in report["per_horizon"]]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(7, 3))
    ax1.plot(hs, [r["l2"] for r in report["per_horizon"]], "o-")
    ax1.set_xlabel("horizon (steps)")
    ax1.set_ylabel("L2 (m)")
    ax1.set_xticks(hs)
    ax1.set_title("Trajectory L2")
    ax2.bar(hs, [r["collision_pct"] for r in report["per_horizon"]], width=0.5)
    ax2.set_xlabel("horizon (steps)")
    ax2.set_ylabel("collision (%)")
    ax2.set_xticks(hs)
    ax2.set_title(f"Collisions ({report['mode']})")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def qa_figure(report: dict, path) -> None:
    plt = _plt()
    cats = sorted(report["by_category"])
    fig, ax = plt.subplots(figsize=(6, 3.2))
    x = range(len(cats))
    ax.bar([i - 0.2 for i in x], [100 * report["by_category"][c]["h0"] for c in cats],
           width=0.4, label="h0")
    ax.bar([i + 0.2 for i in x], [100 * report["by_category"][c]["h1"] for c in cats],
           width=0.4, label="h1")
    ax.axhline(100 * report["overall"], ls="--", lw=0.8, color="gray", label="overall")
    ax.set_xticks(list(x))
    ax.set_xticklabels(cats, rotation=20, fontsize=8)
    ax.set_ylabel("accuracy (%)")
    ax.set_ylim(0, 105)
    ax.legend(fontsize=8)
    ax.set_title("QA accuracy by category")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def loss_curve_figure(log: list[dict], path, keys: tuple[str, ...] = ("total",),
                      title: str = "training loss") -> None:
    plt = _plt()
    fig, ax = plt.subplots(figsize=(5.5, 3.2))
    for key in keys:
        pts = [(rec["step"], rec[key]) for rec in log if key in rec]
        if pts:
            ax.plot([p[0] for p in pts], [p[1] for p in pts], lw=0.9, label=key)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend(fontsize=8)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_report(out_dir, name: str, report: dict, table: str, figure_fn=None) -> dict:
    """Write <name>.json/.txt(/.png); returns the artifact paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {"json": str(out_dir / f"{name}.json"), "txt": str(out_dir / f"{name}.txt")}
    with open(paths["json"], "w") as f:
        json.dump(report, f, indent=1, sort_keys=True)
    with open(paths["txt"], "w") as f:
        f.write(table)
    if figure_fn is not None:
        paths["png"] = str(out_dir / f"{name}.png")
        figure_fn(report, paths["png"])
    return paths
