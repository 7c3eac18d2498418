"""Kernel and per-stage renders, and the parameters-vs-stages plot.

Raw renders are written pixel-exact with ``save_image``; composites and
plots go through matplotlib on the Agg backend.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .imaging import save_image  # noqa: E402

PARAM_COLUMNS = ["stages", "params", "psnr"]


def _style():
    return matplotlib.rc_context({
        "font.size": 10,
        "axes.labelsize": 11,
        "axes.titlesize": 11,
        "figure.dpi": 100,
        "savefig.bbox": "tight",
        "svg.hashsalt": "kbpn",
        "svg.fonttype": "none",
    })


def _save(fig, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {"Date": None} if path.suffix == ".svg" else {}
    fig.savefig(path, metadata=meta)
    plt.close(fig)


def kernel_render(kernel: np.ndarray) -> np.ndarray:
    """Kernel scaled by its max entry as a 1-channel image."""
    kernel = np.asarray(kernel, dtype=np.float64)
    peak = kernel.max()
    return (kernel / peak if peak > 0 else kernel)[None]


def visualize_kernel(kernel: np.ndarray, kernel_gt: np.ndarray, out_path) -> dict:
    """Write ``<stem>_est.png``, ``<stem>_gt.png``, a side-by-side composite and a JSON sidecar."""
    out_path = Path(out_path)
    stem = out_path.with_suffix("")
    est_png = stem.parent / f"{stem.name}_est.png"
    gt_png = stem.parent / f"{stem.name}_gt.png"
    save_image(kernel_render(kernel), est_png)
    save_image(kernel_render(kernel_gt), gt_png)
    l1 = float(np.mean(np.abs(np.asarray(kernel) - np.asarray(kernel_gt))))
    with _style():
        fig, axes = plt.subplots(1, 2, figsize=(5, 2.6))
        for ax, k, title in zip(axes, (kernel, kernel_gt), ("estimated", "ground truth")):
            ax.imshow(kernel_render(k)[0], cmap="gray", vmin=0, vmax=1, interpolation="nearest")
            ax.set_title(title)
            ax.set_xticks([])
            ax.set_yticks([])
        fig.suptitle(f"L1 = {l1:.3e}")
        _save(fig, out_path)
    meta = {"l1": l1, "k": int(np.asarray(kernel).shape[0]), "estimated": est_png.name,
            "ground_truth": gt_png.name, "composite": out_path.name}
    out_path.with_suffix(out_path.suffix + ".json").write_text(json.dumps(meta, indent=2))
    return meta


def _normalize(x: np.ndarray) -> np.ndarray:
    lo, hi = x.min(), x.max()
    return (x - lo) / (hi - lo) if hi > lo else np.zeros_like(x)


def visualize_traces(result, out_dir, index: int = 0) -> dict:
    """Per-stage SR-feature and LR-residual renders of one batch item.

    Feature maps are channel means, min-max normalized per stage. Residual
    maps are channel means of ``|R|`` on one shared scale whose maximum (over
    all stages and the final residual) maps to white.
    """
    if not result.traces or result.traces[0].residual is None or result.final_residual is None:
        raise ValueError("trace rendering needs a kbpn forward result")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    feats = [tr.sr_features[index].detach().double().mean(0).numpy() for tr in result.traces]
    resid = [tr.residual[index].detach().double().abs().mean(0).numpy() for tr in result.traces]
    final = result.final_residual[index].detach().double().abs().mean(0).numpy()
    peak = max(float(r.max()) for r in resid + [final])
    scale = 1.0 / peak if peak > 0 else 0.0
    files = []
    for tr, f, r in zip(result.traces, feats, resid):
        save_image(_normalize(f)[None], out_dir / f"feature_t{tr.t}.png")
        save_image((r * scale)[None], out_dir / f"residual_t{tr.t}.png")
        files += [f"feature_t{tr.t}.png", f"residual_t{tr.t}.png"]
    save_image((final * scale)[None], out_dir / "residual_final.png")
    files.append("residual_final.png")

    n = len(feats)
    with _style():
        fig, axes = plt.subplots(2, n + 1, figsize=(2.0 * (n + 1), 4.2), squeeze=False)
        for i, (f, r) in enumerate(zip(feats, resid)):
            axes[0, i].imshow(_normalize(f), cmap="gray", interpolation="nearest")
            axes[0, i].set_title(f"F_SR t={i + 1}")
            axes[1, i].imshow(r * scale, cmap="gray", vmin=0, vmax=1, interpolation="nearest")
            axes[1, i].set_title(f"|R_LR| t={i + 1}")
        axes[0, n].axis("off")
        axes[1, n].imshow(final * scale, cmap="gray", vmin=0, vmax=1, interpolation="nearest")
        axes[1, n].set_title("|R_LR| final")
        for ax in axes.ravel():
            ax.set_xticks([])
            ax.set_yticks([])
        _save(fig, out_dir / "traces.png")

    summary = {
        "residual_scale_max": peak,
        "mean_abs_residual": [float(r.mean()) for r in resid],
        "mean_abs_residual_final": float(final.mean()),
        "files": files,
    }
    (out_dir / "traces.json").write_text(json.dumps(summary, indent=2))
    return summary


def write_param_csv(rows, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=PARAM_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({"stages": row["stages"], "params": row["params"],
                             "psnr": "" if row.get("psnr") is None else row["psnr"]})


def read_param_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{"stages": int(r["stages"]), "params": int(r["params"]),
                 "psnr": float(r["psnr"]) if r["psnr"] else None} for r in csv.DictReader(fh)]


def plot_param_csv(csv_path, out_path) -> Path:
    """Render the parameters-vs-stages plot from its CSV."""
    rows = read_param_csv(csv_path)
    out_path = Path(out_path)
    stages = [r["stages"] for r in rows]
    mega = [r["params"] / 1e6 for r in rows]
    with _style():
        fig, ax = plt.subplots(figsize=(4.5, 3.2))
        ax.plot(stages, mega, "o-", color="tab:blue")
        ax.set_xlabel("stages T")
        ax.set_ylabel("parameters (M)", color="tab:blue")
        ax.set_xticks(stages)
        if all(r["psnr"] is not None for r in rows) and rows:
            twin = ax.twinx()
            twin.plot(stages, [r["psnr"] for r in rows], "s--", color="tab:red")
            twin.set_ylabel("PSNR (dB)", color="tab:red")
        ax.grid(alpha=0.3)
        _save(fig, out_path)
    return out_path


def plot_params_vs_stages(base_cfg, stages, out_dir, psnr_by_stages: dict | None = None) -> tuple[Path, Path]:
    """CSV of ``(T, parameter count, optional PSNR)`` and an SVG line plot of it."""
    from dataclasses import replace

    from .networks import count_parameters

    out_dir = Path(out_dir)
    rows = []
    for t in sorted(stages):
        rows.append({"stages": t, "params": count_parameters(replace(base_cfg, stages=t)),
                     "psnr": (psnr_by_stages or {}).get(t)})
    csv_path = out_dir / "params_vs_stages.csv"
    write_param_csv(rows, csv_path)
    return csv_path, plot_param_csv(csv_path, out_dir / "params_vs_stages.svg")
