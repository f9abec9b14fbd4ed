"""Report figures. Everything renders off-screen (Agg) straight to PNG files."""
from __future__ import annotations

from contextlib import contextmanager
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.dpi": 110,
    "savefig.dpi": 110,
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
}


@contextmanager
def figure(path, nrows=1, ncols=1, size=(5.0, 3.4)):
    """Yield ``(fig, axes)`` and save to ``path`` on exit."""
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(nrows, ncols, figsize=size, squeeze=False)
        try:
            yield fig, axes
            fig.tight_layout()
            Path(path).parent.mkdir(parents=True, exist_ok=True)
            fig.savefig(path)
        finally:
            plt.close(fig)


def plot_history(runs, path, title="Evaluation accuracy"):
    """``runs``: ``{label: history list}``; accuracy and loss per epoch."""
    with figure(path, 1, 2, size=(8.0, 3.2)) as (fig, ax):
        for label, hist in runs.items():
            ep = [h["epoch"] for h in hist]
            ax[0, 0].plot(ep, [h["eval_acc"] for h in hist], label=label, lw=1.2)
            ax[0, 1].plot(ep[1:], [h["loss"] for h in hist[1:]], label=label, lw=1.2)
        ax[0, 0].set(xlabel="epoch", ylabel="eval accuracy", title=title, ylim=(0, 1.02))
        ax[0, 1].set(xlabel="epoch", ylabel="training loss", yscale="log", title="Loss")
        ax[0, 0].legend(loc="lower right", ncol=2)
    return path


def plot_confusion(conf, classes, path, title="Confusion (rows: true)"):
    conf = np.asarray(conf)
    n = len(classes)
    with figure(path, size=(1.2 + 0.42 * n, 1.0 + 0.38 * n)) as (fig, ax):
        a = ax[0, 0]
        a.grid(False)
        a.imshow(conf, cmap="Blues")
        a.set_xticks(range(n), classes, rotation=60, ha="right", fontsize=7)
        a.set_yticks(range(n), classes, fontsize=7)
        hi = conf.max() if conf.size else 0
        for i in range(n):
            for j in range(n):
                if conf[i, j]:
                    a.text(j, i, str(conf[i, j]), ha="center", va="center", fontsize=6,
                           color="white" if conf[i, j] > hi / 2 else "black")
        a.set_title(title)
    return path


def plot_mode_bars(summary, path, title="Modality ablation (last-10 mean)"):
    """``summary``: ``{mode: {"acc_last10_mean", "acc_last10_std"}}``."""
    modes = list(summary)
    with figure(path, size=(1.5 + 0.7 * len(modes), 3.0)) as (fig, ax):
        a = ax[0, 0]
        m = [summary[k]["acc_last10_mean"] for k in modes]
        s = [summary[k].get("acc_last10_std", 0.0) for k in modes]
        a.bar(modes, m, yerr=s, color="tab:blue", alpha=0.8, capsize=3)
        for i, v in enumerate(m):
            a.text(i, v + 0.01, f"{v:.3f}", ha="center", fontsize=7)
        a.set(ylim=(0, 1.08), ylabel="eval accuracy", title=title)
    return path


def plot_load_curve(forces, offsets, cal, path, kg_per_N=1 / 9.81):
    kg = np.asarray(forces) * kg_per_N
    off = np.asarray(offsets)
    with figure(path) as (fig, ax):
        a = ax[0, 0]
        a.plot(off, kg, "o", ms=4, label="FEM")
        if cal is not None:
            x = np.linspace(0, max(off.max(), cal.valid_range[1]), 50)
            a.plot(x, cal.slope * x + cal.intercept, "-", lw=1, label=f"fit, r2={cal.r2:.4f}")
            a.axvline(cal.valid_range[1] + cal.threshold, color="tab:red", ls="--", lw=1,
                      label="overload threshold")
        a.set(xlabel="offset (mm)", ylabel="load (kg)", title="Deformation-force curve")
        a.legend()
    return path


def plot_protocol(rows, path):
    w = np.array([r["weight_kg"] for r in rows])
    e = np.array([r["estimate_kg"] for r in rows])
    with figure(path) as (fig, ax):
        a = ax[0, 0]
        a.plot(w, e, "o", ms=3, alpha=0.7)
        lim = (0, max(w.max(), e.max()) * 1.05)
        a.plot(lim, lim, "k-", lw=0.8)
        a.set(xlabel="true load (kg)", ylabel="estimated (kg)",
              title=f"Weighing protocol, MAE {np.mean(np.abs(e - w)):.3f} kg", xlim=lim, ylim=lim)
    return path


def plot_probe(per_width, path):
    widths = [p["width_mm"] for p in per_width]
    hits = [p["hits"] / p["n_seeds"] for p in per_width]
    with figure(path) as (fig, ax):
        a = ax[0, 0]
        a.plot(widths, hits, "o-")
        a.axhline(0.8, color="tab:red", ls="--", lw=1)
        a.invert_xaxis()
        a.set(xlabel="crack width (mm)", ylabel="detection rate", ylim=(-0.05, 1.05),
              title="Crack resolution probe")
    return path


def plot_masks(images, truths, preds, path, n=4):
    n = min(n, len(images))
    with figure(path, 3, max(n, 1), size=(1.8 * max(n, 1), 5.4)) as (fig, ax):
        for i in range(n):
            for r, (arr, name) in enumerate(((images[i], "input"), (truths[i], "truth"),
                                              (preds[i], "predicted"))):
                a = ax[r, i]
                a.imshow(arr, cmap="gray")
                a.set_xticks([])
                a.set_yticks([])
                a.grid(False)
                if i == 0:
                    a.set_ylabel(name)
    return path


def plot_deformed_mesh(nodes, elements, displacement, path, scale=1.0, title="Deformed tire"):
    u = np.asarray(displacement)
    with figure(path, size=(4.2, 4.2)) as (fig, ax):
        a = ax[0, 0]
        a.grid(False)
        for xy, style in ((nodes, dict(color="0.75", lw=0.3)), (nodes + scale * u, dict(color="tab:blue", lw=0.4))):
            quads = xy[elements]
            closed = np.concatenate([quads, quads[:, :1]], axis=1)
            for q in closed[:: max(1, len(closed) // 1500)]:
                a.plot(q[:, 0], q[:, 1], **style)
        y0 = nodes[:, 1].min()
        a.axhline(y0, color="k", lw=1)
        a.set_aspect("equal")
        a.set(title=title, xlabel="x (mm)", ylabel="y (mm)")
    return path
