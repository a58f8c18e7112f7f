"""Figures rendered from a run directory's traces; nothing is recomputed."""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.patches import Rectangle  # noqa: E402

FIGURES = ("path", "mhm", "traces", "matrix")


class MissingArtifact(FileNotFoundError):
    pass


def _trials(run_dir: Path) -> list[dict]:
    files = sorted((run_dir / "traces").glob("trial_*.json"))
    if not files:
        raise MissingArtifact(f"no trial traces under {run_dir / 'traces'}")
    return [json.loads(f.read_text()) for f in files]


def _need(trials: list[dict], key: str, figure: str) -> list[dict]:
    have = [t for t in trials if key in t]
    if not have:
        raise MissingArtifact(f"figure {figure!r} needs {key!r} traces, which this run did not record")
    return have


def _path(trials, ax):
    trials = _need(trials, "path", "path")
    t0 = trials[0]
    w, y = t0["barrier"]["width"], t0["barrier"]["y"]
    ax.plot([-w / 2, w / 2], [y, y], color="k", lw=4, solid_capstyle="butt", label="barrier")
    ax.plot(*t0["prey"], marker="*", ms=14, color="tab:red", ls="none", label="prey")
    cmap = plt.get_cmap("viridis")
    for i, t in enumerate(trials):
        p = np.array(t["path"])
        ax.plot(p[:, 0], p[:, 1], "-o", ms=2, color=cmap(i / max(1, len(trials) - 1)), label=f"trial {t['trial']}")
    ax.set_aspect("equal")
    ax.set_xlabel("x (cm)")
    ax.set_ylabel("y (cm)")
    ax.legend(fontsize=7, loc="lower right")


def _mhm(trials, fig, trial: int | None):
    trials = _need(trials, "mhm", "mhm")
    t = next((x for x in trials if x["trial"] == trial), trials[-1])
    axes = fig.subplots(1, 2, sharey=True)
    for ax, key, title in zip(axes, ("mhm", "predicted"), ("mhm(t)", "predicted mhm(t+1)")):
        a = np.array(t[key])
        if a.size == 0:
            a = np.zeros((1, 64))
        n = a.shape[1]
        ax.imshow(a, aspect="auto", origin="lower", cmap="magma",
                  extent=[-n / 2 * 360 / n, n / 2 * 360 / n, 0, a.shape[0]])
        ax.set_title(f"{title}, trial {t['trial']}", fontsize=9)
        ax.set_xlabel("bearing (deg, left positive)")
    axes[0].set_ylabel("tick")


def _traces(trials, fig, trial: int | None):
    trials = _need(trials, "rows", "traces")
    t = next((x for x in trials if x["trial"] == trial), trials[-1])
    rows = t["rows"]
    axes = fig.subplots(len(rows), 1, sharex=True)
    axes = np.atleast_1d(axes)
    for ax, (name, v) in zip(axes, rows.items()):
        ax.plot(v, color="k", lw=1)
        ax.set_ylabel(name, rotation=0, ha="right", fontsize=7)
        ax.set_yticks([])
    axes[-1].set_xlabel("tick")
    fig.suptitle(f"trial {t['trial']}", fontsize=9)


def _matrix(run_dir: Path, ax):
    from .causal import ReliabilityMatrix

    p = run_dir / "matrix.tsv"
    if not p.is_file():
        raise MissingArtifact(str(p))
    m = ReliabilityMatrix.load(p.read_text())
    best = m.r.max(axis=2)  # the delay extraction would pick
    scale = float(np.abs(best).max()) or 1.0
    for i in range(len(m.effects)):
        for j in range(len(m.causes)):
            v = best[i, j]
            s = 0.9 * np.sqrt(abs(v) / scale)
            ax.add_patch(Rectangle((j - s / 2, i - s / 2), s, s, facecolor="k" if v > 0 else "w", edgecolor="k", lw=0.6))
    ax.set_xlim(-0.5, len(m.causes) - 0.5)
    ax.set_ylim(len(m.effects) - 0.5, -0.5)
    ax.set_xticks(range(len(m.causes)), m.causes, rotation=45, fontsize=8)
    ax.set_yticks(range(len(m.effects)), m.effects, fontsize=8)
    ax.set_aspect("equal")
    ax.set_title("reliability (area ~ |r|, black positive)", fontsize=9)


def plot(run_dir, figure: str, out=None, trial: int | None = None) -> Path:
    """Render ``figure`` for the run in ``run_dir``; returns the PNG path."""
    run_dir = Path(run_dir)
    if figure not in FIGURES:
        raise ValueError(f"figure must be one of {', '.join(FIGURES)}")
    if not run_dir.is_dir():
        raise MissingArtifact(str(run_dir))
    fig = plt.figure(figsize=(7, 6))
    try:
        if figure == "matrix":
            _matrix(run_dir, fig.add_subplot())
        elif figure == "path":
            _path(_trials(run_dir), fig.add_subplot())
        elif figure == "mhm":
            _mhm(_trials(run_dir), fig, trial)
        else:
            _traces(_trials(run_dir), fig, trial)
        out = Path(out) if out else run_dir / f"{figure}.png"
        fig.savefig(out, dpi=110, bbox_inches="tight", metadata={"Software": None})
    finally:
        plt.close(fig)
    return out
