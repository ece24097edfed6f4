"""Matplotlib figures written next to the CSV outputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .simulator import TICK_COLUMNS, SimTrace  # noqa: E402

_COL = {name: i for i, name in enumerate(TICK_COLUMNS)}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    # fixed metadata keeps the files reproducible
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_trace(trace: SimTrace, path) -> Path:
    """Top view of DCM, stance and swing-foot paths, foot height and per-step errors."""
    fig, ax = plt.subplots(2, 2, figsize=(11, 7))
    if trace.ticks:
        T = np.array([[float(r[_COL[c]]) for c in ("t", "xi_x", "xi_y", "foot_x", "foot_y", "foot_z", "c_x", "c_y")]
                      for r in trace.ticks])
        ax[0, 0].plot(T[:, 1], T[:, 2], label="DCM")
        ax[0, 0].plot(T[:, 6], T[:, 7], label="CoM")
        ax[0, 0].plot(T[:, 3], T[:, 4], lw=0.8, label="swing foot")
        ax[1, 0].plot(T[:, 0], T[:, 5])
    if trace.steps:
        land = np.array([s.landing[:2] for s in trace.steps])
        cmd = np.array([s.u_T for s in trace.steps])
        ax[0, 0].plot(land[:, 0], land[:, 1], "ks", ms=4, label="landing")
        ax[0, 0].plot(cmd[:, 0], cmd[:, 1], "r+", ms=8, label="commanded")
        idx = [s.index for s in trace.steps]
        err = np.array([s.location_error for s in trace.steps])
        ax[0, 1].plot(idx, err[:, 0], "o-", label="x")
        ax[0, 1].plot(idx, err[:, 1], "s-", label="y")
        ax[1, 1].plot(idx, [1e3 * s.time_error for s in trace.steps], "o-")
    for t, kind, _ in trace.events:
        if kind in ("impulse", "slip", "fall"):
            ax[1, 0].axvline(t, color="r" if kind == "fall" else "0.5", ls="--", lw=0.8)
    ax[0, 0].set(xlabel="x [m]", ylabel="y [m]", title=f"{trace.scenario} ({trace.generator})")
    ax[0, 0].axis("equal")
    ax[0, 0].legend(fontsize=8)
    ax[0, 1].set(xlabel="step", ylabel="landing location error [m]")
    ax[0, 1].legend(fontsize=8)
    ax[1, 0].set(xlabel="t [s]", ylabel="swing foot z [m]")
    ax[1, 1].set(xlabel="step", ylabel="landing time error [ms]")
    return _save(fig, path)


def plot_compare(errors: dict, path) -> Path:
    """Box plots of absolute landing errors per generator.

    ``errors`` maps a generator name to an ``(n, 3)`` array of
    ``(err_x, err_y, time_error)`` rows.
    """
    names = sorted(errors)
    fig, ax = plt.subplots(1, 3, figsize=(11, 4))
    labels = ["|x error| [m]", "|y error| [m]", "|time error| [s]"]
    for k in range(3):
        data = [np.abs(np.asarray(errors[g], float).reshape(-1, 3)[:, k]) for g in names]
        if any(len(d) for d in data):
            ax[k].boxplot(data, showmeans=True)
            ax[k].set_xticks(range(1, len(names) + 1), names)
        ax[k].set(ylabel=labels[k])
    return _save(fig, path)


def plot_calibration(header, rows, path) -> Path:
    """Per-sample inertia, bias and force-bound components (one panel each)."""
    col = {name: i for i, name in enumerate(header)}
    R = np.array([[float(r[col[c]]) for c in header if c != "stance"] for r in rows]) if rows else None
    numeric = [c for c in header if c != "stance"]
    ncol = {name: i for i, name in enumerate(numeric)}
    fig, ax = plt.subplots(1, 3, figsize=(12, 4))
    groups = (("inertia", "inertia force [N]"), ("bias", "bias force [N]"), ("fm", "force bounds [N]"))
    for a, (prefix, label) in zip(ax, groups):
        if R is not None:
            for name in numeric:
                if name.startswith(prefix):
                    a.plot(R[:, ncol["index"]], R[:, ncol[name]], ".", ms=2, label=name)
            a.legend(fontsize=7, markerscale=4)
        a.set(xlabel="sample", ylabel=label)
    return _save(fig, path)
