"""Run reports: summary + per-tick CSVs and rendered figures.

Writes into a report directory:
    summary.csv        one row of run metrics
    trajectories.csv   per-tick reference, commanded, and actual positions + forces
    trajectory_xy.png  top view of the three trajectories over the arena
    forces.png         force magnitudes and damping over time
"""

from __future__ import annotations

import csv
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

from .session import Session  # noqa: E402
from .world import Environment  # noqa: E402


def write_report(session: Session, out_dir: str | Path, env: Environment | None = None,
                 title: str = "run") -> dict:
    """Write CSVs + figures for a finished session; returns the summary row."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    m = session.metrics()
    summary = {
        "ticks": m.ticks,
        "duration_s": round(m.duration, 6),
        "rmse_m": round(m.rmse, 6),
        "min_clearance_c_m": "" if math.isinf(m.min_clearance_c) else round(m.min_clearance_c, 6),
        "min_clearance_r_m": "" if math.isinf(m.min_clearance_r) else round(m.min_clearance_r, 6),
        "goal_reach_time_s": "" if m.goal_reach_time is None else round(m.goal_reach_time, 6),
        "completed": int(m.completed),
        "occupied_voxels": len(session.vmap),
    }
    with open(out / "summary.csv", "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(summary))
        w.writeheader()
        w.writerow(summary)

    dt = session.config.dt
    with open(out / "trajectories.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["tick", "t", "rx", "ry", "rz", "cx", "cy", "cz",
                    "px", "py", "pz", "f_usr", "f_rep", "f_v", "damping"])
        for i, (r, c, p, ff) in enumerate(zip(session.log_r, session.log_c,
                                              session.log_p, session.log_f)):
            w.writerow([i, round((i + 1) * dt, 6),
                        *(round(x, 6) for x in r), *(round(x, 6) for x in c),
                        *(round(x, 6) for x in p), *(round(x, 6) for x in ff)])

    _plot_trajectories(session, out / "trajectory_xy.png", env, title)
    _plot_forces(session, out / "forces.png", title)
    return summary


def _plot_trajectories(session: Session, path: Path, env: Environment | None, title: str) -> None:
    r = np.array(session.log_r).reshape(-1, 3)
    c = np.array(session.log_c).reshape(-1, 3)
    p = np.array(session.log_p).reshape(-1, 3)
    fig, ax = plt.subplots(figsize=(6.5, 6))
    if env is not None:
        for box in env.obstacles:
            ax.add_patch(plt.Rectangle((box.lo[0], box.lo[1]),
                                       box.hi[0] - box.lo[0], box.hi[1] - box.lo[1],
                                       facecolor="0.8", edgecolor="0.4"))
        ax.set_xlim(env.bounds.lo[0], env.bounds.hi[0])
        ax.set_ylim(env.bounds.lo[1], env.bounds.hi[1])
    occ = session.vmap.occupied_centers()
    if occ.shape[0]:
        ax.scatter(occ[:, 0], occ[:, 1], s=4, c="k", marker="s", alpha=0.35,
                   label="occupied voxels")
    if len(r):
        ax.plot(r[:, 0], r[:, 1], "C0--", lw=1.2, label="reference")
        ax.plot(c[:, 0], c[:, 1], "C2-", lw=1.4, label="commanded")
        ax.plot(p[:, 0], p[:, 1], "C1-", lw=1.0, label="drone")
        ax.plot(p[0, 0], p[0, 1], "C1o", ms=6)
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_title(f"{title}: trajectories (top view)")
    ax.set_aspect("equal")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def _plot_forces(session: Session, path: Path, title: str) -> None:
    f = np.array(session.log_f).reshape(-1, 4)
    t = (np.arange(f.shape[0]) + 1) * session.config.dt
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 5), sharex=True)
    if f.size:
        ax1.plot(t, f[:, 0], label="|F_usr|")
        ax1.plot(t, f[:, 1], label="|F_rep|")
        ax1.plot(t, f[:, 2], label="|F_v|", alpha=0.6)
        ax2.plot(t, f[:, 3], "C3")
    ax1.set_ylabel("force [N]")
    ax1.legend(loc="best", fontsize=8)
    ax2.set_ylabel("damping [kg/s]")
    ax2.set_xlabel("t [s]")
    ax1.set_title(f"{title}: virtual forces and damping")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
