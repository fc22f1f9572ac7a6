"""Report figures.  Uses the non-interactive Agg backend."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed metadata keeps repeated renders byte identical
_META = {"Software": None}


def plot_opt(report, path) -> None:
    names = [s.policy for s in report.summaries]
    means = [s.mean_opt for s in report.summaries]
    cis = [0.0 if np.isnan(s.ci95) else s.ci95 for s in report.summaries]
    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.bar(names, means, yerr=cis, capsize=4, color="#4c72b0")
    ax.set_ylabel("objects per transport")
    ax.set_title(f"OpT, N={report.summaries[0].episodes} (config {report.config_hash})")
    ax.tick_params(axis="x", rotation=20)
    fig.tight_layout()
    fig.savefig(path, metadata=_META)
    plt.close(fig)


def plot_scaling(medians, path) -> None:
    n = [r.n_garments for r in medians]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(n, [r.milp_solve_time for r in medians], "o-", label="set-cover solve")
    ax.plot(n, [r.candidate_gen_time for r in medians], "s--", label="candidate generation")
    ax.set_xlabel("garments")
    ax.set_ylabel("median seconds")
    ax.set_yscale("log")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, metadata=_META)
    plt.close(fig)


def plot_episode(scene, record, meta, path) -> None:
    """Initial height field with the pick points of an episode, numbered in order."""
    from .scene import height_field
    from .policies import PICK

    h = height_field(scene).values
    fig, ax = plt.subplots(figsize=(6, 4))
    x0, x1, y0, y1 = meta.extent
    ax.imshow(h, origin="lower", extent=(x0, x1, y0, y1), cmap="viridis")
    picks = [s.action.grasp for s in record.steps if s.action.kind == PICK]
    for i, (x, y, _) in enumerate(picks):
        ax.plot(x, y, "r+")
        ax.annotate(str(i), (x, y), color="w", fontsize=6)
    ax.set_title(f"{record.policy} seed={record.seed} OpT={record.opt:.2f}")
    fig.tight_layout()
    fig.savefig(path, metadata=_META)
    plt.close(fig)
