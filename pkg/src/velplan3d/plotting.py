"""PNG figures from the CSV files written by the CLI."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def read_table(path: str | Path) -> dict[str, np.ndarray]:
    data = np.genfromtxt(path, delimiter=",", names=True, dtype=float, encoding="utf-8")
    data = np.atleast_1d(data)
    return {name: np.asarray(data[name], dtype=float) for name in data.dtype.names}


def plot_profile(profile: dict[str, np.ndarray], out: Path, title: str = "velocity profile") -> Path:
    fig, (ax_v, ax_a) = plt.subplots(2, 1, sharex=True, figsize=(8, 5.5))
    ax_v.plot(profile["s"], profile["v"], lw=1.5)
    ax_v.set_ylabel("v [m/s]")
    ax_v.set_title(title)
    ax_a.step(profile["s"], profile["a_hat_x"], where="post", lw=1.0)
    ax_a.set_ylabel("a_x [m/s²]")
    ax_a.set_xlabel("s [m]")
    for ax in (ax_v, ax_a):
        ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out


def plot_runs(states: dict[str, dict[str, np.ndarray]], out: Path) -> Path:
    """Executed speed and lateral offset over progress, one line per run."""
    fig, (ax_v, ax_n) = plt.subplots(2, 1, sharex=True, figsize=(8, 5.5))
    for name, st in sorted(states.items()):
        ax_v.plot(st["s"], st["s_dot"], lw=1.5, label=name)
        ax_n.plot(st["s"], st["n"], lw=1.5, label=name)
    ax_v.set_ylabel("s_dot [m/s]")
    ax_n.set_ylabel("n [m]")
    ax_n.set_xlabel("s [m]")
    ax_v.legend()
    for ax in (ax_v, ax_n):
        ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out


def plot_steps(steps: dict[str, dict[str, np.ndarray]], out: Path) -> Path:
    """Per-step gg violation and degraded flags."""
    fig, ax = plt.subplots(figsize=(8, 3.5))
    for name, st in sorted(steps.items()):
        ax.plot(st["s"], st["accel_violation"], lw=1.2, label=name)
        bad = st["degraded"] > 0
        ax.plot(st["s"][bad], st["accel_violation"][bad], "x", ms=4)
    ax.set_xlabel("s [m]")
    ax.set_ylabel("gg excess")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out


def render_directory(directory: Path, profile_csv: str | Path | None = None) -> list[Path]:
    """Render every figure the data in ``directory`` supports; returns the written files."""
    directory = Path(directory)
    written: list[Path] = []
    states = {p.stem.removeprefix("states_"): read_table(p) for p in sorted(directory.glob("states_*.csv"))}
    steps = {p.stem.removeprefix("steps_"): read_table(p) for p in sorted(directory.glob("steps_*.csv"))}
    if states:
        written.append(plot_runs(states, directory / "runs.png"))
    if steps:
        written.append(plot_steps(steps, directory / "violations.png"))
    profiles = sorted(directory.glob("profile*.csv"))
    if profile_csv is not None:
        profiles.append(Path(profile_csv))
    for p in profiles:
        written.append(plot_profile(read_table(p), directory / f"{p.stem}.png", p.stem))
    return written
