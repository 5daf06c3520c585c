"""Render the four standard figures from engine CSV output.

Each renderer reads only CSV files (no physics is recomputed here), draws a
deterministic matplotlib figure, and writes SVG or PNG depending on the
output suffix.  SVG output uses a fixed hash salt and no embedded date so
that identical inputs reproduce an identical byte stream under one
matplotlib version.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "billiardfigs"
matplotlib.rcParams["svg.fonttype"] = "none"  # keep axis labels as real text
import matplotlib.pyplot as plt
import numpy as np

from .io import SchemaError, read_table

FIGURE_IDS = ("boyle", "schematic", "quench", "temperature")

DEFAULT_INPUTS = {
    "boyle": {"boyle": "boyle.csv"},
    "schematic": {"geometry": "geometry.csv"},
    "quench": {
        "equilibrating": "quench_2_4_1_1.csv",
        "oscillatory": "quench_1_3_4_1.csv",
        "balance": "balance_ratios.csv",
        "balance_free": "balance_ratios_k0.csv",
    },
    "temperature": {"offsets": "temperature_offsets.csv"},
}


@dataclass
class FigureSpec:
    figure_id: str
    input_dir: Path
    output: Path
    inputs: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.figure_id not in FIGURE_IDS:
            raise SchemaError(f"unknown figure id '{self.figure_id}'; "
                              f"choose from {FIGURE_IDS}")
        self.input_dir = Path(self.input_dir)
        self.output = Path(self.output)
        merged = dict(DEFAULT_INPUTS[self.figure_id])
        merged.update(self.inputs)
        self.inputs = {k: self.input_dir / v for k, v in merged.items()}


def _save(fig, output: Path) -> None:
    output.parent.mkdir(parents=True, exist_ok=True)
    kwargs = {}
    if output.suffix.lower() == ".svg":
        kwargs["metadata"] = {"Date": None}
    fig.savefig(output, **kwargs)
    plt.close(fig)


def render_boyle(spec: FigureSpec) -> Path:
    data = read_table(spec.inputs["boyle"],
                      ["level", "E", "PxA", "PyA", "dPxA_window"])
    e = data["E"]
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(6.0, 6.4),
                                   height_ratios=[2, 1])
    ax1.plot(e, data["PxA"], ".", ms=2.5, alpha=0.6, label="Px A")
    ax1.plot(e, data["PyA"], ".", ms=2.5, alpha=0.6, label="Py A")
    for name, pa in (("x", data["PxA"]), ("y", data["PyA"])):
        a, b = np.polyfit(e, pa, 1)
        ax1.plot(e, a * e + b, lw=1.2,
                 label=f"fit: a_{name}={a:.3f}, b_{name}={b:.1f}")
    ax1.set_xlabel("E L^2")
    ax1.set_ylabel("P A L^2")
    ax1.legend(fontsize=8, loc="upper left")
    ok = np.isfinite(data["dPxA_window"])
    ax2.semilogy(e[ok], data["dPxA_window"][ok], lw=1.0)
    ax2.set_xlabel("E L^2")
    ax2.set_ylabel("dPxA (windowed)")
    fig.tight_layout()
    _save(fig, spec.output)
    return spec.output


def render_schematic(spec: FigureSpec) -> Path:
    geo = read_table(spec.inputs["geometry"],
                     ["Lx_left", "Lx_right", "Ly", "wall"])
    lxl, lxr = geo["Lx_left"][0], geo["Lx_right"][0]
    ly, wall = geo["Ly"][0], geo["wall"][0]
    wall_draw = max(wall, 0.01 * (lxl + lxr))  # keep the wall visible
    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    ax.add_patch(plt.Rectangle((0, 0), lxl, ly, fill=False, lw=1.5))
    ax.add_patch(plt.Rectangle((lxl, 0), wall_draw, ly, color="0.4"))
    ax.add_patch(plt.Rectangle((lxl + wall_draw, 0), lxr, ly, fill=False, lw=1.5))
    ax.plot([0.45 * lxl], [0.55 * ly], "o", ms=9)
    ax.plot([lxl + wall_draw + 0.55 * lxr], [0.4 * ly], "o", ms=9)
    ax.annotate(f"Lx_left = {lxl:g} L",
                (0.5 * lxl, -0.06 * ly), ha="center", va="top")
    ax.annotate(f"Lx_right = {lxr:g} L",
                (lxl + wall_draw + 0.5 * lxr, -0.06 * ly), ha="center", va="top")
    ax.annotate(f"Ly = {ly:g} L",
                (-0.03 * (lxl + lxr), 0.5 * ly), ha="right", va="center",
                rotation=90)
    ax.annotate(f"wall b = {wall:g} L",
                (lxl + 0.5 * wall_draw, 1.04 * ly), ha="center", va="bottom")
    ax.set_xlim(-0.15 * (lxl + lxr), (lxl + lxr) * 1.1)
    ax.set_ylim(-0.2 * ly, 1.25 * ly)
    ax.set_aspect("equal")
    ax.axis("off")
    _save(fig, spec.output)
    return spec.output


def render_quench(spec: FigureSpec) -> Path:
    cols = ["t", "E_left", "E_right", "V_int", "E_total"]
    eq = read_table(spec.inputs["equilibrating"], cols)
    osc = read_table(spec.inputs["oscillatory"], cols)
    bal = read_table(spec.inputs["balance"],
                     ["j", "E_j", "ln_ratio", "overlap_with_initial"])
    free = read_table(spec.inputs["balance_free"],
                      ["j", "E_j", "ln_ratio", "overlap_with_initial"])
    fig, axes = plt.subplots(3, 1, figsize=(6.0, 8.2))
    for ax, data, tag in ((axes[0], eq, "equilibrating"),
                          (axes[1], osc, "oscillatory")):
        ax.plot(data["t"], data["E_left"], lw=0.9, label="E_left(t)")
        ax.plot(data["t"], data["E_right"], lw=0.9, label="E_right(t)")
        ax.plot(data["t"], data["E_total"], lw=0.9, color="0.3",
                label="E_total")
        ax.set_xlabel("t / L^2")
        ax.set_ylabel("E L^2")
        ax.set_title(tag, fontsize=9)
        ax.legend(fontsize=7, ncol=3)
    bins = np.linspace(-3.0, 3.0, 61)
    axes[2].hist(free["ln_ratio"], bins=bins, histtype="step", density=True,
                 label="uncoupled")
    axes[2].hist(bal["ln_ratio"], bins=bins, histtype="step", density=True,
                 label="coupled")
    dominant = int(np.argmax(bal["overlap_with_initial"]))
    axes[2].axvline(bal["ln_ratio"][dominant], color="tab:red", lw=1.0,
                    label="dominant eigenstate")
    axes[2].set_xlabel("ln(E_left / E_right) per eigenstate")
    axes[2].set_ylabel("density")
    axes[2].legend(fontsize=7)
    fig.tight_layout()
    _save(fig, spec.output)
    return spec.output


def render_temperature(spec: FigureSpec) -> Path:
    off = read_table(spec.inputs["offsets"],
                     ["E", "T_l", "T_r", "dT_abs", "dT_rel"])
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(6.0, 5.6), sharex=True)
    ax1.semilogy(off["E"], np.maximum(off["dT_abs"], 1e-12), ".", ms=4)
    ax1.set_ylabel("dT_abs L^2")
    ax2.semilogy(off["E"], np.maximum(off["dT_rel"], 1e-12), ".", ms=4)
    ax2.set_ylabel("dT_rel")
    ax2.set_xlabel("E L^2")
    fig.tight_layout()
    _save(fig, spec.output)
    return spec.output


RENDERERS = {
    "boyle": render_boyle,
    "schematic": render_schematic,
    "quench": render_quench,
    "temperature": render_temperature,
}


def render(spec: FigureSpec) -> Path:
    return RENDERERS[spec.figure_id](spec)
