"""Metric reports and figure rendering.

Reports are emitted three ways: a versioned line-oriented text document
(boxsplit-report v1), a flat CSV for plotting, and PNG charts. The text header
pins the distance conventions so numbers are self-describing (Chamfer is the
symmetric mean of squared distances; tabulated MMD-CD/EMD are scaled by 1e3
and 1e2).
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from boxsplit.geometry import PARAM_DIM, Box, box_corners

REPORT_HEADER = "boxsplit-report v1"
SETS_HEADER = "boxsplit-sets v1"

MMD_CD_SCALE = 1e3
MMD_EMD_SCALE = 1e2


@dataclass
class ReportRow:
    family: str
    level: int
    sampler: str
    pivot: str
    distance: str
    cov_pct: float
    mmd: float
    nna_pct: float
    n_generated: int
    n_reference: int

    def validate(self) -> None:
        if not 0.0 <= self.cov_pct <= 100.0:
            raise ValueError(f"COV out of range: {self.cov_pct}")
        if not 0.0 <= self.nna_pct <= 100.0:
            raise ValueError(f"1-NNA out of range: {self.nna_pct}")
        if self.mmd < 0.0:
            raise ValueError(f"MMD negative: {self.mmd}")


@dataclass
class AlignmentRow:
    family: str
    label: str
    box_cd: float
    box_emd: float
    tov: float
    viou: float

    def validate(self) -> None:
        if self.tov < 0.0:
            raise ValueError(f"TOV negative: {self.tov}")
        if not 0.0 <= self.viou <= 1.0:
            raise ValueError(f"VIoU out of range: {self.viou}")


@dataclass
class MetricReport:
    seed: int
    points_per_cloud: int
    rows: list[ReportRow] = field(default_factory=list)
    alignment: list[AlignmentRow] = field(default_factory=list)

    def validate(self) -> None:
        for r in self.rows:
            r.validate()
        for a in self.alignment:
            a.validate()


def render_report_text(report: MetricReport) -> str:
    report.validate()
    lines = [
        REPORT_HEADER,
        f"seed {report.seed}",
        f"points {report.points_per_cloud}",
        "convention cd=symmetric-mean-squared"
        f" mmd_cd_scale={MMD_CD_SCALE:g} mmd_emd_scale={MMD_EMD_SCALE:g}",
    ]
    for r in report.rows:
        lines.append(
            f"row family={r.family} level={r.level} sampler={r.sampler} pivot={r.pivot}"
            f" distance={r.distance} cov={r.cov_pct!r} mmd={r.mmd!r} nna={r.nna_pct!r}"
            f" n_gen={r.n_generated} n_ref={r.n_reference}"
        )
    for a in report.alignment:
        lines.append(
            f"alignment family={a.family} label={a.label} box_cd={a.box_cd!r}"
            f" box_emd={a.box_emd!r} tov={a.tov!r} viou={a.viou!r}"
        )
    return "\n".join(lines) + "\n"


def parse_report_text(text: str) -> MetricReport:
    lines = text.splitlines()
    if not lines or lines[0] != REPORT_HEADER:
        raise ValueError(f"expected header {REPORT_HEADER!r}")
    report = MetricReport(seed=0, points_per_cloud=0)
    for ln in lines[1:]:
        if not ln.strip():
            continue
        key, rest = ln.split(" ", 1)
        if key == "seed":
            report.seed = int(rest)
        elif key == "points":
            report.points_per_cloud = int(rest)
        elif key == "convention":
            continue
        elif key in ("row", "alignment"):
            kv = dict(item.split("=", 1) for item in rest.split())
            if key == "row":
                report.rows.append(
                    ReportRow(
                        family=kv["family"],
                        level=int(kv["level"]),
                        sampler=kv["sampler"],
                        pivot=kv["pivot"],
                        distance=kv["distance"],
                        cov_pct=float(kv["cov"]),
                        mmd=float(kv["mmd"]),
                        nna_pct=float(kv["nna"]),
                        n_generated=int(kv["n_gen"]),
                        n_reference=int(kv["n_ref"]),
                    )
                )
            else:
                report.alignment.append(
                    AlignmentRow(
                        family=kv["family"],
                        label=kv["label"],
                        box_cd=float(kv["box_cd"]),
                        box_emd=float(kv["box_emd"]),
                        tov=float(kv["tov"]),
                        viou=float(kv["viou"]),
                    )
                )
        else:
            raise ValueError(f"unknown report line {ln!r}")
    report.validate()
    return report


def render_report_csv(report: MetricReport) -> str:
    lines = ["family,level,sampler,pivot,distance,metric,value"]
    for r in report.rows:
        base = f"{r.family},{r.level},{r.sampler},{r.pivot},{r.distance}"
        lines.append(f"{base},cov_pct,{r.cov_pct!r}")
        lines.append(f"{base},mmd,{r.mmd!r}")
        lines.append(f"{base},nna_pct,{r.nna_pct!r}")
    for a in report.alignment:
        base = f"{a.family},-1,{a.label},-,-"
        for metric, value in (("box_cd", a.box_cd), ("box_emd", a.box_emd), ("tov", a.tov), ("viou", a.viou)):
            lines.append(f"{base},{metric},{value!r}")
    return "\n".join(lines) + "\n"


def _scaled_mmd(row: ReportRow) -> float:
    return row.mmd * (MMD_CD_SCALE if row.distance == "cd" else MMD_EMD_SCALE)


def render_report_figures(report: MetricReport, fig_dir: str) -> list[str]:
    """One grouped bar chart per (metric, distance); returns written paths."""
    os.makedirs(fig_dir, exist_ok=True)
    written = []
    metrics = (
        ("cov", "COV % (higher better)", lambda r: r.cov_pct),
        ("mmd", "MMD (scaled, lower better)", _scaled_mmd),
        ("nna", "1-NNA % (50 ideal)", lambda r: r.nna_pct),
    )
    for distance in sorted({r.distance for r in report.rows}):
        rows = [r for r in report.rows if r.distance == distance]
        variants = sorted({(r.sampler, r.pivot) for r in rows})
        levels = sorted({r.level for r in rows})
        for key, title, getter in metrics:
            fig, ax = plt.subplots(figsize=(7, 4))
            width = 0.8 / max(len(variants), 1)
            xs = np.arange(len(levels))
            for k, (sampler, pivot) in enumerate(variants):
                vals = []
                for lv in levels:
                    match = [getter(r) for r in rows if r.level == lv and (r.sampler, r.pivot) == (sampler, pivot)]
                    vals.append(match[0] if match else np.nan)
                ax.bar(xs + k * width, vals, width=width, label=f"{sampler}/{pivot}")
            ax.set_xticks(xs + 0.4 - width / 2)
            ax.set_xticklabels([f"level {lv}" for lv in levels])
            ax.set_title(f"{title} [{distance.upper()}]")
            ax.legend(fontsize=8)
            fig.tight_layout()
            path = os.path.join(fig_dir, f"{key}_{distance}.png")
            fig.savefig(path, dpi=110)
            plt.close(fig)
            written.append(path)
    return written


_EDGES = [
    (0, 1), (0, 2), (1, 3), (2, 3),
    (4, 5), (4, 6), (5, 7), (6, 7),
    (0, 4), (1, 5), (2, 6), (3, 7),
]


def render_boxset_figure(box_sets, path: str, titles=None) -> str:
    """Wireframe gallery of up to 8 box sets on one canvas."""
    box_sets = list(box_sets)[:8]
    cols = min(4, len(box_sets))
    rows = int(np.ceil(len(box_sets) / cols))
    fig = plt.figure(figsize=(3.2 * cols, 3.2 * rows))
    cmap = plt.get_cmap("tab20")
    for i, boxes in enumerate(box_sets):
        ax = fig.add_subplot(rows, cols, i + 1, projection="3d")
        for k, b in enumerate(boxes):
            box = b if isinstance(b, Box) else Box.from_params(np.asarray(b, dtype=float).reshape(PARAM_DIM))
            corners = box_corners(box)
            for a, c in _EDGES:
                ax.plot(*zip(corners[a], corners[c]), color=cmap(k % 20), linewidth=1.0)
        ax.set_xlim(-0.55, 0.55)
        ax.set_ylim(-0.55, 0.55)
        ax.set_zlim(-0.55, 0.55)
        ax.set_axis_off()
        if titles:
            ax.set_title(titles[i], fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


# ---------------------------------------------------------------------------
# box-set list interchange format (sample/eval path)


def save_boxsets(path: str, sets: list[tuple[int, np.ndarray]]) -> None:
    """sets: (level, (n, 15) params) pairs; level = cardinality - 1."""
    lines = [SETS_HEADER]
    for i, (level, params) in enumerate(sets):
        params = np.asarray(params, dtype=float).reshape(-1, PARAM_DIM)
        lines.append(f"set {i} level={level}")
        for p in params:
            lines.append("box " + " ".join(repr(float(x)) for x in p))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_boxsets(path: str) -> list[tuple[int, np.ndarray]]:
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or lines[0] != SETS_HEADER:
        raise ValueError(f"expected header {SETS_HEADER!r}")
    sets: list[tuple[int, list]] = []
    for ln in lines[1:]:
        if not ln.strip():
            continue
        if ln.startswith("set "):
            fields = ln.split()
            level = int(fields[2].split("=", 1)[1])
            sets.append((level, []))
        elif ln.startswith("box "):
            if not sets:
                raise ValueError("box line before any set line")
            sets[-1][1].append([float(x) for x in ln.split()[1:]])
        else:
            raise ValueError(f"unknown line {ln!r}")
    return [(level, np.asarray(rows, dtype=float).reshape(-1, PARAM_DIM)) for level, rows in sets]
