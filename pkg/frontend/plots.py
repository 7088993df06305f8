"""Static figure generation for finished experiment run directories.

Reads the CSV/JSON artifacts a run directory already contains and renders
convergence curves, eigenvalue trajectories, shape-energy summaries, and
domain rasters.  Strictly a consumer of those files: nothing here recomputes
mathematics, and rendering the same directory twice produces byte-identical
output.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

VIEWS = ("stability", "spectral", "shapes", "domain")
FORMATS = ("png", "svg")

_FIGSIZE = (6.4, 4.8)
_DPI = 100
_LINE_COLOR = "#26547c"
_FOREGROUND = np.array([38, 84, 124], dtype=np.uint8)
_BACKGROUND = np.array([255, 255, 255], dtype=np.uint8)

# A fixed hash salt keeps SVG element ids reproducible across processes;
# figure geometry is pinned so the raster output is stable too.
_RC = {
    "svg.hashsalt": "plots",
    "figure.figsize": _FIGSIZE,
    "figure.dpi": _DPI,
}

_STABILITY_REQUIRED = (
    "label",
    "solution_l2_err",
    "energy_err",
    "hausdorff_to_limit",
    "char_to_limit",
    "weak_measure_to_limit",
)
_SPECTRAL_REQUIRED = ("label", "eig_err_1", "misalign_1", "resolvent_opnorm_est")
_SHAPES_REQUIRED = ("label", "energy_err")
_SPECTRUM_REQUIRED = ("index", "eigenvalue", "residual")


class PlotError(Exception):
    """Base class for figure-generation failures."""


class MissingColumn(PlotError):
    """A view needs a column or key the run directory does not provide."""


class EmptyReport(PlotError):
    """A report table exists but carries no data rows."""


@dataclass(frozen=True)
class PlotJob:
    """One rendering request against a finished run directory."""

    run_dir: Path
    which: str
    out_format: str = "png"

    def __post_init__(self):
        object.__setattr__(self, "run_dir", Path(self.run_dir))
        if self.which not in VIEWS:
            raise ValueError(f"unknown view {self.which!r}, expected one of {VIEWS}")
        if self.out_format not in FORMATS:
            raise ValueError(
                f"unknown format {self.out_format!r}, expected one of {FORMATS}"
            )
        # Run directories are recognized by their manifest; fail here rather
        # than halfway through a render.
        with open(self.run_dir / "manifest.json") as fh:
            json.load(fh)


def render(job: PlotJob) -> list[Path]:
    """Write every figure the requested view defines, one file per column.

    Files land inside ``job.run_dir`` under the names
    ``{view}_{column}.{format}`` and the list of written paths is returned
    in rendering order.
    """
    with open(job.run_dir / "manifest.json") as fh:
        manifest = json.load(fh)
    title = str(manifest.get("experiment", job.which))
    with matplotlib.rc_context(_RC):
        if job.which == "stability":
            return _render_report_curves(job, title, _STABILITY_REQUIRED)
        if job.which == "spectral":
            return _render_spectral(job, title)
        if job.which == "shapes":
            return _render_shapes(job, title, manifest)
        return _render_domain(job)


def _log_scaled(column: str) -> bool:
    """Error-like columns get a log y-axis; plain magnitudes stay linear."""
    return (
        column.endswith("_err")
        or column.endswith("_to_limit")
        or column == "residual"
        or column == "resolvent_opnorm_est"
        or column.startswith("eig_err")
        or column.startswith("misalign")
    )


def _read_rows(path: Path) -> tuple[list[str], list[dict]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = list(reader.fieldnames or ())
        rows = list(reader)
    if not rows:
        raise EmptyReport(f"{path} has no data rows")
    return header, rows


def _require(header: list[str], names: tuple[str, ...], path: Path) -> None:
    for name in names:
        if name not in header:
            raise MissingColumn(f"{path} lacks required column {name!r}")


def _floats(rows: list[dict], name: str) -> np.ndarray:
    return np.array([float(row[name]) for row in rows])


def _finish(fig, path: Path) -> Path:
    fig.tight_layout()
    if path.suffix == ".svg":
        # Drop the creation timestamp the SVG backend embeds by default.
        fig.savefig(path, metadata={"Date": None})
    else:
        fig.savefig(path)
    plt.close(fig)
    return path


def _member_curve(path: Path, title: str, labels, values, column: str) -> Path:
    fig, ax = plt.subplots(figsize=_FIGSIZE, dpi=_DPI)
    x = np.arange(1, len(labels) + 1)
    ax.plot(x, values, marker="o", color=_LINE_COLOR)
    if _log_scaled(column):
        ax.set_yscale("log")
    ax.set_xticks(x, labels=labels, rotation=30, ha="right")
    ax.set_xlabel("family member")
    ax.set_ylabel(column)
    ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    return _finish(fig, path)


def _render_report_curves(
    job: PlotJob, title: str, required: tuple[str, ...]
) -> list[Path]:
    path = job.run_dir / "report.csv"
    header, rows = _read_rows(path)
    _require(header, required, path)
    labels = [row["label"] for row in rows]
    written = []
    for column in header:
        if column == "label":
            continue
        dest = job.run_dir / f"{job.which}_{column}.{job.out_format}"
        written.append(_member_curve(dest, title, labels, _floats(rows, column), column))
    return written


def _render_spectral(job: PlotJob, title: str) -> list[Path]:
    report = job.run_dir / "report.csv"
    spectrum = job.run_dir / "spectrum.csv"
    if report.exists():
        return _render_report_curves(job, title, _SPECTRAL_REQUIRED)
    if not spectrum.exists():
        raise FileNotFoundError(f"{job.run_dir} has neither report.csv nor spectrum.csv")
    header, rows = _read_rows(spectrum)
    _require(header, _SPECTRUM_REQUIRED, spectrum)
    index = _floats(rows, "index")
    written = []
    for column in ("eigenvalue", "residual"):
        fig, ax = plt.subplots(figsize=_FIGSIZE, dpi=_DPI)
        ax.plot(index, _floats(rows, column), marker="o", color=_LINE_COLOR)
        if _log_scaled(column):
            ax.set_yscale("log")
        ax.set_xticks(index, labels=[str(int(i)) for i in index])
        ax.set_xlabel("index")
        ax.set_ylabel(column)
        ax.set_title(title)
        ax.grid(True, which="both", alpha=0.3)
        written.append(_finish(fig, job.run_dir / f"spectral_{column}.{job.out_format}"))
    return written


def _render_shapes(job: PlotJob, title: str, manifest: dict) -> list[Path]:
    written = _render_report_curves(job, title, _SHAPES_REQUIRED)
    if "evaluated" not in manifest:
        raise MissingColumn(
            f"{job.run_dir / 'manifest.json'} lacks the evaluated candidate table"
        )
    evaluated = manifest["evaluated"]
    if not evaluated:
        raise EmptyReport(f"{job.run_dir / 'manifest.json'} evaluated table is empty")
    labels = [entry[0] for entry in evaluated]
    energies = np.array(
        [float(entry[1]) if entry[1] is not None else np.nan for entry in evaluated]
    )
    fig, ax = plt.subplots(figsize=_FIGSIZE, dpi=_DPI)
    x = np.arange(1, len(labels) + 1)
    # Rejected candidates carry no energy; their slots stay empty but keep a
    # tick so the gap is visible.
    ax.plot(x, energies, marker="o", linestyle="none", color=_LINE_COLOR)
    ax.set_xticks(x, labels=labels, rotation=30, ha="right")
    ax.set_xlabel("candidate")
    ax.set_ylabel("energy")
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    written.append(_finish(fig, job.run_dir / f"shapes_energy.{job.out_format}"))
    return written


def _render_domain(job: PlotJob) -> list[Path]:
    path = job.run_dir / "domain.json"
    with open(path) as fh:
        data = json.load(fh)
    for key in ("grid", "inside"):
        if key not in data:
            raise MissingColumn(f"{path} lacks required key {key!r}")
    n = int(data["grid"]["n"])
    mask = np.zeros((n, n), dtype=bool)
    for row, start, length in data["inside"]:
        mask[int(row), int(start) : int(start) + int(length)] = True
    rgb = np.where(mask[..., None], _FOREGROUND, _BACKGROUND)
    dest = job.run_dir / f"domain_raster.{job.out_format}"
    if job.out_format == "png":
        # One pixel per grid cell, written verbatim, so the foreground pixel
        # count equals the serialized inside-cell count.
        plt.imsave(dest, rgb, origin="lower")
        return [dest]
    g = data["grid"]
    extent = (
        g["origin"][0],
        g["origin"][0] + g["side"],
        g["origin"][1],
        g["origin"][1] + g["side"],
    )
    fig, ax = plt.subplots(figsize=_FIGSIZE, dpi=_DPI)
    ax.imshow(rgb, origin="lower", interpolation="none", extent=extent)
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.set_title("domain")
    return [_finish(fig, dest)]


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        description="render figures for a finished run directory"
    )
    parser.add_argument("--run", required=True, help="run directory with a manifest")
    parser.add_argument("--which", required=True, choices=VIEWS, help="view to render")
    parser.add_argument(
        "--format", default="png", choices=FORMATS, dest="out_format",
        help="output image format",
    )
    args = parser.parse_args(argv)
    try:
        written = render(PlotJob(Path(args.run), args.which, args.out_format))
    except (OSError, ValueError, PlotError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for path in written:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
