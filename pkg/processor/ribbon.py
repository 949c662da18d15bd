"""Ribbon timelines: one horizontal color bar per label sequence, exported as SVG."""

import io
from typing import List, Mapping, Optional, Sequence, Tuple

import matplotlib
import numpy as np
from matplotlib.figure import Figure
from matplotlib.patches import Patch

from src.file_utils import atomic_write_text
from src.logger import get_logger
from .errors import InvalidArgumentError

logger = get_logger(__name__)

PALETTE = "tab20"
PALETTE_SIZE = 20
ROW_HEIGHT = 0.8

RIBBON_STYLE = {
    "svg.hashsalt": "segmentmonkey",  # stable element ids
    "svg.fonttype": "none",  # keep text as text
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.spines.left": False,
}


def class_color(class_id: int):
    """Palette color of a class; ids reuse the 20 colors modulo 20."""
    return matplotlib.colormaps[PALETTE].colors[class_id % PALETTE_SIZE]


def label_segments(labels) -> List[Tuple[int, int, int]]:
    """Run-length encode ``labels`` into ``(start, length, class_id)`` triples."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        return []
    starts = np.flatnonzero(np.diff(labels)) + 1
    bounds = np.concatenate(([0], starts, [labels.size]))
    return [(int(a), int(b - a), int(labels[a])) for a, b in zip(bounds[:-1], bounds[1:])]


def ribbon_rows(gt, pred_by_model: Mapping[str, Sequence[int]]) -> List[Tuple[str, List[Tuple[int, int, int]]]]:
    """Ground truth first, then each model in the given order."""
    rows = [("ground truth", np.asarray(gt))] + [(name, np.asarray(pred)) for name, pred in pred_by_model.items()]
    lengths = {len(labels) for _, labels in rows}
    if len(lengths) != 1:
        raise InvalidArgumentError(f"ribbon rows differ in length: {sorted(lengths)}")
    if 0 in lengths:
        raise InvalidArgumentError("ribbon rows are empty")
    return [(name, label_segments(labels)) for name, labels in rows]


def ribbon_figure(gt, pred_by_model: Mapping[str, Sequence[int]], ontology, task: str = "step",
                  title: Optional[str] = None) -> Figure:
    classes = ontology.classes(task)
    rows = ribbon_rows(gt, pred_by_model)
    present = sorted({segment[2] for _, segments in rows for segment in segments})
    if present[0] < 0 or present[-1] >= len(classes):
        raise InvalidArgumentError(f"{task} labels must lie in [0, {len(classes)})")

    frames = sum(length for _, length, _ in rows[0][1])
    fig = Figure(figsize=(10, 0.6 * len(rows) + 1.6))
    ax = fig.add_subplot()
    for index, (_, segments) in enumerate(rows):
        y = len(rows) - 1 - index
        ax.broken_barh([(start, length) for start, length, _ in segments], (y - ROW_HEIGHT / 2, ROW_HEIGHT),
                       facecolors=[class_color(c) for _, _, c in segments], linewidth=0)
    ax.set_yticks(range(len(rows)))
    ax.set_yticklabels([name for name, _ in reversed(rows)])
    ax.set_xlim(0, frames)
    ax.set_ylim(-0.6, len(rows) - 0.4)
    ax.set_xlabel("frame")
    if title:
        ax.set_title(title)
    handles = [Patch(facecolor=class_color(c), label=classes[c].code) for c in present]
    ax.legend(handles=handles, loc="upper center", bbox_to_anchor=(0.5, -0.35), ncol=min(len(handles), 11),
              frameon=False, fontsize=7)
    fig.subplots_adjust(left=0.15, right=0.98, bottom=0.45)
    return fig


def export_ribbon(gt, pred_by_model: Mapping[str, Sequence[int]], ontology, out_path, task: str = "step",
                  title: Optional[str] = None, description: Optional[str] = None):
    """Write the ribbon as a standalone SVG; identical inputs give identical bytes.

    ``description`` is stored in the SVG metadata (run configuration and seed).
    """
    with matplotlib.rc_context(RIBBON_STYLE):
        fig = ribbon_figure(gt, pred_by_model, ontology, task, title)
        metadata = {"Date": None}
        if description:
            metadata["Description"] = description
        buffer = io.StringIO()
        fig.savefig(buffer, format="svg", metadata=metadata)
    atomic_write_text(out_path, buffer.getvalue())
    logger.debug("Ribbon with %d model rows written to %s", len(pred_by_model), out_path)
    return out_path
