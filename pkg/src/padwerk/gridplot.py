"""Trace-grid raster: one row per trace, one pixel column per cell.

Palette (fixed): white = sent nonpadding, black = received nonpadding,
green = sent padding, red = received padding; pixels beyond a trace's end
stay transparent.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.image
import numpy as np

from .trace import NONPADDING_RECV, NONPADDING_SENT, PADDING_RECV, PADDING_SENT

PALETTE = {
    NONPADDING_SENT: (255, 255, 255, 255),
    NONPADDING_RECV: (0, 0, 0, 255),
    PADDING_SENT: (0, 255, 0, 255),
    PADDING_RECV: (255, 0, 0, 255),
}

DEFAULT_GRID_TRACES = 200


def trace_grid(traces, max_traces=DEFAULT_GRID_TRACES):
    """RGBA array for the first max_traces traces, width = longest of them."""
    rows = list(traces)[:max_traces]
    if not rows:
        raise ValueError("no traces to render")
    width = max((len(t) for t in rows), default=0)
    if width == 0:
        raise ValueError("all traces are empty")
    grid = np.zeros((len(rows), width, 4), dtype=np.uint8)
    for r, trace in enumerate(rows):
        for c, ev in enumerate(trace.events):
            grid[r, c] = PALETTE[ev.kind]
    return grid


def render_trace_grid(traces, path, max_traces=DEFAULT_GRID_TRACES):
    """Write the grid as a lossless PNG; returns the array's (rows, width)."""
    grid = trace_grid(traces, max_traces)
    matplotlib.image.imsave(path, grid, format="png")
    return grid.shape[0], grid.shape[1]
