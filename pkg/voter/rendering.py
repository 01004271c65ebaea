# voter/rendering.py
"""
Binary PPM (P6) rendering of space-time diagrams and phase diagrams.

Opinion palette, indexed by opinion 1..12 and reused cyclically beyond:

    1 navy, 2 red, 3 gold, 4 green, 5 purple, 6 orange,
    7 teal, 8 pink, 9 olive, 10 sky, 11 brown, 12 grey

Interface mode draws a black pixel at column x when opinion(x) differs
from opinion(x + 1) (wrapping on a cycle) and white elsewhere.
"""
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from django.core.exceptions import ValidationError

from .analytics import PhaseCell
from .choices import PhaseClass, Topology

logger = logging.getLogger(__name__)

PALETTE = np.array([
    (31, 58, 147),
    (214, 39, 40),
    (255, 196, 0),
    (44, 160, 44),
    (148, 103, 189),
    (255, 127, 14),
    (23, 190, 207),
    (227, 119, 194),
    (188, 189, 34),
    (135, 206, 250),
    (140, 86, 75),
    (127, 127, 127),
], dtype=np.uint8)

BLACK = (0, 0, 0)
WHITE = (255, 255, 255)
GREY = (128, 128, 128)
# theta >= F cells, which are not part of the model
OUTSIDE = (64, 64, 160)

PHASE_COLORS = {
    PhaseClass.FLUCTUATION: BLACK,
    PhaseClass.FIXATION_PROVED: WHITE,
    PhaseClass.UNRESOLVED: GREY,
}


@dataclass(frozen=True)
class SpaceTimeImage:
    """height x width x 3 RGB pixels; one row per snapshot, one column per vertex."""
    pixels: np.ndarray
    interface_counts: np.ndarray

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    def to_ppm(self) -> bytes:
        return encode_ppm(self.pixels)


def encode_ppm(pixels: np.ndarray) -> bytes:
    pixels = np.ascontiguousarray(pixels, dtype=np.uint8)
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise ValidationError(f"Expected an H x W x 3 array, got shape {pixels.shape}", code='invalid_image')
    height, width = pixels.shape[:2]
    return f"P6\n{width} {height}\n255\n".encode('ascii') + pixels.tobytes()


def decode_ppm(data: bytes) -> np.ndarray:
    """Inverse of encode_ppm for the header layout it writes."""
    magic, dims, depth, body = data.split(b'\n', 3)
    if magic != b'P6' or depth != b'255':
        raise ValidationError("Not an 8-bit P6 pixmap", code='invalid_image')
    width, height = (int(part) for part in dims.split())
    return np.frombuffer(body, dtype=np.uint8).reshape(height, width, 3)


def interface_mask(snapshots: np.ndarray, topology: str = Topology.CYCLE) -> np.ndarray:
    """mask[row, x] is True when vertex x disagrees with vertex x + 1."""
    snapshots = np.atleast_2d(np.asarray(snapshots))
    mask = snapshots != np.roll(snapshots, -1, axis=1)
    if topology == Topology.PATH:
        mask[:, -1] = False
    return mask


def render_spacetime(snapshots: Sequence[np.ndarray], interfaces: bool = False,
                     topology: str = Topology.CYCLE) -> SpaceTimeImage:
    if topology not in (Topology.CYCLE, Topology.PATH):
        raise ValidationError("Space-time diagrams need a cycle or a path", code='invalid_topology')
    rows = np.atleast_2d(np.asarray(snapshots, dtype=np.int64))
    if rows.size == 0:
        raise ValidationError("No snapshots to render", code='no_data')
    mask = interface_mask(rows, topology)
    if interfaces:
        pixels = np.full(rows.shape + (3,), 255, dtype=np.uint8)
        pixels[mask] = BLACK
    else:
        pixels = PALETTE[(rows - 1) % len(PALETTE)]
    counts = mask.sum(axis=1)
    logger.debug(f"Rendered {rows.shape[0]}x{rows.shape[1]} space-time diagram")
    return SpaceTimeImage(pixels, counts)


def render_phase_diagram(cells: Sequence[PhaseCell], cell_size: int = 8) -> np.ndarray:
    """
    Columns are F = 2..F_max left to right, rows theta = 1..F_max - 1 top
    to bottom.
    """
    if not cells:
        raise ValidationError("Empty phase diagram", code='no_data')
    if cell_size < 1:
        raise ValidationError("cell_size must be positive", code='invalid_argument')
    F_max = max(cell.F for cell in cells)
    grid = np.empty((F_max - 1, F_max - 1, 3), dtype=np.uint8)
    grid[:, :] = OUTSIDE
    for cell in cells:
        grid[cell.theta - 1, cell.F - 2] = PHASE_COLORS[cell.classification]
    return np.repeat(np.repeat(grid, cell_size, axis=0), cell_size, axis=1)


def spacetime_times(t_max: float, rows: int) -> np.ndarray:
    """Uniform sample times 0, t_max / rows, ..., (rows - 1) t_max / rows."""
    if rows < 1:
        raise ValidationError("rows must be positive", code='invalid_argument')
    return np.arange(rows) * (float(t_max) / rows)
