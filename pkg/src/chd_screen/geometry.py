""" Pixel-raster geometry: components, area, perimeter, moments, angles.

Points are ``(x, y)`` pairs in pixel units, ``x`` along columns and ``y``
along rows, pixel centers at integer coordinates.
"""
import math
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
from scipy import ndimage

from chd_screen import errors
from chd_screen.masks import LabelMask, MaskSchema

Point = Tuple[float, float]

EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)

ISOTROPY_THRESHOLD = 1.05

# Moore neighbourhood, clockwise on screen (y grows downwards), from west.
_NEIGHBOURS = ((-1, 0), (-1, -1), (0, -1), (1, -1),
               (1, 0), (1, 1), (0, 1), (-1, 1))
_STEP_LENGTH = tuple(math.sqrt(2) if dx and dy else 1.0
                     for dx, dy in _NEIGHBOURS)


@dataclass(frozen=True, eq=False)
class Region:
    """ One 8-connected component of one label.

    ``pixels`` is the boolean raster of the bounding box whose top-left
    corner sits at ``origin`` (row, column) in the source mask.
    """
    schema: MaskSchema
    label: int
    origin: Tuple[int, int]
    pixels: np.ndarray

    def __post_init__(self) -> None:
        pixels = np.array(self.pixels, dtype=bool)
        if not pixels.any():
            raise errors.InvalidParameters('region must not be empty')
        pixels.setflags(write=False)
        object.__setattr__(self, 'pixels', pixels)

    @property
    def bbox(self) -> Tuple[int, int, int, int]:
        """ (row0, col0, row1, col1), end-exclusive."""
        row, col = self.origin
        height, width = self.pixels.shape
        return row, col, row + height, col + width

    @property
    def coordinates(self) -> np.ndarray:
        """ Member pixel centers as an ``(n, 2)`` array of ``(x, y)``."""
        rows, cols = np.nonzero(self.pixels)
        return np.column_stack((cols + self.origin[1],
                                rows + self.origin[0])).astype(np.float64)

    def raster(self, shape: Tuple[int, int]) -> np.ndarray:
        """ Boolean raster of the region placed in a frame of ``shape``."""
        out = np.zeros(shape, dtype=bool)
        row0, col0, row1, col1 = self.bbox
        out[row0:row1, col0:col1] = self.pixels
        return out


@dataclass(frozen=True)
class Ray:
    origin: Point
    direction: Point

    def __post_init__(self) -> None:
        if abs(math.hypot(*self.direction) - 1.0) > 1e-9:
            raise errors.InvalidParameters(
                f'ray direction {self.direction} is not a unit vector')

    @classmethod
    def through(cls, origin: Point, target: Point) -> 'Ray':
        """ Ray from ``origin`` pointing at ``target``."""
        dx, dy = target[0] - origin[0], target[1] - origin[1]
        norm = math.hypot(dx, dy)
        if norm == 0:
            raise errors.DegenerateRegion('ray endpoints coincide')
        return cls(origin, (dx / norm, dy / norm))


def connected_components(mask: LabelMask, label: int) -> List[Region]:
    """ Maximal 8-connected components of ``label``, largest first."""
    if not 0 <= label <= mask.schema.max_code:
        raise errors.InvalidLabel(
            f'label {label} is not valid for schema {mask.schema.value}')
    labeled, count = ndimage.label(mask.binary(label),
                                   structure=EIGHT_CONNECTED)
    regions = []
    for index, window in enumerate(ndimage.find_objects(labeled), start=1):
        if window is None:
            continue
        regions.append(Region(
            schema=mask.schema,
            label=label,
            origin=(window[0].start, window[1].start),
            pixels=labeled[window] == index,
        ))
    # stable: equal sizes keep raster-scan order
    regions.sort(key=area, reverse=True)
    return regions


def area(region: Region) -> int:
    return int(np.count_nonzero(region.pixels))


def fill_holes(region: Region) -> Region:
    """ Region enclosed by the outer boundary (interior voids filled)."""
    return Region(region.schema, region.label, region.origin,
                  ndimage.binary_fill_holes(region.pixels))


def boundary_chain(region: Region) -> List[int]:
    """
    Moore-neighbour trace of the outer boundary.

    Returns the chain as indices into the clockwise neighbourhood starting
    west; the trace stops when its first move would repeat.
    """
    grid = np.pad(ndimage.binary_fill_holes(region.pixels), 1)
    rows, cols = np.nonzero(grid)
    start = (int(cols[0]), int(rows[0]))  # raster-first pixel
    current = start
    backtrack = 0  # the west neighbour of the start is background
    first_move = None
    chain: List[int] = []
    while True:
        found = -1
        for k in range(1, 9):
            direction = (backtrack + k) % 8
            dx, dy = _NEIGHBOURS[direction]
            if grid[current[1] + dy, current[0] + dx]:
                found = direction
                break
        if found < 0:
            break  # isolated pixel
        move = (current, found)
        if first_move is None:
            first_move = move
        elif move == first_move:
            break
        chain.append(found)
        dx, dy = _NEIGHBOURS[found]
        nxt = (current[0] + dx, current[1] + dy)
        bx, by = _NEIGHBOURS[(found - 1) % 8]
        backtrack = _NEIGHBOURS.index(
            (current[0] + bx - nxt[0], current[1] + by - nxt[1]))
        current = nxt
    return chain


def perimeter(region: Region) -> float:
    """
    Length of the closed outer boundary through boundary-pixel centers.

    Axial steps count 1, diagonal steps count sqrt(2); holes are ignored.
    """
    if area(region) < 2:
        raise errors.DegenerateRegion('perimeter of a single pixel')
    return float(sum(_STEP_LENGTH[step] for step in boundary_chain(region)))


def centroid(region: Region) -> Point:
    xy = region.coordinates.mean(axis=0)
    return float(xy[0]), float(xy[1])


def principal_axis(region: Region,
                   isotropy_threshold: float = ISOTROPY_THRESHOLD) -> Point:
    """
    Long axis of the region from its second central moments.

    The eigenvector with the larger eigenvalue is sign-canonicalized to a
    non-negative y component (non-negative x on ties).

    :raises IsotropicRegion: eigenvalue ratio below ``isotropy_threshold``
    """
    xy = region.coordinates
    centered = xy - xy.mean(axis=0)
    moments = centered.T @ centered / len(xy)
    values, vectors = np.linalg.eigh(moments)
    low, high = float(values[0]), float(values[1])
    if high <= 0 or (low > 0 and high / low < isotropy_threshold):
        raise errors.IsotropicRegion(
            f'moment eigenvalues {low:.4g}, {high:.4g}: axis undefined')
    x, y = float(vectors[0, 1]), float(vectors[1, 1])
    if abs(y) < 1e-12:
        y = 0.0
    if y < 0 or (y == 0 and x < 0):
        x, y = -x, -y
    norm = math.hypot(x, y)
    return x / norm, y / norm


def cross(a: Point, b: Point) -> float:
    """ z component of ``a × b``."""
    return a[0] * b[1] - a[1] * b[0]


def angle_between(a: Ray, b: Ray) -> float:
    """ Unsigned angle between ray directions, degrees."""
    dot = a.direction[0] * b.direction[0] + a.direction[1] * b.direction[1]
    return math.degrees(math.acos(max(-1.0, min(1.0, dot))))
