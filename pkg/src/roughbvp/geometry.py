"""Pixel domains on a square confinement grid.

A domain is an open region represented by the set of grid cells whose
closed union realizes it. Geometry is deliberately pixel-exact: areas are
cell counts, boundaries are cell faces, and set distances are computed
between cell centers, so every quantity is reproducible bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

from .errors import (
    Disconnected,
    EmptyDomain,
    GridMismatch,
    ResolutionTooCoarse,
    WidthBelowResolution,
)

_FOUR_CONN = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
_SQRT3 = math.sqrt(3.0)


@dataclass(frozen=True)
class GridSpec:
    """Uniform square grid of ``cells_per_side`` x ``cells_per_side`` cells.

    The box covers ``[origin_x, origin_x + side] x [origin_y, origin_y + side]``.
    Cell (row, col) spans ``[ox + col*h, ox + (col+1)*h] x [oy + row*h, ...]``
    with ``h = side / cells_per_side``; rows index the y-direction.
    """

    origin: tuple[float, float]
    side: float
    cells_per_side: int

    def __post_init__(self):
        ox, oy = self.origin
        object.__setattr__(self, "origin", (float(ox), float(oy)))
        object.__setattr__(self, "side", float(self.side))
        object.__setattr__(self, "cells_per_side", int(self.cells_per_side))
        if self.side <= 0:
            raise ValueError("grid side must be positive")
        if self.cells_per_side < 4:
            raise ValueError("grid needs at least 4 cells per side")

    @property
    def n(self) -> int:
        return self.cells_per_side

    @property
    def h(self) -> float:
        return self.side / self.cells_per_side

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Center coordinates as two (n, n) arrays (X, Y), row = y index."""
        h = self.h
        xs = self.origin[0] + (np.arange(self.n) + 0.5) * h
        ys = self.origin[1] + (np.arange(self.n) + 0.5) * h
        return np.meshgrid(xs, ys)

    def node_coords(self) -> tuple[np.ndarray, np.ndarray]:
        """Vertex coordinates as two (n+1, n+1) arrays (X, Y)."""
        h = self.h
        xs = self.origin[0] + np.arange(self.n + 1) * h
        ys = self.origin[1] + np.arange(self.n + 1) * h
        return np.meshgrid(xs, ys)


@dataclass(frozen=True, eq=False)
class GridDomain:
    """Nonempty 4-connected set of inside cells on a :class:`GridSpec`.

    ``required_core``, when present, marks cells every admissible variation
    of the domain must keep; it must be a subset of ``inside``.
    """

    grid: GridSpec
    inside: np.ndarray
    required_core: np.ndarray | None = None

    def __post_init__(self):
        n = self.grid.n
        inside = np.ascontiguousarray(np.asarray(self.inside, dtype=bool))
        if inside.shape != (n, n):
            raise ValueError(f"inside mask must have shape ({n}, {n})")
        if not inside.any():
            raise EmptyDomain("domain selects no cells")
        _, ncomp = ndimage.label(inside, structure=_FOUR_CONN)
        if ncomp != 1:
            raise Disconnected(f"domain has {ncomp} 4-connected components")
        inside.setflags(write=False)
        object.__setattr__(self, "inside", inside)
        if self.required_core is not None:
            core = np.ascontiguousarray(np.asarray(self.required_core, dtype=bool))
            if core.shape != (n, n):
                raise ValueError(f"core mask must have shape ({n}, {n})")
            if np.any(core & ~inside):
                raise ValueError("required core is not contained in the domain")
            core.setflags(write=False)
            object.__setattr__(self, "required_core", core)

    @property
    def n_cells(self) -> int:
        return int(self.inside.sum())

    def area(self) -> float:
        return self.n_cells * self.grid.h ** 2

    def equals(self, other: "GridDomain") -> bool:
        return (
            self.grid == other.grid
            and bool(np.array_equal(self.inside, other.inside))
            and (
                (self.required_core is None) == (other.required_core is None)
                and (
                    self.required_core is None
                    or bool(np.array_equal(self.required_core, other.required_core))
                )
            )
        )


@dataclass(frozen=True, eq=False)
class DomainFamily:
    """Ordered, labeled domains sharing one grid."""

    grid: GridSpec
    members: tuple
    labels: tuple

    def __post_init__(self):
        if len(self.members) != len(self.labels):
            raise ValueError("one label per member required")
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("labels must be unique")
        for dom in self.members:
            if dom.grid != self.grid:
                raise GridMismatch("family members must share the grid")

    def __len__(self) -> int:
        return len(self.members)


def full_box(grid: GridSpec, required_core: np.ndarray | None = None) -> GridDomain:
    """The whole confinement box as a domain."""
    return GridDomain(grid, np.ones((grid.n, grid.n), dtype=bool), required_core)


def build_pixel_domain(grid: GridSpec, predicate) -> GridDomain:
    """Select the cells whose centers satisfy ``predicate(x, y)``.

    The predicate may be vectorized over numpy arrays; scalar predicates
    are evaluated per cell center.
    """
    X, Y = grid.cell_centers()
    try:
        mask = np.asarray(predicate(X, Y), dtype=bool)
        if mask.shape != X.shape:
            raise ValueError
    except (TypeError, ValueError):
        mask = np.empty(X.shape, dtype=bool)
        for r in range(grid.n):
            for c in range(grid.n):
                mask[r, c] = bool(predicate(X[r, c], Y[r, c]))
    return GridDomain(grid, mask)


# -- prefractal construction -------------------------------------------------

def koch_polygon(base_origin, base_side: float, level: int) -> np.ndarray:
    """Closed polyline of the level-``level`` bumped square, CCW.

    Each refinement replaces a segment by four segments at scale 1/3 with
    the middle-third triangular bump pointing away from the enclosed region,
    so the boundary has 4*4**level segments.
    """
    if level < 0:
        raise ValueError("level must be nonnegative")
    ox, oy = float(base_origin[0]), float(base_origin[1])
    b = float(base_side)
    pts = np.array(
        [[ox, oy], [ox + b, oy], [ox + b, oy + b], [ox, oy + b]], dtype=float
    )
    for _ in range(level):
        a = pts
        c = np.roll(pts, -1, axis=0)
        d = c - a
        # outward normal of a CCW contour is the direction rotated by -90 deg
        bump = np.stack([d[:, 1], -d[:, 0]], axis=1) * (_SQRT3 / 6.0)
        out = np.empty((4 * len(a), 2))
        out[0::4] = a
        out[1::4] = a + d / 3.0
        out[2::4] = a + d / 2.0 + bump
        out[3::4] = a + 2.0 * d / 3.0
        pts = out
    return pts


def polygon_area(poly: np.ndarray) -> float:
    """Shoelace area of a closed polyline given without repeated endpoint."""
    x = poly[:, 0]
    y = poly[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def _points_in_polygon(px: np.ndarray, py: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Even-odd test of points against a closed polyline (+x ray casting)."""
    inside = np.zeros(px.shape, dtype=bool)
    x1, y1 = poly[-1]
    for x2, y2 in poly:
        crosses = (y1 > py) != (y2 > py)
        dy = y2 - y1
        xin = x1 + (py - y1) * (x2 - x1) / np.where(dy == 0.0, 1.0, dy)
        inside ^= crosses & (px < xin)
        x1, y1 = x2, y2
    return inside


def koch_prefractal_domain(
    grid: GridSpec, level: int, base_origin, base_side: float
) -> GridDomain:
    """Pixelation of the bumped square at the given refinement level.

    Requires at least four cells per smallest boundary segment,
    h <= (1/3)**level * base_side / 4.
    """
    limit = (1.0 / 3.0) ** level * float(base_side) / 4.0
    if grid.h > limit * (1.0 + 1e-12):
        raise ResolutionTooCoarse(
            f"h = {grid.h:.6g} exceeds {limit:.6g} needed for level {level}"
        )
    poly = koch_polygon(base_origin, base_side, level)
    ox, oy = grid.origin
    lo = poly.min(axis=0)
    hi = poly.max(axis=0)
    if lo[0] < ox or lo[1] < oy or hi[0] > ox + grid.side or hi[1] > oy + grid.side:
        raise ValueError("prefractal boundary leaves the confinement box")
    X, Y = grid.cell_centers()
    mask = _points_in_polygon(X.ravel(), Y.ravel(), poly).reshape(X.shape)
    return GridDomain(grid, mask)


def notch_family(
    grid: GridSpec,
    widths,
    depth_ratio: float = 1.0,
    required_core: np.ndarray | None = None,
) -> DomainFamily:
    """Boxes with one rectangular slit cut downward from the top edge.

    Slit depth is ``depth_ratio`` times the width, so the family shrinks
    the perturbation in both directions at once. Widths must be strictly
    decreasing and each at least two cells wide.
    """
    widths = [float(w) for w in widths]
    if any(b >= a for a, b in zip(widths, widths[1:])):
        raise ValueError("widths must be strictly decreasing")
    h = grid.h
    n = grid.n
    members = []
    labels = []
    for w in widths:
        if w < 2.0 * h * (1.0 - 1e-12):
            raise WidthBelowResolution(f"width {w:g} is below two cells ({2 * h:g})")
        ncols = max(2, int(round(w / h)))
        nrows = max(1, int(round(depth_ratio * w / h)))
        if nrows > n - 2:
            raise ValueError(f"slit depth {depth_ratio * w:g} nearly severs the box")
        start = (n - ncols) // 2
        inside = np.ones((n, n), dtype=bool)
        inside[n - nrows:, start:start + ncols] = False
        members.append(GridDomain(grid, inside, required_core))
        labels.append(f"w={w:g}")
    return DomainFamily(grid, tuple(members), tuple(labels))


# -- boundary structure -------------------------------------------------------

def boundary_cell_mask(dom: GridDomain) -> np.ndarray:
    """Inside cells with at least one 4-neighbor outside (or off the grid)."""
    inside = dom.inside
    padded = np.pad(inside, 1, constant_values=False)
    covered = (
        padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    )
    return inside & ~covered


def boundary_edges(dom: GridDomain) -> np.ndarray:
    """All exposed cell faces as rows (row, col, direction).

    Directions index (south, east, north, west) = (0, 1, 2, 3). A face is
    exposed when the neighbor across it is outside or off the grid.
    """
    inside = dom.inside
    padded = np.pad(inside, 1, constant_values=False)
    south = inside & ~padded[:-2, 1:-1]
    north = inside & ~padded[2:, 1:-1]
    west = inside & ~padded[1:-1, :-2]
    east = inside & ~padded[1:-1, 2:]
    rows = []
    for direction, mask in enumerate((south, east, north, west)):
        r, c = np.nonzero(mask)
        rows.append(np.column_stack([r, c, np.full(r.shape, direction)]))
    out = np.vstack(rows)
    order = np.lexsort((out[:, 2], out[:, 1], out[:, 0]))
    return out[order]


def pixel_perimeter(dom: GridDomain) -> float:
    """Total length of exposed cell faces."""
    return boundary_edges(dom).shape[0] * dom.grid.h


# -- set distances ------------------------------------------------------------

def _complement_mask(dom: GridDomain) -> np.ndarray:
    """Complement of the domain in the closed box, one padding ring included.

    The ring stands in for the box boundary, which always belongs to the
    closed complement; it keeps the distance well defined when the domain
    fills the whole box.
    """
    comp = np.ones((dom.grid.n + 2, dom.grid.n + 2), dtype=bool)
    comp[1:-1, 1:-1] = ~dom.inside
    return comp


def hausdorff_distance(a: GridDomain, b: GridDomain) -> float:
    """Hausdorff distance between the complements of the two domains.

    Computed between cell-center sets with two exact Euclidean distance
    transforms; exact for the discrete sets, within one cell diagonal of
    the continuum value.
    """
    if a.grid != b.grid:
        raise GridMismatch("domains live on different grids")
    comp_a = _complement_mask(a)
    comp_b = _complement_mask(b)
    to_b = ndimage.distance_transform_edt(~comp_b)
    to_a = ndimage.distance_transform_edt(~comp_a)
    d_ab = float(to_b[comp_a].max()) if comp_a.any() else 0.0
    d_ba = float(to_a[comp_b].max()) if comp_b.any() else 0.0
    return max(d_ab, d_ba) * a.grid.h


def char_distance(a: GridDomain, b: GridDomain) -> float:
    """L1 distance of indicator functions: h^2 times the symmetric difference."""
    if a.grid != b.grid:
        raise GridMismatch("domains live on different grids")
    return float(np.logical_xor(a.inside, b.inside).sum()) * a.grid.h ** 2


# -- quantitative interior-corridor audit --------------------------------------

@dataclass(frozen=True)
class UniformityReport:
    """Outcome of a sampled corridor audit; a falsifier, not a prover."""

    passed: bool
    worst_pair: tuple | None
    worst_ratio: float
    eps: float
    pairs_checked: int


def _cell_graph(dom: GridDomain) -> tuple[np.ndarray, "coo_matrix", np.ndarray]:
    """8-neighbor weighted adjacency between inside cells."""
    inside = dom.inside
    n = dom.grid.n
    h = dom.grid.h
    ids = -np.ones((n, n), dtype=np.int64)
    rr, cc = np.nonzero(inside)
    ids[rr, cc] = np.arange(rr.size)
    src = []
    dst = []
    wgt = []
    for dr, dc, w in ((0, 1, h), (1, 0, h), (1, 1, h * math.sqrt(2)), (1, -1, h * math.sqrt(2))):
        a_r = slice(max(0, -dr), n - max(0, dr))
        a_c = slice(max(0, -dc), n - max(0, dc))
        b_r = slice(max(0, dr), n + min(0, dr))
        b_c = slice(max(0, dc), n + min(0, dc))
        both = inside[a_r, a_c] & inside[b_r, b_c]
        src.append(ids[a_r, a_c][both])
        dst.append(ids[b_r, b_c][both])
        wgt.append(np.full(int(both.sum()), w))
    graph = coo_matrix(
        (np.concatenate(wgt), (np.concatenate(src), np.concatenate(dst))),
        shape=(rr.size, rr.size),
    ).tocsr()
    centers = np.column_stack(
        [
            dom.grid.origin[0] + (cc + 0.5) * h,
            dom.grid.origin[1] + (rr + 0.5) * h,
        ]
    )
    return ids, graph, centers


def _interior_distance(dom: GridDomain) -> np.ndarray:
    """Distance from each inside cell center to the domain boundary.

    Nearest-outside-center distance minus half a cell; exact for axis-facing
    boundary, within the one-cell-diagonal slack otherwise.
    """
    padded = np.pad(dom.inside, 1, constant_values=False)
    edt = ndimage.distance_transform_edt(padded)[1:-1, 1:-1]
    return (edt - 0.5) * dom.grid.h


def check_uniform_eps(
    dom: GridDomain, eps: float, sample_pairs: int = 200, seed: int = 0
) -> UniformityReport:
    """Sampled audit of the quantitative corridor condition at parameter eps.

    For sampled cell-center pairs (x, y) it checks, along the shortest
    8-neighbor path inside the domain, that (i) the path length is at most
    |x - y| / eps and (ii) every path point z keeps distance to the boundary
    at least eps |x - z||y - z| / |x - y|, both with one cell diagonal of
    slack. Passing all samples does not prove the condition; one failing
    pair falsifies it at this resolution.
    """
    if not (0.0 < eps <= 1.0):
        raise ValueError("eps must lie in (0, 1]")
    if sample_pairs <= 0:
        raise ValueError("sample_pairs must be positive")
    ids, graph, centers = _cell_graph(dom)
    m = centers.shape[0]
    rng = np.random.default_rng(seed)
    pairs = rng.integers(0, m, size=(sample_pairs, 2))
    pairs = pairs[pairs[:, 0] != pairs[:, 1]]
    if m < 2 or pairs.shape[0] == 0:
        return UniformityReport(True, None, math.inf, eps, 0)
    d_bnd = _interior_distance(dom)[dom.inside]
    sources = np.unique(pairs[:, 0])
    dist, pred = dijkstra(
        graph, directed=False, indices=sources, return_predecessors=True
    )
    src_row = {int(s): i for i, s in enumerate(sources)}
    slack = dom.grid.h * math.sqrt(2)
    passed = True
    worst = math.inf
    worst_pair = None
    for x_id, y_id in pairs:
        i = src_row[int(x_id)]
        length = float(dist[i, y_id])
        px = centers[x_id]
        py = centers[y_id]
        sep = float(np.hypot(*(px - py)))
        ratio = (sep / eps) / length
        ok = length <= sep / eps + slack
        node = int(y_id)
        path = [node]
        while node != int(x_id):
            node = int(pred[i, node])
            if node < 0:
                raise Disconnected("no path between sampled cells")
            path.append(node)
        if len(path) > 2:
            z = np.asarray(path[1:-1])
            za = np.linalg.norm(centers[z] - px, axis=1)
            zb = np.linalg.norm(centers[z] - py, axis=1)
            corridor = eps * za * zb / sep
            dz = d_bnd[z]
            ok = ok and bool(np.all(dz + slack >= corridor))
            ratio = min(ratio, float((dz / corridor).min()))
        if ratio < worst:
            worst = ratio
            worst_pair = ((float(px[0]), float(px[1])), (float(py[0]), float(py[1])))
        passed = passed and ok
    return UniformityReport(passed, worst_pair, worst, eps, int(pairs.shape[0]))


# -- serialization --------------------------------------------------------------

def _rle_encode(mask: np.ndarray) -> list:
    runs = []
    for r in range(mask.shape[0]):
        row = mask[r]
        if not row.any():
            continue
        flat = np.flatnonzero(np.diff(np.concatenate(([False], row, [False]))))
        for start, stop in zip(flat[0::2], flat[1::2]):
            runs.append([int(r), int(start), int(stop - start)])
    return runs


def _rle_decode(runs, n: int) -> np.ndarray:
    mask = np.zeros((n, n), dtype=bool)
    for r, start, length in runs:
        mask[int(r), int(start):int(start) + int(length)] = True
    return mask


def domain_to_json(dom: GridDomain) -> dict:
    """JSON-ready dict; run-length encoded rows round-trip bit-exactly."""
    out = {
        "grid": {
            "origin": [dom.grid.origin[0], dom.grid.origin[1]],
            "side": dom.grid.side,
            "n": dom.grid.n,
        },
        "inside": _rle_encode(dom.inside),
    }
    if dom.required_core is not None:
        out["core"] = _rle_encode(dom.required_core)
    return out


def domain_from_json(data: dict) -> GridDomain:
    g = data["grid"]
    grid = GridSpec((g["origin"][0], g["origin"][1]), g["side"], g["n"])
    inside = _rle_decode(data["inside"], grid.n)
    core = _rle_decode(data["core"], grid.n) if "core" in data else None
    return GridDomain(grid, inside, core)
