"""Discrete Borel measures as weighted atoms, with regularity audits.

Measures carry their claimed regularity data (dimension exponents and
constants) so that admissibility audits can be run without extra context.
All audits are finite scans: balls over a dyadic radius ladder, weak
convergence against a fixed polynomial dictionary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from numpy.polynomial import chebyshev
from scipy import ndimage

from .errors import EmptyRadii
from .geometry import (
    GridDomain,
    GridSpec,
    UniformityReport,
    boundary_cell_mask,
    boundary_edges,
    check_uniform_eps,
    koch_polygon,
)

LOG4_OVER_LOG3 = math.log(4.0) / math.log(3.0)


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Finitely many weighted atoms with claimed regularity data.

    ``claimed_d``/``claimed_cd`` describe the upper regularity bound
    mu(B(x,r)) <= cd * r^d the measure is supposed to satisfy on its
    support; ``claimed_s``/``claimed_cs`` the lower bound for boundary
    volumes; ``mass_cap`` the total-mass budget, when one applies.
    """

    points: np.ndarray
    weights: np.ndarray
    support_kind: str = "general"
    claimed_d: float = 1.0
    claimed_cd: float = 2.5
    claimed_s: float | None = None
    claimed_cs: float | None = None
    mass_cap: float | None = None

    def __post_init__(self):
        pts = np.ascontiguousarray(np.asarray(self.points, dtype=float))
        wts = np.ascontiguousarray(np.asarray(self.weights, dtype=float))
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValueError("points must be a (k, 2) array")
        if wts.shape != (pts.shape[0],):
            raise ValueError("weights must be a (k,) array matching points")
        if pts.shape[0] == 0:
            raise ValueError("a measure needs at least one atom")
        if not np.all(wts > 0):
            raise ValueError("all weights must be strictly positive")
        if self.support_kind not in ("boundary", "interior", "general"):
            raise ValueError(f"unknown support kind {self.support_kind!r}")
        if not (0.0 < self.claimed_d <= 2.0):
            raise ValueError("claimed_d must lie in (0, 2]")
        if self.claimed_s is not None and not (1.0 <= self.claimed_s < 2.0):
            raise ValueError("claimed_s must lie in [1, 2)")
        if self.mass_cap is not None and wts.sum() > self.mass_cap:
            raise ValueError("total mass exceeds the declared cap")
        pts.setflags(write=False)
        wts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", wts)

    @property
    def n_atoms(self) -> int:
        return self.points.shape[0]

    def total_mass(self) -> float:
        return float(self.weights.sum())

    def scaled(self, t: float) -> "DiscreteMeasure":
        """Same atoms with all weights multiplied by t > 0 (cap dropped)."""
        if t <= 0:
            raise ValueError("scale factor must be positive")
        return replace(self, weights=self.weights * t, mass_cap=None)


def canonical_order(mu: DiscreteMeasure) -> np.ndarray:
    """Indices sorting atoms lexicographically by (x, y)."""
    return np.lexsort((mu.points[:, 1], mu.points[:, 0]))


def measure_to_json(mu: DiscreteMeasure) -> dict:
    order = canonical_order(mu)
    atoms = np.column_stack([mu.points[order], mu.weights[order]])
    return {
        "atoms": [[float(x), float(y), float(w)] for x, y, w in atoms],
        "kind": mu.support_kind,
        "d": mu.claimed_d,
        "c_d": mu.claimed_cd,
        "s": mu.claimed_s,
        "cs": mu.claimed_cs,
        "mass_cap": mu.mass_cap,
    }


def measure_from_json(data: dict) -> DiscreteMeasure:
    atoms = np.asarray(data["atoms"], dtype=float).reshape(-1, 3)
    return DiscreteMeasure(
        points=atoms[:, :2],
        weights=atoms[:, 2],
        support_kind=data["kind"],
        claimed_d=data["d"],
        claimed_cd=data["c_d"],
        claimed_s=data.get("s"),
        claimed_cs=data.get("cs"),
        mass_cap=data.get("mass_cap"),
    )


# -- constructions ------------------------------------------------------------

def arc_measure_on_boundary(dom: GridDomain, atoms_per_edge: int = 1) -> DiscreteMeasure:
    """Face-length measure on the pixel boundary of a domain.

    Each exposed cell face carries ``atoms_per_edge`` atoms at the midpoints
    of its equal subdivisions, each of weight h / atoms_per_edge, so the
    total mass is exactly the pixel perimeter.
    """
    if atoms_per_edge <= 0:
        raise ValueError("atoms_per_edge must be positive")
    edges = boundary_edges(dom)
    if edges.shape[0] < 4:
        raise ValueError("domain has fewer than 4 exposed faces")
    h = dom.grid.h
    ox, oy = dom.grid.origin
    t = (np.arange(atoms_per_edge) + 0.5) / atoms_per_edge
    pts = np.empty((edges.shape[0] * atoms_per_edge, 2))
    k = 0
    for r, c, direction in edges:
        x0 = ox + c * h
        y0 = oy + r * h
        if direction == 0:  # south face, varying x at y0
            xs, ys = x0 + t * h, np.full(atoms_per_edge, y0)
        elif direction == 1:  # east face, varying y at x0 + h
            xs, ys = np.full(atoms_per_edge, x0 + h), y0 + t * h
        elif direction == 2:  # north face
            xs, ys = x0 + t * h, np.full(atoms_per_edge, y0 + h)
        else:  # west face
            xs, ys = np.full(atoms_per_edge, x0), y0 + t * h
        pts[k:k + atoms_per_edge, 0] = xs
        pts[k:k + atoms_per_edge, 1] = ys
        k += atoms_per_edge
    weights = np.full(pts.shape[0], h / atoms_per_edge)
    return DiscreteMeasure(
        points=pts,
        weights=weights,
        support_kind="boundary",
        claimed_d=1.0,
        claimed_cd=3.0,
        claimed_s=1.0,
        claimed_cs=0.9,
    )


def self_similar_koch_measure(
    level: int, base_origin, base_side: float
) -> DiscreteMeasure:
    """Self-similar measure on the bumped-square boundary polyline.

    One atom per level-``level`` segment midpoint with weight 4**(-level),
    so each parent's weight splits equally over its four children and the
    total mass is exactly 4 at every level. The claimed dimension exponent
    is log 4 / log 3.
    """
    if not (0 <= level <= 7):
        raise ValueError("level must lie in 0..7")
    poly = koch_polygon(base_origin, base_side, level)
    mids = (poly + np.roll(poly, -1, axis=0)) / 2.0
    weights = np.full(mids.shape[0], 4.0 ** (-level))
    return DiscreteMeasure(
        points=mids,
        weights=weights,
        support_kind="boundary",
        claimed_d=LOG4_OVER_LOG3,
        claimed_cd=4.2,
    )


def lebesgue_like_measure(dom: GridDomain) -> DiscreteMeasure:
    """Interior area measure: weight h^2 at every inside cell center."""
    X, Y = dom.grid.cell_centers()
    pts = np.column_stack([X[dom.inside], Y[dom.inside]])
    weights = np.full(pts.shape[0], dom.grid.h ** 2)
    return DiscreteMeasure(
        points=pts,
        weights=weights,
        support_kind="interior",
        claimed_d=2.0,
        claimed_cd=3.3,
    )


# -- regularity audits ----------------------------------------------------------

@dataclass(frozen=True)
class RegularityReport:
    passed: bool
    worst_center: tuple | None
    worst_radius: float
    worst_ratio: float


def dyadic_radii(scale: float = 1.0, depth: int = 8) -> list:
    """The ladder {scale * 2**-k : k = 1..depth}."""
    return [scale * 2.0 ** (-k) for k in range(1, depth + 1)]


def _scan_balls(mu: DiscreteMeasure, centers: np.ndarray, radii, exponent, closed):
    """Weight inside each ball around each center, worst ratio tracking.

    Returns (ratios, ...) reduced across a chunked pairwise-distance scan;
    ``closed`` picks <= r (closed balls) versus < r (open balls).
    """
    radii = np.asarray(sorted(radii), dtype=float)
    pts = mu.points
    wts = mu.weights
    ratios = np.empty((centers.shape[0], radii.size))
    chunk = max(1, int(2_000_000 // max(1, pts.shape[0])))
    for lo in range(0, centers.shape[0], chunk):
        block = centers[lo:lo + chunk]
        dist = np.sqrt(
            ((block[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
        )
        for j, r in enumerate(radii):
            mask = dist <= r if closed else dist < r
            ratios[lo:lo + block.shape[0], j] = (mask @ wts) / r ** exponent
    return radii, ratios


def _pick_centers(mu: DiscreteMeasure, centers: str, cap: int = 2000) -> np.ndarray:
    if centers == "atoms":
        return mu.points
    if centers == "grid":
        # decimated atom set on a regular stride, in canonical order
        order = canonical_order(mu)
        stride = max(1, int(math.ceil(mu.n_atoms / cap)))
        return mu.points[order[::stride]]
    raise ValueError("centers must be 'atoms' or 'grid'")


def check_upper_regular(
    mu: DiscreteMeasure,
    d: float,
    c_d: float,
    radii,
    centers: str = "atoms",
) -> RegularityReport:
    """Audit mu(B(x, r)) <= c_d * r^d over open balls at support points."""
    radii = list(radii)
    if not radii:
        raise EmptyRadii("no radii to scan")
    if any(r <= 0 for r in radii):
        raise ValueError("radii must be positive")
    if not (0.0 < d <= 2.0):
        raise ValueError("d must lie in (0, 2]")
    cpts = _pick_centers(mu, centers)
    rad, ratios = _scan_balls(mu, cpts, radii, d, closed=False)
    flat = int(np.argmax(ratios))
    ci, rj = divmod(flat, rad.size)
    worst = float(ratios[ci, rj])
    return RegularityReport(
        passed=bool(worst <= c_d),
        worst_center=(float(cpts[ci, 0]), float(cpts[ci, 1])),
        worst_radius=float(rad[rj]),
        worst_ratio=worst,
    )


def check_lower_regular(
    nu: DiscreteMeasure, s: float, cs: float, radii
) -> RegularityReport:
    """Audit nu(closed B(x, r)) >= cs * r^s at every atom."""
    radii = list(radii)
    if not radii:
        raise EmptyRadii("no radii to scan")
    if any(r <= 0 for r in radii):
        raise ValueError("radii must be positive")
    if not (1.0 <= s < 2.0):
        raise ValueError("s must lie in [1, 2)")
    rad, ratios = _scan_balls(nu, nu.points, radii, s, closed=True)
    flat = int(np.argmin(ratios))
    ci, rj = divmod(flat, rad.size)
    worst = float(ratios[ci, rj])
    return RegularityReport(
        passed=bool(worst >= cs),
        worst_center=(float(nu.points[ci, 0]), float(nu.points[ci, 1])),
        worst_radius=float(rad[rj]),
        worst_ratio=worst,
    )


# -- weak-convergence surrogate ---------------------------------------------------

def _dictionary_moments(mu: DiscreteMeasure, degree: int, origin, side) -> np.ndarray:
    x = 2.0 * (mu.points[:, 0] - origin[0]) / side - 1.0
    y = 2.0 * (mu.points[:, 1] - origin[1]) / side - 1.0
    vx = chebyshev.chebvander(x, degree)
    vy = chebyshev.chebvander(y, degree)
    return (vx * mu.weights[:, None]).T @ vy


def weak_distance(
    mu1: DiscreteMeasure,
    mu2: DiscreteMeasure,
    test_degree: int = 8,
    box=None,
) -> float:
    """Max dictionary-moment gap between two measures.

    The dictionary is the tensor Chebyshev family T_i(x) T_j(y) with
    i + j <= test_degree, rescaled to the given box (either a GridSpec or an
    (origin, side) pair); each member has sup-norm one on the box. When the
    box is omitted, the joint bounding square is used; fix one box when
    comparing more than two measures.
    """
    if not (0 <= test_degree <= 12):
        raise ValueError("test_degree must lie in 0..12")
    if isinstance(box, GridSpec):
        origin, side = box.origin, box.side
    elif box is not None:
        origin, side = box
        side = float(side)
    else:
        allpts = np.vstack([mu1.points, mu2.points])
        lo = allpts.min(axis=0)
        side = float(max(allpts.max(axis=0) - lo)) or 1.0
        origin = (float(lo[0]), float(lo[1]))
    m1 = _dictionary_moments(mu1, test_degree, origin, side)
    m2 = _dictionary_moments(mu2, test_degree, origin, side)
    i = np.arange(test_degree + 1)
    keep = (i[:, None] + i[None, :]) <= test_degree
    return float(np.abs(m1 - m2)[keep].max())


# -- admissibility ---------------------------------------------------------------

@dataclass(frozen=True)
class AdmissibilityParams:
    """Audit parameters: corridor eps, lower (s, cs_bar) and cap c_bar for
    the boundary volume, upper (d, c_d) for the trace volume."""

    eps: float
    s: float
    cs_bar: float
    c_bar: float
    d: float
    c_d: float


@dataclass(frozen=True, eq=False)
class AdmissibleTriple:
    """A candidate shape: domain plus boundary volume nu and trace volume mu."""

    domain: GridDomain
    boundary_volume: DiscreteMeasure
    trace_volume: DiscreteMeasure
    params: AdmissibilityParams
    label: str = ""


@dataclass(frozen=True)
class AdmissibilityReport:
    passed: bool
    checks: dict


def _atoms_in_cells(points: np.ndarray, dom: GridDomain, mask: np.ndarray) -> bool:
    """True when every point lies in some closed cell flagged by ``mask``."""
    h = dom.grid.h
    n = dom.grid.n
    fx = (points[:, 0] - dom.grid.origin[0]) / h
    fy = (points[:, 1] - dom.grid.origin[1]) / h
    tol = 1e-9
    for px, py in zip(fx, fy):
        cols = {int(math.floor(px + s)) for s in (-tol, tol)}
        rows = {int(math.floor(py + s)) for s in (-tol, tol)}
        hit = False
        for r in rows:
            for c in cols:
                if 0 <= r < n and 0 <= c < n and mask[r, c]:
                    hit = True
        if not hit:
            return False
    return True


def verify_admissible(
    triple: AdmissibleTriple,
    radii,
    sample_pairs: int = 200,
    seed: int = 0,
) -> AdmissibilityReport:
    """Conjunction of the four shape-admissibility audits.

    Sub-checks, in order: the sampled corridor audit at params.eps; support
    inclusions (nu within one cell of the boundary cells, mu inside the
    closed pixelation); lower regularity plus mass cap on nu; upper
    regularity on mu. Radii are absolute lengths; scale the dyadic ladder
    by the confinement side when the box is not unit.
    """
    dom = triple.domain
    p = triple.params
    checks: dict = {}

    checks["uniform_eps"] = check_uniform_eps(
        dom, p.eps, sample_pairs=sample_pairs, seed=seed
    )

    near_boundary = ndimage.binary_dilation(
        boundary_cell_mask(dom), structure=np.ones((3, 3), dtype=bool)
    )
    checks["nu_support"] = _atoms_in_cells(
        triple.boundary_volume.points, dom, near_boundary
    )
    checks["mu_support"] = _atoms_in_cells(triple.trace_volume.points, dom, dom.inside)

    checks["nu_lower"] = check_lower_regular(
        triple.boundary_volume, p.s, p.cs_bar, radii
    )
    checks["nu_mass"] = bool(triple.boundary_volume.total_mass() <= p.c_bar)
    checks["mu_upper"] = check_upper_regular(triple.trace_volume, p.d, p.c_d, radii)

    passed = (
        checks["uniform_eps"].passed
        and checks["nu_support"]
        and checks["mu_support"]
        and checks["nu_lower"].passed
        and checks["nu_mass"]
        and checks["mu_upper"].passed
    )
    return AdmissibilityReport(passed=passed, checks=checks)
