"""Bilinear nodal elements over the inside cells of a pixel domain.

Assembles the stiffness, mass, and weighted trace forms of the quadratic
energy, the atom-evaluation (trace) matrix, midpoint-rule loads, and the
box projection. Element matrices are exact on each square cell, so the
only quadrature error in the whole stack is the midpoint rule for source
terms and the pixelation of the domain itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.sparse import coo_matrix, csr_matrix, diags

from .errors import AtomOutsideDomain, ConstraintKillsEverything
from .geometry import GridDomain, GridSpec
from .measures import DiscreteMeasure

# reference element matrices on a square cell, corner order SW, SE, NE, NW;
# stiffness is h-independent, mass scales with h^2
_K_LOC = np.array(
    [
        [4.0, -1.0, -2.0, -1.0],
        [-1.0, 4.0, -1.0, -2.0],
        [-2.0, -1.0, 4.0, -1.0],
        [-1.0, -2.0, -1.0, 4.0],
    ]
) / 6.0
_M_LOC = np.array(
    [
        [4.0, 2.0, 1.0, 2.0],
        [2.0, 4.0, 2.0, 1.0],
        [1.0, 2.0, 4.0, 2.0],
        [2.0, 1.0, 2.0, 4.0],
    ]
) / 36.0


@dataclass(frozen=True, eq=False)
class DofMap:
    """Dense enumeration of the grid nodes carried by a domain.

    ``node_flat`` lists flat lattice indices (row * (n+1) + col) of every
    node adjacent to at least one inside cell, ascending, so dense index i
    refers to node ``node_flat[i]``. ``dense_of_node`` inverts the map with
    -1 at absent nodes. ``is_boundary`` flags nodes with fewer than four
    incident inside cells.
    """

    grid: GridSpec
    node_flat: np.ndarray
    dense_of_node: np.ndarray
    is_boundary: np.ndarray

    @property
    def n_dof(self) -> int:
        return self.node_flat.size

    def node_positions(self) -> np.ndarray:
        """(n_dof, 2) coordinates of the carried nodes."""
        m = self.grid.n + 1
        r, c = np.divmod(self.node_flat, m)
        h = self.grid.h
        return np.column_stack(
            [self.grid.origin[0] + c * h, self.grid.origin[1] + r * h]
        )

    def same_nodes(self, other: "DofMap") -> bool:
        return self.grid == other.grid and bool(
            np.array_equal(self.node_flat, other.node_flat)
        )


def build_dofs(dom: GridDomain) -> DofMap:
    """Enumerate corner nodes of inside cells and flag boundary nodes."""
    n = dom.grid.n
    m = n + 1
    incident = np.zeros((m, m), dtype=np.int32)
    ins = dom.inside.astype(np.int32)
    incident[:-1, :-1] += ins
    incident[:-1, 1:] += ins
    incident[1:, :-1] += ins
    incident[1:, 1:] += ins
    active = incident > 0
    node_flat = np.flatnonzero(active.ravel())
    dense = -np.ones(m * m, dtype=np.int64)
    dense[node_flat] = np.arange(node_flat.size)
    is_boundary = incident.ravel()[node_flat] < 4
    node_flat.setflags(write=False)
    dense.setflags(write=False)
    is_boundary.setflags(write=False)
    return DofMap(dom.grid, node_flat, dense, is_boundary)


def _cell_corner_dofs(dom: GridDomain, dofs: DofMap) -> np.ndarray:
    """(n_cells, 4) dense dof indices of each inside cell, order SW, SE, NE, NW."""
    m = dom.grid.n + 1
    rr, cc = np.nonzero(dom.inside)
    sw = rr * m + cc
    corners = np.column_stack([sw, sw + 1, sw + m + 1, sw + m])
    return dofs.dense_of_node[corners]


def evaluate_field(f, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Scalar, array-of-matching-length, or callable field at given points."""
    if callable(f):
        try:
            vals = np.asarray(f(x, y), dtype=float)
            if vals.shape != x.shape:
                raise ValueError
        except (TypeError, ValueError):
            vals = np.array([float(f(xi, yi)) for xi, yi in zip(x, y)])
        return vals
    arr = np.asarray(f, dtype=float)
    if arr.ndim == 0:
        return np.full(x.shape, float(arr))
    if arr.shape != x.shape:
        raise ValueError("field array length does not match evaluation points")
    return arr


@dataclass(frozen=True)
class ProblemSpec:
    """One boundary value problem: kind, zero-order weight, and data.

    ``gamma`` and ``boundary_phi`` are evaluated at measure atoms,
    ``source_f`` at cell centers; each may be a constant, an array of the
    right length, or a callable on the box. A Robin problem with alpha = 0
    needs gamma bounded away from zero; a Neumann problem with alpha = 0
    needs compatible data. Both are enforced where the atoms are known.
    """

    kind: str
    alpha: float = 0.0
    gamma: object = 0.0
    source_f: object = 0.0
    boundary_phi: object = 0.0

    def __post_init__(self):
        if self.kind not in ("dirichlet", "robin", "neumann"):
            raise ValueError(f"unknown problem kind {self.kind!r}")
        object.__setattr__(self, "alpha", float(self.alpha))
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")


@dataclass(frozen=True, eq=False)
class AssembledForms:
    """Sparse forms of the energy on a (domain, measure, gamma) triple.

    ``trace_map`` R sends nodal vectors to values at measure atoms;
    ``trace_mass`` is R^T diag(gamma_i w_i) R. ``atom_weights`` and
    ``gamma_at_atoms`` keep the diagonal factors available for loads and
    boundary pairings.
    """

    stiffness: csr_matrix
    mass: csr_matrix
    trace_mass: csr_matrix
    trace_map: csr_matrix
    dofs: DofMap
    atom_weights: np.ndarray
    gamma_at_atoms: np.ndarray


def _atom_rows(dom: GridDomain, dofs: DofMap, points: np.ndarray):
    """Bilinear interpolation rows for each atom.

    The containing cell is the inside cell whose closed square holds the
    atom; ties on shared faces go to the lowest flat cell index.
    """
    n = dom.grid.n
    m = n + 1
    h = dom.grid.h
    fx = (points[:, 0] - dom.grid.origin[0]) / h
    fy = (points[:, 1] - dom.grid.origin[1]) / h
    tol = 1e-9
    rows = np.empty((points.shape[0], 4), dtype=np.int64)
    vals = np.empty((points.shape[0], 4))
    for i in range(points.shape[0]):
        cand = []
        for py in sorted({math.floor(fy[i] - tol), math.floor(fy[i] + tol)}):
            for px in sorted({math.floor(fx[i] - tol), math.floor(fx[i] + tol)}):
                if 0 <= py < n and 0 <= px < n and dom.inside[py, px]:
                    cand.append(py * n + px)
        if not cand:
            raise AtomOutsideDomain(
                f"atom ({points[i, 0]:.6g}, {points[i, 1]:.6g}) "
                "lies in no inside cell"
            )
        cell = min(cand)
        r, c = divmod(cell, n)
        xi = min(max(fx[i] - c, 0.0), 1.0)
        eta = min(max(fy[i] - r, 0.0), 1.0)
        sw = r * m + c
        rows[i] = dofs.dense_of_node[[sw, sw + 1, sw + m + 1, sw + m]]
        vals[i] = (
            (1.0 - xi) * (1.0 - eta),
            xi * (1.0 - eta),
            xi * eta,
            (1.0 - xi) * eta,
        )
    return rows, vals


def _assemble_cellwise(corner_dofs: np.ndarray, loc: np.ndarray, n_dof: int):
    rows = np.repeat(corner_dofs, 4, axis=1).ravel()
    cols = np.tile(corner_dofs, (1, 4)).ravel()
    vals = np.tile(loc.ravel(), corner_dofs.shape[0])
    return coo_matrix((vals, (rows, cols)), shape=(n_dof, n_dof)).tocsr()


def assemble(dom: GridDomain, mu: DiscreteMeasure, gamma) -> AssembledForms:
    """Stiffness, mass, trace map, and weighted trace form on one domain.

    ``gamma`` may be a constant, a callable on the box, or an array over
    the atoms of ``mu``; it is evaluated at the atoms.
    """
    dofs = build_dofs(dom)
    corner_dofs = _cell_corner_dofs(dom, dofs)
    h = dom.grid.h
    A = _assemble_cellwise(corner_dofs, _K_LOC, dofs.n_dof)
    M = _assemble_cellwise(corner_dofs, h * h * _M_LOC, dofs.n_dof)
    rows, vals = _atom_rows(dom, dofs, mu.points)
    k = mu.n_atoms
    R = coo_matrix(
        (vals.ravel(), (np.repeat(np.arange(k), 4), rows.ravel())),
        shape=(k, dofs.n_dof),
    ).tocsr()
    g = evaluate_field(gamma, mu.points[:, 0], mu.points[:, 1])
    if np.any(g < 0):
        raise ValueError("gamma must be nonnegative at every atom")
    T = (R.T @ diags(g * mu.weights) @ R).tocsr()
    return AssembledForms(
        stiffness=A,
        mass=M,
        trace_mass=T,
        trace_map=R,
        dofs=dofs,
        atom_weights=mu.weights,
        gamma_at_atoms=g,
    )


@lru_cache(maxsize=8)
def box_mass_matrix(grid: GridSpec) -> csr_matrix:
    """Mass matrix of the full confinement box on all (n+1)^2 lattice nodes.

    Used as the L^2(box) inner product when comparing zero-continued
    fields across domains; cached since whole experiment families share
    one grid.
    """
    n = grid.n
    m = n + 1
    cols, rows_ = np.meshgrid(np.arange(n), np.arange(n))
    sw = (rows_ * m + cols).ravel()
    corners = np.column_stack([sw, sw + 1, sw + m + 1, sw + m])
    return _assemble_cellwise(corners, grid.h ** 2 * _M_LOC, m * m)


def load_vector(dom: GridDomain, dofs: DofMap, f) -> np.ndarray:
    """Midpoint-rule load: each inside cell spreads h^2/4 f(center) to corners."""
    X, Y = dom.grid.cell_centers()
    fc = evaluate_field(f, X[dom.inside], Y[dom.inside])
    corner_dofs = _cell_corner_dofs(dom, dofs)
    F = np.zeros(dofs.n_dof)
    contrib = fc * (dom.grid.h ** 2 / 4.0)
    for j in range(4):
        np.add.at(F, corner_dofs[:, j], contrib)
    return F


def constrained_dofs(forms: AssembledForms) -> np.ndarray:
    """Boolean mask of dofs influencing any atom value (nonzero column of R)."""
    counts = np.asarray(
        abs(forms.trace_map).sum(axis=0)
    ).ravel()
    return counts > 0.0


def reduce_dirichlet(forms: AssembledForms):
    """Free-dof mask after eliminating every atom-adjacent dof.

    Raises when the elimination leaves nothing.
    """
    free = ~constrained_dofs(forms)
    if not free.any():
        raise ConstraintKillsEverything(
            "eliminating atom-adjacent dofs removed every dof"
        )
    return free


def project_onto_domain(v: np.ndarray, dom: GridDomain) -> np.ndarray:
    """Zero out box-node coefficients away from the domain's carried nodes.

    ``v`` is indexed on the full-box node lattice; the result keeps entries
    only at nodes adjacent to an inside cell of ``dom``. Idempotent.
    """
    m = dom.grid.n + 1
    v = np.asarray(v, dtype=float)
    if v.shape != (m * m,):
        raise ValueError(f"expected a box nodal vector of length {m * m}")
    out = np.zeros_like(v)
    keep = build_dofs(dom).node_flat
    out[keep] = v[keep]
    return out


def compatibility_defect(dom: GridDomain, mu: DiscreteMeasure, spec) -> float:
    """Data-compatibility residual: midpoint integral of f plus atom sum of phi."""
    X, Y = dom.grid.cell_centers()
    fvals = evaluate_field(spec.source_f, X[dom.inside], Y[dom.inside])
    vol = float(fvals.sum()) * dom.grid.h ** 2
    phivals = evaluate_field(spec.boundary_phi, mu.points[:, 0], mu.points[:, 1])
    return vol + float((phivals * mu.weights).sum())


def export_matrix(mat, path) -> None:
    """Coordinate-triplet text dump: one 'row col value' line, sorted."""
    coo = coo_matrix(mat)
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w") as fh:
        for i in order:
            fh.write(f"{coo.row[i]} {coo.col[i]} {coo.data[i]:.17g}\n")
