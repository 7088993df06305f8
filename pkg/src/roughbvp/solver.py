"""Weak solutions of the generalized boundary value problems.

One symmetric positive (semi)definite system per problem kind:

    (A + alpha M + T_gamma) u = F + R^T W phi

solved on the full carried-dof space for Robin and Neumann problems and on
the reduced space (atom-adjacent dofs eliminated) for Dirichlet ones. The
quasi-inverse wraps the same operator behind a direct factorization so it
can be applied many times; its algebra (resolvent identity, symmetry in
the domain mass inner product) holds to solver precision by construction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.sparse import bmat, csc_matrix, diags, identity
from scipy.sparse.linalg import splu

from .discretization import (
    AssembledForms,
    DofMap,
    ProblemSpec,
    assemble,
    compatibility_defect,
    evaluate_field,
    load_vector,
    reduce_dirichlet,
)
from .errors import (
    DofMismatch,
    IncompatibleNeumann,
    NotASolution,
    SingularSystem,
)
from .geometry import GridDomain
from .measures import DiscreteMeasure

_CG_RTOL = 1e-10
_RESIDUAL_ACCEPT = 1e-8


@dataclass(frozen=True, eq=False)
class WeakSolution:
    """Solution vector on the domain's carried dofs plus its invariants.

    ``objective`` is the variational value 0.5 E(u) - (f, u) - (phi, Tr u);
    minimized exactly by the solution among all fields in the same space.
    """

    values: np.ndarray
    kind: str
    energy: float
    objective: float
    residual_norm: float
    problem: ProblemSpec
    dofs: DofMap


def _pcg(K, b: np.ndarray, rtol: float, maxiter: int, project=None):
    """Jacobi-preconditioned conjugate gradient.

    ``project`` restores the working subspace each iteration (used to
    deflate the constant kernel); breakdown and stagnation both abort.
    """
    diag = K.diagonal()
    if np.any(diag <= 0.0):
        raise SingularSystem("operator diagonal is not positive")
    x = np.zeros_like(b)
    r = b.copy()
    if project is not None:
        r = project(r)
    bnorm = float(np.linalg.norm(r))
    if bnorm == 0.0:
        return x, 0.0
    z = r / diag
    p = z.copy()
    rz = float(r @ z)
    for _ in range(maxiter):
        Kp = K @ p
        pKp = float(p @ Kp)
        if pKp <= 0.0:
            raise SingularSystem("conjugate gradient broke down (p^T K p <= 0)")
        step = rz / pKp
        x += step * p
        r -= step * Kp
        if project is not None:
            r = project(r)
        res = float(np.linalg.norm(r))
        if res <= rtol * bnorm:
            return x, res / bnorm
        z = r / diag
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SingularSystem(f"conjugate gradient did not converge in {maxiter} iterations")


def _effective_gamma(spec: ProblemSpec):
    return spec.gamma if spec.kind == "robin" else 0.0


def _data_norms(dom: GridDomain, mu: DiscreteMeasure, spec: ProblemSpec):
    X, Y = dom.grid.cell_centers()
    f = evaluate_field(spec.source_f, X[dom.inside], Y[dom.inside])
    fn = float(np.sqrt((f ** 2).sum() * dom.grid.h ** 2))
    phi = evaluate_field(spec.boundary_phi, mu.points[:, 0], mu.points[:, 1])
    pn = float(np.sqrt((phi ** 2 * mu.weights).sum()))
    return fn, pn


def solve(
    dom: GridDomain,
    mu: DiscreteMeasure,
    spec: ProblemSpec,
    rtol: float = _CG_RTOL,
    allow_mean_shift: bool = False,
) -> WeakSolution:
    """Solve one generalized problem on a pixel domain.

    Neumann problems with alpha = 0 are solved on the mean-zero subspace
    by deflating the constant vector; the data must be compatible unless
    ``allow_mean_shift`` explicitly requests dropping the defect.
    """
    forms = assemble(dom, mu, _effective_gamma(spec))
    n = forms.dofs.n_dof
    F = load_vector(dom, forms.dofs, spec.source_f)
    phi = evaluate_field(
        spec.boundary_phi, mu.points[:, 0], mu.points[:, 1]
    )
    if spec.kind == "dirichlet" and np.any(phi != 0.0):
        raise ValueError("only homogeneous Dirichlet data is supported")
    rhs = F + forms.trace_map.T @ (mu.weights * phi)
    K = forms.stiffness + spec.alpha * forms.mass + forms.trace_mass
    maxiter = 20 * n

    if spec.kind == "dirichlet":
        free = reduce_dirichlet(forms)
        Kff = K[free][:, free].tocsr()
        uf, relres = _pcg(Kff, rhs[free], rtol, maxiter)
        u = np.zeros(n)
        u[free] = uf
    elif spec.kind == "robin":
        if spec.alpha == 0.0 and float(forms.gamma_at_atoms.min()) <= 0.0:
            raise ValueError(
                "robin with alpha = 0 needs gamma bounded away from zero"
            )
        u, relres = _pcg(K.tocsr(), rhs, rtol, maxiter)
    elif spec.kind == "neumann":
        if spec.alpha == 0.0:
            defect = compatibility_defect(dom, mu, spec)
            fn, pn = _data_norms(dom, mu, spec)
            scale = max(fn + pn, 1e-30)
            if abs(defect) > 1e-8 * scale and not allow_mean_shift:
                raise IncompatibleNeumann(
                    f"data defect {defect:.3e} exceeds tolerance for "
                    "the alpha = 0 Neumann problem"
                )

            def project(r, n=n):
                return r - (r.sum() / n)

            u, relres = _pcg(K.tocsr(), rhs, rtol, maxiter, project=project)
            Mu_total = float((forms.mass @ u).sum())
            ones_mass = float(forms.mass.sum())
            u = u - Mu_total / ones_mass
        else:
            u, relres = _pcg(K.tocsr(), rhs, rtol, maxiter)
    else:  # pragma: no cover - ProblemSpec rejects other kinds
        raise ValueError(spec.kind)

    en = float(u @ (K @ u))
    obj = 0.5 * en - float(u @ F) - float((forms.trace_map @ u) @ (mu.weights * phi))
    return WeakSolution(
        values=u,
        kind=spec.kind,
        energy=en,
        objective=obj,
        residual_norm=relres,
        problem=spec,
        dofs=forms.dofs,
    )


def energy(
    dom: GridDomain, mu: DiscreteMeasure, spec: ProblemSpec, u
) -> float:
    """Quadratic energy of a field on this domain's dofs.

    Fields carried by a different dof set are outside the form domain;
    that branch is the typed marker ``DofMismatch``, never a float inf.
    """
    values = u.values if isinstance(u, WeakSolution) else np.asarray(u, dtype=float)
    forms = assemble(dom, mu, _effective_gamma(spec))
    if isinstance(u, WeakSolution) and not u.dofs.same_nodes(forms.dofs):
        raise DofMismatch("field lives on a different dof set")
    if values.shape != (forms.dofs.n_dof,):
        raise DofMismatch("field length does not match this domain's dofs")
    K = forms.stiffness + spec.alpha * forms.mass + forms.trace_mass
    return float(values @ (K @ values))


class QuasiInverse:
    """Resolvent-style map g -> continuation-by-zero of the solution with
    source P_Omega g and homogeneous boundary data.

    Acts on full-box nodal vectors. Backed by one sparse factorization so
    repeated applications are cheap; the resolvent identity and symmetry
    in the domain mass inner product hold to factorization accuracy.
    """

    def __init__(
        self,
        dom: GridDomain,
        mu: DiscreteMeasure,
        spec: ProblemSpec,
        alpha: float,
    ):
        if alpha < 0:
            raise ValueError("alpha must be nonnegative")
        forms = assemble(dom, mu, _effective_gamma(spec))
        self.kind = spec.kind
        self.alpha = float(alpha)
        self.forms = forms
        self.dofs = forms.dofs
        self._nbox = (dom.grid.n + 1) ** 2
        K = forms.stiffness + alpha * forms.mass + forms.trace_mass
        if spec.kind == "dirichlet":
            self._free = reduce_dirichlet(forms)
            K = K[self._free][:, self._free]
        else:
            self._free = None
            if spec.kind == "neumann" and alpha == 0.0:
                raise ValueError(
                    "the alpha = 0 Neumann operator has no quasi-inverse"
                )
            if (
                spec.kind == "robin"
                and alpha == 0.0
                and float(forms.gamma_at_atoms.min()) <= 0.0
            ):
                raise ValueError(
                    "robin with alpha = 0 needs gamma bounded away from zero"
                )
        try:
            self._lu = splu(csc_matrix(K))
        except RuntimeError as exc:
            raise SingularSystem(f"factorization failed: {exc}") from exc

    def apply(self, g: np.ndarray) -> np.ndarray:
        """Box vector in, box vector out (zero off the carried dofs)."""
        g = np.asarray(g, dtype=float)
        if g.shape != (self._nbox,):
            raise ValueError(f"expected a box nodal vector of length {self._nbox}")
        ga = g[self.dofs.node_flat]
        rhs = self.forms.mass @ ga
        out = np.zeros(self._nbox)
        if self._free is not None:
            sol = np.zeros(self.dofs.n_dof)
            sol[self._free] = self._lu.solve(rhs[self._free])
        else:
            sol = self._lu.solve(rhs)
        out[self.dofs.node_flat] = sol
        return out

    def apply_active(self, g_active: np.ndarray) -> np.ndarray:
        """Same map on carried-dof vectors, skipping the box embedding."""
        rhs = self.forms.mass @ np.asarray(g_active, dtype=float)
        if self._free is not None:
            sol = np.zeros(self.dofs.n_dof)
            sol[self._free] = self._lu.solve(rhs[self._free])
            return sol
        return self._lu.solve(rhs)


def resolvent_apply(
    dom: GridDomain,
    mu: DiscreteMeasure,
    spec: ProblemSpec,
    alpha: float,
    g: np.ndarray,
) -> np.ndarray:
    """One-shot quasi-inverse application; see :class:`QuasiInverse`."""
    return QuasiInverse(dom, mu, spec, alpha).apply(g)


@dataclass(frozen=True, eq=False)
class NormalDerivative:
    """Boundary flux pairing of a solved field.

    ``pairing`` maps test data at measure atoms to the real number
    int_Omega e (alpha u - f) dx + e^T A u, with e the constrained
    (A + M)-harmonic extension of the test data; linear in the data.
    """

    pairing: object
    n_atoms: int


def normal_derivative(
    dom: GridDomain, mu: DiscreteMeasure, u: WeakSolution
) -> NormalDerivative:
    """Generalized flux functional of a weak solution.

    Test data must be realizable as the trace of some nodal field (any
    vector of the form trace_map @ v qualifies; so do constants). The
    returned pairing is then independent of which extension realizes the
    data, up to the discretization error of the solve itself.
    """
    if u.residual_norm > _RESIDUAL_ACCEPT:
        raise NotASolution(
            f"residual {u.residual_norm:.3e} exceeds {_RESIDUAL_ACCEPT:.0e}"
        )
    spec = u.problem
    forms = assemble(dom, mu, _effective_gamma(spec))
    if not u.dofs.same_nodes(forms.dofs):
        raise DofMismatch("solution lives on a different dof set")
    n = forms.dofs.n_dof
    k = mu.n_atoms
    F = load_vector(dom, forms.dofs, spec.source_f)
    # the pairing only sees the extension through this fixed covector
    w = forms.stiffness @ u.values + spec.alpha * (forms.mass @ u.values) - F

    # Constrained minimum-energy extension. The trace map of a boundary
    # measure is rank-deficient by one per boundary loop (an even cycle of
    # face atoms admits an alternating left-null vector), so the saddle
    # system carries a tiny negative regularization block: realizable
    # trace data is still matched to ~1e-12, unrealizable components are
    # resolved by least squares instead of breaking the factorization.
    H = (forms.stiffness + forms.mass).tocsc()
    R = forms.trace_map
    delta = 1e-12 * (H.diagonal().mean() or 1.0)
    kkt = bmat([[H, R.T], [R, -delta * identity(k)]], format="csc")
    try:
        lu = splu(kkt)
    except RuntimeError as exc:
        raise SingularSystem(f"extension system failed to factor: {exc}") from exc

    def extend(psi: np.ndarray) -> np.ndarray:
        psi = np.asarray(psi, dtype=float)
        if psi.shape != (k,):
            raise ValueError(f"expected one test value per atom ({k})")
        sol = lu.solve(np.concatenate([np.zeros(n), psi]))
        return sol[:n]

    def pairing(psi) -> float:
        return float(extend(psi) @ w)

    return NormalDerivative(pairing=pairing, n_atoms=k)


# -- export ------------------------------------------------------------------

def solution_to_csv(u: WeakSolution, csv_path, sidecar_path=None) -> None:
    """Node table (x, y, value) plus a JSON sidecar of scalar facts."""
    pos = u.dofs.node_positions()
    with open(csv_path, "w") as fh:
        fh.write("node_x,node_y,value\n")
        for (x, y), v in zip(pos, u.values):
            fh.write(f"{x:.17g},{y:.17g},{v:.17g}\n")
    if sidecar_path is not None:
        meta = {
            "kind": u.kind,
            "alpha": u.problem.alpha,
            "energy": u.energy,
            "objective": u.objective,
            "residual_norm": u.residual_norm,
            "n_dof": int(u.dofs.n_dof),
            "h": u.dofs.grid.h,
        }
        with open(sidecar_path, "w") as fh:
            json.dump(meta, fh, indent=1, sort_keys=True)
            fh.write("\n")
