"""Spectra of the generalized operators and derived constants.

Everything here reduces to the symmetric pencil (A + T_gamma) phi = lambda
M phi on the kind-appropriate dof space: eigenpairs, spectral projectors,
the Poincare constant under a measure-mean constraint, and norm-equivalence
extremes. Operator-norm differences are estimated by power iteration and
reported as certified lower bounds only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg as dla
from scipy.sparse import csc_matrix
from scipy.sparse.linalg import ArpackNoConvergence, eigsh, splu

from .discretization import assemble, reduce_dirichlet
from .errors import (
    ConvergenceFailure,
    DegenerateConstraint,
    InsufficientCount,
    IntervalCutsEigenvalue,
)
from .geometry import GridDomain
from .measures import DiscreteMeasure

_DENSE_CUTOFF = 2000


@dataclass(frozen=True, eq=False)
class SpectralData:
    """Lowest eigenpairs of one discrete operator.

    Eigenvectors are columns, M-orthonormal, carried on the full dof set
    (zeros at eliminated dofs for Dirichlet problems). ``mass`` is kept so
    projectors and alignments can reuse the defining inner product.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    kind: str
    count: int
    residuals: np.ndarray
    mass: object
    dofs: object


def _pencil(dom: GridDomain, mu: DiscreteMeasure, kind: str, gamma):
    forms = assemble(dom, mu, gamma)
    P = (forms.stiffness + forms.trace_mass).tocsr()
    B = forms.mass.tocsr()
    if kind == "dirichlet":
        free = reduce_dirichlet(forms)
        return P[free][:, free].tocsr(), B[free][:, free].tocsr(), free, forms
    if kind in ("robin", "neumann"):
        return P, B, None, forms
    raise ValueError(f"unknown problem kind {kind!r}")


def _gram_schmidt_m(vecs: np.ndarray, B) -> np.ndarray:
    """M-orthonormalize columns in order; deterministic sign convention."""
    out = vecs.copy()
    for j in range(out.shape[1]):
        v = out[:, j]
        for i in range(j):
            v = v - out[:, i] * float(out[:, i] @ (B @ v))
        nrm = math.sqrt(float(v @ (B @ v)))
        if nrm == 0.0:
            raise ConvergenceFailure("eigenvector collapsed during orthogonalization")
        v = v / nrm
        lead = np.argmax(np.abs(v))
        if v[lead] < 0:
            v = -v
        out[:, j] = v
    return out


def eigensolve(
    dom: GridDomain,
    mu: DiscreteMeasure,
    kind: str,
    gamma,
    count: int,
) -> SpectralData:
    """Lowest ``count`` eigenpairs of (A + T_gamma, M) on the kind's space.

    Shift-inverted Lanczos on large problems, dense solve below the
    cutoff; eigenvalues ascending, ties resolved by orthogonalization
    order.
    """
    if count < 1:
        raise ValueError("count must be positive")
    P, B, free, forms = _pencil(dom, mu, kind, gamma)
    n = P.shape[0]
    if count > n:
        raise ValueError(f"count {count} exceeds space dimension {n}")

    if n < _DENSE_CUTOFF or count >= n - 1:
        vals, vecs = dla.eigh(
            P.toarray(), B.toarray(), subset_by_index=[0, count - 1]
        )
    else:
        rng = np.random.default_rng(0)
        v0 = rng.standard_normal(n)
        vals = vecs = None
        failure = None
        for attempt in range(3):
            ncv = min(n, max(2 * count + 1, 20) * (attempt + 1))
            try:
                vals, vecs = eigsh(
                    P, k=count, M=B, sigma=-1.0, which="LM", v0=v0, ncv=ncv
                )
                break
            except ArpackNoConvergence as exc:
                failure = exc
        if vals is None:
            raise ConvergenceFailure(f"eigensolve failed after retries: {failure}")

    order = np.argsort(vals, kind="stable")
    vals = np.asarray(vals, dtype=float)[order]
    vecs = np.asarray(vecs, dtype=float)[:, order]
    vecs = _gram_schmidt_m(vecs, B)

    res = np.empty(count)
    for j in range(count):
        r = P @ vecs[:, j] - vals[j] * (B @ vecs[:, j])
        res[j] = float(np.linalg.norm(r))
        if res[j] > 1e-7 * (1.0 + abs(vals[j])):
            raise ConvergenceFailure(
                f"residual {res[j]:.2e} too large for eigenvalue {vals[j]:.6g}"
            )

    if free is not None:
        full = np.zeros((forms.dofs.n_dof, count))
        full[free] = vecs
        vecs = full
    return SpectralData(
        eigenvalues=vals,
        eigenvectors=vecs,
        kind=kind,
        count=count,
        residuals=res,
        mass=forms.mass,
        dofs=forms.dofs,
    )


@dataclass(frozen=True, eq=False)
class SpectralProjector:
    """Rank-k factor of a spectral projector, idempotent in the M product."""

    basis: np.ndarray
    mass: object

    @property
    def rank(self) -> int:
        return self.basis.shape[1]

    def apply(self, v: np.ndarray) -> np.ndarray:
        return self.basis @ (self.basis.T @ (self.mass @ np.asarray(v, dtype=float)))


def spectral_projector(sd: SpectralData, a: float, b: float) -> SpectralProjector:
    """Projector onto eigenspaces with eigenvalue inside (a, b).

    Requires both endpoints clear of computed eigenvalues and the interval
    certified complete: b must stay below the largest computed eigenvalue,
    otherwise uncomputed spectrum could hide inside.
    """
    if not a < b:
        raise ValueError("need a < b")
    lam = sd.eigenvalues
    gap = np.minimum(np.abs(lam - a), np.abs(lam - b))
    if float(gap.min()) < 1e-6:
        raise IntervalCutsEigenvalue(
            "an endpoint sits within 1e-6 of a computed eigenvalue"
        )
    if b >= lam[-1]:
        raise InsufficientCount(
            "interval extends past the computed part of the spectrum"
        )
    keep = (lam > a) & (lam < b)
    return SpectralProjector(basis=sd.eigenvectors[:, keep], mass=sd.mass)


def op_norm_diff(
    apply1,
    apply2,
    dim: int,
    iters: int = 60,
    restarts: int = 3,
    seed: int = 0,
    mass=None,
) -> float:
    """Lower-bound estimate of the operator norm of apply1 - apply2.

    Power iteration on the squared difference map, assuming both maps are
    symmetric in the chosen inner product (Euclidean when ``mass`` is
    omitted). Every Rayleigh quotient visited is a certified lower bound;
    the maximum over restarts is returned.
    """
    if iters < 1 or restarts < 1:
        raise ValueError("iters and restarts must be positive")

    if mass is None:
        def nrm(v):
            return float(np.linalg.norm(v))
    else:
        def nrm(v):
            return math.sqrt(max(float(v @ (mass @ v)), 0.0))

    def diff(v):
        return apply1(v) - apply2(v)

    best = 0.0
    for restart in range(restarts):
        rng = np.random.default_rng(seed + 1000003 * restart)
        v = rng.standard_normal(dim)
        nv = nrm(v)
        if nv == 0.0:
            continue
        v = v / nv
        for _ in range(iters):
            w = diff(v)
            nw = nrm(w)
            best = max(best, nw)
            if nw <= best * 1e-14 or nw == 0.0:
                break
            u = diff(w)
            nu = nrm(u)
            best = max(best, nu / nw)
            if nu == 0.0:
                break
            v = u / nu
    return best


def _constraint_vector(forms) -> np.ndarray:
    m = forms.trace_map.T @ forms.atom_weights
    if float(np.abs(m).max(initial=0.0)) == 0.0:
        raise DegenerateConstraint("measure-mean constraint vanishes")
    return m


def poincare_constant(
    dom: GridDomain,
    mu: DiscreteMeasure,
    tol: float = 1e-9,
) -> float:
    """Best constant C with ||u||_{L^2} <= C ||grad u||_{L^2} under the
    measure-mean-zero constraint.

    Equals 1/sqrt(lambda_min) of the (A, M) pencil restricted to the
    hyperplane m^T u = 0 with m = R^T W 1; the constraint is deflated
    exactly, never penalized.
    """
    forms = assemble(dom, mu, 0.0)
    A = forms.stiffness.tocsr()
    M = forms.mass.tocsr()
    m = _constraint_vector(forms)
    n = forms.dofs.n_dof

    if n <= _DENSE_CUTOFF:
        Z = dla.null_space(m[None, :])
        Ar = Z.T @ (A @ Z)
        Mr = Z.T @ (M @ Z)
        vals = dla.eigh(Ar, Mr, subset_by_index=[0, 0], eigvals_only=True)
        lam = float(vals[0])
    else:
        # constrained inverse iteration: each step solves the bordered
        # system [H m; m^T 0][w; nu] = [M u; 0] with H the shifted pencil
        # matrix, which is one factorized solve plus a rank-one correction
        # along H^{-1} m; convergence certified by the pencil residual
        scale = (math.pi / dom.grid.side) ** 2
        lu = splu(csc_matrix(A + (0.05 * scale) * M))
        z = lu.solve(m)
        mz = float(m @ z)

        rng = np.random.default_rng(0)
        u = rng.standard_normal(n)
        u -= z * ((m @ u) / mz)
        u /= math.sqrt(u @ (M @ u))
        rtol = max(tol, 1e-12)
        lam = math.inf
        for _ in range(400):
            t = lu.solve(M @ u)
            w = t - z * ((m @ t) / mz)
            u = w / math.sqrt(w @ (M @ w))
            Au = A @ u
            Mu = M @ u
            lam = float(u @ Au)
            res = np.linalg.norm(Au - lam * Mu - m * ((m @ (Au - lam * Mu)) / (m @ m)))
            if res <= rtol * (np.linalg.norm(Au) + abs(lam) * np.linalg.norm(Mu)):
                break
        else:
            raise ConvergenceFailure(
                f"constrained inverse iteration stalled at residual {res:.3e}"
            )
    if lam <= 0.0:
        raise ConvergenceFailure(f"constrained pencil returned lambda = {lam:.3e}")
    return 1.0 / math.sqrt(lam)


def equiv_norm_constants(dom: GridDomain, mu: DiscreteMeasure):
    """Extremal constants comparing the Sobolev norm with the trace-based one.

    Returns (c_lower, c_upper) = (1/sqrt(lambda_max), 1/sqrt(lambda_min))
    for the pencil (A + M) u = lambda (A + R^T W R) u.
    """
    forms = assemble(dom, mu, 1.0)
    _constraint_vector(forms)
    P = (forms.stiffness + forms.mass).tocsr()
    Q = (forms.stiffness + forms.trace_mass).tocsr()
    n = forms.dofs.n_dof
    if n <= _DENSE_CUTOFF:
        vals = dla.eigh(P.toarray(), Q.toarray(), eigvals_only=True)
        lam_min = float(vals[0])
        lam_max = float(vals[-1])
    else:
        rng = np.random.default_rng(0)
        v0 = rng.standard_normal(n)
        lam_max = float(
            eigsh(P, k=1, M=Q, which="LM", v0=v0, return_eigenvectors=False)[0]
        )
        lam_min = float(
            eigsh(
                P, k=1, M=Q, sigma=0.0, which="LM", v0=v0, return_eigenvectors=False
            )[0]
        )
    if lam_min <= 0.0:
        raise ConvergenceFailure("norm pencil is not positive definite")
    return 1.0 / math.sqrt(lam_max), 1.0 / math.sqrt(lam_min)


def spectral_to_csv(sd: SpectralData, path) -> None:
    """Index, eigenvalue, residual rows."""
    with open(path, "w") as fh:
        fh.write("index,eigenvalue,residual\n")
        for i, (lam, res) in enumerate(zip(sd.eigenvalues, sd.residuals), start=1):
            fh.write(f"{i},{lam:.17g},{res:.17g}\n")
