"""Convergence and shape-optimization experiments over domain families.

Each experiment turns one qualitative convergence statement into
per-member error columns against a designated limit object, with
monotonicity of the tail recorded rather than asserted. Shape search
enumerates a finite candidate class, audits admissibility, and minimizes
the solution energy; diagnostics then measure how the also-rans approach
the minimizer in the geometric and weak-measure senses.
"""

from __future__ import annotations

import json
import math
import os
import re
from dataclasses import dataclass, field

import numpy as np

from .discretization import (
    DofMap,
    ProblemSpec,
    box_mass_matrix,
    evaluate_field,
)
from .errors import (
    GridMismatch,
    NoAdmissibleCandidate,
    RoughBVPError,
    TooFewCandidates,
)
from .geometry import (
    DomainFamily,
    GridDomain,
    char_distance,
    domain_to_json,
    hausdorff_distance,
)
from .measures import (
    AdmissibleTriple,
    DiscreteMeasure,
    weak_distance,
    verify_admissible,
)
from .solver import QuasiInverse, WeakSolution, solve, solution_to_csv
from .spectral import eigensolve, op_norm_diff


@dataclass(frozen=True, eq=False)
class ConvergenceReport:
    """Per-member error columns of one experiment.

    Columns not produced by an experiment stay None. ``errors`` holds one
    message per failed member (None elsewhere); failed members carry NaN
    entries. ``monotone_tail`` maps column name to whether the last third
    of the column is nonincreasing.
    """

    labels: tuple
    hausdorff_to_limit: np.ndarray | None = None
    char_to_limit: np.ndarray | None = None
    weak_measure_to_limit: np.ndarray | None = None
    solution_l2_err: np.ndarray | None = None
    energy_err: np.ndarray | None = None
    eigenvalue_errs: np.ndarray | None = None
    misalignment: np.ndarray | None = None
    resolvent_opnorm_est: np.ndarray | None = None
    monotone_tail: dict = field(default_factory=dict)
    proxy_limit: bool = False
    errors: tuple = ()

    def columns(self) -> dict:
        """Flat name -> column mapping, expanding per-index columns."""
        out = {}
        for name in (
            "hausdorff_to_limit",
            "char_to_limit",
            "weak_measure_to_limit",
            "solution_l2_err",
            "energy_err",
        ):
            col = getattr(self, name)
            if col is not None:
                out[name] = np.asarray(col, dtype=float)
        if self.eigenvalue_errs is not None:
            for j in range(self.eigenvalue_errs.shape[1]):
                out[f"eig_err_{j + 1}"] = self.eigenvalue_errs[:, j]
        if self.misalignment is not None:
            for j in range(self.misalignment.shape[1]):
                out[f"misalign_{j + 1}"] = self.misalignment[:, j]
        if self.resolvent_opnorm_est is not None:
            out["resolvent_opnorm_est"] = np.asarray(
                self.resolvent_opnorm_est, dtype=float
            )
        return out


def _tail_nonincreasing(col: np.ndarray) -> bool:
    vals = np.asarray(col, dtype=float)
    if np.any(~np.isfinite(vals)):
        return False
    k = max(2, int(math.ceil(vals.size / 3)))
    tail = vals[-k:]
    slack = 1e-12 * max(1.0, float(np.abs(tail).max()))
    return bool(np.all(np.diff(tail) <= slack))


def _finish_report(report_kwargs: dict) -> ConvergenceReport:
    rep = ConvergenceReport(**report_kwargs)
    flags = {name: _tail_nonincreasing(col) for name, col in rep.columns().items()}
    return ConvergenceReport(**{**report_kwargs, "monotone_tail": flags})


def _require_homogeneous(spec: ProblemSpec, measures) -> None:
    for mu in measures:
        phi = evaluate_field(spec.boundary_phi, mu.points[:, 0], mu.points[:, 1])
        if np.any(phi != 0.0):
            raise ValueError("experiments require homogeneous boundary data")


def _embed(dofs: DofMap, values: np.ndarray, nbox: int) -> np.ndarray:
    out = np.zeros(nbox)
    out[dofs.node_flat] = values
    return out


def stability_experiment(
    family: DomainFamily,
    measures,
    limit,
    spec: ProblemSpec,
    artifacts: dict | None = None,
) -> ConvergenceReport:
    """Solution and energy stability of one problem along a domain family.

    ``limit`` is a (domain, measure) pair on the family's grid. Per-member
    solver failures are recorded in the report, not raised. Pass a dict as
    ``artifacts`` to receive the computed solutions for export.
    """
    limit_dom, limit_mu = limit
    if limit_dom.grid != family.grid:
        raise GridMismatch("limit domain must share the family grid")
    if len(measures) != len(family):
        raise ValueError("one measure per family member required")
    _require_homogeneous(spec, list(measures) + [limit_mu])

    mbox = box_mass_matrix(family.grid)
    nbox = (family.grid.n + 1) ** 2
    u_lim = solve(limit_dom, limit_mu, spec)
    lim_box = _embed(u_lim.dofs, u_lim.values, nbox)

    m = len(family)
    cols = {
        "hausdorff_to_limit": np.full(m, np.nan),
        "char_to_limit": np.full(m, np.nan),
        "weak_measure_to_limit": np.full(m, np.nan),
        "solution_l2_err": np.full(m, np.nan),
        "energy_err": np.full(m, np.nan),
    }
    errors = [None] * m
    solutions = [None] * m
    for i, (dom, mu) in enumerate(zip(family.members, measures)):
        cols["hausdorff_to_limit"][i] = hausdorff_distance(dom, limit_dom)
        cols["char_to_limit"][i] = char_distance(dom, limit_dom)
        cols["weak_measure_to_limit"][i] = weak_distance(
            mu, limit_mu, box=family.grid
        )
        try:
            u = solve(dom, mu, spec)
        except RoughBVPError as exc:
            errors[i] = f"{type(exc).__name__}: {exc}"
            continue
        solutions[i] = u
        d = _embed(u.dofs, u.values, nbox) - lim_box
        cols["solution_l2_err"][i] = math.sqrt(max(float(d @ (mbox @ d)), 0.0))
        cols["energy_err"][i] = abs(u.energy - u_lim.energy)

    if artifacts is not None:
        artifacts["member_solutions"] = tuple(solutions)
        artifacts["limit_solution"] = u_lim
    return _finish_report(
        dict(labels=family.labels, errors=tuple(errors), **cols)
    )


def spectral_convergence_experiment(
    family: DomainFamily,
    measures,
    limit,
    kind: str,
    gamma,
    count: int,
    seed: int = 0,
    opnorm_iters: int = 60,
    artifacts: dict | None = None,
) -> ConvergenceReport:
    """Eigenvalue, eigenvector, and quasi-inverse convergence along a family.

    The quasi-inverse comparison runs at alpha = 1 in the L^2(box) norm of
    zero continuations; its column is a lower-bound estimate by
    construction.
    """
    limit_dom, limit_mu = limit
    if limit_dom.grid != family.grid:
        raise GridMismatch("limit domain must share the family grid")
    if len(measures) != len(family):
        raise ValueError("one measure per family member required")

    mbox = box_mass_matrix(family.grid)
    nbox = (family.grid.n + 1) ** 2
    sd_lim = eigensolve(limit_dom, limit_mu, kind, gamma, count)
    spec = ProblemSpec(kind=kind, gamma=gamma)
    q_lim = QuasiInverse(limit_dom, limit_mu, spec, alpha=1.0)
    lim_vecs = [
        _normalize_box(_embed(sd_lim.dofs, sd_lim.eigenvectors[:, j], nbox), mbox)
        for j in range(count)
    ]

    m = len(family)
    cols = {
        "hausdorff_to_limit": np.full(m, np.nan),
        "char_to_limit": np.full(m, np.nan),
        "weak_measure_to_limit": np.full(m, np.nan),
    }
    eig_errs = np.full((m, count), np.nan)
    misalign = np.full((m, count), np.nan)
    opnorm = np.full(m, np.nan)
    errors = [None] * m
    ground = [None] * m
    for i, (dom, mu) in enumerate(zip(family.members, measures)):
        cols["hausdorff_to_limit"][i] = hausdorff_distance(dom, limit_dom)
        cols["char_to_limit"][i] = char_distance(dom, limit_dom)
        cols["weak_measure_to_limit"][i] = weak_distance(
            mu, limit_mu, box=family.grid
        )
        try:
            sd = eigensolve(dom, mu, kind, gamma, count)
            q_m = QuasiInverse(dom, mu, spec, alpha=1.0)
        except RoughBVPError as exc:
            errors[i] = f"{type(exc).__name__}: {exc}"
            continue
        ground[i] = (sd.dofs, sd.eigenvectors[:, 0])
        eig_errs[i] = np.abs(sd.eigenvalues - sd_lim.eigenvalues)
        for j in range(count):
            v = _normalize_box(_embed(sd.dofs, sd.eigenvectors[:, j], nbox), mbox)
            misalign[i, j] = 1.0 - abs(float(v @ (mbox @ lim_vecs[j])))
        opnorm[i] = op_norm_diff(
            q_m.apply,
            q_lim.apply,
            nbox,
            iters=opnorm_iters,
            seed=seed,
            mass=mbox,
        )

    if artifacts is not None:
        artifacts["member_ground_states"] = tuple(ground)
        artifacts["limit_ground_state"] = (sd_lim.dofs, sd_lim.eigenvectors[:, 0])
    return _finish_report(
        dict(
            labels=family.labels,
            eigenvalue_errs=eig_errs,
            misalignment=misalign,
            resolvent_opnorm_est=opnorm,
            errors=tuple(errors),
            proxy_limit=False,
            **cols,
        )
    )


def _normalize_box(v: np.ndarray, mbox) -> np.ndarray:
    nrm = math.sqrt(max(float(v @ (mbox @ v)), 0.0))
    return v / nrm if nrm > 0 else v


@dataclass(frozen=True, eq=False)
class ShapeSearchResult:
    """Outcome of exhaustive energy minimization over audited candidates."""

    best: AdmissibleTriple
    best_energy: float
    evaluated: tuple
    trace: tuple
    triples: tuple
    solutions: tuple


def shape_search(
    candidates,
    spec: ProblemSpec,
    radii,
    sample_pairs: int = 200,
    seed: int = 0,
) -> ShapeSearchResult:
    """Audit every candidate, solve the admissible ones, return the argmin.

    Inadmissible candidates are kept in the evaluation log with no energy.
    Energy ties resolve by label, so the argmin does not depend on the
    order candidates were supplied in.
    """
    candidates = list(candidates)
    if not candidates:
        raise NoAdmissibleCandidate("no candidates supplied")
    _require_homogeneous(spec, [c.trace_volume for c in candidates])

    evaluated = []
    trace = []
    solutions = []
    admissible = []
    for idx, cand in enumerate(candidates):
        label = cand.label or f"candidate_{idx}"
        audit = verify_admissible(
            cand, radii, sample_pairs=sample_pairs, seed=seed
        )
        if not audit.passed:
            failed = [k for k, v in audit.checks.items()
                      if not (v if isinstance(v, bool) else v.passed)]
            evaluated.append((label, None, False))
            solutions.append(None)
            trace.append(f"{label}: inadmissible ({', '.join(failed)})")
            continue
        try:
            u = solve(cand.domain, cand.trace_volume, spec)
        except RoughBVPError as exc:
            evaluated.append((label, None, True))
            solutions.append(None)
            trace.append(f"{label}: admissible but solve failed: {exc}")
            continue
        evaluated.append((label, u.energy, True))
        solutions.append(u)
        admissible.append((u.energy, label, idx))
        trace.append(f"{label}: admissible, energy {u.energy:.12g}")

    if not admissible:
        raise NoAdmissibleCandidate("no candidate passed the admissibility audit")
    _, _, best_idx = min(admissible)
    trace.append(f"argmin: {evaluated[best_idx][0]}")
    return ShapeSearchResult(
        best=candidates[best_idx],
        best_energy=float(evaluated[best_idx][1]),
        evaluated=tuple(evaluated),
        trace=tuple(trace),
        triples=tuple(candidates),
        solutions=tuple(solutions),
    )


def minimizing_sequence_diagnostics(
    result: ShapeSearchResult, test_degree: int = 8
) -> ConvergenceReport:
    """Distances to the minimizer along the energy-sorted candidate order.

    Members are ordered by decreasing energy (ties by label), ending at
    the best candidate, echoing how a minimizing sequence approaches its
    limit shape.
    """
    entries = [
        (energy, label, i)
        for i, (label, energy, ok) in enumerate(result.evaluated)
        if ok and energy is not None
    ]
    if len(entries) < 3:
        raise TooFewCandidates(
            f"need at least 3 admissible candidates, have {len(entries)}"
        )
    entries.sort(key=lambda e: (-e[0], e[1]))
    best_dom = result.best.domain
    best_mu = result.best.trace_volume
    grid = best_dom.grid

    labels = []
    cols = {
        "hausdorff_to_limit": [],
        "char_to_limit": [],
        "weak_measure_to_limit": [],
        "energy_err": [],
    }
    for energy, label, idx in entries:
        cand = result.triples[idx]
        labels.append(label)
        cols["hausdorff_to_limit"].append(hausdorff_distance(cand.domain, best_dom))
        cols["char_to_limit"].append(char_distance(cand.domain, best_dom))
        cols["weak_measure_to_limit"].append(
            weak_distance(cand.trace_volume, best_mu, test_degree, box=grid)
        )
        cols["energy_err"].append(energy - result.best_energy)

    return _finish_report(
        dict(
            labels=tuple(labels),
            errors=tuple([None] * len(labels)),
            **{k: np.asarray(v) for k, v in cols.items()},
        )
    )


# -- run-directory emission ---------------------------------------------------

def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


def report_to_csv(report: ConvergenceReport, path) -> None:
    cols = report.columns()
    names = list(cols)
    with open(path, "w") as fh:
        fh.write(",".join(["label"] + names) + "\n")
        for i, label in enumerate(report.labels):
            row = [str(label)] + [_fmt(cols[c][i]) for c in names]
            fh.write(",".join(row) + "\n")


def safe_label(label: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.=-]+", "_", str(label))


def write_run_dir(
    out_dir,
    report: ConvergenceReport | None,
    manifest: dict,
    solutions=None,
    domain: GridDomain | None = None,
) -> None:
    """Materialize one experiment: report CSV, manifest, member solutions.

    ``solutions`` is an iterable of (label, WeakSolution) or
    (label, dofs, values) entries; Nones are skipped.
    """
    os.makedirs(out_dir, exist_ok=True)
    manifest = dict(manifest)
    if report is not None:
        report_to_csv(report, os.path.join(out_dir, "report.csv"))
        manifest.setdefault("monotone_tail", report.monotone_tail)
        manifest.setdefault("proxy_limit", report.proxy_limit)
        manifest.setdefault(
            "member_errors",
            {
                str(lbl): err
                for lbl, err in zip(report.labels, report.errors)
                if err is not None
            },
        )
    if domain is not None:
        with open(os.path.join(out_dir, "domain.json"), "w") as fh:
            json.dump(domain_to_json(domain), fh, sort_keys=True)
            fh.write("\n")
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    if solutions:
        sol_dir = os.path.join(out_dir, "solutions")
        os.makedirs(sol_dir, exist_ok=True)
        for entry in solutions:
            if entry is None:
                continue
            if len(entry) == 2:
                label, u = entry
                if u is None:
                    continue
                solution_to_csv(u, os.path.join(sol_dir, f"{safe_label(label)}.csv"))
            else:
                label, dofs, values = entry
                if values is None:
                    continue
                _nodal_csv(
                    dofs, values, os.path.join(sol_dir, f"{safe_label(label)}.csv")
                )


def _nodal_csv(dofs: DofMap, values: np.ndarray, path) -> None:
    pos = dofs.node_positions()
    with open(path, "w") as fh:
        fh.write("node_x,node_y,value\n")
        for (x, y), v in zip(pos, values):
            fh.write(f"{x:.17g},{y:.17g},{v:.17g}\n")
