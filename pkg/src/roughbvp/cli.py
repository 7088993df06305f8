"""Command-line entry point.

Subcommands map onto the library layers: ``solve``, ``spectrum``,
``poincare``, ``converge {stability|spectral}``, ``optimize``, and the
self-test ``check``. All inputs come from one strict, versioned JSON
config; all outputs land inside the configured run directory. Exit codes:
0 success, 1 config error, 2 numerical failure, 3 failed check assertion.

Heavy numeric imports happen inside the handlers so parsing and config
validation stay instant and thread caps can be applied first.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import dataclass


class ConfigError(Exception):
    """Invalid, missing, or malformed run configuration."""


_TOP_KEYS = {
    "v",
    "grid",
    "domain",
    "measure",
    "problem",
    "admissibility",
    "seed",
    "out_dir",
}
_REQUIRED_TOP = _TOP_KEYS - {"admissibility"}

_DOMAIN_KEYS = {
    "square": {"kind"},
    "koch": {"kind", "level", "base_origin", "base_side"},
    "notch": {"kind", "widths", "depth_ratio"},
    "pixels": {"kind", "file"},
}
_MEASURE_KEYS = {
    "arc": {"kind", "atoms_per_edge"},
    "koch_selfsimilar": {"kind", "level", "base_origin", "base_side"},
    "file": {"kind", "file"},
}
_PROBLEM_KEYS = {"kind", "alpha", "gamma", "f", "phi"}
_ADMISS_KEYS = {"eps", "s", "cs", "c_bar", "d", "c_d", "radii"}
_GRID_KEYS = {"origin", "side", "n"}


def _reject_unknown(block: dict, allowed: set, where: str) -> None:
    unknown = set(block) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")


def _require(block: dict, keys: set, where: str) -> None:
    missing = keys - set(block)
    if missing:
        raise ConfigError(f"missing keys in {where}: {sorted(missing)}")


@dataclass(frozen=True)
class RunConfig:
    """Validated, normalized run configuration."""

    v: int
    grid: dict
    domain: dict
    measure: dict
    problem: dict
    admissibility: dict | None
    seed: int
    out_dir: str

    def canonical(self) -> dict:
        out = {
            "v": self.v,
            "grid": self.grid,
            "domain": self.domain,
            "measure": self.measure,
            "problem": self.problem,
            "seed": self.seed,
            "out_dir": self.out_dir,
        }
        if self.admissibility is not None:
            out["admissibility"] = self.admissibility
        return out

    def hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def parse_config(data: dict, base_dir: str = ".") -> RunConfig:
    """Validate one config dict against the strict v1 schema."""
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    _reject_unknown(data, _TOP_KEYS, "config")
    _require(data, _REQUIRED_TOP, "config")
    if data["v"] != 1:
        raise ConfigError(f"unsupported config version {data['v']!r}")

    grid = data["grid"]
    _reject_unknown(grid, _GRID_KEYS, "grid")
    _require(grid, _GRID_KEYS, "grid")
    grid = {
        "origin": [float(grid["origin"][0]), float(grid["origin"][1])],
        "side": float(grid["side"]),
        "n": int(grid["n"]),
    }

    dom = dict(data["domain"])
    kind = dom.get("kind")
    if kind not in _DOMAIN_KEYS:
        raise ConfigError(f"unknown domain kind {kind!r}")
    if kind == "notch":
        dom.setdefault("depth_ratio", 1.0)
    _reject_unknown(dom, _DOMAIN_KEYS[kind], "domain")
    _require(dom, _DOMAIN_KEYS[kind], "domain")
    if kind == "pixels":
        dom["file"] = os.path.join(base_dir, dom["file"])
        if not os.path.exists(dom["file"]):
            raise ConfigError(f"domain file not found: {dom['file']}")

    mea = dict(data["measure"])
    mkind = mea.get("kind")
    if mkind not in _MEASURE_KEYS:
        raise ConfigError(f"unknown measure kind {mkind!r}")
    if mkind == "arc":
        mea.setdefault("atoms_per_edge", 1)
    _reject_unknown(mea, _MEASURE_KEYS[mkind], "measure")
    _require(mea, _MEASURE_KEYS[mkind], "measure")
    if mkind == "file":
        mea["file"] = os.path.join(base_dir, mea["file"])
        if not os.path.exists(mea["file"]):
            raise ConfigError(f"measure file not found: {mea['file']}")

    prob = dict(data["problem"])
    _reject_unknown(prob, _PROBLEM_KEYS, "problem")
    _require(prob, {"kind"}, "problem")
    if prob["kind"] not in ("dirichlet", "robin", "neumann"):
        raise ConfigError(f"unknown problem kind {prob['kind']!r}")
    prob = {
        "kind": prob["kind"],
        "alpha": float(prob.get("alpha", 0.0)),
        "gamma": float(prob.get("gamma", 0.0)),
        "f": float(prob.get("f", 0.0)),
        "phi": float(prob.get("phi", 0.0)),
    }

    adm = data.get("admissibility")
    if adm is not None:
        _reject_unknown(adm, _ADMISS_KEYS, "admissibility")
        _require(adm, _ADMISS_KEYS, "admissibility")
        adm = {
            "eps": float(adm["eps"]),
            "s": float(adm["s"]),
            "cs": float(adm["cs"]),
            "c_bar": float(adm["c_bar"]),
            "d": float(adm["d"]),
            "c_d": float(adm["c_d"]),
            "radii": [float(r) for r in adm["radii"]],
        }

    try:
        seed = int(data["seed"])
        out_dir = str(data["out_dir"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad seed/out_dir: {exc}") from exc
    return RunConfig(
        v=1,
        grid=grid,
        domain=dom,
        measure=mea,
        problem=prob,
        admissibility=adm,
        seed=seed,
        out_dir=out_dir,
    )


def load_config(path: str) -> RunConfig:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return parse_config(data, base_dir=os.path.dirname(os.path.abspath(path)))


# -- config -> library objects -------------------------------------------------

def _grid_of(cfg: RunConfig):
    from .geometry import GridSpec

    g = cfg.grid
    return GridSpec((g["origin"][0], g["origin"][1]), g["side"], g["n"])


def _domain_of(cfg: RunConfig):
    from . import geometry

    grid = _grid_of(cfg)
    d = cfg.domain
    if d["kind"] == "square":
        return geometry.full_box(grid)
    if d["kind"] == "koch":
        return geometry.koch_prefractal_domain(
            grid, int(d["level"]), tuple(d["base_origin"]), float(d["base_side"])
        )
    if d["kind"] == "notch":
        fam = geometry.notch_family(grid, d["widths"], float(d["depth_ratio"]))
        return fam.members[-1]
    from .geometry import domain_from_json

    with open(d["file"]) as fh:
        return domain_from_json(json.load(fh))


def _measure_of(cfg: RunConfig, dom):
    from . import measures

    m = cfg.measure
    if m["kind"] == "arc":
        return measures.arc_measure_on_boundary(dom, int(m["atoms_per_edge"]))
    if m["kind"] == "koch_selfsimilar":
        return measures.self_similar_koch_measure(
            int(m["level"]), tuple(m["base_origin"]), float(m["base_side"])
        )
    with open(m["file"]) as fh:
        return measures.measure_from_json(json.load(fh))


def _problem_of(cfg: RunConfig):
    from .discretization import ProblemSpec

    p = cfg.problem
    return ProblemSpec(
        kind=p["kind"],
        alpha=p["alpha"],
        gamma=p["gamma"],
        source_f=p["f"],
        boundary_phi=p["phi"],
    )


def _family_of(cfg: RunConfig):
    """Domain family, per-member measures, limit pair, and proxy flag."""
    from . import geometry, measures

    grid = _grid_of(cfg)
    d = cfg.domain
    if d["kind"] == "notch":
        fam = geometry.notch_family(grid, d["widths"], float(d["depth_ratio"]))
        limit_dom = geometry.full_box(grid)
        proxy = False
    elif d["kind"] == "koch":
        top = int(d["level"])
        if top < 2:
            raise ConfigError("koch families need level >= 2")
        base = (tuple(d["base_origin"]), float(d["base_side"]))
        members = tuple(
            geometry.koch_prefractal_domain(grid, lv, base[0], base[1])
            for lv in range(1, top)
        )
        labels = tuple(f"level={lv}" for lv in range(1, top))
        fam = geometry.DomainFamily(grid, members, labels)
        limit_dom = geometry.koch_prefractal_domain(grid, top, base[0], base[1])
        proxy = True
    else:
        dom = _domain_of(cfg)
        fam = geometry.DomainFamily(grid, (dom,), ("member",))
        limit_dom = dom
        proxy = False

    mkind = cfg.measure["kind"]
    if mkind == "arc":
        k = int(cfg.measure["atoms_per_edge"])
        mus = [measures.arc_measure_on_boundary(dm, k) for dm in fam.members]
        limit_mu = measures.arc_measure_on_boundary(limit_dom, k)
    elif mkind == "koch_selfsimilar" and d["kind"] == "koch":
        base = (tuple(d["base_origin"]), float(d["base_side"]))
        mus = [
            measures.self_similar_koch_measure(lv, base[0], base[1])
            for lv in range(1, int(d["level"]))
        ]
        limit_mu = measures.self_similar_koch_measure(
            int(d["level"]), base[0], base[1]
        )
    else:
        mu = _measure_of(cfg, limit_dom)
        mus = [mu for _ in fam.members]
        limit_mu = mu
    return fam, mus, (limit_dom, limit_mu), proxy


def _manifest(cfg: RunConfig, experiment: str, extra: dict | None = None) -> dict:
    out = {
        "config_hash": cfg.hash(),
        "grid": cfg.grid,
        "spec": cfg.problem,
        "seed": cfg.seed,
        "experiment": experiment,
    }
    if extra:
        out.update(extra)
    return out


# -- subcommand handlers ---------------------------------------------------------

def _cmd_solve(cfg: RunConfig, args) -> int:
    from .experiments import write_run_dir
    from .solver import solve, solution_to_csv

    dom = _domain_of(cfg)
    mu = _measure_of(cfg, dom)
    u = solve(dom, mu, _problem_of(cfg))
    out = cfg.out_dir
    os.makedirs(out, exist_ok=True)
    solution_to_csv(
        u,
        os.path.join(out, "solution.csv"),
        os.path.join(out, "solution.json"),
    )
    write_run_dir(out, None, _manifest(cfg, "solve"), domain=dom)
    return 0


def _cmd_spectrum(cfg: RunConfig, args) -> int:
    from .experiments import write_run_dir
    from .spectral import eigensolve, spectral_to_csv

    dom = _domain_of(cfg)
    mu = _measure_of(cfg, dom)
    p = cfg.problem
    sd = eigensolve(dom, mu, p["kind"], p["gamma"], args.count)
    out = cfg.out_dir
    os.makedirs(out, exist_ok=True)
    spectral_to_csv(sd, os.path.join(out, "spectrum.csv"))
    write_run_dir(
        out, None, _manifest(cfg, "spectrum", {"count": args.count}), domain=dom
    )
    return 0


def _cmd_poincare(cfg: RunConfig, args) -> int:
    from .experiments import write_run_dir
    from .spectral import poincare_constant

    dom = _domain_of(cfg)
    mu = _measure_of(cfg, dom)
    c = poincare_constant(dom, mu)
    out = cfg.out_dir
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "poincare.json"), "w") as fh:
        json.dump({"constant": c}, fh)
        fh.write("\n")
    write_run_dir(out, None, _manifest(cfg, "poincare"), domain=dom)
    print(f"poincare constant {c:.6g}")
    return 0


def _cmd_converge(cfg: RunConfig, args) -> int:
    from .experiments import (
        spectral_convergence_experiment,
        stability_experiment,
        write_run_dir,
    )

    fam, mus, limit, proxy = _family_of(cfg)
    artifacts: dict = {}
    if args.mode == "stability":
        rep = stability_experiment(
            fam, mus, limit, _problem_of(cfg), artifacts=artifacts
        )
        sols = list(zip(fam.labels, artifacts["member_solutions"]))
        sols.append(("limit", artifacts["limit_solution"]))
    else:
        p = cfg.problem
        rep = spectral_convergence_experiment(
            fam,
            mus,
            limit,
            p["kind"],
            p["gamma"],
            args.count,
            seed=cfg.seed,
            artifacts=artifacts,
        )
        sols = [
            (lbl, g[0], g[1]) if g is not None else None
            for lbl, g in zip(fam.labels, artifacts["member_ground_states"])
        ]
        lg = artifacts["limit_ground_state"]
        sols.append(("limit", lg[0], lg[1]))
    rep = _with_proxy(rep, proxy)
    write_run_dir(
        cfg.out_dir,
        rep,
        _manifest(cfg, f"converge_{args.mode}"),
        solutions=sols,
        domain=limit[0],
    )
    return 0


def _with_proxy(rep, proxy: bool):
    if rep.proxy_limit == proxy:
        return rep
    from dataclasses import replace

    return replace(rep, proxy_limit=proxy)


def _cmd_optimize(cfg: RunConfig, args) -> int:
    from .experiments import (
        minimizing_sequence_diagnostics,
        shape_search,
        write_run_dir,
    )
    from .measures import AdmissibilityParams, AdmissibleTriple

    if cfg.admissibility is None:
        raise ConfigError("optimize needs an admissibility block")
    adm = cfg.admissibility
    params = AdmissibilityParams(
        eps=adm["eps"],
        s=adm["s"],
        cs_bar=adm["cs"],
        c_bar=adm["c_bar"],
        d=adm["d"],
        c_d=adm["c_d"],
    )
    fam, mus, _, _ = _family_of(cfg)
    candidates = [
        AdmissibleTriple(
            domain=dom,
            boundary_volume=mu,
            trace_volume=mu,
            params=params,
            label=lbl,
        )
        for dom, mu, lbl in zip(fam.members, mus, fam.labels)
    ]
    result = shape_search(
        candidates, _problem_of(cfg), adm["radii"], seed=cfg.seed
    )
    rep = minimizing_sequence_diagnostics(result)
    sols = [
        (lbl, sol)
        for (lbl, _, _), sol in zip(result.evaluated, result.solutions)
        if sol is not None
    ]
    write_run_dir(
        cfg.out_dir,
        rep,
        _manifest(
            cfg,
            "optimize",
            {
                "best_label": result.best.label,
                "best_energy": result.best_energy,
                "evaluated": [
                    [lbl, en, ok] for lbl, en, ok in result.evaluated
                ],
            },
        ),
        solutions=sols,
        domain=result.best.domain,
    )
    print(f"best {result.best.label} energy {result.best_energy:.12g}")
    return 0


def _cmd_check(cfg: RunConfig, args) -> int:
    import numpy as np

    from .solver import solve

    dom = _domain_of(cfg)
    mu = _measure_of(cfg, dom)
    u = solve(dom, mu, _problem_of(cfg))
    pos = u.dofs.node_positions()
    grid = dom.grid
    cx = grid.origin[0] + grid.side / 2.0
    cy = grid.origin[1] + grid.side / 2.0
    at = int(np.argmin((pos[:, 0] - cx) ** 2 + (pos[:, 1] - cy) ** 2))
    center = float(u.values[at])
    if abs(center - 0.07367) <= 1e-3:
        print(f"PASS center={center:.4f}")
        return 0
    print(f"FAIL center={center:.4f} expected 0.0737 +- 0.001")
    return 3


_HANDLERS = {
    "solve": _cmd_solve,
    "spectrum": _cmd_spectrum,
    "poincare": _cmd_poincare,
    "converge": _cmd_converge,
    "optimize": _cmd_optimize,
    "check": _cmd_check,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="roughbvp",
        description="Boundary value problems on rough pixel domains",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", required=True, help="JSON run config")
        p.add_argument("--out", help="override the config out_dir")
        p.add_argument("--threads", type=int, default=0, help="BLAS thread cap")
        p.add_argument("--seed", type=int, help="override the config seed")

    add_common(sub.add_parser("solve", help="solve one problem"))
    sp = sub.add_parser("spectrum", help="lowest eigenvalues")
    add_common(sp)
    sp.add_argument("--count", type=int, default=3)
    add_common(sub.add_parser("poincare", help="constrained Poincare constant"))
    cv = sub.add_parser("converge", help="family convergence experiments")
    add_common(cv)
    cv.add_argument("mode", choices=["stability", "spectral"])
    cv.add_argument("--count", type=int, default=1)
    add_common(sub.add_parser("optimize", help="energy minimization over shapes"))
    add_common(sub.add_parser("check", help="reference-problem self test"))
    return parser


def _cap_threads(n: int) -> None:
    if n and n > 0:
        for var in (
            "OMP_NUM_THREADS",
            "OPENBLAS_NUM_THREADS",
            "MKL_NUM_THREADS",
        ):
            os.environ[var] = str(n)


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    _cap_threads(args.threads)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = RunConfig(**{**cfg.__dict__, "seed": args.seed})
        if args.out is not None:
            cfg = RunConfig(**{**cfg.__dict__, "out_dir": args.out})
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    try:
        return _HANDLERS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # numerical and library failures
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
