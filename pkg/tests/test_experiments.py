"""Convergence experiments, shape search, run-directory emission."""

import json
import os

import numpy as np
import pytest

from roughbvp.discretization import ProblemSpec
from roughbvp.errors import (
    GridMismatch,
    NoAdmissibleCandidate,
    TooFewCandidates,
)
from roughbvp.experiments import (
    minimizing_sequence_diagnostics,
    report_to_csv,
    safe_label,
    shape_search,
    spectral_convergence_experiment,
    stability_experiment,
    write_run_dir,
)
from roughbvp.geometry import DomainFamily, GridSpec, full_box, notch_family
from roughbvp.measures import (
    AdmissibilityParams,
    AdmissibleTriple,
    arc_measure_on_boundary,
    dyadic_radii,
    lebesgue_like_measure,
)

GRID = GridSpec(origin=(0.0, 0.0), side=1.0, cells_per_side=32)
DIRICHLET = ProblemSpec(kind="dirichlet", source_f=1.0)


@pytest.fixture(scope="module")
def notch3():
    return notch_family(GRID, (0.25, 0.125, 0.0625), depth_ratio=0.5)


@pytest.fixture(scope="module")
def notch3_mus(notch3):
    return [arc_measure_on_boundary(d) for d in notch3.members]


@pytest.fixture(scope="module")
def limit_pair():
    box = full_box(GRID)
    return box, arc_measure_on_boundary(box)


@pytest.fixture(scope="module")
def stability_report(notch3, notch3_mus, limit_pair):
    return stability_experiment(notch3, notch3_mus, limit_pair, DIRICHLET)


def strictly_decreasing(col):
    col = np.asarray(col, dtype=float)
    return np.all(np.isfinite(col)) and np.all(np.diff(col) < 0)


# -- stability -----------------------------------------------------------------------

def test_stability_columns_decrease(stability_report):
    rep = stability_report
    assert rep.labels == ("w=0.25", "w=0.125", "w=0.0625")
    cols = rep.columns()
    assert set(cols) == {
        "hausdorff_to_limit",
        "char_to_limit",
        "weak_measure_to_limit",
        "solution_l2_err",
        "energy_err",
    }
    for name, col in cols.items():
        assert strictly_decreasing(col), name
        assert rep.monotone_tail[name] is True
    assert rep.errors == (None, None, None)


def test_stability_of_constant_family(limit_pair):
    box, mu = limit_pair
    fam = DomainFamily(GRID, (box, box, box), ("a", "b", "c"))
    rep = stability_experiment(fam, [mu, mu, mu], (box, mu), DIRICHLET)
    cols = rep.columns()
    for name in ("hausdorff_to_limit", "char_to_limit", "weak_measure_to_limit"):
        assert np.all(cols[name] == 0.0), name
    # identical inputs reproduce the limit solve bit for bit
    assert np.all(cols["solution_l2_err"] == 0.0)
    assert np.all(cols["energy_err"] == 0.0)


def test_stability_guards(notch3, notch3_mus, limit_pair):
    other = full_box(GridSpec((0.0, 0.0), 1.0, 16))
    with pytest.raises(GridMismatch):
        stability_experiment(
            notch3, notch3_mus, (other, arc_measure_on_boundary(other)), DIRICHLET
        )
    with pytest.raises(ValueError):
        stability_experiment(notch3, notch3_mus[:2], limit_pair, DIRICHLET)
    bad = ProblemSpec(kind="robin", gamma=1.0, source_f=1.0, boundary_phi=1.0)
    with pytest.raises(ValueError):
        stability_experiment(notch3, notch3_mus, limit_pair, bad)


def test_member_failure_is_recorded_not_raised(notch3, limit_pair):
    box, mu = limit_pair
    fam = DomainFamily(GRID, (box, notch3.members[0]), ("bad", "good"))
    # an interior measure constrains every dof, so the Dirichlet reduction
    # fails for the first member only
    mus = [lebesgue_like_measure(box), arc_measure_on_boundary(notch3.members[0])]
    rep = stability_experiment(fam, mus, (box, mu), DIRICHLET)
    assert rep.errors[0] is not None
    assert "ConstraintKillsEverything" in rep.errors[0]
    assert rep.errors[1] is None
    assert np.isnan(rep.columns()["solution_l2_err"][0])
    assert np.isfinite(rep.columns()["solution_l2_err"][1])
    assert rep.monotone_tail["solution_l2_err"] is False


# -- spectral convergence --------------------------------------------------------------

def test_spectral_convergence_columns(notch3, notch3_mus, limit_pair):
    rep = spectral_convergence_experiment(
        notch3, notch3_mus, limit_pair, "dirichlet", 0.0, 2, opnorm_iters=40
    )
    cols = rep.columns()
    assert strictly_decreasing(cols["eig_err_1"])
    assert strictly_decreasing(cols["eig_err_2"])
    assert strictly_decreasing(cols["misalign_1"])
    assert strictly_decreasing(cols["resolvent_opnorm_est"])
    assert cols["misalign_1"][-1] < 1e-3
    assert not rep.proxy_limit
    assert rep.errors == (None, None, None)


def test_spectral_convergence_is_deterministic(notch3, notch3_mus, limit_pair, tmp_path):
    kw = dict(kind="dirichlet", gamma=0.0, count=2, seed=7, opnorm_iters=25)
    a = spectral_convergence_experiment(notch3, notch3_mus, limit_pair, **kw)
    b = spectral_convergence_experiment(notch3, notch3_mus, limit_pair, **kw)
    pa, pb = tmp_path / "a.csv", tmp_path / "b.csv"
    report_to_csv(a, pa)
    report_to_csv(b, pb)
    assert pa.read_bytes() == pb.read_bytes()


# -- shape search ----------------------------------------------------------------------

def make_triples(decoy_scale=None):
    fam = notch_family(GRID, (0.25, 0.1875, 0.125, 0.0625), depth_ratio=0.5)
    params = AdmissibilityParams(eps=0.15, s=1.0, cs_bar=0.9, c_bar=8.0, d=1.0, c_d=5.0)
    triples = []
    for dom, label in zip(fam.members, fam.labels):
        mu = arc_measure_on_boundary(dom)
        triples.append(AdmissibleTriple(dom, mu, mu, params, label))
    if decoy_scale is not None:
        box = full_box(GRID)
        mu = arc_measure_on_boundary(box)
        # inflated boundary mass breaks the nu mass cap
        triples.append(
            AdmissibleTriple(box, mu.scaled(decoy_scale), mu, params, "decoy")
        )
    return triples


@pytest.fixture(scope="module")
def search_result():
    return shape_search(
        make_triples(decoy_scale=4.0), DIRICHLET, dyadic_radii(1.0, depth=5)
    )


def test_shape_search_finds_widest_notch(search_result):
    # removing more material lowers the source energy, so the widest
    # notch wins the argmin
    assert search_result.best.label == "w=0.25"
    labels = [e[0] for e in search_result.evaluated]
    assert labels == ["w=0.25", "w=0.1875", "w=0.125", "w=0.0625", "decoy"]
    decoy = search_result.evaluated[-1]
    assert decoy == ("decoy", None, False)
    energies = [e[1] for e in search_result.evaluated[:-1]]
    assert all(e is not None for e in energies)
    assert search_result.best_energy == min(energies)
    assert any(line.startswith("argmin:") for line in search_result.trace)
    assert any("inadmissible" in line for line in search_result.trace)


def test_shape_search_is_permutation_invariant(search_result):
    shuffled = make_triples(decoy_scale=4.0)
    shuffled = [shuffled[i] for i in (3, 0, 4, 2, 1)]
    res = shape_search(shuffled, DIRICHLET, dyadic_radii(1.0, depth=5))
    assert res.best.label == search_result.best.label
    assert res.best_energy == search_result.best_energy


def test_shape_search_guards():
    with pytest.raises(NoAdmissibleCandidate):
        shape_search([], DIRICHLET, dyadic_radii(1.0, depth=5))
    only_decoys = make_triples(decoy_scale=4.0)[-1:]
    with pytest.raises(NoAdmissibleCandidate):
        shape_search(only_decoys, DIRICHLET, dyadic_radii(1.0, depth=5))


def test_diagnostics_walk_down_the_energy(search_result):
    rep = minimizing_sequence_diagnostics(search_result)
    # energy-sorted order on a nested family is width-sorted
    assert rep.labels == ("w=0.0625", "w=0.125", "w=0.1875", "w=0.25")
    cols = rep.columns()
    for name in cols:
        assert np.all(np.diff(cols[name]) <= 0), name
    assert cols["energy_err"][-1] == 0.0
    assert cols["hausdorff_to_limit"][-1] == 0.0


def test_diagnostics_need_three_candidates():
    triples = make_triples()[:2]
    res = shape_search(triples, DIRICHLET, dyadic_radii(1.0, depth=5))
    with pytest.raises(TooFewCandidates):
        minimizing_sequence_diagnostics(res)


# -- run directories --------------------------------------------------------------------

def test_safe_label():
    assert safe_label("w=0.25") == "w=0.25"
    assert safe_label("a b/c*d") == "a_b_c_d"


def test_write_run_dir_layout(tmp_path, stability_report, notch3, notch3_mus, limit_pair):
    artifacts = {}
    rep = stability_experiment(
        notch3, notch3_mus, limit_pair, DIRICHLET, artifacts=artifacts
    )
    out = tmp_path / "run"
    write_run_dir(
        out,
        rep,
        {"experiment": "stability", "grid_n": 32},
        solutions=list(zip(rep.labels, artifacts["member_solutions"])),
        domain=limit_pair[0],
    )
    assert sorted(os.listdir(out)) == [
        "domain.json", "manifest.json", "report.csv", "solutions",
    ]
    header = (out / "report.csv").read_text().splitlines()[0]
    assert header.split(",")[0] == "label"
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["experiment"] == "stability"
    assert manifest["monotone_tail"]["solution_l2_err"] is True
    assert manifest["member_errors"] == {}
    sols = sorted(os.listdir(out / "solutions"))
    assert sols == ["w=0.0625.csv", "w=0.125.csv", "w=0.25.csv"]


def test_write_run_dir_skips_failed_members(tmp_path, stability_report):
    out = tmp_path / "run2"
    write_run_dir(
        out,
        stability_report,
        {"experiment": "stability"},
        solutions=[("a", None), None],
    )
    assert not os.path.exists(out / "solutions" / "a.csv")


def test_report_csv_round_trip(tmp_path, stability_report):
    path = tmp_path / "report.csv"
    report_to_csv(stability_report, path)
    lines = path.read_text().splitlines()
    names = lines[0].split(",")[1:]
    got = {n: [] for n in names}
    for line in lines[1:]:
        parts = line.split(",")
        for n, v in zip(names, parts[1:]):
            got[n].append(float(v))
    cols = stability_report.columns()
    for n in names:
        assert np.array_equal(np.asarray(got[n]), cols[n])
