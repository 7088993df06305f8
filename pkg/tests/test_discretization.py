"""Forms assembly: element exactness, trace map, loads, reductions."""

import math

import numpy as np
import pytest

from roughbvp.discretization import (
    ProblemSpec,
    assemble,
    box_mass_matrix,
    build_dofs,
    compatibility_defect,
    constrained_dofs,
    evaluate_field,
    export_matrix,
    load_vector,
    project_onto_domain,
    reduce_dirichlet,
)
from roughbvp.errors import AtomOutsideDomain, ConstraintKillsEverything
from roughbvp.geometry import GridSpec, build_pixel_domain, full_box
from roughbvp.measures import (
    DiscreteMeasure,
    arc_measure_on_boundary,
    lebesgue_like_measure,
)

from oracles import K_LOC_EXACT, M_LOC_EXACT_UNIT, quad_integral_on_cells

# assembled matrices index dofs by ascending flat node id, which reorders a
# cell's corners from (SW, SE, NE, NW) to (SW, SE, NW, NE)
_LATTICE_PERM = np.array([0, 1, 3, 2])


@pytest.fixture(scope="module")
def tiny_grid():
    return GridSpec(origin=(0.0, 0.0), side=1.0, cells_per_side=4)


@pytest.fixture(scope="module")
def one_cell(tiny_grid):
    return build_pixel_domain(tiny_grid, lambda x, y: (x < 0.25) & (y < 0.25))


def nodal(dom, f):
    dofs = build_dofs(dom)
    pos = dofs.node_positions()
    return dofs, evaluate_field(f, pos[:, 0], pos[:, 1])


# -- dof enumeration ----------------------------------------------------------------

def test_single_cell_has_four_boundary_dofs(one_cell):
    d = build_dofs(one_cell)
    assert d.n_dof == 4
    assert d.is_boundary.all()


def test_two_by_two_block_has_one_interior_node(tiny_grid):
    dom = build_pixel_domain(tiny_grid, lambda x, y: (x < 0.5) & (y < 0.5))
    d = build_dofs(dom)
    assert d.n_dof == 9
    assert int(d.is_boundary.sum()) == 8
    interior = d.node_positions()[~d.is_boundary]
    assert np.allclose(interior, [[0.25, 0.25]])


def test_full_box_dof_count(unit_box_32):
    d = build_dofs(unit_box_32)
    assert d.n_dof == 33 * 33
    assert int(d.is_boundary.sum()) == 4 * 32


def test_node_positions_cover_lattice(unit_box_32):
    d = build_dofs(unit_box_32)
    pos = d.node_positions()
    assert pos.min() == 0.0 and pos.max() == 1.0
    assert np.isclose(pos[:, 0].sum(), pos[:, 1].sum())


def test_same_nodes_predicate(tiny_grid, one_cell):
    d1 = build_dofs(one_cell)
    assert d1.same_nodes(build_dofs(one_cell))
    other = build_pixel_domain(tiny_grid, lambda x, y: (x > 0.75) & (y > 0.75))
    assert not d1.same_nodes(build_dofs(other))


# -- element exactness ---------------------------------------------------------------

def test_single_cell_matches_reference_element(one_cell, tiny_grid):
    mu = arc_measure_on_boundary(one_cell)
    forms = assemble(one_cell, mu, 1.0)
    P = _LATTICE_PERM
    want_A = K_LOC_EXACT[np.ix_(P, P)]
    want_M = tiny_grid.h ** 2 * M_LOC_EXACT_UNIT[np.ix_(P, P)]
    assert np.allclose(forms.stiffness.toarray(), want_A, atol=1e-15)
    assert np.allclose(forms.mass.toarray(), want_M, atol=1e-18)


def test_constants_span_stiffness_kernel(unit_box_32, arc_32):
    forms = assemble(unit_box_32, arc_32, 1.0)
    c = np.full(forms.dofs.n_dof, 3.7)
    assert abs(c @ (forms.stiffness @ c)) < 1e-10
    area = 1.0
    assert c @ (forms.mass @ c) == pytest.approx(3.7**2 * area, rel=1e-12)
    want_T = 3.7**2 * float((forms.gamma_at_atoms * forms.atom_weights).sum())
    assert c @ (forms.trace_mass @ c) == pytest.approx(want_T, rel=1e-12)


def test_bilinear_energies_are_exact(unit_box_32, arc_32):
    # x and xy restrict to the element space cellwise, so the quadratic
    # forms reproduce the continuum integrals exactly
    forms = assemble(unit_box_32, arc_32, 0.0)
    dofs, ux = nodal(unit_box_32, lambda x, y: x)
    assert ux @ (forms.stiffness @ ux) == pytest.approx(1.0, rel=1e-12)
    _, uxy = nodal(unit_box_32, lambda x, y: x * y)
    assert uxy @ (forms.stiffness @ uxy) == pytest.approx(2.0 / 3.0, rel=1e-12)
    assert uxy @ (forms.mass @ uxy) == pytest.approx(1.0 / 9.0, rel=1e-12)


def test_trace_map_reproduces_bilinear_fields(koch2, koch2_arc):
    forms = assemble(koch2, koch2_arc, 1.0)
    for f in (lambda x, y: x, lambda x, y: y, lambda x, y: 1.0 + 2 * x * y):
        _, u = nodal(koch2, f)
        at_atoms = evaluate_field(f, koch2_arc.points[:, 0], koch2_arc.points[:, 1])
        assert np.allclose(forms.trace_map @ u, at_atoms, atol=1e-12)


def test_trace_mass_is_weighted_gram(unit_box_32, arc_32):
    gamma = lambda x, y: 1.0 + x
    forms = assemble(unit_box_32, arc_32, gamma)
    R = forms.trace_map
    D = forms.gamma_at_atoms * forms.atom_weights
    direct = (R.T @ (R.multiply(D[:, None]))).toarray()
    assert np.allclose(forms.trace_mass.toarray(), direct, atol=1e-15)


def test_gamma_must_be_nonnegative(unit_box_32, arc_32):
    with pytest.raises(ValueError):
        assemble(unit_box_32, arc_32, lambda x, y: x - 0.5)


def test_atom_outside_domain_raises(one_cell):
    stray = DiscreteMeasure(
        points=np.array([[0.9, 0.9]]),
        weights=np.array([1.0]),
        support_kind="general",
    )
    with pytest.raises(AtomOutsideDomain):
        assemble(one_cell, stray, 1.0)


def test_box_mass_matrix_total_and_cache(tiny_grid):
    M = box_mass_matrix(tiny_grid)
    ones = np.ones(25)
    assert ones @ (M @ ones) == pytest.approx(1.0, rel=1e-14)
    assert box_mass_matrix(tiny_grid) is M


# -- field evaluation -----------------------------------------------------------------

def test_evaluate_field_accepts_scalar_array_callable():
    x = np.array([0.0, 0.5, 1.0])
    y = np.zeros(3)
    assert np.array_equal(evaluate_field(2.0, x, y), [2.0, 2.0, 2.0])
    assert np.array_equal(evaluate_field([1.0, 2.0, 3.0], x, y), [1.0, 2.0, 3.0])
    assert np.allclose(evaluate_field(lambda a, b: a + b, x, y), x)
    # non-vectorized callables get a scalar fallback
    assert np.allclose(evaluate_field(lambda a, b: math.hypot(a, b), x, y), x)
    with pytest.raises(ValueError):
        evaluate_field([1.0, 2.0], x, y)


def test_problem_spec_validation():
    with pytest.raises(ValueError):
        ProblemSpec(kind="mixed")
    with pytest.raises(ValueError):
        ProblemSpec(kind="robin", alpha=-1.0)


# -- loads and quadrature --------------------------------------------------------------

def test_load_vector_single_cell_midpoint(one_cell, tiny_grid):
    d = build_dofs(one_cell)
    F = load_vector(one_cell, d, lambda x, y: x + 10 * y)
    fc = 0.125 + 10 * 0.125
    assert np.allclose(F, fc * tiny_grid.h ** 2 / 4.0)


def test_load_total_is_midpoint_integral(koch2):
    d = build_dofs(koch2)
    F = load_vector(koch2, d, lambda x, y: np.exp(x) * np.cos(y))
    want = quad_integral_on_cells(
        koch2.inside, koch2.grid.origin, koch2.grid.h,
        lambda x, y: np.exp(x) * np.cos(y), sub=1,
    )
    assert F.sum() == pytest.approx(want, rel=1e-12)


def test_midpoint_rule_is_second_order():
    f = lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y)
    exact = 4.0 / np.pi ** 2
    errs = []
    for n in (8, 16, 32, 64):
        dom = full_box(GridSpec((0.0, 0.0), 1.0, n))
        F = load_vector(dom, build_dofs(dom), f)
        errs.append(abs(F.sum() - exact))
    orders = [math.log2(errs[i] / errs[i + 1]) for i in range(3)]
    assert min(orders) > 1.8


# -- compatibility, reductions, projection ---------------------------------------------

def test_compatibility_defect_exact_for_constants(unit_box_32, arc_32):
    spec = ProblemSpec(kind="neumann", source_f=2.0, boundary_phi=-0.5)
    want = 2.0 * 1.0 - 0.5 * arc_32.total_mass()
    got = compatibility_defect(unit_box_32, arc_32, spec)
    assert got == pytest.approx(want, abs=1e-13)


def test_compatibility_defect_balanced_data_vanishes(unit_box_32, arc_32):
    phi = -1.0 / arc_32.total_mass()
    spec = ProblemSpec(kind="neumann", source_f=1.0, boundary_phi=phi)
    assert abs(compatibility_defect(unit_box_32, arc_32, spec)) < 1e-13


def test_compatibility_defect_midpoint_error_is_h_squared(arc_32, arc_128):
    f = lambda x, y: np.cos(3 * x) * np.sin(2 * y)
    exact = (math.sin(3.0) / 3.0) * ((1 - math.cos(2.0)) / 2.0)
    errs = []
    for n, mu in ((32, arc_32), (128, arc_128)):
        dom = full_box(GridSpec((0.0, 0.0), 1.0, n))
        spec = ProblemSpec(kind="neumann", source_f=f, boundary_phi=0.0)
        errs.append(abs(compatibility_defect(dom, mu, spec) - exact))
    assert errs[1] < errs[0] / 12.0


def test_constrained_dofs_follow_trace_columns(unit_box_32, arc_32):
    forms = assemble(unit_box_32, arc_32, 1.0)
    mask = constrained_dofs(forms)
    cols = np.asarray(abs(forms.trace_map).sum(axis=0)).ravel() > 0
    assert np.array_equal(mask, cols)
    free = reduce_dirichlet(forms)
    assert not (free & mask).any()
    assert free.sum() == forms.dofs.n_dof - mask.sum()


def test_reduction_can_kill_everything(one_cell):
    # an atom in every cell touches every corner node
    mu = lebesgue_like_measure(one_cell)
    forms = assemble(one_cell, mu, 1.0)
    with pytest.raises(ConstraintKillsEverything):
        reduce_dirichlet(forms)


def test_project_onto_domain(tiny_grid):
    dom = build_pixel_domain(tiny_grid, lambda x, y: (x < 0.5) & (y < 0.5))
    rng = np.random.default_rng(3)
    v = rng.standard_normal(25)
    p = project_onto_domain(v, dom)
    keep = build_dofs(dom).node_flat
    assert np.array_equal(p[keep], v[keep])
    assert np.count_nonzero(np.delete(p, keep)) == 0
    assert np.array_equal(project_onto_domain(p, dom), p)
    with pytest.raises(ValueError):
        project_onto_domain(v[:-1], dom)


def test_export_matrix_triplet_format(tmp_path, one_cell):
    mu = arc_measure_on_boundary(one_cell)
    forms = assemble(one_cell, mu, 1.0)
    path = tmp_path / "stiff.txt"
    export_matrix(forms.stiffness, path)
    lines = path.read_text().splitlines()
    assert len(lines) == forms.stiffness.nnz
    triples = [ln.split() for ln in lines]
    keys = [(int(r), int(c)) for r, c, _ in triples]
    assert keys == sorted(keys)
    got = {(int(r), int(c)): float(v) for r, c, v in triples}
    dense = forms.stiffness.toarray()
    for (r, c), v in got.items():
        assert v == dense[r, c]
