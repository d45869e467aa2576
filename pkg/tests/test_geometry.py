import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ingp.errors import DataError, DegenerateMetricError, DomainError, NoEmbeddingError
from ingp.geometry import (ChartDomain, EuclideanDomain, MetricTensor, PolygonBoundary, SwissRoll,
                           builtin_domain, embed, embedding_jacobian, format_domain_text, inside,
                           interior_grid, metric_at, metric_jacobian_at, parse_domain_text,
                           resolve_domain, ushape, ushape_vertices)


def test_euclidean_metric_is_identity():
    m = metric_at(EuclideanDomain(2), [3.0, -1.0])
    np.testing.assert_array_equal(m.g, np.eye(2))
    assert m.det_g == 1.0


def test_swissroll_metric_paper_value():
    np.testing.assert_allclose(metric_at(SwissRoll(), [2.0, 0.0]).g, np.diag([5.0, 1.0]))


def test_swissroll_metric_from_embedding_differences():
    X = np.array([[1.5, 0.3]])
    J = embedding_jacobian(SwissRoll().embed_batch, X)
    g_fd = J[0].T @ J[0]
    np.testing.assert_allclose(g_fd, np.diag([1 + 1.5**2, 1.0]), atol=1e-6)


def test_swissroll_metric_jacobian():
    dg = metric_jacobian_at(SwissRoll(), [2.0, 0.0])
    np.testing.assert_allclose(dg[0], [[4.0, 0.0], [0.0, 0.0]])
    np.testing.assert_allclose(dg[1], np.zeros((2, 2)))


def test_euclidean_metric_jacobian_zero():
    for d in (1, 3):
        for m in metric_jacobian_at(EuclideanDomain(d), np.ones(d)):
            np.testing.assert_array_equal(m, 0.0)


def test_cylinder_from_expression_has_zero_metric_derivative():
    dom = parse_domain_text("dim=2 name=cyl embedding=cylinder\n")
    np.testing.assert_allclose(metric_at(dom, [0.7, 0.2]).g, np.eye(2), atol=1e-8)
    for m in metric_jacobian_at(dom, [0.7, 0.2]):
        np.testing.assert_allclose(m, 0.0, atol=1e-4)


@pytest.mark.parametrize("name", ["swissroll", "ushape", "r2", "aral"])
def test_builtin_metrics_valid(name):
    dom = builtin_domain(name)
    lo, hi = dom.bounds() if dom.bounds() is not None else (np.full(dom.dim, -5.0), np.full(dom.dim, 5.0))
    pts = np.random.default_rng(0).uniform(lo, hi, size=(1000, dom.dim))
    if dom.boundary is not None:
        pts = pts[dom.inside_batch(pts)]
    for x in pts[:1000]:
        m = metric_at(dom, x)
        np.testing.assert_allclose(m.g, m.g.T)
        np.testing.assert_allclose(m.inv_g @ m.g, np.eye(dom.dim), atol=1e-10)
        np.testing.assert_allclose(m.sqrt_inv_g @ m.sqrt_inv_g, m.inv_g, atol=1e-8)


def test_swissroll_jacobian_matches_central_difference():
    dom, h = SwissRoll(), 1e-5
    for r in (5.0, 9.0, 13.0):
        x = np.array([r, 4.0])
        fd = (dom.metric_batch(x + [h, 0])[0] - dom.metric_batch(x - [h, 0])[0]) / (2 * h)
        np.testing.assert_allclose(metric_jacobian_at(dom, x)[0], fd, rtol=1e-5)


def test_degenerate_metric_names_point():
    dom = ChartDomain(2, metric=lambda X: np.zeros((len(X), 2, 2)))
    with pytest.raises(DegenerateMetricError, match=r"0\.5"):
        metric_at(dom, [0.5, 1.0])


def test_metric_tensor_rejects_non_finite():
    with pytest.raises(DegenerateMetricError):
        MetricTensor.from_matrix([[np.nan, 0], [0, 1]])


# --- membership -------------------------------------------------------------

def test_ushape_vertices_pinned():
    v = ushape_vertices()
    assert v.shape == (2 * 31 + 9, 2)
    np.testing.assert_allclose(v[0], [3.5, -1.5])
    np.testing.assert_allclose(v[-1], v[0])
    np.testing.assert_allclose(v.min(axis=0), [-1.0, -1.5], atol=1e-12)
    np.testing.assert_allclose(v.max(axis=0), [3.5, 1.5])


def test_ushape_membership():
    dom = ushape()
    assert inside(dom, [2.0, -1.0])      # middle of lower arm
    assert inside(dom, [2.0, 1.0])       # upper arm
    assert inside(dom, [-0.5, 0.0])      # bend
    assert not inside(dom, [2.0, 0.0])   # gap between arms
    assert not inside(dom, [4.0, 1.0])


def test_boundary_points_are_outside():
    dom = ushape()
    assert not inside(dom, [3.5, 1.0])   # on the arm's end edge
    assert not inside(dom, [2.0, 0.5])   # on the inner edge
    assert not inside(dom, [3.5, 1.5])   # vertex


def test_unbounded_inside_everything():
    assert inside(EuclideanDomain(3), [1e6, -1e6, 0.0])


def test_membership_consistent_across_ray_directions():
    b = ushape().boundary
    pts = np.random.default_rng(1).uniform([-1.2, -1.7], [3.7, 1.7], size=(4000, 2))
    base = b.contains(pts)
    for ang in (0.0, 0.7, 1.9, 4.0):
        odd = b.crossing_parity(pts, angle=ang) & ~b.on_edge(pts)
        np.testing.assert_array_equal(odd, base)


def test_polygon_with_hole():
    outer = [(0, 0), (4, 0), (4, 4), (0, 4)]
    hole = [(1, 1), (1, 3), (3, 3), (3, 1)]
    dom = EuclideanDomain(2, PolygonBoundary([outer, hole]))
    assert inside(dom, [0.5, 0.5])
    assert not inside(dom, [2.0, 2.0])


def test_self_intersecting_polygon_rejected():
    with pytest.raises(DomainError):
        PolygonBoundary([[(0, 0), (2, 2), (2, 0), (0, 2)]])


@settings(max_examples=50, deadline=None)
@given(st.floats(-2, 5), st.floats(-2, 2))
def test_inside_is_pure(x, y):
    dom = ushape()
    assert inside(dom, [x, y]) == inside(dom, [x, y])


# --- embedding --------------------------------------------------------------

def test_swissroll_embedding_values():
    dom = SwissRoll()
    np.testing.assert_allclose(embed(dom, [math.pi, 1.0]), [-math.pi, 0.0, 1.0], atol=1e-12)
    np.testing.assert_allclose(embed(dom, [0.0, 0.0]), [0.0, 0.0, 0.0])
    np.testing.assert_allclose(embed(dom, [1.0, 2.0]), [0.5403023, 0.8414710, 2.0], atol=1e-6)


def test_no_embedding_error():
    with pytest.raises(NoEmbeddingError):
        embed(ChartDomain(2, metric=lambda X: np.tile(np.eye(2), (len(X), 1, 1))), [0.0, 0.0])


def test_dimension_mismatch():
    with pytest.raises(DomainError):
        metric_at(EuclideanDomain(2), [1.0, 2.0, 3.0])


# --- files and grids --------------------------------------------------------

def test_domain_file_round_trip(tmp_path):
    dom = builtin_domain("aral")
    text = format_domain_text(dom)
    back = parse_domain_text(text)
    np.testing.assert_allclose(back.boundary.rings[0], dom.boundary.rings[0])
    assert back.fingerprint() == dom.fingerprint()
    p = tmp_path / "lake.domain"
    p.write_text(text)
    assert resolve_domain(str(p)).name == "aral"


def test_domain_file_errors_have_line_numbers():
    with pytest.raises(DataError, match=":3:"):
        parse_domain_text("dim=2 name=x\n0 0\n1 one\n")
    with pytest.raises(DataError, match="header"):
        parse_domain_text("0 0\n1 0\n")


def test_embedding_expression_sandboxed():
    with pytest.raises(DataError):
        parse_domain_text("dim=2 name=x embedding='__import__(1), x0, x1'\n")


def test_box_header():
    dom = parse_domain_text("dim=2 name=sq box=0:1,0:2\n")
    assert inside(dom, [0.5, 1.5]) and not inside(dom, [0.5, 2.5])


def test_interior_grid_unit_square():
    dom = EuclideanDomain(2)
    pts = interior_grid(dom, 4, bounds=([0, 0], [1, 1]))
    np.testing.assert_allclose(np.sort(pts, axis=0), [[0.25, 0.25], [0.25, 0.25], [0.75, 0.75], [0.75, 0.75]])
    assert len(pts) == 4


def test_interior_grid_needs_bounds():
    with pytest.raises(DomainError):
        interior_grid(EuclideanDomain(2), 4)


def test_translated_domain_shifts_membership():
    dom = ushape()
    sh = dom.translated(np.array([1.0, 2.0]))
    assert inside(sh, [3.0, 1.0]) and not inside(sh, [2.0, -1.0])
