import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from peglab import geometry as geo
from peglab.sections import GROUP_A, GROUP_B, library_shape, read_section, write_section

SHAPES = [library_shape(d) for d, _ in list(GROUP_A.values()) + list(GROUP_B.values())]


def test_circle_and_square_centroids_at_origin():
    assert np.allclose(geo.centroid(geo.circle(7.5)), (0, 0), atol=1e-12)
    assert np.allclose(geo.centroid(geo.rectangle(15, 15)), (0, 0), atol=1e-12)


@pytest.mark.parametrize("section", SHAPES, ids=lambda s: s.name)
def test_centroid_matches_polygonised_boundary(section):
    pts = np.concatenate([geo._polyline(seg, 4000)[:-1] for seg in section.segments])
    x, y = pts[:, 0], pts[:, 1]
    x1, y1 = np.roll(x, -1), np.roll(y, -1)
    cross = x * y1 - x1 * y
    A = cross.sum() / 2
    oracle = ((x + x1) @ cross / (6 * A), (y + y1) @ cross / (6 * A))
    assert np.allclose(geo.centroid(section.translated(2.0, -3.0)), np.add(oracle, (2.0, -3.0)), atol=1e-5)


def test_l_shape_centroid_matches_rectangle_decomposition():
    # 20x10 bar with a 10x3 step on top; star-shaped about its centroid
    sec = geo.polygon([(0, 0), (20, 0), (20, 10), (10, 10), (10, 13), (0, 13)])
    parts = [((10.0, 5.0), 200.0), ((5.0, 11.5), 30.0)]
    oracle = sum(np.array(c) * a for c, a in parts) / sum(a for _, a in parts)
    assert np.allclose(geo.centroid(sec), oracle, atol=1e-9)


def test_boundary_sample_circle_and_square():
    c = geo.circle(4.0)
    for th in np.linspace(-3, 3, 7):
        bp = geo.boundary_sample(c, th)
        assert bp.radius == pytest.approx(4.0, abs=1e-9)
        assert math.cos(bp.normal_angle - th) == pytest.approx(1.0, abs=1e-9)
    sq = geo.rectangle(15, 15)
    bp = geo.boundary_sample(sq, 0.0)
    assert bp.radius == pytest.approx(7.5) and abs(bp.normal_angle) < 1e-12
    assert geo.boundary_sample(sq, math.pi / 4).radius == pytest.approx(7.5 * math.sqrt(2), rel=1e-9)


@pytest.mark.parametrize("section,expected", [
    (library_shape(GROUP_A[2][0]), 7.45), (library_shape(GROUP_B[1][0]), 13.06),
    (geo.rectangle(15, 15), 10.61), (geo.rectangle(10, 10), 7.07), (geo.circle(7.5), 7.5)])
def test_max_radius_examples(section, expected):
    assert geo.max_radius(section) == pytest.approx(expected, abs=5e-3)


def test_discretize_circle_four_nodes():
    d = geo.discretize(geo.circle(1.0), 4)
    assert len(d) == 4
    assert np.allclose(d.weights, math.pi / 2)
    assert np.allclose(np.diff(d.theta), math.pi / 2)


def test_circumference_integral():
    d = geo.discretize(geo.circle(7.5), 256)
    assert np.sum(d.radius * d.weights) == pytest.approx(2 * math.pi * 7.5, rel=1e-9)


@pytest.mark.parametrize("section", SHAPES, ids=lambda s: s.name)
def test_discretization_invariants(section):
    d = geo.discretize(section, 200)
    assert np.sum(d.weights) == pytest.approx(2 * math.pi, abs=1e-12)
    assert np.all(d.radius > 0)
    # outward normal never points back towards the centroid
    assert np.all(np.cos(d.normal_angle - d.theta) >= -1e-12)
    assert np.max(d.radius) <= geo.max_radius(section) + 1e-9


@pytest.mark.parametrize("section", SHAPES, ids=lambda s: s.name)
def test_max_radius_is_limit_of_nodes(section):
    R = geo.max_radius(section)
    for n in (64, 4096):
        assert np.max(geo.discretize(section, n).radius) <= R + 1e-9
    assert np.max(geo.discretize(section, 4096).radius) == pytest.approx(R, rel=2e-3)


@settings(max_examples=30, deadline=None)
@given(st.floats(-50, 50), st.floats(-50, 50), st.sampled_from(SHAPES))
def test_centroid_translation_equivariant(dx, dy, section):
    c0 = np.array(geo.centroid(section))
    c1 = np.array(geo.centroid(section.translated(dx, dy)))
    assert np.allclose(c1 - c0, (dx, dy), atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 2 * math.pi), st.sampled_from(SHAPES))
def test_normal_faces_outward(theta, section):
    bp = geo.boundary_sample(section, theta)
    assert bp.radius > 0
    assert math.cos(bp.normal_angle - theta) >= -1e-9


def test_open_boundary_rejected():
    with pytest.raises(geo.SectionError):
        geo.CrossSection((geo.Line((0, 0), (1, 0)), geo.Line((1, 0), (1, 1))))


def test_self_intersecting_boundary_rejected():
    with pytest.raises(geo.SectionError):
        geo.polygon([(0, 0), (2, 2), (2, 0), (0, 2)])


def test_clockwise_boundary_rejected():
    with pytest.raises(geo.SectionError):
        geo.polygon([(0, 0), (0, 1), (1, 1), (1, 0)])


def test_section_file_round_trip(tmp_path):
    sec = library_shape({"shape": "d_shape", "radius": 7.0, "flat": 4.0})
    write_section(sec, tmp_path / "d.yaml")
    back = read_section(tmp_path / "d.yaml")
    th = np.linspace(0, 2 * math.pi, 37)
    assert np.allclose(geo.radius_at(sec, th), geo.radius_at(back, th), atol=1e-12)


def test_unknown_library_shape():
    with pytest.raises(ValueError):
        library_shape({"shape": "hexagram"})
