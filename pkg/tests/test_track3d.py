import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from velplan3d.track3d import (Track3D, TrackFormatError, TrackInvariantError, angular_rate,
                               frenet_to_cartesian, load_track, pose_at, track_to_text, wrap_progress)
from velplan3d.tracks import banked_arc, chicane, circle, straight

HEADER = "s,x,y,z,phi,mu,theta,w_left,w_right,v_off\n"


def _csv(rows, closed=None):
    text = "" if closed is None else f"# closed={closed}\n"
    return text + HEADER + "".join(",".join(str(v) for v in r) + "\n" for r in rows)


def _flat_track(phi=0.0, mu=0.0, n=4):
    s = np.arange(float(n))
    z = np.zeros(n)
    return Track3D(s, s, z, z, np.full(n, phi), np.full(n, mu), z, np.ones(n), np.ones(n), np.full(n, 10.0))


# ---------------------------------------------------------------- loading
def test_four_point_straight_csv():
    rows = [(i, i, 0, 0, 0, 0, 0, 4, 4, 50) for i in range(4)]
    tr = load_track(io.StringIO(_csv(rows)))
    assert tr.s_lap == 3.0
    assert not tr.closed
    assert np.all(tr.phi == 0) and np.all(tr.mu == 0) and np.all(tr.theta == 0)


def test_progress_is_rebased_to_zero():
    rows = [(10 + i, i, 0, 0, 0, 0, 0, 4, 4, 50) for i in range(4)]
    tr = load_track(io.StringIO(_csv(rows)))
    assert tr.s[0] == 0.0 and tr.s_lap == 3.0


def test_open_circle_gap_violates_closure():
    c = circle(radius=100.0)
    text = track_to_text(c).splitlines()
    last = text[-1].split(",")
    last[1] = repr(float(last[1]) + 0.1)
    text[-1] = ",".join(last)
    with pytest.raises(TrackInvariantError, match="does not close"):
        load_track(io.StringIO("\n".join(text) + "\n"))


def test_chicane_round_trips_bit_exactly(tmp_path):
    tr = chicane()
    path = tmp_path / "chicane.csv"
    from velplan3d.track3d import save_track
    save_track(tr, path)
    back = load_track(path)
    for name in ("s", "x", "y", "z", "phi", "mu", "theta", "w_left", "w_right", "v_off"):
        assert np.array_equal(getattr(tr, name), getattr(back, name)), name
    assert back.closed == tr.closed
    assert track_to_text(back) == track_to_text(tr)


def test_parse_error_reports_line_number():
    text = HEADER + "0,0,0,0,0,0,0,1,1,10\n1,1,0,zz,0,0,0,1,1,10\n"
    with pytest.raises(TrackFormatError) as info:
        load_track(io.StringIO(text))
    assert info.value.line == 3
    assert "line 3" in str(info.value)


def test_comment_lines_are_ignored():
    rows = [(i, i, 0, 0, 0, 0, 0, 4, 4, 50) for i in range(3)]
    text = _csv(rows).replace(HEADER, HEADER + "# a note\n")
    assert load_track(io.StringIO(text)).s_lap == 2.0


@pytest.mark.parametrize("bad, what", [
    ((2, 2, 0, 0, 0, 0, 0, 4, 4, 50), "strictly increasing"),
    ((3, 3, 0, 0, 0, 0, 0, -1, 4, 50), "w_left"),
    ((3, 3, 0, 0, 0, 0, 0, 4, 4, 0), "v_off"),
])
def test_invariant_error_names_first_offending_point(bad, what):
    rows = [(i, i, 0, 0, 0, 0, 0, 4, 4, 50) for i in range(3)] + [bad]
    with pytest.raises(TrackInvariantError, match=what) as info:
        load_track(io.StringIO(_csv(rows)))
    assert "point 3" in str(info.value)


def test_wrong_header_is_rejected():
    with pytest.raises(TrackFormatError, match="header"):
        load_track(io.StringIO("s,x,y\n0,0,0\n"))


# ---------------------------------------------------------------- wrapping
@pytest.mark.parametrize("s, expected", [(100.0, 0.0), (-1.0, 99.0), (250.0, 50.0)])
def test_wrap_progress_examples(s, expected):
    tr = circle(radius=100.0 / (2 * math.pi), ds=0.5)
    tr_lap = tr.s_lap
    assert wrap_progress(tr, s * tr_lap / 100.0) == pytest.approx(expected * tr_lap / 100.0, abs=1e-9)


def test_wrap_progress_requires_closed_track():
    with pytest.raises(ValueError):
        wrap_progress(straight(100.0), 5.0)


@given(st.floats(min_value=-1e5, max_value=1e5, allow_nan=False))
def test_wrap_progress_is_idempotent_and_in_range(s):
    tr = circle(radius=50.0)
    w = wrap_progress(tr, s)
    assert 0.0 <= w < tr.s_lap
    assert wrap_progress(tr, w) == w


# ---------------------------------------------------------------- angular rate
def test_flat_straight_has_zero_rate():
    r = angular_rate(straight(200.0), 57.3)
    assert (r.omega_x, r.omega_y, r.omega_z) == (0.0, 0.0, 0.0)


def test_planar_circle_rate():
    r = angular_rate(circle(radius=100.0), 123.4)
    assert r.omega_x == pytest.approx(0.0, abs=1e-12)
    assert r.omega_y == pytest.approx(0.0, abs=1e-12)
    assert r.omega_z == pytest.approx(0.01, rel=1e-9)


def test_banked_arc_rate_closed_form():
    # omega_y = cos(mu) sin(phi) theta', omega_z = cos(mu) cos(phi) theta'
    r = angular_rate(banked_arc(radius=100.0, bank_deg=30.0), 80.0)
    assert r.omega_x == pytest.approx(0.0, abs=1e-12)
    assert r.omega_y == pytest.approx(0.005, abs=1e-9)
    assert r.omega_z == pytest.approx(0.0086603, abs=1e-7)


@pytest.mark.parametrize("bank", [5.0, 15.0, 25.0])
def test_banked_arc_generator_matches_closed_form(bank):
    tr = banked_arc(radius=80.0, bank_deg=bank)
    r = angular_rate(tr, 40.0)
    phi = math.radians(bank)
    assert r.omega_y == pytest.approx(math.sin(phi) / 80.0, rel=1e-9)
    assert r.omega_z == pytest.approx(math.cos(phi) / 80.0, rel=1e-9)


@settings(max_examples=50)
@given(st.floats(min_value=0.0, max_value=600.0))
def test_planar_tracks_have_only_yaw_rate(s):
    for tr in (chicane(), circle(radius=70.0)):
        smp = tr.sample(s)
        assert abs(smp.omega_x[0]) < 1e-9 and abs(smp.omega_y[0]) < 1e-9


def test_closed_track_derivative_is_periodic_across_seam():
    tr = circle(radius=60.0)
    a = angular_rate(tr, 0.0).omega_z
    b = angular_rate(tr, tr.s_lap - 1e-9).omega_z
    assert a == pytest.approx(1.0 / 60.0, rel=1e-9)
    assert b == pytest.approx(a, rel=1e-9)


# ---------------------------------------------------------------- poses
def test_straight_pose_is_identity():
    p = pose_at(straight(100.0), 0.0)
    np.testing.assert_allclose(p.t, [1, 0, 0], atol=1e-12)
    np.testing.assert_allclose(p.b, [0, 0, 1], atol=1e-12)


def test_ninety_degree_bank_turns_normal_vertical():
    p = pose_at(_flat_track(phi=math.pi / 2), 1.0)
    assert abs(p.n[2]) == pytest.approx(1.0, abs=1e-9)


@given(st.floats(min_value=0.0, max_value=600.0), st.sampled_from(["chicane", "banked", "circle"]))
def test_pose_is_orthonormal(s, kind):
    tr = {"chicane": chicane(), "banked": banked_arc(bank_deg=20.0), "circle": circle()}[kind]
    p = pose_at(tr, s)
    for u in (p.t, p.n, p.b):
        assert abs(np.linalg.norm(u) - 1.0) < 1e-9
    assert abs(p.t @ p.n) < 1e-9 and abs(p.t @ p.b) < 1e-9 and abs(p.n @ p.b) < 1e-9
    np.testing.assert_allclose(np.cross(p.t, p.n), p.b, atol=1e-9)


# ---------------------------------------------------------------- frenet to cartesian
def test_zero_offset_is_spine_point():
    tr = chicane()
    for s in (0.0, 17.25, 333.3):
        np.testing.assert_allclose(frenet_to_cartesian(tr, s, 0.0), tr.positions(s), atol=1e-12)


def test_flat_straight_offset_moves_along_normal():
    tr = straight(100.0)
    np.testing.assert_allclose(frenet_to_cartesian(tr, 10.0, 2.0), [10.0, 2.0, 0.0], atol=1e-12)


def test_banked_offset_changes_height():
    tr = banked_arc(radius=100.0, bank_deg=30.0)
    p0 = frenet_to_cartesian(tr, 50.0, 0.0)
    p3 = frenet_to_cartesian(tr, 50.0, 3.0)
    pose = pose_at(tr, 50.0)
    np.testing.assert_allclose(p3, p0 + 3.0 * pose.n, atol=1e-12)
    assert p3[2] - p0[2] == pytest.approx(3.0 * math.sin(math.radians(30.0)), rel=1e-9)


@given(st.floats(min_value=0.0, max_value=638.0))
def test_zero_offset_matches_interpolated_spine(s):
    tr = chicane()
    np.testing.assert_allclose(frenet_to_cartesian(tr, s, 0.0), tr.positions(s), atol=1e-12)
