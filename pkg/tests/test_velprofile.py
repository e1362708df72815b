import io
import math

import numpy as np
import pytest
from conftest import make_track, peak
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import lattice_dp, profile_violations

from velplan3d.apex import Apex, ApexSearchConfig
from velplan3d.ggcon import AnalyticGG, GripMap, GripZone
from velplan3d.track3d import Track3D
from velplan3d.tracks import banked_arc, chicane, circle, straight
from velplan3d.velprofile import (BW, CROSS, FW, GridMismatchError, ProfileConfig, ProfileStallError,
                                  VelocityProfile, backward_pass, combine, forward_pass, generate_profile,
                                  segment_horizon, update_timestamps, write_profile_csv)

INF = math.inf


def _cfg(h_opt, ds=None):
    return ProfileConfig(apex=ApexSearchConfig(h_opt=h_opt), ds=ds)


def _bare(v, ds=1.0):
    v = np.asarray(v, dtype=float)
    s = ds * np.arange(len(v))
    a = np.append((v[1:] ** 2 - v[:-1] ** 2) / (2 * ds), 0.0)
    return VelocityProfile(s=s, v=v, a_hat_x=a, t=np.zeros(len(v)), alpha_used=np.ones(len(v)))


# ---------------------------------------------------------------- segmentation
def test_no_apex_gives_one_forward_segment():
    segs = segment_horizon([], 10.0, 100.0)
    assert len(segs) == 1 and segs[0].forward_only
    assert (segs[0].s_from, segs[0].s_to) == (10.0, 110.0)


def test_two_apexes_give_three_contiguous_segments():
    aps = [Apex(40.0, 20.0, True), Apex(70.0, 25.0, True)]
    segs = segment_horizon(aps, 0.0, 100.0)
    assert len(segs) == 3
    assert [sg.v_end for sg in segs] == [20.0, 25.0, None]
    assert all(a.s_to == b.s_from for a, b in zip(segs, segs[1:]))
    assert segs[0].s_from == 0.0 and segs[-1].s_to == 100.0


def test_apex_at_horizon_end_terminates_last_segment():
    segs = segment_horizon([Apex(100.0, 20.0, True)], 0.0, 100.0)
    assert len(segs) == 1
    assert not segs[0].forward_only and segs[0].v_end == 20.0


# ---------------------------------------------------------------- forward pass
def test_forward_uniform_acceleration(plain_gg):
    s, v, a = forward_pass(straight(200.0), plain_gg, 1.0, 0.0, INF, (0.0, 100.0))
    np.testing.assert_allclose(v, np.sqrt(2 * 12.0 * s), rtol=1e-12)
    np.testing.assert_allclose(a, 12.0)


def test_forward_speed_cap_corrects_acceleration():
    gg = AnalyticGG(ax_max=11.0, load_scaling=False, power=INF, c_drag=0.0, ax_eng_0=INF)
    s, v, a = forward_pass(straight(300.0), gg, 1.0, 0.0, 60.0, (0.0, 250.0))
    k = int(np.argmax(v >= 60.0))
    assert k == 164  # 22 * 163 = 3586 < 3600 < 22 * 164
    assert a[k - 1] == pytest.approx((3600.0 - 22.0 * 163) / 2.0)
    assert np.all(v[k:] == 60.0)
    assert np.all(a[k:] == 0.0)


def _engine_ode(gg, v0, length, h=0.01):
    """RK4 on d(v^2)/ds = 2 a(v) with the engine and tire limits written out here."""
    def rhs(w):
        v = math.sqrt(max(w, 0.0))
        eng = gg.ax_eng_0 if v <= 0 else min(gg.ax_eng_0, gg.power / (gg.mass * v) - gg.c_drag * v * v / gg.mass)
        return 2.0 * min(gg.ax_max, eng)
    w, out = v0 * v0, [v0]
    steps = int(round(1.0 / h))
    for _ in range(int(length)):
        for _ in range(steps):
            k1 = rhs(w)
            k2 = rhs(w + 0.5 * h * k1)
            k3 = rhs(w + 0.5 * h * k2)
            k4 = rhs(w + h * k3)
            w += h * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
        out.append(math.sqrt(w))
    return np.array(out)


def test_forward_matches_engine_ode():
    gg = AnalyticGG(load_scaling=False)
    s, v, _ = forward_pass(straight(1500.0), gg, 1.0, 20.0, INF, (0.0, 1200.0))
    ref = _engine_ode(gg, 20.0, 1200.0)
    assert v[-1] > 60.0  # the power term governs most of the run
    assert np.max(np.abs(v - ref) / ref) < 0.005


# ---------------------------------------------------------------- backward pass
def test_backward_uniform_deceleration(plain_gg):
    s, v, a = backward_pass(straight(200.0), plain_gg, 1.0, 20.0, (0.0, 100.0))
    np.testing.assert_allclose(v, np.sqrt(400.0 + 30.0 * (100.0 - s)), rtol=1e-12)
    np.testing.assert_allclose(a, -15.0)


def test_backward_to_standstill(plain_gg):
    s, v, _ = backward_pass(straight(200.0), plain_gg, 1.0, 0.0, (0.0, 50.0))
    assert v[-1] == 0.0
    np.testing.assert_allclose(v, np.sqrt(30.0 * (50.0 - s)), rtol=1e-12)


def test_curved_entry_brakes_longer(plain_gg):
    _, v_flat, _ = backward_pass(straight(200.0), plain_gg, 1.0, 20.0, (0.0, 100.0))
    _, v_curve, _ = backward_pass(circle(radius=200.0), plain_gg, 1.0, 20.0, (0.0, 100.0))
    assert np.all(v_curve[:-1] < v_flat[:-1])


# ---------------------------------------------------------------- combine
def test_combine_takes_forward_when_lower():
    vf, af = np.array([1.0, 2.0, 3.0]), np.array([1.5, 2.5])
    v, a, g = combine(vf, af, vf + 1, np.array([9.0, 9.0]))
    np.testing.assert_array_equal(v, vf)
    np.testing.assert_array_equal(a, af)
    assert np.all(g == FW)


def test_combine_identical_profiles_is_identity():
    vf, af = np.array([5.0, 6.0, 7.0]), np.array([5.5, 6.5])
    v, a, g = combine(vf, af, vf, af)
    np.testing.assert_array_equal(v, vf)
    np.testing.assert_array_equal(a, af)
    assert np.all(g == FW)


def test_combine_crossing_parabolas():
    s = np.arange(0.0, 101.0)
    vf, vb = np.sqrt(20.0 * s), np.sqrt(30.0 * (100.0 - s))
    v, a, g = combine(vf, np.full(100, 10.0), vb, np.full(100, -15.0))
    k = int(np.argmax(v))
    assert s[k] == 60.0  # 20 s = 30 (100 - s)
    assert np.all(a[:k] > 0) and np.all(a[k:] < 0)
    np.testing.assert_allclose(v, np.minimum(vf, vb))
    assert np.all(g[:k] == FW) and g[k] == CROSS and np.all(g[k + 1:] == BW)  # tie at the kink goes forward


def test_combine_rejects_mismatched_grids():
    with pytest.raises(GridMismatchError):
        combine(np.ones(3), np.ones(2), np.ones(4), np.ones(3))


def test_combine_marks_crossing_interval():
    v, a, g = combine([0.0, 10.0, 20.0], [50.0, 150.0], [30.0, 15.0, 0.0], [-337.5, -112.5])
    assert list(g) == [FW, CROSS]
    assert a[1] == pytest.approx((0.0 - 100.0) / 2.0)


# ---------------------------------------------------------------- timestamps
def test_constant_speed_timestamps():
    p = update_timestamps(_bare(np.full(100, 50.0)))
    np.testing.assert_allclose(p.t, np.arange(100) / 50.0, rtol=1e-12)


def test_uniform_acceleration_total_time():
    s = np.arange(0.0, 101.0)
    p = update_timestamps(_bare(np.sqrt(2 * 8.0 * s)))
    assert p.t[-1] == pytest.approx(2 * 100.0 / math.sqrt(1600.0), rel=1e-12)


def test_zero_speed_interval_stalls():
    with pytest.raises(ProfileStallError, match="stalls"):
        update_timestamps(_bare([3.0, 0.0, 0.0, 2.0]))


def test_isolated_zero_sample_is_timed():
    p = update_timestamps(_bare([0.0, 2.0, 0.0]))
    assert np.all(np.diff(p.t) > 0)


# ---------------------------------------------------------------- end to end
def test_straight_at_top_speed_is_constant():
    p = generate_profile(straight(1000.0), AnalyticGG(), 1.0, 50.0, 50.0, 0.0, _cfg(600.0))
    np.testing.assert_array_equal(p.v, 50.0)
    np.testing.assert_array_equal(p.a_hat_x, 0.0)
    assert p.apexes == ()


def _with_v_off(track: Track3D, v_off) -> Track3D:
    return Track3D(track.s, track.x, track.y, track.z, track.phi, track.mu, track.theta,
                   track.w_left, track.w_right, v_off, closed=track.closed)


def test_solver_reproduces_its_own_reference():
    base = make_track(peak(150.0, 40.0, 1 / 40.0), 400.0)
    gg = AnalyticGG()
    cfg = _cfg(base.s_lap)
    first = generate_profile(base, gg, 1.0, 30.0, 80.0, 0.0, cfg)
    again = generate_profile(_with_v_off(base, first.v), gg, 1.0, 30.0, 80.0, 0.0, cfg)
    np.testing.assert_allclose(again.v, first.v, atol=1e-6)


def test_grip_zone_scales_apex_speed_by_sqrt_alpha(plain_gg):
    tr = chicane()
    zone = GripMap([GripZone(150.0, 450.0, 0.7)])
    cfg = _cfg(tr.s_lap)
    full = generate_profile(tr, plain_gg, 1.0, 40.0, 90.0, 0.0, cfg)
    wet = generate_profile(tr, plain_gg, zone, 40.0, 90.0, 0.0, cfg)
    assert len(full.apexes) == len(wet.apexes) == 2
    for a1, a7 in zip(full.apexes, wet.apexes):
        assert a7.v_apex < a1.v_apex
        assert a7.v_apex / a1.v_apex == pytest.approx(math.sqrt(0.7), rel=0.01)


def test_start_above_braking_limit_follows_backward_profile():
    tr = chicane()
    gg = AnalyticGG()
    s_apex = generate_profile(tr, gg, 1.0, 40.0, 90.0, 0.0, _cfg(tr.s_lap)).apexes[0].s_apex
    p = generate_profile(tr, gg, 1.0, 85.0, 90.0, s_apex - 60.0, _cfg(200.0))
    _, v_bw, _ = backward_pass(tr, gg, 1.0, p.apexes[0].v_apex, (p.s[0], p.apexes[0].s_apex), v_max=90.0)
    assert p.v[0] == pytest.approx(v_bw[0], rel=1e-5)  # the profile grid snaps to whole metres after s_start
    assert p.v[0] < 85.0
    # both passes start from the same speed, so the first interval is a crossing
    assert p.governor[0] in (BW, CROSS) and p.a_hat_x[0] < 0.0
    assert max(profile_violations(tr, gg, p)) < 1e-6


def test_closed_track_horizon_wraps():
    tr = circle(radius=80.0)
    p = generate_profile(tr, AnalyticGG(), 1.0, 20.0, 90.0, tr.s_lap - 50.0, _cfg(200.0))
    assert p.s[-1] > tr.s_lap
    assert p.t[0] == 0.0 and np.all(np.diff(p.t) > 0)


def test_profile_csv_layout():
    p = generate_profile(straight(100.0), AnalyticGG(), 1.0, 10.0, 50.0, 0.0, _cfg(20.0))
    buf = io.StringIO()
    write_profile_csv(p, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "s,v,a_hat_x,t,alpha"
    assert len(lines) == len(p) + 1
    assert float(lines[1].split(",")[1]) == pytest.approx(10.0)


# ---------------------------------------------------------------- invariants
TRACKS = {
    "chicane": chicane(),
    "banked": banked_arc(radius=90.0, bank_deg=12.0, angle_deg=200.0),
    "crest": make_track(peak(120.0, 50.0, 1 / 50.0), 300.0, mu=lambda s: -0.0015 * (s - 150.0),
                        phi=lambda s: np.radians(5.0) * np.sin(s / 40.0)),
}


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(sorted(TRACKS)), st.floats(0.3, 1.0), st.floats(0.0, 70.0), st.floats(0.0, 150.0))
def test_profile_stays_inside_the_diagram(name, alpha, v0, s0):
    tr = TRACKS[name]
    gg = AnalyticGG()
    h = min(250.0, tr.s_lap - s0 - 1.0) if not tr.closed else 250.0
    p = generate_profile(tr, gg, alpha, v0, 80.0, s0, _cfg(h))
    d, e = profile_violations(tr, gg, p)
    assert d < 1e-6 and e < 1e-6
    assert np.all(p.v >= 0)
    np.testing.assert_allclose(p.v[1:] ** 2, p.v[:-1] ** 2 + 2 * p.a_hat_x[:-1] * np.diff(p.s), atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.2, 1.0), st.floats(0.2, 1.0), st.floats(0.0, 60.0))
def test_profile_is_monotone_in_alpha(a1, a2, v0):
    lo, hi = sorted((a1, a2))
    tr = TRACKS["chicane"]
    gg = AnalyticGG()
    p_lo = generate_profile(tr, gg, lo, v0, 80.0, 100.0, _cfg(400.0))
    p_hi = generate_profile(tr, gg, hi, v0, 80.0, 100.0, _cfg(400.0))
    assert np.all(p_lo.v <= p_hi.v + 1e-9)


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(sorted(TRACKS)), st.floats(0.3, 1.0), st.floats(20.0, 90.0))
def test_profile_respects_speed_and_lateral_limits(name, alpha, v_max):
    tr = TRACKS[name]
    gg = AnalyticGG()
    p = generate_profile(tr, gg, alpha, 0.0, v_max, 0.0, _cfg(250.0))
    assert np.all(p.v <= v_max + 1e-9)
    smp = tr.sample(p.s)
    ay = p.v ** 2 * smp.omega_z + 9.81 * np.cos(smp.mu) * np.sin(smp.phi)
    g_tilde = smp.omega_y * p.v ** 2 + 9.81 * np.cos(smp.mu) * np.cos(smp.phi)
    ay_max = gg.limits_array(p.v, g_tilde)[2]
    assert np.all(np.abs(ay) <= alpha * ay_max + 1e-6)


def test_matches_dynamic_programme_on_short_track():
    tr = make_track(peak(60.0, 25.0, 1 / 35.0), 120.0)
    gg = AnalyticGG()
    p = generate_profile(tr, gg, 0.85, 25.0, 70.0, 0.0, _cfg(tr.s_lap))
    ref = lattice_dp(tr.s, tr.sample(tr.s).omega_z, 25.0, 70.0, gg, 0.85)
    assert np.max(np.abs(p.v - ref) / np.maximum(ref, 1.0)) < 0.02
