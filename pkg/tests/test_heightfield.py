import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vtinspect.heightfield import (
    HEADER_SIZE,
    DepthProfile,
    DetrendedProfile,
    Heightfield,
    HeightfieldFormatError,
    LineSegment2D,
    decode_hfld,
    detrend_profile,
    extract_profile,
    load_heightfield,
    local_minima,
    profile_metrics,
    sample_bilinear,
    save_csv,
    save_heightfield,
)
from vtinspect.synth import add_trend_and_noise, ideal_probe, scratch_specimen, stamp_defect


def _profile(samples, spacing=0.0069):
    return DetrendedProfile(np.asarray(samples, dtype=float), spacing, (0.0, 0.0))


# --- construction -------------------------------------------------------------------


def test_default_pitch_is_sensor_resolution():
    hf = Heightfield.zeros(4, 3)
    assert (hf.width, hf.height) == (4, 3)
    assert hf.pitch_x == hf.pitch_y == 6.9


@pytest.mark.parametrize("data", [np.zeros((0, 3)), np.zeros(5), np.zeros((2, 2, 2))])
def test_bad_shapes_rejected(data):
    with pytest.raises(ValueError):
        Heightfield(data)


def test_non_finite_cell_is_located():
    d = np.zeros((3, 4))
    d[2, 1] = np.nan
    with pytest.raises(ValueError, match=r"x=1, y=2"):
        Heightfield(d)


def test_degenerate_segment_rejected():
    with pytest.raises(ValueError):
        LineSegment2D((1, 1), (1, 1))


# --- file formats -------------------------------------------------------------------


def test_zero_field_file_size(tmp_path):
    p = tmp_path / "z.hfld"
    save_heightfield(Heightfield.zeros(7, 5), p)
    assert p.stat().st_size == 32 + 4 * 7 * 5
    assert HEADER_SIZE == 32


def test_random_field_round_trip(tmp_path):
    rng = np.random.default_rng(7)
    hf = Heightfield(rng.normal(0, 0.05, (40, 60)), 6.9, 7.3)
    save_heightfield(hf, tmp_path / "r.hfld")
    assert load_heightfield(tmp_path / "r.hfld") == hf


def test_csv_zero_field(tmp_path):
    p = tmp_path / "z.csv"
    p.write_text("pitch_x_um,pitch_y_um\n6.9,6.9\n" + "0,0,0,0\n" * 4)
    hf = load_heightfield(p)
    assert hf.data.size == 16 and not hf.data.any()
    assert hf.pitch_x == 6.9


def test_csv_round_trip(tmp_path):
    hf = Heightfield(np.random.default_rng(1).normal(0, 0.01, (5, 6)))
    save_csv(hf, tmp_path / "a.csv")
    assert load_heightfield(tmp_path / "a.csv") == hf


def test_header_width_zero_rejected():
    buf = struct.pack("<4sIIIdd", b"HFLD", 1, 0, 4, 6.9, 6.9)
    with pytest.raises(HeightfieldFormatError, match="width is 0 at byte offset 8"):
        decode_hfld(buf)


@pytest.mark.parametrize(
    "buf, where",
    [
        (b"HFLD\x01\x00", "truncated header"),
        (struct.pack("<4sIIIdd", b"HFLX", 1, 2, 2, 6.9, 6.9) + bytes(16), "byte offset 0"),
        (struct.pack("<4sIIIdd", b"HFLD", 1, 2, 2, 6.9, 6.9) + bytes(12), "file ends at byte offset 44"),
        (struct.pack("<4sIIIdd", b"HFLD", 1, 2, 2, -1.0, 6.9) + bytes(16), "byte offset 16"),
    ],
)
def test_malformed_hfld_errors_are_located(buf, where):
    with pytest.raises(HeightfieldFormatError, match=where):
        decode_hfld(buf)


def test_non_finite_payload_names_cell():
    payload = np.zeros(6, dtype="<f4")
    payload[4] = np.inf
    buf = struct.pack("<4sIIIdd", b"HFLD", 1, 3, 2, 6.9, 6.9) + payload.tobytes()
    with pytest.raises(HeightfieldFormatError, match=r"x=1, y=1\), byte offset 48"):
        decode_hfld(buf)


def test_save_refuses_non_finite(tmp_path):
    hf = Heightfield.zeros(3, 3)
    object.__setattr__(hf, "data", np.array([[np.nan] * 3] * 3, dtype=np.float32))
    with pytest.raises(ValueError):
        save_heightfield(hf, tmp_path / "x.hfld")


@settings(max_examples=40, deadline=None)
@given(
    st.integers(1, 12),
    st.integers(1, 12),
    st.floats(0.1, 50),
    st.floats(0.1, 50),
    st.integers(0, 2**32 - 1),
)
def test_hfld_round_trip_is_bit_exact(w, h, px, py, seed):
    data = np.random.default_rng(seed).normal(0, 1, (h, w)).astype(np.float32)
    hf = Heightfield(data, px, py)
    buf = struct.pack("<4sIIIdd", b"HFLD", 1, w, h, px, py) + data.astype("<f4").tobytes()
    back = decode_hfld(buf)
    assert back == hf
    assert back.data.tobytes() == data.tobytes()


# --- sampling -----------------------------------------------------------------------


def test_bilinear_constant_and_affine():
    assert sample_bilinear(Heightfield(np.full((5, 5), 2.5)), 1.3, 3.7) == pytest.approx(2.5)
    ramp = Heightfield(np.tile(np.arange(6, dtype=float), (4, 1)))
    assert sample_bilinear(ramp, 1.5, 2.0) == pytest.approx(1.5)


def test_bilinear_hand_case():
    assert sample_bilinear(Heightfield(np.array([[0.0, 1.0], [0.0, 1.0]])), 0.25, 0.5) == pytest.approx(0.25)


def test_bilinear_exact_at_integers():
    data = np.random.default_rng(3).normal(0, 1, (6, 7)).astype(np.float32)
    hf = Heightfield(data)
    for y in range(6):
        for x in range(7):
            assert sample_bilinear(hf, x, y) == float(data[y, x])


def test_bilinear_out_of_range():
    with pytest.raises(ValueError):
        sample_bilinear(Heightfield.zeros(4, 4), 3.5, 0)


# --- profiles -----------------------------------------------------------------------


def test_constant_field_profile():
    p = extract_profile(Heightfield(np.full((20, 20), 0.3)), LineSegment2D((0, 5), (15, 12)))
    assert np.allclose(p.samples, 0.3)
    assert profile_metrics(detrend_profile(p)) == profile_metrics(_profile(np.zeros(8)))


def test_ramp_profile_spacing_and_samples():
    # f(i, j) = i micrometres
    hf = Heightfield(np.tile(np.arange(12, dtype=float) / 1000.0, (3, 1)))
    p = extract_profile(hf, LineSegment2D((0, 1), (10, 1)))
    assert len(p.samples) == 11
    assert p.spacing == pytest.approx(0.0069)
    assert np.allclose(p.samples, np.arange(11) / 1000.0, atol=1e-9)


def test_profile_needs_eight_pixels():
    with pytest.raises(ValueError):
        extract_profile(Heightfield.zeros(20, 20), LineSegment2D((0, 0), (5, 0)))
    with pytest.raises(ValueError):
        extract_profile(Heightfield.zeros(20, 20), LineSegment2D((0, 0), (25, 0)))


def test_groove_minimum_sits_on_axis():
    spec = scratch_specimen(0.05, 0.1, angle_deg=90.0, length_px=100, size=128)
    hf = stamp_defect(Heightfield.zeros(128, 128), spec)
    probe = ideal_probe(spec, 40, 128, 128)
    p = extract_profile(hf, probe)
    imin = int(np.argmin(p.samples))
    # distance from the minimum sample to the groove axis (x = 63.5 for a centred groove)
    t = imin / (len(p.samples) - 1)
    x = probe.p0[0] + t * (probe.p1[0] - probe.p0[0])
    axis_x = spec.geometry.midpoint[0]
    assert abs(x - axis_x) <= 1.0


def test_detrend_flat_profile():
    d = detrend_profile(DepthProfile(np.full(20, 3.0), 0.01))
    assert np.allclose(d.samples, 0.0, atol=1e-12)
    assert d.trend_coeffs[0] == pytest.approx(3.0)
    assert d.trend_coeffs[1] == pytest.approx(0.0, abs=1e-12)


def test_detrend_edge_mean_is_zero():
    rng = np.random.default_rng(0)
    s = np.concatenate([rng.normal(0, 0.001, 10), -0.05 * np.ones(20), rng.normal(0, 0.001, 10)])
    d = detrend_profile(DepthProfile(s, 0.0069))
    k = math.ceil(0.25 * len(s))
    edges = np.concatenate([d.samples[:k], d.samples[-k:]])
    assert abs(edges.mean()) < 1e-9
    assert d.edge_count == k


def test_detrend_edge_fraction_checked():
    with pytest.raises(ValueError):
        detrend_profile(DepthProfile(np.zeros(10), 0.01), 0.5)


def test_groove_on_tilted_plane():
    spec = scratch_specimen(0.05, 0.1, angle_deg=90.0, length_px=100, size=128)
    hf = stamp_defect(Heightfield.zeros(128, 128), spec)
    # slope 0.01 mm/mm along x is 0.01 * 0.0069 mm per px
    hf = add_trend_and_noise(hf, (0.01 * 0.0069, 0.0))
    d = detrend_profile(extract_profile(hf, ideal_probe(spec, 40, 128, 128)))
    # the groove flank drops depth/half0 per mm; one sample of spacing is the quantum
    half0 = (0.1 + 0.0069) / 2 * 0.05 / 0.045
    assert abs(d.samples.min() + 0.05) <= 0.05 / half0 * d.spacing + 1e-6


@settings(max_examples=60, deadline=None)
@given(
    st.integers(8, 200),
    st.floats(-10, 10),
    st.floats(-0.5, 0.5),
    st.integers(0, 2**32 - 1),
)
def test_detrend_is_affine_invariant(n, a, b, seed):
    rng = np.random.default_rng(seed)
    s = rng.normal(0, 0.02, n)
    spacing = 0.0069
    x = np.arange(n) * spacing
    base = detrend_profile(DepthProfile(s, spacing))
    moved = detrend_profile(DepthProfile(s + a + b * x, spacing))
    assert np.max(np.abs(base.samples - moved.samples)) < 1e-9


# --- metrics ------------------------------------------------------------------------


def test_zero_profile_metrics():
    m = profile_metrics(_profile(np.zeros(30)))
    assert (m.depth, m.width, m.minima_count) == (0.0, 0.0, 0)


def test_rectangular_notch_metrics():
    s = np.zeros(40)
    s[15:25] = -0.03
    m = profile_metrics(_profile(s, 0.0069))
    assert m.depth == pytest.approx(0.03)
    assert m.width == pytest.approx(0.069)
    assert m.minima_count == 1


def test_five_notches_count_five():
    s = np.zeros(80)
    for k in range(5):
        s[10 + 12 * k : 14 + 12 * k] = -0.02
    assert profile_metrics(_profile(s)).minima_count == 5


def test_depth_counts_negative_excursions_only():
    s = np.zeros(30)
    s[10:15] = 0.2
    assert profile_metrics(_profile(s)).depth == 0.0


def test_width_zero_at_or_below_noise_floor():
    s = np.zeros(30)
    s[12:18] = -0.005
    m = profile_metrics(_profile(s))
    assert m.depth == pytest.approx(0.005) and m.width == 0.0


def test_plateau_minimum_reported_at_centre():
    assert local_minima(np.array([0, -1, -1, -1, 0, -2, -2, 0, 1, 0.0])) == [2, 5]


def test_shallow_wiggles_on_a_floor_do_not_count():
    # a wide floor with 2 um ripples: one minimum, not many
    s = np.zeros(60)
    s[15:45] = -0.03 + 0.002 * np.sin(np.arange(30))
    assert profile_metrics(_profile(s)).minima_count == 1


def test_depth_monotone_in_stamped_depth():
    depths = []
    for d in (0.012, 0.02, 0.035, 0.05, 0.08):
        spec = scratch_specimen(d, 0.1, angle_deg=30.0, length_px=100, size=128)
        hf = stamp_defect(Heightfield.zeros(128, 128), spec)
        depths.append(profile_metrics(detrend_profile(extract_profile(hf, ideal_probe(spec, 40, 128, 128)))).depth)
    assert depths == sorted(depths)
