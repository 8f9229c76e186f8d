import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import constants as csts

from fibertweezer import (BeamGeometry, UnsupportedRegimeError, beam_intensity, dipole_potential,
                          load_species, rayleigh_range, trap_depth, trap_frequencies,
                          trap_parameters, tweezer_geometry)


def test_rayleigh_range_values(frozen):
    assert rayleigh_range(1.4e-6, 810e-9) * 1e6 == pytest.approx(frozen["rayleigh_810_um"], rel=1e-12)
    assert rayleigh_range(1.4e-6, 780e-9) * 1e6 == pytest.approx(frozen["rayleigh_780_um"], rel=1e-12)
    assert rayleigh_range(2.8e-6, 810e-9) == pytest.approx(4 * rayleigh_range(1.4e-6, 810e-9))


@pytest.mark.parametrize("w0,lam", [(0, 810e-9), (1e-6, 0), (-1e-6, 810e-9)])
def test_rayleigh_range_rejects_nonpositive(w0, lam):
    with pytest.raises(ValueError):
        rayleigh_range(w0, lam)


def test_beam_intensity(frozen):
    g = tweezer_geometry(6.9e-3)
    assert beam_intensity(g, 0, 0) == pytest.approx(frozen["peak_intensity_6p9mW"], rel=1e-12)
    assert beam_intensity(g, 0, g.rayleigh_range) == pytest.approx(beam_intensity(g, 0, 0) / 2)
    assert beam_intensity(g, 50e-6, 0) < 1e-300


def test_beam_geometry_invariants():
    with pytest.raises(ValueError):
        BeamGeometry(waist_w0=300e-9, wavelength=810e-9, power=1e-3)
    with pytest.raises(ValueError):
        BeamGeometry(waist_w0=1e-6, wavelength=810e-9, power=-1.0)


def test_depth_matches_oracle(rb, frozen):
    assert trap_depth(rb, tweezer_geometry(6.9e-3)) * 1e3 == pytest.approx(frozen["depth_mK_6p9"], rel=1e-9)
    assert trap_depth(rb, tweezer_geometry(13.8e-3)) * 1e3 == pytest.approx(frozen["depth_mK_13p8"], rel=1e-9)


def test_depth_reference_values(rb):
    assert trap_depth(rb, tweezer_geometry(6.9e-3)) == pytest.approx(2.8e-3, rel=0.10)
    assert trap_depth(rb, tweezer_geometry(13.8e-3)) == pytest.approx(5.6e-3, rel=0.10)


def test_frequencies_match_hessian_oracle(rb, frozen):
    for power, key in ((6.9e-3, "6p9"), (13.8e-3, "13p8")):
        fr, fz = trap_frequencies(rb, tweezer_geometry(power))
        assert fr / 1e3 == pytest.approx(frozen[f"f_radial_kHz_{key}"], rel=1e-8)
        assert fz / 1e3 == pytest.approx(frozen[f"f_axial_kHz_{key}"], rel=1e-8)


def test_zero_power(rb):
    g = tweezer_geometry(0.0)
    assert dipole_potential(rb, g, 0, 0) == 0
    with pytest.raises(ValueError):
        trap_frequencies(rb, g)


def test_blue_detuning_rejected(rb):
    g = BeamGeometry(waist_w0=1.4e-6, wavelength=700e-9, power=1e-3)
    with pytest.raises(UnsupportedRegimeError):
        trap_depth(rb, g)
    g = BeamGeometry(waist_w0=1.4e-6, wavelength=787e-9, power=1e-3)
    with pytest.raises(UnsupportedRegimeError):
        trap_depth(rb, g)


def test_depth_exactly_linear_in_power(rb):
    base = trap_depth(rb, tweezer_geometry(1e-3))
    for p in (0.5e-3, 2e-3, 6.9e-3, 13.8e-3, 0.1):
        assert trap_depth(rb, tweezer_geometry(p)) == pytest.approx(base * p / 1e-3, rel=1e-14)


def test_frequencies_scale_as_sqrt_power(rb):
    f0 = np.array(trap_frequencies(rb, tweezer_geometry(1e-3)))
    for p in np.geomspace(1e-4, 0.1, 9):
        f = np.array(trap_frequencies(rb, tweezer_geometry(p)))
        np.testing.assert_allclose(f, f0 * np.sqrt(p / 1e-3), rtol=1e-12)


@settings(max_examples=40, deadline=None)
@given(r=st.floats(0, 1e-4), z=st.floats(-1e-3, 1e-3), power=st.floats(0, 0.05))
def test_potential_nonpositive(rb, r, z, power):
    assert dipole_potential(rb, tweezer_geometry(power), r, z) <= 0


def test_potential_vanishes_far_away(rb):
    g = tweezer_geometry(13.8e-3)
    u0 = dipole_potential(rb, g, 0, 0)
    assert abs(dipole_potential(rb, g, 20 * g.waist_w0, 0)) < 1e-12 * abs(u0)
    assert abs(dipole_potential(rb, g, 0, 1e4 * g.rayleigh_range)) < 1e-7 * abs(u0)


def test_quadratic_fit_near_origin(rb):
    g = tweezer_geometry(13.8e-3)
    fr, fz = trap_frequencies(rb, g)
    for axis, f_ref, scale in ((0, fr, g.waist_w0), (1, fz, g.rayleigh_range)):
        x = np.linspace(-scale / 50, scale / 50, 41)
        u = dipole_potential(rb, g, x, 0) if axis == 0 else dipole_potential(rb, g, 0, x)
        k = 2 * np.polyfit(x, u, 4)[2]
        f = np.sqrt(k / rb.mass) / (2 * np.pi)
        assert f == pytest.approx(f_ref, rel=1e-3)


def test_parameters_units_and_ordering(rb):
    tp = trap_parameters(rb, tweezer_geometry(13.8e-3))
    assert tp.depth_temperature == pytest.approx(tp.depth_energy / csts.k, rel=1e-15)
    assert tp.radial_frequency > tp.axial_frequency
    d = tp.as_dict()
    assert d["radial_frequency_kHz"] == pytest.approx(tp.radial_frequency / 1e3)
    assert d["rayleigh_range_um"] == pytest.approx(7.60, abs=0.01)


def test_species_defaults(rb):
    assert rb.d1_wavelength > rb.d2_wavelength
    assert rb.excited_lifetime * rb.d2_linewidth == pytest.approx(1, rel=0.05)
    assert rb.natural_linewidth_hz == pytest.approx(6.07e6, rel=1e-3)


def test_species_file_validation(tmp_path):
    good = tmp_path / "s.yaml"
    good.write_text("format_version: 1\nname: X\nmass: 1.0e-25\nd1_wavelength: 7.95e-7\n"
                    "d2_wavelength: 7.80e-7\nd1_linewidth: 3.6e7\nd2_linewidth: 3.8e7\n"
                    "excited_lifetime: 2.6e-8\nsaturation_intensity_cycling: 16.0\n")
    assert load_species(good).name == "X"
    bad = tmp_path / "b.yaml"
    bad.write_text(good.read_text() + "colour: blue\n")
    with pytest.raises(ValueError, match="unknown"):
        load_species(bad)
    old = tmp_path / "o.yaml"
    old.write_text(good.read_text().replace("format_version: 1", "format_version: 7"))
    with pytest.raises(ValueError, match="format_version"):
        load_species(old)
