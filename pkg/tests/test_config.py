"""Configuration loading, validation, and resolved rendering."""

import numpy as np
import pytest

from headrest.config import Config, ConfigError, default_config, load_config


def test_defaults_typed_views():
    cfg = default_config()
    cam = cfg.camera()
    assert (cam.fx, cam.fy, cam.cx, cam.cy) == (600.0, 600.0, 320.0, 240.0)
    assert cfg.camera_distance == 0.8
    acc = cfg.accuracy_grid()
    assert (acc.nx, acc.ny, acc.nz, acc.spacing) == (7, 7, 3, 0.025)
    anc = cfg.anc_grid()
    assert (anc.nx, anc.ny, anc.nz) == (5, 5, 2)
    assert np.allclose(anc.origin, [0.0, 0.0, -0.0125])
    # the initial node sits exactly at the stage origin
    assert np.allclose(anc.node(*cfg.initial_node), [0.0, 0.0, 0.0])
    assert cfg.band == (80.0, 2000.0)
    assert cfg.repetitions == 100
    assert cfg.nr_seeds == 5
    assert cfg.fxlms().filter_taps == 256
    assert cfg.anc_angles_deg == (0.0, 15.0, 30.0, 45.0, 60.0)
    assert cfg.noise_enabled


def test_render_load_fixpoint(tmp_path):
    cfg = default_config()
    path = tmp_path / "full.ini"
    path.write_text(cfg.render())
    again = load_config(str(path))
    assert again.raw == cfg.raw
    assert again.render() == cfg.render()


def test_partial_file_overlays_defaults(tmp_path):
    path = tmp_path / "partial.ini"
    path.write_text("[accuracy_grid]\nrepetitions = 7\n")
    cfg = load_config(str(path))
    assert cfg.repetitions == 7
    assert cfg.accuracy_grid().nx == 7  # untouched default


def test_run_section_ignored(tmp_path):
    # CSV headers embed a [run] block; stripping '#' must stay loadable.
    path = tmp_path / "hdr.ini"
    path.write_text("[run]\ncommand = spectra\nseed = 3\n\n" + default_config().render())
    cfg = load_config(str(path))
    assert cfg.raw == default_config().raw


def test_unknown_section_rejected(tmp_path):
    path = tmp_path / "bad.ini"
    path.write_text("[speakers]\ncount = 3\n")
    with pytest.raises(ConfigError, match="unknown section"):
        load_config(str(path))


def test_unknown_key_rejected(tmp_path):
    path = tmp_path / "bad.ini"
    path.write_text("[camera]\nzoom = 2\n")
    with pytest.raises(ConfigError, match="unknown key"):
        load_config(str(path))


def test_missing_file_rejected(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(str(tmp_path / "nope.ini"))


@pytest.mark.parametrize(
    "section,key,value,fragment",
    [
        ("camera", "fx", "wide", "not a number"),
        ("anc_grid", "initial_node", "9 9 9", "outside grid"),
        ("anc_grid", "origin", "1 2", "expected 3 values"),
        ("observation", "noise", "maybe", "not on/off"),
        ("rotation", "anc_angles_deg", "30 15", "ascending"),
        ("acoustics", "band_low", "3000.0", "not ascending-positive"),
    ],
)
def test_bad_values_rejected(tmp_path, section, key, value, fragment):
    path = tmp_path / "bad.ini"
    path.write_text(f"[{section}]\n{key} = {value}\n")
    with pytest.raises(ConfigError, match=fragment):
        load_config(str(path))


def test_noise_toggle():
    cfg = default_config().with_noise(False)
    assert not cfg.noise_enabled
    obs = cfg.observation_model(5)
    assert obs.pixel_noise_sigma == 0.0
    assert obs.depth_noise_sigma_at_1m == 0.0
    assert obs.seed == 5
    # the occlusion threshold is geometry, not noise: it survives the toggle
    assert obs.occlusion_yaw_threshold == pytest.approx(np.deg2rad(25.0))
    assert "noise = off" in cfg.render()
    back = cfg.with_noise(True)
    assert back.observation_model(0).pixel_noise_sigma == 1.0


def test_with_value_unknown_key():
    with pytest.raises(ConfigError):
        default_config().with_value("camera", "zoom", "2")


def test_render_includes_run_block():
    text = default_config().render(run={"command": "spectra", "seed": 9})
    head = text.splitlines()[:3]
    assert head == ["[run]", "command = spectra", "seed = 9"]


def test_original_unchanged_by_with_value():
    cfg = default_config()
    changed = cfg.with_value("accuracy_grid", "repetitions", "3")
    assert cfg.repetitions == 100
    assert changed.repetitions == 3
