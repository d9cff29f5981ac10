import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dcvlc.config import ConfigError, SceneConfig, config_from_dict, default_config_text, parse_config
from dcvlc.scene import (
    SURFACES, PlacementError, build_scene, lambertian_order, make_patches, scene_dump, scene_hash,
    validate_scene,
)


# -- configuration -----------------------------------------------------------

def test_empty_document_gives_default_pod():
    assert parse_config("") == SceneConfig()
    cfg = parse_config("")
    assert (cfg.room.length, cfg.room.width, cfg.room.height) == (8.0, 8.0, 3.0)
    assert cfg.room.reflectance_walls_ceiling == 0.8
    assert cfg.room.reflectance_floor == 0.3
    assert cfg.room.communication_floor_height == 0.25
    assert cfg.light_units.semi_angle_deg == 70.0
    assert cfg.simulation.resolution_first == 0.05
    assert cfg.simulation.resolution_second == 0.20


def test_shipped_default_file_matches_defaults():
    assert parse_config(default_config_text()) == SceneConfig()


def test_zero_height_is_range_error():
    with pytest.raises(ConfigError) as info:
        parse_config("room:\n  height: 0\n")
    assert info.value.kind == "range"
    assert "room.height" in str(info.value)


def test_negative_dimension_is_range_error():
    with pytest.raises(ConfigError) as info:
        config_from_dict({"racks": {"depth": -1.0}})
    assert info.value.kind == "range"


def test_unknown_key_names_the_key():
    with pytest.raises(ConfigError) as info:
        parse_config("romo:\n  length: 8\n")
    assert info.value.kind == "schema"
    assert "romo" in str(info.value)


def test_nested_unknown_key():
    with pytest.raises(ConfigError, match="lenght"):
        parse_config("room:\n  lenght: 8\n")


def test_malformed_yaml():
    with pytest.raises(ConfigError):
        parse_config("room: [unclosed\n")


def test_reflectance_out_of_range():
    with pytest.raises(ConfigError) as info:
        config_from_dict({"room": {"reflectance_floor": 1.5}})
    assert info.value.kind == "range"


# -- Lambertian order ----------------------------------------------------------

def test_lambertian_order_examples():
    assert lambertian_order(60.0) == pytest.approx(1.0, rel=1e-12)
    # -ln2 / ln(cos 70 deg), evaluated independently
    assert lambertian_order(70.0) == pytest.approx(0.646058770348734, rel=1e-12)
    # wide beams tend to order 0, narrow beams to large orders
    assert lambertian_order(89.9) == pytest.approx(0.10910, rel=1e-3)
    assert lambertian_order(3.0) > 390


@pytest.mark.parametrize("angle", [0.0, 90.0, -5.0, 120.0])
def test_lambertian_order_rejects_out_of_range(angle):
    with pytest.raises(ValueError):
        lambertian_order(angle)


@given(st.floats(0.5, 89.5), st.floats(0.01, 10.0))
def test_lambertian_order_increases_as_angle_decreases(a, delta):
    b = a - delta
    if b <= 0.1:
        return
    assert lambertian_order(b) > lambertian_order(a)


# -- geometry ----------------------------------------------------------------

def test_default_unit_positions(default_scene):
    assert np.allclose(default_scene.unit(5).position, [4.0, 4.0, 3.0])
    assert np.allclose(default_scene.unit(1).position, [1.8, 2.0, 3.0])
    assert len(default_scene.light_units) == 9
    for u in default_scene.light_units:
        assert np.allclose(u.emitter.orientation, [0, 0, -1])
        assert u.ld_count == 16


def test_default_racks_and_receivers(default_scene):
    assert len(default_scene.racks) == 30
    assert [r.row for r in default_scene.racks] == [1] * 10 + [2] * 10 + [3] * 10
    for r in default_scene.racks:
        assert r.top_centre[2] < default_scene.room.height
    rx = [p[0] for p in default_scene.receiver_positions]
    assert np.allclose(rx, [[1.8, 4.0, 2.0], [4.0, 4.0, 2.0], [6.2, 4.0, 2.0]])


def test_ceiling_patch_counts(default_scene):
    assert default_scene.patches_first.count("ceiling") == 25600
    assert default_scene.patches_second.count("ceiling") == 1600
    assert default_scene.patches_first.count("wall_s") == 160 * 60


@pytest.mark.parametrize("res", [0.05, 0.2, 0.3])
def test_patch_areas_tile_each_surface(res):
    room = build_scene().room
    grid = make_patches(room, res)
    for s in SURFACES:
        assert grid.total_area(s) == pytest.approx(room.surface_area(s), rel=1e-9)
    assert np.all(grid.areas > 0)


def test_patches_on_surface_and_inward(default_scene):
    room = default_scene.room
    for grid in (default_scene.patches_first, default_scene.patches_second):
        to_centre = room.centre - grid.centres
        assert np.all(np.einsum("ij,ij->i", grid.normals, to_centre) > 0)
        assert np.allclose(np.linalg.norm(grid.normals, axis=1), 1.0, atol=1e-9)
        # each centre lies on the plane its normal belongs to
        for k, s in enumerate(SURFACES):
            c = grid.centres[grid.surface_index == k]
            axis, value = {"ceiling": (2, 3.0), "floor": (2, 0.0), "wall_s": (1, 0.0),
                           "wall_n": (1, 8.0), "wall_w": (0, 0.0), "wall_e": (0, 8.0)}[s]
            assert np.all(c[:, axis] == value)
        assert np.all(grid.reflectance[grid.surface_index == 1] == 0.3)
        assert np.all(grid.reflectance[grid.surface_index != 1] == 0.8)


def test_patch_ordering_is_row_major():
    grid = make_patches(build_scene().room, 2.0)
    ceiling = grid.centres[grid.surface_index == 0]
    assert ceiling[:3].tolist() == [[1.0, 1.0, 3.0], [1.0, 3.0, 3.0], [1.0, 5.0, 3.0]]


def test_build_is_deterministic():
    a, b = build_scene(), build_scene()
    assert json.dumps(scene_dump(a, True)) == json.dumps(scene_dump(b, True))
    assert scene_hash(a) == scene_hash(b)


def test_hash_tracks_configuration():
    a = build_scene()
    b = build_scene(config_from_dict({"room": {"reflectance_floor": 0.31}}))
    assert scene_hash(a) != scene_hash(b)


def test_rack_outside_room_is_placement_error():
    with pytest.raises(PlacementError):
        build_scene(config_from_dict({"racks": {"row_x": [1.8, 4.0, 7.8]}}))


def test_unit_outside_room_is_placement_error():
    with pytest.raises(PlacementError):
        build_scene(config_from_dict({"light_units": {"positions": [[4.0, 4.0, 3.5]]}}))


# -- validation --------------------------------------------------------------

def test_default_pod_validates_clean(default_scene):
    assert validate_scene(default_scene) == []


def test_receiver_below_communication_floor():
    # racks 0.1 m tall put the receivers at z = 0.1
    scene = build_scene(config_from_dict({"racks": {"height": 0.1}}))
    diags = validate_scene(scene)
    assert any("below communication floor" in d.message for d in diags)
    assert all(d.level == "error" for d in diags if "communication floor" in d.message)


def test_zero_height_rack_is_flagged():
    scene = build_scene()
    rack = scene.racks[0]
    object.__setattr__(rack, "height", 0.0)
    try:
        assert any("rack 1" in d.message for d in validate_scene(scene))
    finally:
        object.__setattr__(rack, "height", 2.0)


def test_overlapping_racks_are_flagged():
    scene = build_scene(config_from_dict({"racks": {"row_x": [1.8, 2.2, 6.2]}}))
    assert any(d.code == "rack-overlap" for d in validate_scene(scene))


def test_bad_patch_reflectance_is_flagged():
    scene = build_scene(config_from_dict({"simulation": {"resolution_first": 1.0, "resolution_second": 1.0}}))
    scene.patches_first.reflectance[0] = 1.2
    assert any(d.code == "reflectance" for d in validate_scene(scene))


def test_scene_dump_contents(default_scene):
    d = scene_dump(default_scene)
    assert d["room"]["length"] == 8.0
    assert len(d["racks"]) == 30
    assert len(d["light_units"]) == 9
    assert sum(d["patches_first"]["counts"].values()) == len(default_scene.patches_first)
    assert "centres" not in d["patches_first"]
    assert math.isclose(d["light_units"][0]["lambertian_order"], 0.646058770348734, rel_tol=1e-12)
