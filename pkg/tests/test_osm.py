import json

import numpy as np
import pytest
import shapely

from conftest import TILE, fc, unit_box
from oracles import fixture_layers, pixel_composition, random_fixture
from urbandiff.osm import (
    CATEGORIES, CompositionTable, GeoJSONError, assemble_tile_features, bbox_area, building_metrics,
    clip_to_bbox, density_bin, designation_candidate, is_concentrated, landuse_composition,
    landuse_fallback_from_buildings, load_city_layers, load_layer, settlement_type, tag_lookup,
    load_tag_map, TileFeatures,
)
from urbandiff.synthetic import tile_point
from urbandiff.tiles import TileId, tile_to_bbox

BBOX = tile_to_bbox(TILE)


def ring(u0, v0, u1, v1, close=True):
    pts = [tile_point(TILE, u, v) for u, v in ((u0, v0), (u1, v0), (u1, v1), (u0, v1))]
    return pts + [pts[0]] if close else pts


def write_fc(path, features):
    path.write_text(json.dumps({"type": "FeatureCollection", "features": features}))
    return path


def poly_feature(coords, props):
    return {"type": "Feature", "geometry": {"type": "Polygon", "coordinates": [coords]}, "properties": props}


def shoelace(xy):
    x, y = np.asarray(xy).T
    x, y = x - x.mean(), y - y.mean()  # large Mercator offsets cancel badly
    return 0.5 * abs(np.dot(x, np.roll(y, 1)) - np.dot(y, np.roll(x, 1)))


def composition_of(*items, traffic=()):
    return landuse_composition(fc("landuse", *items), fc("traffic", *traffic), BBOX).proportions


# loading


def test_load_three_polygons(tmp_path):
    p = write_fc(tmp_path / "landuse.geojson",
                 [poly_feature(ring(0, i / 3, 1, (i + 1) / 3), {"landuse": "residential"}) for i in range(3)])
    out = load_layer(p, "landuse")
    assert len(out) == 3 and out.report.dropped == 0


def test_unclosed_ring_dropped_or_closed(tmp_path):
    feats = [poly_feature(ring(0, 0, 1, 0.3), {"landuse": "residential"}),
             poly_feature(ring(0, 0.3, 1, 0.6), {"landuse": "commercial"}),
             poly_feature(ring(0, 0.6, 1, 0.9, close=False), {"landuse": "industrial"})]
    p = write_fc(tmp_path / "landuse.geojson", feats)
    dropped = load_layer(p, "landuse")
    assert len(dropped) == 2 and dropped.report.dropped_unclosed == 1
    closed = load_layer(p, "landuse", close_rings=True)
    assert len(closed) == 3 and closed.report.repaired == 1


def test_wrong_kind_and_missing_tags(tmp_path):
    feats = [{"type": "Feature", "geometry": {"type": "Point", "coordinates": tile_point(TILE, .5, .5)},
              "properties": {"landuse": "residential"}},
             poly_feature(ring(0, 0, 1, 1), {"name": "no class"}),
             poly_feature(ring(0, 0, 1, 1), {"landuse": "residential"})]
    out = load_layer(write_fc(tmp_path / "landuse.geojson", feats), "landuse")
    assert len(out) == 1
    assert out.report.dropped_kind == 1 and out.report.dropped_tags == 1


def test_buildings_need_no_tags(tmp_path):
    out = load_layer(write_fc(tmp_path / "b.geojson", [poly_feature(ring(0, 0, .1, .1), {})]), "buildings")
    assert len(out) == 1


def test_self_intersecting_polygon_repaired(tmp_path):
    a, b, c, d = (tile_point(TILE, u, v) for u, v in ((0, 0), (1, 1), (1, 0), (0, 1)))
    out = load_layer(write_fc(tmp_path / "l.geojson", [poly_feature([a, b, c, d, a], {"landuse": "forest"})]),
                     "landuse")
    assert len(out) == 1 and out.features[0].geometry.is_valid and out.report.repaired == 1


def test_parse_error_reports_position(tmp_path):
    p = tmp_path / "bad.geojson"
    p.write_text('{"type": "FeatureCollection",\n "features": [,]}')
    with pytest.raises(GeoJSONError, match=r"bad.geojson:2:\d+"):
        load_layer(p, "landuse")


def test_unknown_layer(tmp_path):
    with pytest.raises(ValueError):
        load_layer(tmp_path / "x.geojson", "parks")


def test_missing_layer_file_named(tmp_path, micro_city):
    root, _ = micro_city
    (root / "testville" / "places.geojson").unlink()
    with pytest.raises(FileNotFoundError, match="places.geojson"):
        load_city_layers(root / "testville")


def test_tag_lookup_key_order():
    spec = load_tag_map()["landuse"]
    assert tag_lookup({"landuse": "retail"}, spec) == "commercial"
    assert tag_lookup({"leisure": "park"}, spec) == "recreational"
    assert tag_lookup({"landuse": "quarry-ish"}, spec) is None


# clipping


def test_clip_inside_outside_and_oversized():
    inside = unit_box(TILE, .2, .2, .4, .4)
    outside = unit_box(TILE, 1.5, 1.5, 1.9, 1.9)
    big = unit_box(TILE, -0.5, -0.5, 1.5, 1.5)
    out = clip_to_bbox(fc("landuse", (inside, {}), (outside, {}), (big, {})), BBOX)
    assert len(out) == 2
    assert out.features[0].geometry.equals(inside)
    clipped = out.features[1].geometry
    assert shoelace(clipped.exterior.coords) == pytest.approx(bbox_area(BBOX), rel=1e-9)


def test_clip_idempotent():
    g = unit_box(TILE, -0.3, 0.2, 0.7, 1.4)
    once = clip_to_bbox(fc("landuse", (g, {})), BBOX)
    twice = clip_to_bbox(once, BBOX)
    assert once.features[0].geometry.equals(twice.features[0].geometry)


# composition


def test_composition_85_10():
    comp = composition_of((unit_box(TILE, 0, 0, 1, .85), {"landuse": "residential"}),
                          (unit_box(TILE, 0, .85, 1, .95), {"landuse": "commercial"}))
    assert comp["residential"] == pytest.approx(0.85, abs=1e-9)
    assert comp["commercial"] == pytest.approx(0.10, abs=1e-9)
    assert sum(v for k, v in comp.items() if k not in ("residential", "commercial")) == 0


def test_composition_empty():
    table = landuse_composition(fc("landuse"), fc("traffic"), BBOX)
    assert all(v == 0 for v in table.proportions.values()) and table.coverage == 0


def test_overlapping_same_category_unioned():
    # two 60% rectangles overlapping by 20%: union is 100%
    comp = composition_of((unit_box(TILE, 0, 0, 1, .6), {"landuse": "residential"}),
                          (unit_box(TILE, 0, .4, 1, 1), {"landuse": "residential"}))
    assert comp["residential"] == pytest.approx(1.0, abs=1e-9)


def test_disjoint_coverage_adds():
    table = landuse_composition(fc("landuse", (unit_box(TILE, 0, 0, 1, .4), {"landuse": "residential"}),
                                   (unit_box(TILE, 0, .4, 1, .75), {"landuse": "farmland"})), fc("traffic"), BBOX)
    assert table.coverage == pytest.approx(0.75, abs=1e-9)


def test_overlap_goes_to_precedence_and_parking_from_traffic():
    comp = composition_of((unit_box(TILE, 0, 0, 1, .5), {"landuse": "residential"}),
                          (unit_box(TILE, 0, 0, .5, .5), {"landuse": "forest"}),
                          (unit_box(TILE, 0, .5, 1, 1), {"landuse": "parking"}),
                          traffic=[(unit_box(TILE, .5, 0, 1, .1), {"fclass": "parking"})])
    assert comp["forest"] == pytest.approx(0.25, abs=1e-9)
    assert comp["parking"] == pytest.approx(0.05, abs=1e-9)
    assert comp["residential"] == pytest.approx(0.20, abs=1e-9)
    assert sum(comp.values()) <= 1 + 1e-12


@pytest.mark.parametrize("seed", range(5))
def test_composition_matches_pixel_oracle(seed):
    polys = random_fixture(seed, TILE)
    lu, tr = fixture_layers(TILE, polys)
    comp = landuse_composition(lu, tr, BBOX).proportions
    px = pixel_composition(polys, 512)
    for c in CATEGORIES:
        assert comp[c] == pytest.approx(px[c], abs=0.01)


# buildings and settlements


@pytest.mark.parametrize("cov,expected", [(0.32, "high"), (0.30, "high"), (0.15, "medium"),
                                          (0.149, "low"), (0.03, "low"), (0.02, "none"), (0.0, "none")])
def test_density_bin(cov, expected):
    assert density_bin(cov) == expected


def test_building_metrics_ranked_by_area():
    b = fc("buildings",
           (unit_box(TILE, 0, 0, .5, .4), {"building": "apartments"}),
           (unit_box(TILE, .5, 0, 1, .2), {"building": "terrace"}),
           (unit_box(TILE, 0, .5, .1, .52), {"building": "house"}),  # 0.002, under a tenth of the typed area
           (unit_box(TILE, 0, .8, 1, .9), {"building": "yes"}))
    m = building_metrics(b, BBOX)
    assert m.coverage == pytest.approx(0.2 + 0.1 + 0.002 + 0.1, abs=1e-9)
    assert m.density_bin == "high"
    assert m.residential_types == ["apartment complexes", "townhouses"]


def places(*items):
    return fc("places", *[(g, {"place": k}) for g, k in items])


def test_settlement_secondary_strictly_above():
    st = settlement_type(places((unit_box(TILE, 0, 0, 1, .8), "city"), (unit_box(TILE, 0, .6, 1, 1), "town")),
                         BBOX)
    assert st.primary == "city" and st.secondary == ["town"]
    st = settlement_type(places((unit_box(TILE, 0, 0, 1, .8), "city"), (unit_box(TILE, 0, .65, 1, 1), "town")),
                         BBOX)
    assert st.secondary == []


def test_settlement_village_only_and_default():
    st = settlement_type(places((unit_box(TILE, -1, -1, 2, 2), "village")), BBOX)
    assert (st.primary, st.secondary, st.fallback) == ("village", [], False)
    st = settlement_type(fc("places"), BBOX)
    assert st.primary == "city" and st.fallback


# building fallback


def test_fallback_credits_residential_footprints():
    comp = landuse_composition(fc("landuse"), fc("traffic"), BBOX)
    b = fc("buildings", (unit_box(TILE, 0, 0, .5, .4), {"building": "house"}))
    out = landuse_fallback_from_buildings(comp, b, BBOX)
    assert out.proportions["residential"] == pytest.approx(0.20, abs=1e-9)


def test_fallback_no_untagged_land_or_no_classes():
    full = landuse_composition(fc("landuse", (unit_box(TILE, 0, 0, 1, 1), {"landuse": "farmland"})),
                               fc("traffic"), BBOX)
    b = fc("buildings", (unit_box(TILE, 0, 0, .5, .4), {"building": "house"}))
    assert landuse_fallback_from_buildings(full, b, BBOX).proportions == full.proportions
    empty = landuse_composition(fc("landuse"), fc("traffic"), BBOX)
    untyped = fc("buildings", (unit_box(TILE, 0, 0, .5, .4), {"building": "yes"}))
    assert landuse_fallback_from_buildings(empty, untyped, BBOX).proportions == empty.proportions


def test_fallback_only_on_untagged_part():
    comp = landuse_composition(fc("landuse", (unit_box(TILE, 0, 0, 1, .5), {"landuse": "commercial"})),
                               fc("traffic"), BBOX)
    b = fc("buildings", (unit_box(TILE, 0, .25, 1, .75), {"building": "apartments"}))
    out = landuse_fallback_from_buildings(comp, b, BBOX).proportions
    assert out["commercial"] == pytest.approx(0.5, abs=1e-9)
    assert out["residential"] == pytest.approx(0.25, abs=1e-9)


# designation


def table(**shapes):
    return landuse_composition(fc("landuse", *[(g, {"landuse": k}) for k, g in shapes.items()]),
                               fc("traffic"), BBOX)


def test_designation_top_right_block():
    d = designation_candidate(table(industrial=unit_box(TILE, .5, 0, 1, .5)), BBOX, seed=0)
    assert (d.category, d.centroid_h, d.centroid_v) == ("industrial", "right", "upper")
    assert d.share == pytest.approx(0.25, abs=1e-9)
    assert d.position == "upper right" and d.color == "purple"


def test_designation_center_position():
    d = designation_candidate(table(commercial=unit_box(TILE, .3, .3, .7, .7)), BBOX, seed=0)
    assert d.position == "center"


def test_designation_share_bounds():
    assert designation_candidate(table(residential=unit_box(TILE, 0, 0, 1, .85)), BBOX, 0) is None
    assert designation_candidate(table(residential=unit_box(TILE, 0, 0, .2, .2)), BBOX, 0) is None


def test_designation_needs_concentration():
    split = shapely.union_all([unit_box(TILE, 0, 0, .3, .2), unit_box(TILE, .7, .8, 1, 1)])
    lu = fc("landuse", (split, {"leisure": "park"}))
    comp = landuse_composition(lu, fc("traffic"), BBOX)
    assert comp.proportions["recreational"] == pytest.approx(0.12, abs=1e-9)
    assert not is_concentrated(comp.geometries["recreational"], BBOX.mercator_bounds())
    assert designation_candidate(comp, BBOX, 0) is None


def test_designation_excludes_water():
    lu = fc("landuse", (unit_box(TILE, 0, 0, 1, .2), {"natural": "water"}))
    assert designation_candidate(landuse_composition(lu, fc("traffic"), BBOX), BBOX, 0) is None


def test_designation_seeded_choice():
    comp = table(commercial=unit_box(TILE, 0, 0, 1, .2), industrial=unit_box(TILE, 0, .7, 1, 1))
    picks = {designation_candidate(comp, BBOX, s).category for s in range(20)}
    assert picks == {"commercial", "industrial"}
    assert designation_candidate(comp, BBOX, 3).category == designation_candidate(comp, BBOX, 3).category


# assembly


def test_micro_city_tile_features(micro_city):
    root, tiles = micro_city
    layers = load_city_layers(root / "testville")
    f = assemble_tile_features(layers, tiles[0], "testville", seed=0)
    # profile 0: bands 0.55 residential, 0.15 commercial, 0.20 industrial
    assert f.composition["residential"] == pytest.approx(0.55, abs=1e-6)
    assert f.composition["commercial"] == pytest.approx(0.15, abs=1e-6)
    assert f.composition["industrial"] == pytest.approx(0.20, abs=1e-6)
    assert f.coverage == pytest.approx(0.90, abs=1e-6)
    # 6 x 2 footprints of (0.58/6) x (0.29 * 0.55)
    assert f.building_coverage == pytest.approx(0.58 * 0.58 * 0.55, abs=1e-6)
    assert f.density_bin == "medium"
    assert f.residential_types == ["single-family homes"]
    assert (f.settlement_primary, f.settlement_secondary, f.settlement_fallback) == ("city", [], False)
    assert f.designation.category in ("commercial", "industrial")
    expected_pos = {"commercial": "center", "industrial": "lower central"}
    assert f.designation.position == expected_pos[f.designation.category]
    assert TileFeatures.from_dict(json.loads(json.dumps(f.to_dict()))).to_dict() == f.to_dict()


def test_empty_layers_zero_features():
    f = assemble_tile_features({}, TILE, "nowhere")
    assert f.coverage == 0 and f.building_coverage == 0 and f.density_bin == "none"
    assert f.designation is None and f.settlement_fallback


def test_composition_table_coverage_capped():
    assert CompositionTable({"residential": 0.7, "commercial": 0.5}).coverage == 1.0
