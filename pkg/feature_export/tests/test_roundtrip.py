"""Round-trip acceptance: exported files parse in the matching engine with
zero warnings, and self-matching on an exported map returns the annotated
point within one feature cell (top-1)."""
import logging
import math

import numpy as np
import pytest
from PIL import Image

contact_analogy = pytest.importorskip("contact_analogy")

from contact_analogy.features import FileFeatureSource, load_feature_map  # noqa: E402
from contact_analogy.geometry import Point2  # noqa: E402

from feature_export import ExportJob, export_features, variant_filename  # noqa: E402


@pytest.fixture(scope="module")
def exported(tmp_path_factory):
    d = tmp_path_factory.mktemp("roundtrip")
    h = w = 120
    ys, xs = np.mgrid[0:h, 0:w]
    head = (xs - 78) ** 2 + (ys - 60) ** 2 <= 16 * 16
    stick = (np.abs(ys - 60) <= 3) & (xs >= 30) & (xs <= 78)
    mask = head | stick
    texture = ((xs * 5 + ys * 3) % 83).astype(np.uint8) + 60
    image = np.where(mask, texture, 10).astype(np.uint8)
    Image.fromarray(image, "L").save(d / "image.png")
    Image.fromarray(np.where(mask, 255, 0).astype(np.uint8), "L").save(d / "mask.png")
    stem = d / "feat"
    export_features(ExportJob(image_path=d / "image.png", mask_path=d / "mask.png",
                              out_stem=stem, grid_n=24, variants="all",
                              backbone_id="tinycnn"))
    annotated = Point2(94, 60)  # far pole of the head, on the boundary
    return stem, mask, annotated


def test_files_parse_with_zero_warnings(exported, caplog):
    stem, _, _ = exported
    source = FileFeatureSource(stem)
    with caplog.at_level(logging.WARNING):
        for idx in range(24):
            from contact_analogy.geometry import PoseVariant
            fmap = source.map_for(PoseVariant(idx))
            assert fmap is not None
            assert fmap.rows == fmap.cols == 24
    assert source.warnings == 0
    assert not caplog.records


def test_self_match_top1_within_one_cell(exported):
    from contact_analogy.features import global_match
    from contact_analogy.geometry import BinaryMask, PoseVariant

    stem, mask_arr, annotated = exported
    mask = BinaryMask(mask_arr)
    source = FileFeatureSource(stem)
    f_ref = load_feature_map(variant_filename(stem, 0))
    result = global_match(f_ref, mask, annotated, 3, 3, source, ref_mask=mask)
    top = result[0]
    assert top.point.distance_to(annotated) <= f_ref.cell_size
    assert top.s_dino >= 0.999


def test_end_to_end_scene_with_exported_features(exported, tmp_path):
    """The engine's CLI consumes exported stems through a scene file."""
    import json

    from contact_analogy.cli import main as engine_main
    from contact_analogy.maskio import write_mask
    from contact_analogy.geometry import BinaryMask

    stem, mask_arr, annotated = exported
    mask = BinaryMask(mask_arr)
    write_mask(tmp_path / "tool.pgm", mask)
    write_mask(tmp_path / "object.pgm",
               BinaryMask(((np.mgrid[0:120, 0:120][1] - 60) ** 2
                           + (np.mgrid[0:120, 0:120][0] - 90) ** 2) <= 100))
    trajectory = {"poses": [{"t": 0.0, "theta": 0.0, "dx": 0.0, "dy": 0.0},
                            {"t": 1.0, "theta": 0.0, "dx": 3.0, "dy": 0.0}],
                  "contact_phase": None}
    scene = {
        "demo": {"tool_mask": "tool.pgm", "object_mask": "object.pgm",
                 "p_tool": [annotated.x, annotated.y], "p_object": [60.0, 80.0],
                 "trajectory": trajectory, "features": str(stem)},
        "target": {"tool_mask": "tool.pgm", "object_mask": "object.pgm",
                   "features": str(stem)},
        "config": {"contact_gap_max": 8.0},
    }
    scene_path = tmp_path / "scene.json"
    scene_path.write_text(json.dumps(scene))
    code = engine_main(["match", "--scene", str(scene_path), "--out", str(tmp_path)])
    assert code == 0
