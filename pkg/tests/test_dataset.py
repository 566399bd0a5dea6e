import csv
import shutil

import pytest
from PIL import Image

from adlayout.config import fixture_path
from adlayout.errors import DatasetError, MalformedAnnotation, MissingImage
from adlayout.dataset import Manifest, import_dataset
from adlayout.layout import Rect

SOURCE = fixture_path("dataset", "source")


def boxes(layout):
    return [(e.category.value, e.rect.as_tuple()) for e in layout.elements]


def test_fixture_import(tmp_path):
    manifest = import_dataset(SOURCE)
    assert [e.id for e in manifest.entries] == ["s001", "s002", "s003"]
    s001, _, s003 = manifest.entries
    assert (s001.width, s001.height) == (204, 300)
    assert s001.layout.canvas == Rect(0, 0, 102, 150)
    # native boxes halve exactly
    assert boxes(s001.layout) == [("text", (2, 113, 95, 10)), ("text", (2, 124, 95, 9)), ("underlay", (0, 111, 102, 24))]
    # odd sizes round half up: 45/2 -> 23, 25/2 -> 13, 21/2 -> 11
    assert boxes(s003.layout)[:2] == [("logo", (75, 4, 23, 13)), ("text", (10, 15, 80, 11))]
    assert s001.saliency.name == "s001.png"
    assert s003.saliency is None
    assert not manifest.missing_images and not manifest.malformed_rows


def test_manifest_round_trip(tmp_path):
    manifest = import_dataset(SOURCE)
    path = manifest.save(tmp_path / "out" / "manifest.json")
    back = Manifest.load(path.parent)
    assert [(e.id, e.image.resolve(), e.layout) for e in back.entries] == [
        (e.id, e.image.resolve(), e.layout) for e in manifest.entries
    ]


def test_shipped_manifest_matches_import(manifest):
    fresh = import_dataset(SOURCE)
    assert [(e.id, e.layout, e.image.resolve()) for e in manifest.entries] == [
        (e.id, e.layout, e.image.resolve()) for e in fresh.entries
    ]


def test_empty_directory(tmp_path):
    shutil.copy(SOURCE / "annotations.csv", tmp_path / "annotations.csv")
    with pytest.raises(MissingImage) as info:
        import_dataset(tmp_path)
    assert info.value.missing == ["s001", "s002", "s003"]


def test_partial_dataset_collects_problems(tmp_path):
    shutil.copytree(SOURCE, tmp_path / "src")
    (tmp_path / "src" / "images" / "s002.png").unlink()
    with open(tmp_path / "src" / "annotations.csv", "a", newline="") as fh:
        csv.writer(fh).writerow(["s001", "button", 1, 1, 1, 1])
    manifest = import_dataset(tmp_path / "src")
    assert [e.id for e in manifest.entries] == ["s001", "s003"]
    assert manifest.missing_images == ["s002"]
    assert len(manifest.malformed_rows) == 1
    with pytest.raises(MissingImage):
        import_dataset(tmp_path / "src", strict=True)


def test_malformed_only_strict(tmp_path):
    shutil.copytree(SOURCE, tmp_path / "src")
    with open(tmp_path / "src" / "annotations.csv", "a", newline="") as fh:
        csv.writer(fh).writerow(["s001", "text", "a", 1, 1, 1])
    with pytest.raises(MalformedAnnotation):
        import_dataset(tmp_path / "src", strict=True)


def test_pku_format(tmp_path):
    (tmp_path / "images").mkdir()
    Image.new("RGB", (510, 750)).save(tmp_path / "images" / "12.png")
    with open(tmp_path / "train_csv_9974.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["poster_path", "cls_elem", "box_elem"])
        w.writerow(["images/12.png", 1, "[10, 565, 485, 615]"])
        w.writerow(["images/12.png", 3, "[0, 555, 510, 675]"])
        w.writerow(["images/12.png", 2, "[20, 20, 120, 70]"])
    manifest = import_dataset(tmp_path, "pku-posterlayout")
    assert boxes(manifest.entries[0].layout) == [
        ("text", (2, 113, 95, 10)),
        ("underlay", (0, 111, 102, 24)),
        ("logo", (4, 4, 20, 10)),
    ]


def test_unknown_kind_and_bad_manifest(tmp_path):
    with pytest.raises(DatasetError):
        import_dataset(SOURCE, "coco")
    (tmp_path / "manifest.json").write_text('{"version": 99, "entries": []}')
    with pytest.raises(DatasetError):
        Manifest.load(tmp_path)
    with pytest.raises(DatasetError):
        Manifest.load(tmp_path / "absent.json")
