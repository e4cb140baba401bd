import numpy as np
import pytest

from contact_analogy.errors import FormatError
from contact_analogy.geometry import BinaryMask
from contact_analogy.maskio import read_mask, write_mask
from contact_analogy.shapes import disk_mask


@pytest.fixture
def blob():
    rng = np.random.default_rng(3)
    cells = rng.random((24, 31)) > 0.6
    cells[0, 0] = True
    return BinaryMask(cells)


def test_pgm_round_trip(tmp_path, blob):
    path = tmp_path / "m.pgm"
    write_mask(path, blob)
    back = read_mask(path)
    assert back == blob


def test_png_round_trip(tmp_path, blob):
    path = tmp_path / "m.png"
    write_mask(path, blob)
    back = read_mask(path)
    assert back == blob


def test_png_any_nonzero_is_foreground(tmp_path):
    from PIL import Image
    arr = np.zeros((12, 12), dtype=np.uint8)
    arr[4:8, 4:8] = 7  # faint but nonzero
    Image.fromarray(arr, mode="L").save(tmp_path / "faint.png")
    mask = read_mask(tmp_path / "faint.png")
    assert mask.foreground_count == 16


def test_pgm_bad_magic(tmp_path):
    path = tmp_path / "bad.pgm"
    path.write_bytes(b"P2\n4 4\n255\n" + b"0" * 16)
    with pytest.raises(FormatError):
        read_mask(path)


def test_pgm_truncated_raster(tmp_path):
    path = tmp_path / "short.pgm"
    path.write_bytes(b"P5\n10 10\n255\n" + b"\xff" * 20)
    with pytest.raises(FormatError):
        read_mask(path)


def test_pgm_comment_header(tmp_path):
    disk = disk_mask(16, (8, 8), 5)
    raster = np.where(disk.cells, 255, 0).astype(np.uint8).tobytes()
    path = tmp_path / "c.pgm"
    path.write_bytes(b"P5\n# a comment\n16 16\n255\n" + raster)
    assert read_mask(path) == disk
