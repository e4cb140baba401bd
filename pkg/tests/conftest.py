import numpy as np
import pytest

from contact_analogy.geometry import BinaryMask, Point2
from contact_analogy.shapes import annulus_mask, disk_mask, ellipse_mask, hook_mask, rod_mask


@pytest.fixture(scope="session")
def disk40():
    return disk_mask(160, (80, 80), 40)


@pytest.fixture(scope="session")
def disk20():
    return disk_mask(96, (48, 48), 20)


@pytest.fixture(scope="session")
def square10():
    cells = np.zeros((16, 16), dtype=bool)
    cells[3:13, 3:13] = True
    return BinaryMask(cells)


def boundary_point(mask: BinaryMask, angle_deg: float, center, radius) -> Point2:
    t = np.radians(angle_deg)
    return Point2(center[0] + radius * np.cos(t), center[1] + radius * np.sin(t))
