import numpy as np
import pytest

from lithovid.classify import train_centroid
from lithovid.core import FrameGrid, StoneMask
from lithovid.phantom import training_stills
from lithovid.segmentation import OracleSegmenter


@pytest.fixture(scope="session")
def small_model():
    """Centroid model trained on a few stills per class; shared by unit tests."""
    return train_centroid(training_stills(1, 6))


@pytest.fixture(scope="session")
def oracle_factory():
    def factory(frames, truths):
        return OracleSegmenter.from_masks(truths)

    return factory


def make_frame(value=120, stream_index=0):
    return FrameGrid(np.full((256, 256, 3), value, dtype=np.uint8), stream_index=stream_index)


def make_mask(bits):
    return StoneMask(np.asarray(bits, dtype=bool))


def square_mask(side=256, size=100, at=(60, 60)):
    bits = np.zeros((side, side), dtype=bool)
    y, x = at
    bits[y : y + size, x : x + size] = True
    return StoneMask(bits)
