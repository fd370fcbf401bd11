import numpy as np
import pytest

from icetrain import TrainConfig, UNetSpec, train

TOY_SPEC = UNetSpec(input_size=64, base_channels=8, dropout=0.0)
TOY_CONFIG = TrainConfig(batch_size=4, epochs=5, seed=1)


def separable_pairs(count=192, size=64, seed=3):
    """Deterministic corpus a pixel-color rule fully separates: banded
    tiles of the three class colors, interleaved with single-class tiles
    spanning each class's brightness range."""
    rng = np.random.default_rng(seed)
    base = np.array([[230, 230, 230], [150, 150, 160], [15, 25, 35]], np.int16)
    spans = ((215, 256), (140, 175), (5, 45))
    pairs = []
    for i in range(count):
        mask = np.zeros((size, size), np.int64)
        if i % 8 < 5:
            a, b = sorted(rng.integers(4, size - 4, 2))
            mask[:, a:b] = 1
            mask[:, b:] = 2
            noise = rng.integers(-6, 7, (size, size, 3))
            tile = np.clip(base[mask] + noise, 0, 255).astype(np.uint8)
        else:
            cls = i % 3
            lo, hi = spans[cls]
            mask[:] = cls
            noise = rng.integers(-4, 5, (size, size, 3))
            tile = np.clip(int(rng.integers(lo, hi)) + noise, 0, 255).astype(np.uint8)
        pairs.append((tile, mask))
    return pairs


@pytest.fixture(scope="session")
def toy_result():
    """One trained toy model shared by the inference tests."""
    return train(separable_pairs(), TOY_SPEC, TOY_CONFIG)
