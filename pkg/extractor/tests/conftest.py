import numpy as np
import pytest
import torch
from PIL import Image

from unifex_extractor import PooledVisionEncoder, SamStyleEncoder


class FakePooledEncoder(PooledVisionEncoder):
    """Tiny deterministic conv encoder standing in for a pretrained pooled model."""

    def __init__(self, dim=24, resolution=32):
        torch.manual_seed(1234)
        conv = torch.nn.Conv2d(3, dim, kernel_size=5, stride=3)
        conv.eval()

        def forward(batch):
            return conv(batch).mean(dim=(2, 3))

        super().__init__(
            "fake-pooled", resolution, (0.5, 0.5, 0.5), (0.5, 0.5, 0.5), forward, "test stub"
        )


class FakeSamEncoder(SamStyleEncoder):
    """Patch-only stub: trunk emits (B, H, W, 20), neck downscales to 8 channels."""

    def __init__(self, resolution=32):
        torch.manual_seed(99)
        trunk_conv = torch.nn.Conv2d(3, 20, kernel_size=4, stride=4)
        neck_conv = torch.nn.Conv2d(20, 8, kernel_size=1)
        trunk_conv.eval()
        neck_conv.eval()
        super().__init__(
            "fake-sam",
            resolution,
            (0.5, 0.5, 0.5),
            (0.5, 0.5, 0.5),
            trunk=lambda batch: trunk_conv(batch).permute(0, 2, 3, 1),
            neck=lambda feats: neck_conv(feats.permute(0, 3, 1, 2)),
        )


@pytest.fixture(scope="session")
def pooled_encoder():
    return FakePooledEncoder()


@pytest.fixture(scope="session")
def sam_encoder():
    return FakeSamEncoder()


@pytest.fixture(scope="session")
def image_corpus(tmp_path_factory):
    """Ten decodable PNGs of varied sizes plus one corrupt file."""
    root = tmp_path_factory.mktemp("images")
    rng = np.random.default_rng(7)
    paths = []
    for i in range(10):
        w, h = int(rng.integers(40, 90)), int(rng.integers(40, 90))
        arr = rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)
        path = root / f"img_{i}.png"
        Image.fromarray(arr).save(path)
        paths.append(path)
    corrupt = root / "broken.png"
    corrupt.write_bytes(b"this is not an image")
    return paths, corrupt


@pytest.fixture
def image_list(image_corpus, tmp_path):
    paths, _ = image_corpus
    list_path = tmp_path / "images.tsv"
    lines = [f"{p}\t{i % 3}\tdomain{i % 2}" for i, p in enumerate(paths)]
    list_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return list_path
