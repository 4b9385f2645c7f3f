import numpy as np
import pytest
from PIL import Image

from vit_pyramid_export import ExportConfig, load_encoder

SMALL = (238, 140)  # (width, height): 17x10 patches at patch-14


@pytest.fixture(scope="session")
def encoder():
    # one ViT-L build shared by the fast tests (construction dominates)
    return load_encoder(ExportConfig(resize=SMALL, seed=5))


@pytest.fixture(scope="session")
def noise_image(tmp_path_factory):
    rng = np.random.default_rng(1)
    path = tmp_path_factory.mktemp("img") / "noise.png"
    Image.fromarray((rng.random((SMALL[1], SMALL[0], 3)) * 255).astype(np.uint8)).save(path)
    return path


@pytest.fixture(scope="session")
def constant_image(tmp_path_factory):
    path = tmp_path_factory.mktemp("img") / "const.png"
    Image.fromarray(np.full((SMALL[1], SMALL[0], 3), 128, dtype=np.uint8)).save(path)
    return path
