import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from promptseg.backbone import EncoderConfig, ModelPreset
from promptseg.data import build_manifest
from promptseg.fixtures import generate_fixture


def tiny_preset() -> ModelPreset:
    """Small model for fast trainer/model tests."""
    return ModelPreset(
        name="tiny_test",
        encoder=EncoderConfig(
            image_size=32, patch_size=8, embed_dim=16, depth=2, num_heads=2,
            window_size=2, global_attn_indices=(1,),
        ),
        decoder_dim=16,
        decoder_heads=2,
        decoder_depth=1,
        decoder_mlp_dim=32,
        resize_to=32,
    )


@pytest.fixture
def fixture_manifests(tmp_path):
    """(train_manifest, test_manifest) over the same 4 synthetic images."""
    root = tmp_path / "fixture"
    generate_fixture(root, n_images=4, size=32, seed=0)
    train = build_manifest([root], "camouflage", "train", resize_to=32)
    test = build_manifest([root], "camouflage", "test", resize_to=32)
    return train, test
