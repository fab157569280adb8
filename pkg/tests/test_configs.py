"""Shipped config bundles must always parse and validate."""

import json
from pathlib import Path

import pytest

from automr.model import QuartzConfig, receptive_field
from automr.schema import DatasetSchema
from automr.synthetic import synthetic_schema

CONFIGS_DIR = Path(__file__).parent.parent / "configs"

SCHEMAS = sorted(CONFIGS_DIR.glob("*.schema.json"))
MODELS = sorted(CONFIGS_DIR.glob("*.model.json"))


@pytest.mark.parametrize("path", SCHEMAS, ids=[p.name for p in SCHEMAS])
def test_schema_bundle_validates(path):
    schema = DatasetSchema.load(path)
    assert schema.window_stride <= schema.window_length


@pytest.mark.parametrize("path", MODELS, ids=[p.name for p in MODELS])
def test_model_bundle_validates(path):
    cfg = QuartzConfig.from_dict(json.loads(path.read_text()))
    assert receptive_field(cfg) >= 1


def test_synthetic_bundle_matches_generator():
    shipped = DatasetSchema.load(CONFIGS_DIR / "synthetic-gestures.schema.json")
    assert shipped.to_dict() == synthetic_schema().to_dict()


def test_model_bundle_fits_its_schema():
    schema = DatasetSchema.load(CONFIGS_DIR / "imu-har-128.schema.json")
    cfg = QuartzConfig.from_dict(
        json.loads((CONFIGS_DIR / "imu-har-128.model.json").read_text())
    )
    assert cfg.in_channels == schema.num_channels
    assert cfg.num_classes == schema.num_classes
    assert receptive_field(cfg) <= schema.window_length
