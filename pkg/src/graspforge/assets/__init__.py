"""Bundled fixture robots (regenerate with scripts/make_fixture_robots.py)."""
from pathlib import Path

ASSET_DIR = Path(__file__).resolve().parent

TOY_HAND = ASSET_DIR / "toy_hand" / "toy_hand.urdf"
GRIPPER = ASSET_DIR / "gripper" / "gripper.urdf"

# 112 palm + 10 x 40 phalanx samples = 512 robot points
TOY_HAND_COUNTS = [112] + [40] * 10
GRIPPER_COUNTS = [64, 224, 224]
