import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

CACHE_ROOT = Path(__file__).parent / "_cache"

# quick models for plumbing tests: tiny schedule, tiny net, seconds to train
TINY_OVERRIDES = [
    ("dataset", "n_scenes", "16"),
    ("schedule", "t_steps", "20"),
    ("training", "denoiser_steps", "120"),
    ("training", "denoiser_hidden", "8,8"),
    ("training", "classifier_epochs", "30"),
    ("run", "n_scenes", "3"),
]


def cached_experiment(tag: str, overrides):
    """Train checkpoints once per tag; later runs reuse the cache dir."""
    from semcom.cli import cmd_train, load_experiment

    exp = load_experiment(None, CACHE_ROOT / tag, overrides)
    if not exp.denoiser_path().exists():
        cmd_train(exp, "denoiser")
    if not exp.classifier_path().exists():
        cmd_train(exp, "classifier")
    return exp


@pytest.fixture(scope="session")
def tiny_experiment():
    return cached_experiment("tiny", TINY_OVERRIDES)
