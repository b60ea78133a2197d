import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from skelwatch import dataset, indrnn  # noqa: E402
from skelwatch.skeleton import build_clip_features, sample_clip  # noqa: E402

DATA = Path(__file__).parent / "data"


def synth_feature_clips(spec):
    return [build_clip_features(sample_clip(c.frames), label=c.label) for c in dataset.generate_synthetic(spec)]


@pytest.fixture(scope="session")
def data_dir():
    return DATA


@pytest.fixture(scope="session")
def synth_model():
    """A small model trained on the 3-class synthetic set, shared by streaming tests."""
    spec = dataset.SynthSpec(num_classes=3, clips_per_class=60, seed=5)
    clips = synth_feature_clips(spec)
    cfg = indrnn.TrainConfig(hidden=32, epochs=15, batch_size=32, learning_rate=2e-3, seed=1)
    model, _ = indrnn.train(clips, cfg)
    return model


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    if acceptance is not None and acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in acceptance.RESULTS:
            terminalreporter.write_line(line)
