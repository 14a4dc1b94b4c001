import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from speech2face.config import smoke_config  # noqa: E402
from speech2face.evaluation.proxy import ProxyFaceModel  # noqa: E402
from speech2face.forge.dataset import synth_manifest  # noqa: E402

TINY = {
    "encoder.channels": [16, 16, 16, 16, 16],
    "fuser.dim": 16,
    "decoder.channels": [32, 16, 16, 8, 8, 8],
    "decoder.extra_channels": 4,
    "disc.channels": [8, 8, 8],
    "disc.extra_channels": 8,
    "disc.hidden": 16,
    "train.batch_size": 4,
    "train.stage1_iterations": 6,
    "train.stage2_iterations": 3,
    "train.stage2_audio_s": [2.0, 3.0],
    "data.n_identities": 4,
    "data.utterance_s": 3.0,
    "eval.runs": 2,
    "eval.audio_min_s": 2.0,
    "eval.audio_max_s": 3.0,
    "eval.ks": [1, 2],
}


def tiny_config(**overrides):
    merged = dict(TINY)
    merged.update(overrides)
    return smoke_config(**merged)


def tiny_proxy(n_classes=4):
    return ProxyFaceModel(n_classes, width=4, embed_dim=8).freeze()


@pytest.fixture(scope="session")
def tiny_manifest():
    """Four identities, all in the train split."""
    return synth_manifest(4, seed=1, faces_range=(3, 3), n_utterances=1, utterance_s=3.0, split=False)


# acceptance summary -------------------------------------------------------------------

ACCEPTANCE_RESULTS: dict = {}


def record_acceptance(number: int, title: str, passed: bool, detail: str):
    ACCEPTANCE_RESULTS[number] = (title, passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        title, passed, detail = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {number:2d}. {title}: {detail}")
