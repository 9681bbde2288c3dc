import functools

import pytest
from hypothesis import settings

from multienc.codec import EncoderConfig, encode_representation
from multienc.media import synthesize

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


@functools.lru_cache(maxsize=None)
def clip(kind="checkerboard-pan", w=128, h=64, n=4, seed=1):
    return synthesize(kind, w, h, n, seed)


@functools.lru_cache(maxsize=None)
def encoded(kind="checkerboard-pan", w=128, h=64, n=4, qp=32, sr=4):
    return encode_representation(clip(kind, w, h, n), EncoderConfig(qp=qp, search_range=sr), keep_recon=True)


@pytest.fixture
def small_clip():
    return clip()


@pytest.fixture
def small_encode():
    return encoded()


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
