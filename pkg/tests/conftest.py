from __future__ import annotations

import pytest

import experiments


@pytest.fixture(scope="session")
def desk_pretrained():
    """500-step masked-LM run of the desk transformer on a 5k-line synthetic corpus."""
    return experiments.desk_pretrain()


@pytest.fixture(scope="session")
def binary_runs(desk_pretrained):
    """CharGRU and the fine-tuned desk transformer on the 2,000 + 2,000 binary task."""
    return experiments.char_gru_binary(), experiments.transformer_binary(desk_pretrained.checkpoint)


@pytest.fixture(scope="session")
def multiclass_run():
    return experiments.cnn_multiclass()
