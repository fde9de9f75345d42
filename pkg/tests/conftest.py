from __future__ import annotations

import pytest

from hwrec.domain import HardwareProfile, ModelCard, TaskDescriptor


def make_card(model_id: str = "m1", features=(0.1, 0.2, 0.3), param_count: int = 1_000_000) -> ModelCard:
    return ModelCard(model_id, f"net-{model_id}", "resnet", param_count, features)


def make_hw(hw_id: str = "pi4", features=(1.0, 0.5)) -> HardwareProfile:
    return HardwareProfile(hw_id, "Raspberry Pi 4", "ARM Cortex-A72", 4, 1500.0, 4096.0, 32768.0, features)


def make_task(task_id: str = "cifar", features=(1.0, 0.3, 0.2), num_samples: int = 64) -> TaskDescriptor:
    return TaskDescriptor(task_id, "CIFAR-10", 10, num_samples, (3, 32, 32), features)


@pytest.fixture
def card():
    return make_card()


@pytest.fixture
def hw():
    return make_hw()


@pytest.fixture
def task():
    return make_task()
