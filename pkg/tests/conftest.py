import numpy as np
import pytest
import torch

from spinekp.data import PhantomSpec, generate_phantom_exam, save_exam


@pytest.fixture(scope="session")
def phantom_spec():
    return PhantomSpec(count=6, image_size=96, rng_seed=3, pixel_spacing=1.3125)


@pytest.fixture(scope="session")
def phantom_dir(tmp_path_factory, phantom_spec):
    root = tmp_path_factory.mktemp("phantoms")
    for i in range(phantom_spec.count):
        save_exam(root, *generate_phantom_exam(phantom_spec, i))
    return root


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(0)


ACCEPTANCE_LINES = []


def record_acceptance(number, passed, detail):
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
