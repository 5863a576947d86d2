import numpy as np
import pytest
import torch

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(autouse=True)
def _seed(monkeypatch):
    monkeypatch.delenv("MGNET_SEED", raising=False)
    torch.manual_seed(0)
    np.random.seed(0)


@pytest.fixture(scope="session")
def synth8(tmp_path_factory):
    from mgnet.data import load_dataset, synth_generate

    root = tmp_path_factory.mktemp("synth8")
    layout = synth_generate(8, 96, seed=0, out=root)
    return layout, list(load_dataset(layout, 96))


def randomize_bn(module, gen=None):
    """Give every BatchNorm non-trivial running statistics and affine params."""
    gen = gen or torch.Generator().manual_seed(123)
    for m in module.modules():
        if isinstance(m, torch.nn.BatchNorm2d):
            n = m.num_features
            m.running_mean.copy_(torch.randn(n, generator=gen) * 0.1)
            m.running_var.copy_(torch.rand(n, generator=gen) + 0.5)
            m.weight.data.copy_(torch.rand(n, generator=gen) + 0.5)
            m.bias.data.copy_(torch.randn(n, generator=gen) * 0.1)
    return module


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
