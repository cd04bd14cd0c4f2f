import pytest

from dsqa.config import desk_preset

TINY = {
    "transformer.num_layers": 1,
    "transformer.hidden_size": 16,
    "transformer.filter_size": 32,
    "transformer.num_heads": 2,
    "bottleneck.bits": 4,
    "bottleneck.filter_size": 16,
    "compressor.pretrain_steps": 3,
    "corpus.size": 3000,
    "batch_size": 4,
    "max_len": 24,
    "total_steps": 6,
    "eval_batches": 2,
    "checkpoint_interval": 3,
    "log_interval": 1,
    "optim.warmup_steps": 4,
}


def tiny_config(**overrides):
    return desk_preset(**{**TINY, **overrides})


@pytest.fixture
def tiny_cfg():
    return tiny_config()


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES

    if not LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(LINES):
        terminalreporter.write_line(LINES[n])
