import pytest

from sasv.config import ExperimentConfig, parse_config

TINY_CONFIG = """
pretrain_corpus.n_speakers = 6
pretrain_corpus.n_bonafide = 36
base_corpus.n_speakers = 4
base_corpus.n_bonafide = 24
base_corpus.n_spoofed = 24
base_corpus.n_attacks = 2
aux_corpus.n_speakers = 4
aux_corpus.n_bonafide = 16
aux_corpus.n_spoofed = 16
aux_corpus.n_attacks = 2
dev_corpus.n_speakers = 3
dev_corpus.n_bonafide = 18
dev_corpus.n_spoofed = 12
dev_corpus.n_attacks = 2
eval_corpus.n_speakers = 3
eval_corpus.n_bonafide = 18
eval_corpus.n_spoofed = 12
eval_corpus.n_attacks = 2
dev_trials_per_type = 8
eval_trials_per_type = 10
encoder.channels = 8
encoder.attention_dim = 4
encoder.cm_hidden = 8
pretrain.asv_epochs = 1
pretrain.asv_batches_per_epoch = 2
pretrain.asv_speakers_per_batch = 4
pretrain.cm_epochs = 1
pretrain.cm_batches_per_epoch = 2
pretrain.cm_batch_size = 8
train.epochs = 2
train.batches_per_epoch = 3
train.learning_rate = 0.001
train.batch_size = 8
seeds = 1,2
"""

for _name in ("pretrain_corpus", "base_corpus", "aux_corpus", "dev_corpus", "eval_corpus"):
    TINY_CONFIG += f"{_name}.signal_length = 400\n"


@pytest.fixture(scope="session")
def tiny_config() -> ExperimentConfig:
    return parse_config(TINY_CONFIG)


@pytest.fixture(scope="session")
def tiny_config_text() -> str:
    return TINY_CONFIG


@pytest.fixture(scope="session")
def tiny_data(tiny_config, tmp_path_factory):
    from sasv.training import generate_data

    return generate_data(tiny_config, tmp_path_factory.mktemp("tiny_data"))


@pytest.fixture(scope="session")
def tiny_subsystems(tiny_config, tiny_data):
    from sasv.training import pretrain_asv, pretrain_cm

    asv = pretrain_asv(tiny_data.pretrain, tiny_config.encoder, tiny_config.pretrain)
    cm = pretrain_cm(tiny_data.base, tiny_config.encoder, tiny_config.pretrain)
    return asv, cm


def finite_difference_error(fn, tensors, eps: float = 1e-6) -> float:
    """Norm-wise relative error between autograd and central differences.

    ``fn`` maps the float64 ``tensors`` (all requiring grad) to a scalar.
    Every element of every tensor is perturbed in turn.
    """
    import torch

    loss = fn()
    analytic = torch.autograd.grad(loss, tensors, allow_unused=True)
    analytic = torch.cat([
        (torch.zeros_like(t) if g is None else g).reshape(-1) for g, t in zip(analytic, tensors)
    ])
    numeric = []
    with torch.no_grad():
        for t in tensors:
            flat = t.view(-1)
            for i in range(flat.numel()):
                old = flat[i].item()
                flat[i] = old + eps
                up = fn().item()
                flat[i] = old - eps
                down = fn().item()
                flat[i] = old
                numeric.append((up - down) / (2 * eps))
    numeric = torch.tensor(numeric, dtype=torch.float64)
    scale = max(numeric.norm().item(), analytic.norm().item(), 1e-12)
    return (analytic - numeric).norm().item() / scale


ACCEPTANCE_LINES: list = []


@pytest.fixture
def criterion():
    """Record and print one PASS/FAIL line, then assert the outcome."""

    def record(number: int, title: str, ok: bool, detail: str) -> None:
        line = f"criterion {number} [{title}]: {'PASS' if ok else 'FAIL'} ({detail})"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1])):
            terminalreporter.write_line(line)
