import numpy as np
import pytest

from clientprint.dataset import LabeledDataset
from clientprint.features import AttestationSummary, SlotRewardsRecord


def root(i: int) -> str:
    return "0x" + f"{i:064x}"


def att(slot, index=0, bits="1100", data=0):
    return AttestationSummary(slot, index, bits, root(data))


def record(atts=(), slot=100, att_reward=0, sync_reward=0, total=None, sync_bits=0, **kw):
    total = att_reward + sync_reward if total is None else total
    return SlotRewardsRecord(slot, 7, total, att_reward, sync_reward, tuple(atts), sync_bits, **kw)


def random_dataset(rng, n_per_class, n_classes=6, spread=1.0, modes=None):
    names = ("grandine", "lighthouse", "lodestar", "nimbus", "prysm", "teku")[:n_classes]
    counts = [n_per_class] * n_classes if np.isscalar(n_per_class) else list(n_per_class)
    labels = np.concatenate([np.full(c, i) for i, c in enumerate(counts)])
    centers = rng.random((n_classes, 7)) * spread
    vectors = centers[labels] + rng.normal(0, 0.1, size=(len(labels), 7))
    modes = modes or ("default",) * len(labels)
    return LabeledDataset(vectors, labels, modes, "six_class", names)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# ---- acceptance summary: one line per criterion, printed after the run

_criteria: dict[str, str] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion reported in the summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    name = marker.args[0]
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
        if _criteria.get(name) != "FAIL":
            _criteria[name] = status


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name, status in _criteria.items():
        terminalreporter.write_line(f"{status}  {name}")
