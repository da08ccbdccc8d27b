import os

# single-threaded BLAS keeps every run bit-reproducible
for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(var, "1")

import pytest  # noqa: E402

from daad.config import DataConfig, ModelConfig, RunConfig, TrainConfig  # noqa: E402
from daad.data import StripeSpec, generate_stripes  # noqa: E402


def small_config(variant: str = "daad", seed: int = 0, epochs: int = 2, **train_kw) -> RunConfig:
    """Two-scale 16 x 16 model on a small stripe set; a second per epoch or so."""
    return RunConfig(
        model=ModelConfig(variant=variant, scales=2, base_channels=4, rates=(2, 2, 1), bank_size=5,
                          input_size=16, disc_base_channels=4),
        train=TrainConfig(epochs=epochs, batch_size=4, lr=1e-3, seed=seed, flip_prob=0.5, **train_kw),
        data=DataConfig(source="stripes", stripes=StripeSpec(size=16, period=4, count_train=16,
                                                             count_test_normal=8, count_test_anomalous=8)),
        output_dir="unused",
    ).validate()


@pytest.fixture
def small():
    return small_config


@pytest.fixture(scope="session")
def small_data():
    return generate_stripes(small_config().data.stripes)


# -- acceptance report -----------------------------------------------------------------
# Tests marked ``@pytest.mark.criterion(n, title)`` get one PASS/FAIL line each
# at the end of the run, in criterion order.

_CRITERIA: dict[int, tuple[str, str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        detail = ""
        if report.failed:
            detail = str(report.longrepr.reprcrash.message) if hasattr(report.longrepr, "reprcrash") else "failed"
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
        _CRITERIA[number] = (title, status, detail.splitlines()[0] if detail else "")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, status, detail = _CRITERIA[number]
        line = f"criterion {number}: {status}  {title}"
        if detail:
            line += f"  ({detail})"
        terminalreporter.write_line(line)
