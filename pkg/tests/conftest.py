import contextlib

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_configure(config):
    config.criteria = {}


@pytest.fixture
def criterion(request):
    """``with criterion(k, title) as notes:`` records PASS/FAIL for the summary.

    Anything appended to ``notes`` is shown on the summary line.
    """
    table = request.config.criteria

    @contextlib.contextmanager
    def record(number, title):
        # A criterion may span several tests; any failing part fails it.
        status, _, notes = table.get(number, ("PASS", title, []))
        try:
            yield notes
        except BaseException:
            status = "FAIL"
            raise
        finally:
            table[number] = (status, title, notes)

    return record


def pytest_terminal_summary(terminalreporter, config):
    if not config.criteria:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(config.criteria):
        status, title, notes = config.criteria[number]
        detail = f" [{'; '.join(notes)}]" if notes else ""
        terminalreporter.write_line(f"criterion {number}: {status}  {title}{detail}")
