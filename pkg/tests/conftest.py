import pytest

from recap.core import Recap
from recap.workflows import bundle, wordcount

# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])


def submit(recap, dag=None, site=None, **kwargs):
    files = bundle(dag if dag is not None else wordcount(), site)
    return recap.submit(files.dag, files.site, files.tc, files.props, **kwargs)


@pytest.fixture
def recap():
    r = Recap("default")
    yield r
    r.store.close()


@pytest.fixture
def testbed():
    r = Recap("testbed")
    yield r
    r.store.close()
