import pytest

from scalelab import surrogate
from scalelab.core import l0_table
from scalelab.fitting import FitConfig

# Small start grids that still recover the arxiv coefficients; keeps unit tests fast.
FAST = {
    "multiplicative_ft": FitConfig(init_grid={"log_A": [3.0, 6.0], "log_E": [0.0], "alpha": [0.5], "beta": [0.5]}),
    "forgetting_mult": FitConfig(init_grid={"log_A": [3.0, 6.0], "log_B": [3.0, 6.0], "alpha": [0.5], "beta": [0.5]}),
}


@pytest.fixture(scope="session")
def l0():
    return l0_table()


@pytest.fixture(scope="session")
def arxiv_clean():
    return surrogate.gen_grid(surrogate.spec_for_domain("arxiv", noise_sigma=0.0))


@pytest.fixture(scope="session")
def arxiv_noisy():
    return surrogate.gen_grid(surrogate.spec_for_domain("arxiv", noise_sigma=0.005, seed=1))


_ACCEPTANCE: dict = {}


@pytest.fixture
def criterion(request):
    """Record one acceptance line: ``criterion(number, description)`` before asserting."""

    def register(number, text):
        _ACCEPTANCE[number] = [text, "FAIL"]
        request.node._criterion = number

    return register


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    n = getattr(item, "_criterion", None)
    if n is not None and rep.when == "call":
        _ACCEPTANCE[n][1] = "PASS" if rep.passed else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        text, status = _ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {status}  {text}")
