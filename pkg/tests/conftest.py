from hypothesis import HealthCheck, settings

# Fixed example sequence so statistical properties are reproducible run to run.
settings.register_profile(
    "spatconf",
    max_examples=200,
    deadline=None,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("spatconf")


import pytest

_ACCEPTANCE = {}


@pytest.fixture
def acceptance():
    def record(number, line):
        _ACCEPTANCE[number] = line
        print(line)
    return record


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: acceptance criteria (long running)")


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[number])


@pytest.fixture(scope="session", autouse=True)
def _isolated_output_dir(tmp_path_factory):
    # keep CLI runs without --out from writing into the working tree
    import os
    key = "SPATCONF_OUTPUT_DIR"
    old = os.environ.get(key)
    os.environ[key] = str(tmp_path_factory.mktemp("spatconf_out"))
    yield
    if old is None:
        os.environ.pop(key, None)
    else:
        os.environ[key] = old
