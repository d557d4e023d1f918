from importlib import resources

import numpy as np
import pytest

from regenstab.models import parse_model

# Case-study plant, inputs, gains and generator, typed in independently of the
# bundled JSON file so that parsing is checked against them.
PLANT_A = [
    [[0, 0, 0], [0, -0.545, 0.626], [0, -1.570, 1.465]],
    [[0, 0, 0], [0, -0.106, 0.087], [0, -3.810, 3.861]],
    [[1.80, -0.3925, 4.52], [3.14, 0.100, -0.28], [-19.06, -0.148, 1.56]],
]
PLANT_B = [[[0], [-0.283], [0.333]], [[0], [0], [0.087]], [[-0.064], [0.195], [-0.080]]]
GAINS = [
    [[2.0343, 14.5181, -23.5917]],
    [[1.0187, 73.0961, -78.7596]],
    [[93.6651, -11.4921, 11.6875]],
]
GENERATOR = [[-0.53, 0.32, 0.21], [0.50, -0.88, 0.38], [0.40, 0.13, -0.53]]


def example_text() -> str:
    return resources.files("regenstab").joinpath("data", "economy_periodic.json").read_text()


@pytest.fixture(scope="session")
def economy():
    return parse_model(example_text())


def random_modes(rng, N, n, scale=1.0, shift=0.0):
    return [scale * rng.standard_normal((n, n)) - shift * np.eye(n) for _ in range(N)]


def random_generator(rng, N, rate=1.0):
    Q = rng.uniform(0.1, 1.0, (N, N)) * rate
    np.fill_diagonal(Q, 0.0)
    np.fill_diagonal(Q, -Q.sum(axis=1))
    return Q


# ----------------------------------------------------------------------
# Acceptance summary: one PASS/FAIL line per numbered criterion
# ----------------------------------------------------------------------
_ACCEPTANCE: dict[int, tuple[str, str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        number, title = mark.args
        status = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")
        _ACCEPTANCE[number] = (title, status, getattr(item, "acceptance_detail", ""))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, status, detail = _ACCEPTANCE[number]
        line = f"criterion {number}: {status}  {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))


@pytest.fixture
def record(request):
    """Attach a short measured-value summary to an acceptance test and echo it."""

    def _record(text: str) -> None:
        request.node.acceptance_detail = text
        print(text)

    return _record
