import numpy as np
import pytest

from hybridseir.mesh import build_mesh, generate_rectangle_mesh


@pytest.fixture(scope="session")
def unit_square():
    return generate_rectangle_mesh(1.0, 1.0, 0.125)


@pytest.fixture(scope="session")
def rect_split():
    return generate_rectangle_mesh(2.0, 1.0, 0.1, split_x=1.0)


@pytest.fixture(scope="session")
def perturbed_square():
    """Unstructured-looking square: interior nodes jittered, seed fixed."""
    m = generate_rectangle_mesh(1.0, 1.0, 0.1)
    v = m.vertices.copy()
    interior = (v[:, 0] > 0) & (v[:, 0] < 1) & (v[:, 1] > 0) & (v[:, 1] < 1)
    rng = np.random.default_rng(7)
    v[interior] += rng.uniform(-0.03, 0.03, (interior.sum(), 2))
    return build_mesh(v, m.triangles)


ACCEPTANCE = {}


@pytest.fixture
def criterion(request):
    """Record ``PASS``/``FAIL`` for an acceptance criterion test."""
    def register(number, text):
        ACCEPTANCE[number] = [text, None]
        request.node.criterion_number = number
    return register


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    n = getattr(item, "criterion_number", None)
    if n is not None and (rep.when == "call" or rep.failed):
        if ACCEPTANCE[n][1] != "FAIL":
            ACCEPTANCE[n][1] = "PASS" if rep.passed else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        text, status = ACCEPTANCE[n]
        line = f"{status or 'FAIL'} criterion {n:2d}: {text}"
        terminalreporter.write_line(line)
