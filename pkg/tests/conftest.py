import numpy as np
import pytest

from quasiunitary import scenarios as sc
from quasiunitary.forms import SesquilinearForm
from quasiunitary.linalg import WeightedSpace

STAR_EPS = (0.2, 0.1, 0.05)


def random_hpd(rng, n, lo=0.5, hi=3.0):
    q, _ = np.linalg.qr(rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n)))
    return (q * rng.uniform(lo, hi, n)) @ q.conj().T


def random_form(rng, n, skew=1.0, stiff=(0.0, 20.0)) -> SesquilinearForm:
    """Sectorial form on C^n: random H Gram, V = H + K, a = K + skew part."""
    G = random_hpd(rng, n)
    K = random_hpd(rng, n, *stiff)
    N = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    A = K + skew * (N - N.conj().T) / np.sqrt(n)
    return SesquilinearForm(WeightedSpace(G), WeightedSpace(G + K), A)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def star_graph():
    return sc.MetricGraph.star(3, 1.0, 1.0)


@pytest.fixture(scope="session")
def star_family(star_graph):
    """Graphtube star bundles at eps = 0.2, 0.1, 0.05 (built once)."""
    robin = sc.RobinData.from_graph(star_graph)
    return [sc.build_graphtube(star_graph, robin, e) for e in STAR_EPS]


@pytest.fixture(scope="session")
def wentzell_family():
    W = sc.WentzellCoefficients
    return [sc.build_wentzell(32, W.family_member(0.0), W.family_member(e), e)
            for e in (0.1, 0.05, 0.025)]


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
