import math
import sys

import numpy as np
import pytest

from indistkit import _kernels_py

try:
    from indistkit import _ckernels
except ImportError:  # extension not built
    _ckernels = None

BACKENDS = [pytest.param(_kernels_py, id="python")]
if _ckernels is not None:
    BACKENDS.append(pytest.param(_ckernels, id="cython"))


@pytest.fixture(params=BACKENDS)
def backend(request):
    return request.param


def cov_oracle(a, b):
    """Definition-based population covariance, plain Python loops."""
    a = [float(v) for v in a]
    b = [float(v) for v in b]
    n = len(a)
    ma = math.fsum(a) / n
    mb = math.fsum(b) / n
    return math.fsum((x - ma) * (y - mb) for x, y in zip(a, b)) / n


def var_oracle(a):
    return cov_oracle(a, a)


def mse_oracle(p, y):
    return math.fsum((float(u) - float(v)) ** 2 for u, v in zip(p, y)) / len(y)


def cheb_diameter(rows):
    rows = np.atleast_2d(rows)
    best = 0.0
    for i in range(len(rows)):
        for j in range(i + 1, len(rows)):
            best = max(best, float(np.max(np.abs(rows[i] - rows[j]))))
    return best


def pytest_terminal_summary(terminalreporter):
    mod = next((m for name, m in sys.modules.items() if name.endswith("test_acceptance")), None)
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.report_lines():
        terminalreporter.write_line(line)
