import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from switchpide.model import ProblemSpec

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def heat_dict(nx=301, nt=201):
    """a = 1, g = x^2 on [-3, 3]; exact solution x^2 + 2(T - t)."""
    return {
        "dims": {"n": 1, "m": 1, "T": 1.0},
        "p": 2,
        "K": 2.0,
        "modes": [{"sigma": 1.0}],
        "costs": [[0]],
        "terminal": ["x**2"],
        "grid": {"box": [[-3, 3]], "nx": nx, "nt": nt},
    }


def switch_dict(cost=0.6, nx=21, nt=101):
    """Two deterministic modes with sources 0 and 1 and symmetric switching cost."""
    return {
        "dims": {"n": 1, "m": 2, "T": 1.0},
        "p": 2,
        "K": 2.0,
        "modes": [{"f": 0.0}, {"f": 1.0}],
        "costs": [[0, cost], [cost, 0]],
        "terminal": ["0", "0"],
        "grid": {"box": [[-1, 1]], "nx": nx, "nt": nt},
    }


def jump_two_mode_dict(nx=61, nt=41):
    """Two jump-diffusion modes with state-dependent costs and consistent terminal data."""
    return {
        "dims": {"n": 1, "m": 2, "T": 1.0},
        "p": 2,
        "K": 2.0,
        "modes": [
            {"sigma": 0.5, "b": "0.2-0.1*x", "c0": 0.1, "f": "0.5*sin(x)"},
            {"sigma": "0.3+0.1*sin(x)", "b": -0.1, "c0": 0.05, "f": "0.3"},
        ],
        "jumps": [
            {"kind": "compound-poisson-gaussian", "intensity": 0.5, "mean": 0.0, "std": 0.5},
            {"kind": "finite-atoms", "atoms": [0.5, -1.5], "weights": [0.4, 0.2]},
        ],
        "costs": [[0, "0.2+0.05*x**2"], [0.15, 0]],
        "terminal": ["sqrt(1+x**2)", "sqrt(1+x**2)+0.1*sin(x)"],
        "grid": {"box": [[-3, 3]], "nx": nx, "nt": nt},
    }


def jump_heat_dict(nx=1601, nt=401):
    """sigma = 1 plus one outer atom at z = 1 with weight 1; g = x^2."""
    return {
        "dims": {"n": 1, "m": 1, "T": 1.0},
        "p": 2,
        "K": 4.0,
        "modes": [{"sigma": 1.0}],
        "jumps": [{"kind": "finite-atoms", "atoms": [1.0], "weights": [1.0]}],
        "costs": [[0]],
        "terminal": ["x**2"],
        "grid": {"box": [[-8, 8]], "nx": nx, "nt": nt},
    }


def holder_dict(nx=401, nt=257):
    """Jump diffusion with Lipschitz terminal data |x|."""
    return {
        "dims": {"n": 1, "m": 1, "T": 1.0},
        "p": 2,
        "K": 4.0,
        "modes": [{"sigma": 0.5, "b": 0.1}],
        "jumps": [{"kind": "finite-atoms", "atoms": [0.5, -1.5], "weights": [0.4, 0.2]}],
        "costs": [[0]],
        "terminal": ["abs(x)"],
        "grid": {"box": [[-4, 4]], "nx": nx, "nt": nt},
    }


def two_dim_dict():
    return {
        "dims": {"n": 2, "m": 2, "T": 1.0},
        "p": 2,
        "K": 4.0,
        "modes": [
            {"sigma": [[0.6, 0.2], [0.0, 0.5]], "b": ["0.1", "-0.2*x1"], "f": "0.2*sin(x0)"},
            {"sigma": 0.3, "b": [0, 0], "f": "0.1"},
        ],
        "jumps": [
            {"kind": "finite-atoms", "ell": 2, "atoms": [[0.5, 0.0], [0.0, -1.5]], "weights": [0.3, 0.2]},
            {"kind": "empty"},
        ],
        "costs": [[0, 0.2], [0.1, 0]],
        "terminal": ["0.3*x0", "0.3*x0+0.05"],
        "grid": {"box": [[-2, 2], [-2, 2]], "nx": [25, 25], "nt": 31},
    }


def build(d):
    return ProblemSpec.from_dict(d)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"criterion {number} {'PASS' if ok else 'FAIL'}: {title} | {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
