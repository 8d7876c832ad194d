import numpy as np
import pytest

from viscofree.grid_ops import Grid


def random_smooth_map(grid: Grid, rng: np.random.Generator, amp: float = 0.02, modes: int = 3) -> np.ndarray:
    """Identity plus a few random Fourier modes in x1 and polynomial/trig modes in x2."""
    X1, X2 = grid.mesh()
    eta = np.stack([X1, X2]).astype(float)
    for i in range(2):
        for k in range(1, modes + 1):
            for m in range(modes):
                c = rng.normal(size=2) * amp / (k * (m + 1)) ** 2
                prof = np.cos(np.pi * m * X2 + rng.uniform(0, 2 * np.pi))
                eta[i] += (c[0] * np.cos(2 * np.pi * k * X1) + c[1] * np.sin(2 * np.pi * k * X1)) * prof
        eta[i] += amp * rng.normal() * X2**2
    return eta


def random_smooth_field(grid: Grid, rng: np.random.Generator, amp: float = 0.1) -> np.ndarray:
    X1, X2 = grid.mesh()
    out = np.zeros((2,) + grid.shape)
    for i in range(2):
        for k in range(0, 3):
            c = rng.normal(size=3) * amp
            out[i] += (c[0] * np.cos(2 * np.pi * k * X1) + c[1] * np.sin(2 * np.pi * k * X1)) * np.cos(np.pi * X2 * (k + 1) + c[2])
    return out


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(20240611))


ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(n: int, passed: bool, detail: str) -> str:
    """Store and print one acceptance line; the terminal summary repeats them in order."""
    line = f"criterion {n:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[n] = line
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
