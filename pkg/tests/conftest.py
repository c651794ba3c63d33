import numpy as np
import pytest
from hypothesis import settings

from fwdvar.surface import CumulativeVarianceSurface, MaturityGrid, TimeGrid

settings.register_profile("fwdvar", deadline=None, max_examples=50)
settings.load_profile("fwdvar")


def random_surface(rng, n, d, uniform=True):
    """Random surface obeying the zero convention and monotone in maturity.

    Rows integrate a positive random forward curve over the alive part of
    each maturity cell.
    """
    if uniform:
        maturities = np.linspace(0.0, 1.0, d + 1)
    else:
        maturities = np.concatenate([[0.0], np.sort(rng.uniform(0.05, 1.0, d))])
        maturities[-1] = 1.0
        maturities = np.unique(maturities)
    grid = MaturityGrid(maturities)
    times = TimeGrid(n).times
    values = np.zeros((n + 1, grid.d + 1))
    for i, t in enumerate(times):
        lo = np.maximum(maturities[:-1], t)
        width = np.clip(maturities[1:] - lo, 0.0, None)
        level = rng.uniform(0.5, 1.5, grid.d)
        values[i, 1:] = np.cumsum(level * width)
    return CumulativeVarianceSurface(TimeGrid(n), grid, values)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# acceptance criteria: number -> list of (part, passed, detail)
ACCEPTANCE: dict = {}


def report(criterion: int, part: str, passed: bool, detail: str) -> None:
    """Record one checked part of an acceptance criterion and echo it."""
    ACCEPTANCE.setdefault(criterion, []).append((part, bool(passed), detail))
    print(f"criterion {criterion} [{part}]: {'PASS' if passed else 'FAIL'} ({detail})")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[k]
        ok = all(p for _, p, _ in parts)
        detail = "; ".join(f"{name}: {'ok' if p else 'FAILED'} {d}" for name, p, d in parts)
        terminalreporter.write_line(f"CRITERION {k:>2}: {'PASS' if ok else 'FAIL'} | {detail}")
