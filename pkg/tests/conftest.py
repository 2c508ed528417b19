import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running training checks")
    config.addinivalue_line("markers", "dataset: needs the UJIIndoorLoc CSV files")
    config.addinivalue_line("markers", "acceptance: end-to-end acceptance criteria")


def write_uji_csv(path, n=20, seed=0, rows=None):
    """Write a small CSV with the UJIIndoorLoc header and plausible rows."""
    import numpy as np

    from hstloc.data import UJI_COLUMNS

    rng = np.random.default_rng(seed)
    lines = [",".join(UJI_COLUMNS)]
    if rows is None:
        rows = []
        for i in range(n):
            rssi = np.where(rng.random(520) < 0.97, 100, rng.integers(-104, 1, 520))
            b = i % 3
            f = i % (5 if b == 2 else 4)
            meta = [f"{-7600 + rng.uniform(0, 300):.6f}", f"{4864750 + rng.uniform(0, 250):.6f}",
                    f, b, rng.integers(100, 250), rng.integers(1, 3), rng.integers(1, 19),
                    rng.integers(1, 25), 1371700000 + i]
            rows.append([*rssi.tolist(), *meta])
    lines += [",".join(str(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")
    return rows
