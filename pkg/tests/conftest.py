from pathlib import Path

import numpy as np
import pytest

from ingp.bm_sim import SimConfig, simulate_ensemble

ROOT = Path(__file__).resolve().parent.parent
CONFIGS = ROOT / "configs"

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def ensembles_for(domain, points, n_paths=2000, n_steps=20, dt=0.05, seed=3):
    cfg = SimConfig(n_paths, n_steps, dt, seed=seed)
    return [simulate_ensemble(domain, p, cfg) for p in np.atleast_2d(points)]
