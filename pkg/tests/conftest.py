import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from gazelab.ingest import CaseDefinition, NoduleDisc
from gazelab.preprocess import GazeTrajectory


def make_traj(
    points,
    width=100,
    height=100,
    case_id="case",
    t0=0,
    dt=33,
    duration_ms=None,
):
    """Build a GazeTrajectory from a list of (x, y) points."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    t = t0 + dt * np.arange(len(points), dtype=np.int64)
    if duration_ms is None:
        duration_ms = int(dt * max(len(points), 1))
    return GazeTrajectory(
        case_id=case_id,
        t_ms=t,
        xy=points,
        width=width,
        height=height,
        start_ms=t0,
        duration_ms=duration_ms,
    )


def make_case(
    case_id="case",
    case_class="normal",
    width=100,
    height=100,
    mask=None,
    nodule=None,
    subtlety=None,
    distractor_type=None,
):
    if mask is None:
        mask = np.ones((height, width), dtype=bool)
    return CaseDefinition(
        case_id=case_id,
        case_class=case_class,
        width=width,
        height=height,
        lung_mask=mask,
        subtlety=subtlety,
        nodule=NoduleDisc(*nodule) if isinstance(nodule, tuple) else nodule,
        distractor_type=distractor_type,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    # expose the call-phase report so teardown fixtures can see pass/fail
    outcome = yield
    rep = outcome.get_result()
    setattr(item, "rep_" + rep.when, rep)
