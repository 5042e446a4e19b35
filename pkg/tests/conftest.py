import numpy as np
import pytest

from coxflow.groups import Group, GroupingStructure
from coxflow.survival import SurvivalDataset


def make_dataset(n=30, p=4, seed=0, max_segments=3, event_prob=0.7):
    """Random counting-process dataset with piecewise-constant covariates."""
    r = np.random.default_rng(seed)
    ids, starts, stops, events, xs = [], [], [], [], []
    for s in range(n):
        t = 0.0
        for _ in range(int(r.integers(1, max_segments + 1))):
            dur = float(r.uniform(0.5, 3.0))
            ids.append(s)
            starts.append(t)
            stops.append(t + dur)
            xs.append(r.normal(0, 1, p))
            events.append(0)
            t += dur
        if r.uniform() < event_prob:
            events[-1] = 1
    if not any(events):
        events[-1] = 1
    return SurvivalDataset(np.array(ids, object), np.array(starts), np.array(stops),
                           np.array(events, np.int8), np.array(xs),
                           tuple(f"x{j + 1}" for j in range(p)))


def singleton_structure(p, weight=1.0):
    return GroupingStructure(tuple(Group(f"g{j}", (j,), weight) for j in range(p)), p)


def random_structure(p, n_groups, rng, max_weight=2.0):
    """Random overlapping cover of {0..p-1}."""
    groups, covered = [], set()
    for k in range(n_groups):
        size = int(rng.integers(1, p + 1))
        m = tuple(sorted(rng.choice(p, size=size, replace=False).tolist()))
        covered |= set(m)
        groups.append(Group(f"g{k}", m, float(rng.uniform(0.3, max_weight))))
    rest = sorted(set(range(p)) - covered)
    if rest:
        groups.append(Group("rest", tuple(rest), 1.0))
    return GroupingStructure(tuple(groups), p)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
