import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from dpsurv.dataset import SubjectRecord, SurvivalDataset


def make_dataset(records, k=1, unit="", name="test"):
    """Build a SurvivalDataset from (time, status[, group]) tuples."""
    subjects = []
    for rec in records:
        if len(rec) == 2:
            t, status = rec
            subjects.append(SubjectRecord(float(t), int(status)))
        else:
            t, status, group = rec
            subjects.append(SubjectRecord(float(t), int(status), str(group)))
    return SurvivalDataset(tuple(subjects), k, unit, name)


def random_records(rng, n, censor_prob=0.3, max_t=50, k_types=1):
    """Random (time, status) pairs with integer times to force ties."""
    out = []
    for _ in range(n):
        t = int(rng.integers(1, max_t + 1))
        if rng.random() < censor_prob:
            out.append((t, 0))
        else:
            out.append((t, int(rng.integers(1, k_types + 1))))
    return out


@pytest.fixture
def hand_table():
    """The worked 3-event-time table: times [1,2,4], d [1,1,1], r [5,4,2]."""
    from dpsurv.dataset import EventTable
    return EventTable(times=(1.0, 2.0, 4.0), events=(1.0, 1.0, 1.0),
                      at_risk=(5.0, 4.0, 2.0), n_total=5.0)


@pytest.fixture
def hand_dataset():
    """Five subjects realizing the hand table when counted from records."""
    return make_dataset([(1, 1), (2, 1), (3, 0), (4, 1), (5, 0)])
