"""Training-run properties of the synthetic generator and the training loop."""

import statistics

import pytest

from dreamnet.train import evaluate

from reference_runs import reference_split, run

pytestmark = pytest.mark.slow

MONOTONE_SEEDS = (42, 43, 44)


def test_null_separation_is_chance():
    accs = [run(s, separation=0.0).test["vote_acc"] for s in MONOTONE_SEEDS]
    assert abs(statistics.mean(accs) - 1 / 3) <= 0.10, accs


def test_accuracy_non_decreasing_in_separation():
    ok = total = 0
    table = {}
    for s in MONOTONE_SEEDS:
        accs = [run(s, separation=sep).test["vote_acc"] for sep in (0.0, 0.5, 1.0)]
        table[s] = accs
        ok += (accs[0] <= accs[1]) + (accs[1] <= accs[2])
        total += 2
    assert ok > total / 2, table


def test_records_track_training():
    r = run(42, num_rae=3, lambda_rt=1e-3, track_train=True)
    assert [rec["epoch"] for rec in r.records] == list(range(1, 201))
    train, _ = reference_split()
    final = evaluate(r.model, train)
    assert final["vote_acc"] == r.records[-1]["vote_acc"]
    assert final["rt"] == pytest.approx(r.records[-1]["rt"], abs=1e-12)
