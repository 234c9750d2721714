"""Desk-scale acceptance: one test per criterion, each backed by a ``repro`` experiment.

Training artifacts are cached under ``$EMOTTS_REPRO_CACHE`` (default: the
system temp dir), so only the first run pays for pre-training and the two
2000-step joint runs.  Every test prints one ``PASS``/``FAIL`` line; the same
lines are repeated in the terminal summary.
"""

import json

import pytest

from emotts.repro import EXPERIMENTS, run_experiment
from emotts.repro.desk import default_work_dir

RESULTS = []
DESK = {"loss_additivity", "emotion_pretrain", "joint_convergence", "emotion_cluster", "inference_purity", "roundtrips"}


def _line(exp, report):
    status = "PASS" if report["passed"] else "FAIL"
    failed = [k for k, ok in report["checks"].items() if not ok]
    detail = f" failed={','.join(failed)}" if failed else ""
    return f"criterion {exp.criterion:>2} {exp.name:<20} {status}{detail} metrics={json.dumps(report['metrics'], sort_keys=True)}"


@pytest.mark.parametrize(
    "name", [pytest.param(n, marks=pytest.mark.slow) if n in DESK else n for n in EXPERIMENTS]
)
def test_acceptance(name):
    exp = EXPERIMENTS[name]
    report = run_experiment(name, work_dir=default_work_dir())
    line = _line(exp, report)
    RESULTS.append(line)
    print(line)
    assert report["passed"], line
