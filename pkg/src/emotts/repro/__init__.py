"""Desk-scale acceptance experiments: ``repro list`` / ``repro run <name>``."""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Callable

from ..errors import SetupError
from . import experiments as _x
from .desk import DeskPipeline


@dataclass(frozen=True)
class Experiment:
    name: str
    criterion: int
    summary: str
    fn: Callable


_TABLE = [
    ("npc_mask_probe", 1, "NPC prediction ignores frames inside the masked band", _x.npc_mask_probe),
    ("vq_straight_through", 2, "VQ gradient matches finite differences; outputs are codebook rows", _x.vq_straight_through),
    ("cln_identity", 3, "fresh CLN equals plain layer norm", _x.cln_identity),
    ("length_regulator", 4, "expanded length equals the duration sum", _x.length_regulator),
    ("loss_additivity", 5, "logged total equals the weighted sum of its terms", _x.loss_additivity),
    ("group_separation", 6, "shallow and deep embeddings read disjoint SSL layers", _x.group_separation),
    ("emotion_pretrain", 7, "emotion classifier accuracy after pre-training", _x.emotion_pretrain),
    ("joint_convergence", 8, "joint training mel loss drop and run-to-run determinism", _x.joint_convergence),
    ("emotion_cluster", 9, "held-out emotion clusters and cross-lingual pitch ordering", _x.emotion_cluster),
    ("inference_purity", 10, "synthesis is unchanged by dropping the NPC weights", _x.inference_purity),
    ("ce_sanity", 11, "uniform logits give ln(n); unlabeled rows give zero", _x.ce_sanity),
    ("roundtrips", 12, "checkpoint, EMTF and manifest round trips", _x.roundtrips),
]
EXPERIMENTS = {name: Experiment(name, crit, summary, fn) for name, crit, summary, fn in _TABLE}


def expected_metrics() -> dict:
    return json.loads(resources.files(__package__).joinpath("expected_metrics.json").read_text())


def config_hash(cfg) -> str:
    blob = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def run_experiment(name, work_dir=None, report_path=None, build=True) -> dict:
    """Run one experiment and return its report; append it as a JSON line to ``report_path``.

    ``build=False`` refuses to train missing desk artifacts and raises
    :class:`SetupError` instead.
    """
    if name not in EXPERIMENTS:
        raise SetupError(f"unknown experiment {name!r}; choose from {sorted(EXPERIMENTS)}")
    exp = EXPERIMENTS[name]
    pipeline = DeskPipeline(work_dir, build=build)
    expected = expected_metrics()[name]
    start = time.perf_counter()
    metrics, checks = exp.fn(_x.Context(pipeline, expected))
    report = {
        "experiment": name,
        "criterion": exp.criterion,
        "config_hash": config_hash(pipeline.cfg),
        "metrics": metrics,
        "expected": expected,
        "checks": checks,
        "passed": all(checks.values()),
        "runtime_s": round(time.perf_counter() - start, 3),
    }
    if report_path is not None:
        path = Path(report_path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(report, sort_keys=True) + "\n")
    return report


__all__ = ["EXPERIMENTS", "Experiment", "DeskPipeline", "expected_metrics", "config_hash", "run_experiment"]
