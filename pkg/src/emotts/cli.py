"""``emotts`` command line.

Failures print one line ``error code=<code> type=<Class> message=<json>`` on
stderr and exit with status 1.  Inputs are validated before any file is written.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import EmottsError


def _config(path):
    from .config import ExperimentConfig, load_config

    return load_config(path) if path else ExperimentConfig()


def _require_file(path, what):
    from .errors import InvalidInputError

    if not Path(path).is_file():
        raise InvalidInputError(f"{what} not found: {path}")


def cmd_make_corpus(args):
    from .data import SyntheticCorpusSpec, generate_synthetic_corpus

    spec = SyntheticCorpusSpec.from_file(args.spec) if args.spec else SyntheticCorpusSpec()
    spec.validate()
    manifest = generate_synthetic_corpus(spec, args.out)
    print(json.dumps({"manifest": str(manifest)}))


def cmd_pretrain(args):
    from .training import pretrain_emotion

    cfg = _config(args.config)
    _require_file(args.manifest, "manifest")
    ckpt = pretrain_emotion(cfg, args.manifest, args.out)
    print(json.dumps({"checkpoint": str(Path(args.out) / "checkpoint.pt"), "step": ckpt.step}))


def cmd_train(args):
    from .training import joint_train, load_checkpoint

    cfg = _config(args.config)
    _require_file(args.manifest, "manifest")
    init = load_checkpoint(args.init, config=cfg) if args.init else None
    ckpt = joint_train(cfg, args.manifest, init, args.out)
    print(json.dumps({"checkpoint": str(Path(args.out) / "checkpoint.pt"), "step": ckpt.step}))


def cmd_synthesize(args):
    from .synthesis import SynthesisRequest, synthesize

    req = SynthesisRequest(
        args.checkpoint, args.text, args.language, args.speaker, args.reference, args.out_mel, args.out_wav, args.crop_seed
    )
    res = synthesize(req)
    print(json.dumps({"frames": res.mel.n_frames, "out_mel": args.out_mel, "out_wav": args.out_wav}))


def cmd_extract(args):
    from .synthesis import extract_emotion

    vec = extract_emotion(args.checkpoint, args.reference, args.crop_seed, args.out)
    print(json.dumps({"dim": int(vec.shape[0]), "out": args.out}))


def cmd_eval_cluster(args):
    from .container import atomic_write_text
    from .synthesis import emotion_cluster_report

    report = emotion_cluster_report(args.manifest, args.checkpoint, args.crop_seed)
    text = json.dumps(report, sort_keys=True)
    if args.out:
        atomic_write_text(args.out, text + "\n")
    print(text)


def cmd_eval_cosine(args):
    from .container import read_emtf
    from .synthesis import speaker_cosine

    print(json.dumps({"cosine": speaker_cosine(read_emtf(args.a, rank=1), read_emtf(args.b, rank=1))}))


def cmd_eval_cer(args):
    from .synthesis import character_error_rate

    print(json.dumps({"cer": character_error_rate(args.hypothesis, args.reference)}))


def cmd_repro_list(args):
    from .repro import EXPERIMENTS

    for name, exp in EXPERIMENTS.items():
        print(f"{name}\tcriterion {exp.criterion}\t{exp.summary}")


def cmd_repro_run(args):
    from .repro import run_experiment

    report = run_experiment(args.name, work_dir=args.work, report_path=args.report)
    print(json.dumps(report, sort_keys=True))
    return 0 if report["passed"] else 3


def build_parser():
    p = argparse.ArgumentParser(prog="emotts", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("make-corpus", help="generate the synthetic bilingual corpus")
    s.add_argument("--spec", help="YAML corpus spec (defaults if omitted)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_make_corpus)

    s = sub.add_parser("pretrain-emotion", help="pre-train the emotion encoder")
    s.add_argument("--config")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_pretrain)

    s = sub.add_parser("train", help="joint training (resumes from a joint checkpoint)")
    s.add_argument("--config")
    s.add_argument("--manifest", required=True)
    s.add_argument("--init")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("synthesize", help="synthesize text with a reference emotion")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--text", required=True)
    s.add_argument("--language", type=int, required=True)
    s.add_argument("--speaker", type=int, required=True)
    s.add_argument("--reference", required=True, help="SSL stack (EMTF rank 3)")
    s.add_argument("--crop-seed", type=int, default=0)
    s.add_argument("--out-mel", required=True)
    s.add_argument("--out-wav")
    s.set_defaults(func=cmd_synthesize)

    s = sub.add_parser("extract-emotion", help="write the [shallow | deep] embedding of a reference")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--reference", required=True)
    s.add_argument("--crop-seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("eval-cluster", help="intra/inter emotion cosine on labeled utterances")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--crop-seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval_cluster)

    s = sub.add_parser("eval-cosine", help="cosine similarity of two EMTF embeddings")
    s.add_argument("--a", required=True)
    s.add_argument("--b", required=True)
    s.set_defaults(func=cmd_eval_cosine)

    s = sub.add_parser("eval-cer", help="character error rate between transcripts")
    s.add_argument("--hypothesis", required=True)
    s.add_argument("--reference", required=True)
    s.set_defaults(func=cmd_eval_cer)

    s = sub.add_parser("repro", help="desk-scale acceptance experiments")
    rsub = s.add_subparsers(dest="repro_command", required=True)
    r = rsub.add_parser("list")
    r.set_defaults(func=cmd_repro_list)
    r = rsub.add_parser("run")
    r.add_argument("name")
    r.add_argument("--work", help="artifact cache directory")
    r.add_argument("--report", help="append the JSON report line here")
    r.set_defaults(func=cmd_repro_run)
    return p


def error_line(exc: BaseException) -> str:
    code = getattr(exc, "code", "io" if isinstance(exc, OSError) else "internal")
    return f"error code={code} type={type(exc).__name__} message={json.dumps(str(exc))}"


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        rc = args.func(args)
    except (EmottsError, OSError) as exc:
        print(error_line(exc), file=sys.stderr)
        return 1
    return rc or 0


if __name__ == "__main__":
    sys.exit(main())
