"""The twelve desk-scale acceptance experiments.

Each experiment takes a :class:`Context` and returns ``(metrics, checks)``:
plain JSON-able measurements plus named booleans comparing them with the
frozen values in ``expected_metrics.json``.
"""

from __future__ import annotations

import math
import tempfile
import time
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from ..config import NPCConfig, ReferenceEncoderConfig
from ..container import read_emtf, write_emtf
from ..data import load_manifest, pitch_proxy, write_manifest
from ..errors import ManifestError
from ..model.acoustic import length_regulate
from ..model.emotion import DEEP, SHALLOW, HierarchicalEmotionEncoder, emotion_ce_loss, group_slice
from ..model.layers import ConditionalLayerNorm
from ..model.npc import NPCModule
from ..synthesis import SynthesisRequest, emotion_cluster_report, synthesize
from ..training import (
    TrainingSet,
    checkpoint_bytes,
    emotion_accuracy,
    load_checkpoint,
    read_log,
    save_checkpoint,
)
from .desk import DeskPipeline


class Context:
    def __init__(self, pipeline: DeskPipeline, expected: dict):
        self.pipeline = pipeline
        self.expected = expected
        self.cfg = pipeline.cfg


def _seeded(seed):
    torch.manual_seed(seed)
    return np.random.default_rng(seed)


# ----------------------------------------------------------------------------- model invariants


def npc_mask_probe(ctx: Context):
    exp = ctx.expected
    start = time.perf_counter()
    t_len, hidden = exp["frames"], exp["hidden"]
    per_size = {}
    for mask_size in exp["mask_sizes"]:
        _seeded(mask_size)
        cfg = NPCConfig(mask_size=mask_size)
        npc = NPCModule(hidden, ctx.cfg.mel.n_mels, cfg).eval()
        n_mels = ctx.cfg.mel.n_mels
        # one copy of the input per mel channel: rows are independent, so a single
        # backward pass per output frame yields that frame's full Jacobian block.
        # The codebook lookup is straight-through, so this is the Jacobian training sees.
        x = torch.randn(1, t_len, hidden).expand(n_mels, -1, -1).clone().requires_grad_()
        pred = npc.predict(x)[0]  # [M, T, M]
        chan = torch.arange(n_mels)
        jac = torch.zeros(t_len, t_len)
        for t in range(t_len):
            (grad,) = torch.autograd.grad(pred[chan, t, chan].sum(), x, retain_graph=True)
            jac[t] = grad.abs().amax(dim=(0, 2))  # max over mel channel and hidden dim
        half = mask_size // 2
        band = (torch.arange(t_len)[:, None] - torch.arange(t_len)[None, :]).abs() <= half
        per_size[str(mask_size)] = {
            "max_abs_in_band": float(jac[band].max()),
            "max_abs_outside_band": float(jac[~band].max()),
        }
    runtime = time.perf_counter() - start
    metrics = {"per_mask_size": per_size, "runtime_s": runtime}
    checks = {
        "masked_band_zero": all(v["max_abs_in_band"] == 0.0 for v in per_size.values()),
        "context_reaches_prediction": all(v["max_abs_outside_band"] > 0.0 for v in per_size.values()),
        "runtime": runtime < exp["max_runtime_s"],
    }
    return metrics, checks


def _toy_objective(z):
    # smooth, non-separable function of the quantised 2-D vectors
    return (torch.sin(3 * z[..., 0]) * z[..., 1] ** 2 + torch.cos(z[..., 0] * z[..., 1])).sum()


def vq_straight_through(ctx: Context):
    exp = ctx.expected
    start = time.perf_counter()
    _seeded(3)
    npc = NPCModule(4, 4, NPCConfig(code_dim=2, codebook_size=exp["codebook_size"])).double()
    vq = npc.vq.eval()
    vq.codebook.copy_(torch.randn_like(vq.codebook))
    h = torch.randn(exp["n_points"], 2, dtype=torch.float64, requires_grad=True)
    q, indices, _ = vq(h)
    _toy_objective(q).backward()
    propagated = h.grad.clone()

    q0 = q.detach()
    eps = exp["fd_step"]
    fd = torch.zeros_like(q0)
    for i in range(q0.shape[0]):
        for d in range(2):
            bump = torch.zeros_like(q0)
            bump[i, d] = eps
            fd[i, d] = (_toy_objective(q0 + bump) - _toy_objective(q0 - bump)) / (2 * eps)
    rel = float((propagated - fd).norm() / fd.norm())
    rows = vq.codebook[0][indices[:, 0]]
    runtime = time.perf_counter() - start
    metrics = {"relative_error": rel, "runtime_s": runtime, "n_points": int(h.shape[0])}
    checks = {
        "gradient_agrees": rel < exp["max_relative_error"],
        "outputs_are_codebook_rows": bool(torch.equal(q0, rows)),
        "runtime": runtime < exp["max_runtime_s"],
    }
    return metrics, checks


def cln_identity(ctx: Context):
    exp = ctx.expected
    _seeded(5)
    worst = 0.0
    for _ in range(exp["pairs"]):
        dim, cond_dim = 128, 16
        cln = ConditionalLayerNorm(dim, cond_dim)
        x = torch.randn(2, 17, dim) * 3 + 1
        cond = torch.randn(2, cond_dim) * 5
        ref = F.layer_norm(x, (dim,), eps=cln.eps)
        worst = max(worst, float((cln(x, cond) - ref).detach().abs().max()))
    return {"max_abs_diff": worst, "pairs": exp["pairs"]}, {"identity": worst < exp["max_abs_diff"]}


def length_regulator(ctx: Context):
    exp = ctx.expected
    rng = _seeded(9)
    mismatches = 0
    for _ in range(exp["lists"]):
        n = int(rng.integers(1, 40))
        durs = torch.from_numpy(rng.integers(0, 8, size=(1, n)))
        if int(durs.sum()) == 0:
            durs[0, 0] = 1
        frames, mask = length_regulate(torch.randn(1, n, 8), durs)
        if frames.shape[1] != int(durs.sum()) or int(mask.sum()) != int(durs.sum()):
            mismatches += 1
    identity_ok = True
    for n in (1, 7, 64):
        h = torch.randn(3, n, 8)
        frames, mask = length_regulate(h, torch.ones(3, n, dtype=torch.long))
        identity_ok &= bool(torch.equal(frames, h)) and bool(mask.all())
    metrics = {"lists": exp["lists"], "length_mismatches": mismatches, "ones_identity": identity_ok}
    return metrics, {"length_exact": mismatches == 0, "ones_identity": identity_ok}


def group_separation(ctx: Context):
    exp = ctx.expected
    start = time.perf_counter()
    _seeded(11)
    n_layers, dim = ctx.cfg.data.ssl_layers, ctx.cfg.emotion.input_dim
    enc = HierarchicalEmotionEncoder(ReferenceEncoderConfig(dropout=0.0), n_layers, 4).double().eval()
    with torch.no_grad():
        # non-uniform layer weights so every layer carries a distinct share
        enc.shallow_logits.normal_()
        enc.deep_logits.normal_()
    x = torch.randn(1, n_layers, exp["frames"], dim, dtype=torch.float64)
    jac_s = torch.autograd.functional.jacobian(lambda v: enc(v)[0], x, vectorize=True)[:, :, 0]  # [B, E, L, T, D]
    jac_d = torch.autograd.functional.jacobian(lambda v: enc(v)[1], x, vectorize=True)[:, :, 0]
    s_part, d_part = group_slice(n_layers, SHALLOW), group_slice(n_layers, DEEP)
    metrics = {
        "shallow_wrt_deep_max": float(jac_s[:, :, d_part].abs().max()),
        "deep_wrt_shallow_max": float(jac_d[:, :, s_part].abs().max()),
        "shallow_wrt_shallow_max": float(jac_s[:, :, s_part].abs().max()),
        "deep_wrt_deep_max": float(jac_d[:, :, d_part].abs().max()),
    }
    runtime = time.perf_counter() - start
    metrics["runtime_s"] = runtime
    checks = {
        "shallow_ignores_deep": metrics["shallow_wrt_deep_max"] == 0.0,
        "deep_ignores_shallow": metrics["deep_wrt_shallow_max"] == 0.0,
        "own_group_reaches_output": metrics["shallow_wrt_shallow_max"] > 0 and metrics["deep_wrt_deep_max"] > 0,
        "runtime": runtime < exp["max_runtime_s"],
    }
    return metrics, checks


def ce_sanity(ctx: Context):
    exp = ctx.expected
    rng = _seeded(13)
    worst = 0.0
    for n_classes in exp["class_counts"]:
        labels = torch.from_numpy(rng.integers(0, n_classes, size=16))
        uniform = torch.full((16, n_classes), 0.37)
        # the loss sums the shallow and deep heads, each contributing ln(n)
        per_head = float(emotion_ce_loss(uniform, uniform, labels)) / 2
        worst = max(worst, abs(per_head - math.log(n_classes)))
    logits = torch.randn(8, 4, requires_grad=True)
    unlabeled = emotion_ce_loss(logits, logits, torch.full((8,), -1))
    unlabeled.backward()
    metrics = {
        "max_abs_error_vs_log_n": worst,
        "unlabeled_loss": float(unlabeled.detach()),
        "unlabeled_grad_max": float(logits.grad.abs().max()),
    }
    checks = {
        "uniform_is_log_n": worst < exp["tolerance"],
        "unlabeled_zero": metrics["unlabeled_loss"] == 0.0 and metrics["unlabeled_grad_max"] == 0.0,
    }
    return metrics, checks


# ----------------------------------------------------------------------------- desk runs


def loss_additivity(ctx: Context):
    exp = ctx.expected
    ctx.pipeline.joint("additivity", max_steps=exp["steps"])
    log = read_log(ctx.pipeline.path(f"joint_additivity_{exp['steps']}", "train_log.jsonl"))
    steps = [r for r in log if "terms" in r]
    gaps = [abs(r["total"] - sum(r["weights"][k] * v for k, v in r["terms"].items())) for r in steps]
    metrics = {"steps": len(steps), "max_abs_gap": max(gaps)}
    checks = {
        "all_steps_logged": len(steps) == exp["steps"],
        "additive": max(gaps) < exp["max_abs_gap"],
    }
    return metrics, checks


def emotion_pretrain(ctx: Context):
    exp = ctx.expected
    rec = ctx.pipeline.pretrain()
    ckpt = load_checkpoint(ctx.pipeline.path("pretrain"))
    lang = ckpt.config.train.pretrain_language
    utts = [u for u in load_manifest(ctx.pipeline.manifest) if u.language_id == lang]
    data = TrainingSet(utts, ckpt.frontend)
    acc = emotion_accuracy(ckpt.build_model(), data, crop_seed=1, crop_len=ckpt.config.train.crop_len)
    metrics = {
        "accuracy": acc,
        "steps": ckpt.step,
        "runtime_s": rec["runtime_s"],
        "labeled_fraction": ckpt.config.train.labeled_fraction,
    }
    checks = {
        "accuracy": acc["combined"] >= exp["min_accuracy"],
        "steps": ckpt.step <= exp["max_steps"],
        "runtime": rec["runtime_s"] < exp["max_runtime_s"],
    }
    return metrics, checks


def _mel_curve(path):
    return [r["terms"]["mel"] for r in read_log(path) if "terms" in r]


def joint_convergence(ctx: Context):
    exp = ctx.expected
    p = ctx.pipeline
    runs = {}
    for run in ("a", "b"):
        rec = p.joint(run)
        runs[run] = {
            "runtime_s": rec["runtime_s"],
            "bytes": p.path(f"joint_{run}").read_bytes(),
            "mel": _mel_curve(p.path(f"joint_{run}", "train_log.jsonl")),
        }
    a, b = runs["a"], runs["b"]
    ratio = a["mel"][-1] / a["mel"][0]
    metrics = {
        "steps": len(a["mel"]),
        "mel_step1": a["mel"][0],
        "mel_final": a["mel"][-1],
        "mel_ratio": ratio,
        "runtime_s": {k: v["runtime_s"] for k, v in runs.items()},
        "checkpoints_identical": a["bytes"] == b["bytes"],
        "loss_curves_identical": a["mel"] == b["mel"],
    }
    checks = {
        "steps": len(a["mel"]) == exp["steps"],
        "converged": ratio <= exp["max_mel_ratio"],
        "deterministic": metrics["checkpoints_identical"] and metrics["loss_curves_identical"],
        "runtime": max(metrics["runtime_s"].values()) < exp["max_runtime_s"],
    }
    return metrics, checks


def _sentences(frontend, language_id, n, seed):
    rng = np.random.default_rng(seed)
    words = sorted(frontend.lexicons[language_id].entries)
    return [" ".join(rng.choice(words, size=4)) for _ in range(n)]


def emotion_cluster(ctx: Context):
    exp = ctx.expected
    p = ctx.pipeline
    p.joint("a")
    ckpt = load_checkpoint(p.path("joint_a"))
    report = emotion_cluster_report(p.heldout, ckpt, crop_seed=exp["crop_seed"])

    # cross-lingual transfer: references from one language, text and voice from the other
    src_lang, tgt_lang = exp["reference_language"], exp["target_language"]
    tgt_speaker = min(s for s, lang in ckpt.registry.speakers.items() if lang == tgt_lang)
    texts = _sentences(ckpt.frontend, tgt_lang, exp["sentences"], exp["crop_seed"])
    refs = [u for u in load_manifest(p.heldout) if u.language_id == src_lang]
    model = ckpt.build_model()
    names = list(ckpt.registry.emotions)
    proxies = {e: [] for e in names}
    band = exp["pitch_band_bins"]
    for i, ref in enumerate(refs):
        for text in texts:
            req = SynthesisRequest(ckpt, text, tgt_lang, tgt_speaker, ref.ssl_path, crop_seed=exp["crop_seed"] + i)
            out = synthesize(req, model=model)
            proxies[names[ref.emotion_label]].append(pitch_proxy(out.mel.frames, band))
    mean_proxy = {e: float(np.mean(v)) for e, v in proxies.items()}
    order = sorted(mean_proxy, key=mean_proxy.get)
    gaps = [mean_proxy[b] - mean_proxy[a] for a, b in zip(exp["pitch_order"], exp["pitch_order"][1:])]
    pair = report["pair"]
    metrics = {
        "cluster": {k: {m: v[m] for m in ("intra_cosine", "inter_cosine", "margin", "accuracy", "n")} for k, v in report.items()},
        "pitch_proxy": mean_proxy,
        "pitch_order": order,
        "min_adjacent_pitch_gap": min(gaps),
        "syntheses": sum(len(v) for v in proxies.values()),
    }
    checks = {
        "intra_above_inter": pair["intra_cosine"] > pair["inter_cosine"],
        "margin": pair["margin"] >= exp["min_margin"],
        "pitch_order": order == exp["pitch_order"],
        "pitch_gap": min(gaps) >= exp["min_pitch_gap"],
    }
    return metrics, checks


def inference_purity(ctx: Context):
    exp = ctx.expected
    p = ctx.pipeline
    p.joint("a")
    full = load_checkpoint(p.path("joint_a"))
    bare = full.without_npc()
    refs = load_manifest(p.heldout)[: exp["references"]]
    # both languages, each voiced by its first speaker
    jobs = []
    for lang in sorted(full.registry.languages):
        spk = min(s for s, home in full.registry.speakers.items() if home == lang)
        jobs += [(text, lang, spk) for text in _sentences(full.frontend, lang, 2, 0)]
    identical = total = 0
    for i, ref in enumerate(refs):
        for text, lang, spk in jobs:
            mels = [
                synthesize(SynthesisRequest(c, text, lang, spk, ref.ssl_path, crop_seed=i)).mel.frames
                for c in (full, bare)
            ]
            identical += int(mels[0].tobytes() == mels[1].tobytes())
            total += 1
    metrics = {"pairs": total, "bit_identical": identical, "full_has_npc": full.has_npc, "bare_has_npc": bare.has_npc}
    checks = {"bit_identical": identical == total and total > 0, "npc_removed": full.has_npc and not bare.has_npc}
    return metrics, checks


def roundtrips(ctx: Context):
    p = ctx.pipeline
    p.pretrain()
    ckpt_path = p.path("pretrain")
    ckpt = load_checkpoint(ckpt_path)
    on_disk = ckpt_path.read_bytes()
    rng = _seeded(17)
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        save_checkpoint(ckpt, tmp / "again.pt")
        ckpt_same = (tmp / "again.pt").read_bytes() == on_disk and checkpoint_bytes(ckpt) == on_disk
        reloaded = load_checkpoint(tmp / "again.pt")
        states_equal = all(torch.equal(reloaded.model_state[k], v) for k, v in ckpt.model_state.items())

        emtf_ok = True
        for shape in [(0,), (7,), (5, 80), (3, 4, 6)]:
            arr = rng.standard_normal(shape).astype(np.float32)
            if arr.size:
                arr.flat[0] = np.inf
            write_emtf(tmp / "a.emtf", arr)
            raw = (tmp / "a.emtf").read_bytes()
            back = read_emtf(tmp / "a.emtf")
            write_emtf(tmp / "b.emtf", back)
            emtf_ok &= back.tobytes() == arr.tobytes() and back.shape == arr.shape
            emtf_ok &= (tmp / "b.emtf").read_bytes() == raw

        utts = load_manifest(p.manifest)[:3]
        bad = utts[1]
        bad.durations = list(bad.durations)
        bad.durations[0] += 1
        for u in utts:
            u.mel_path = str(Path(u.mel_path).resolve())
            u.ssl_path = str(Path(u.ssl_path).resolve())
        write_manifest(tmp / "m.jsonl", utts)
        try:
            load_manifest(tmp / "m.jsonl")
            rejected, names_utt = False, False
        except ManifestError as exc:
            rejected, names_utt = True, bad.utt_id in str(exc)
    metrics = {
        "checkpoint_bytes_identical": ckpt_same,
        "checkpoint_states_equal": states_equal,
        "emtf_bytes_identical": emtf_ok,
        "manifest_rejected": rejected,
        "error_names_utt_id": names_utt,
    }
    return metrics, {k: bool(v) for k, v in metrics.items()}
