"""Zero-shot synthesis from a reference SSL stack, plus objective evaluation helpers."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import kernels
from .audio import MelSpectrogram, griffin_lim, write_wav
from .container import atomic_path, write_emtf
from .data import load_manifest
from .errors import InvalidInputError, ReportError, ShapeError, UndefinedSimilarityError
from .ssl import SSLFeatureStack, load_stack, random_crop
from .training import Checkpoint, load_checkpoint


@dataclass
class SynthesisRequest:
    checkpoint: str | Path | Checkpoint
    text: str
    target_language_id: int
    target_speaker_id: int
    reference: str | Path | SSLFeatureStack
    out_mel: str | Path | None = None
    out_wav: str | Path | None = None
    crop_seed: int = 0


@dataclass
class SynthesisResult:
    mel: MelSpectrogram
    durations: np.ndarray
    shallow: np.ndarray
    deep: np.ndarray
    waveform: np.ndarray | None = None


def _as_checkpoint(ckpt) -> Checkpoint:
    return ckpt if isinstance(ckpt, Checkpoint) else load_checkpoint(ckpt)


def _as_stack(ref, ckpt: Checkpoint) -> SSLFeatureStack:
    stack = ref if isinstance(ref, SSLFeatureStack) else load_stack(ref, ckpt.config.mel.frame_rate_hz)
    want_layers, want_dim = ckpt.config.data.ssl_layers, ckpt.config.emotion.input_dim
    if stack.n_layers != want_layers or stack.dim != want_dim:
        raise ShapeError(
            f"reference stack is {stack.n_layers} layers x {stack.dim} dims; "
            f"checkpoint expects {want_layers} x {want_dim}"
        )
    return stack


@torch.no_grad()
def extract_pair(model, stack: SSLFeatureStack, crop_seed=0, crop_len=200):
    """(shallow, deep) embeddings of one reference, eval mode, crop fixed by ``crop_seed``."""
    model.eval()
    crop = random_crop(stack, crop_len, np.random.default_rng(crop_seed))
    layers = torch.from_numpy(np.ascontiguousarray(crop.layers))[None]
    mask = (torch.arange(crop_len) < crop.valid_frames)[None]
    shallow, deep = model.embed(layers, mask)
    return shallow[0], deep[0]


def extract_emotion(checkpoint, reference, crop_seed=0, out=None):
    """Emotion embedding pair as one ``[shallow | deep]`` vector; optionally written as EMTF."""
    ckpt = _as_checkpoint(checkpoint)
    stack = _as_stack(reference, ckpt)
    model = ckpt.build_model()
    shallow, deep = extract_pair(model, stack, crop_seed, ckpt.config.train.crop_len)
    vec = torch.cat([shallow, deep]).numpy().astype(np.float32)
    if out is not None:
        write_emtf(out, vec)
    return vec


def synthesize(req: SynthesisRequest, model=None) -> SynthesisResult:
    """Render ``req.text`` in the target voice with the emotion of ``req.reference``.

    Every input is validated before anything is written; outputs appear
    atomically.  Pass a prebuilt ``model`` to skip rebuilding it per call.
    """
    ckpt = _as_checkpoint(req.checkpoint)
    ckpt.registry.check(req.target_language_id, req.target_speaker_id)
    ids = ckpt.frontend.text_to_ids(req.text, req.target_language_id)
    if not ids:
        raise InvalidInputError("text produced no phonemes")
    stack = _as_stack(req.reference, ckpt)
    if model is None:
        model = ckpt.build_model()
    model.eval()
    shallow, deep = extract_pair(model, stack, req.crop_seed, ckpt.config.train.crop_len)
    mel, durations, _, _ = model.infer(
        torch.tensor([ids]),
        torch.tensor([req.target_language_id]),
        torch.tensor([req.target_speaker_id]),
        shallow[None],
        deep[None],
    )
    frames = mel[0].numpy().astype(np.float32)
    result = SynthesisResult(
        MelSpectrogram(frames, ckpt.config.mel),
        durations[0].numpy(),
        shallow.numpy(),
        deep.numpy(),
    )
    if req.out_wav is not None:
        result.waveform = griffin_lim(result.mel, ckpt.config.mel)
    if req.out_mel is not None:
        write_emtf(req.out_mel, frames)
    if req.out_wav is not None:
        with atomic_path(req.out_wav) as tmp:
            write_wav(tmp, result.waveform, ckpt.config.mel.sample_rate_hz)
    return result


# ----------------------------------------------------------------------------- evaluation


def speaker_cosine(e1, e2) -> float:
    a = np.asarray(e1, dtype=np.float64).ravel()
    b = np.asarray(e2, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ShapeError(f"embedding sizes differ: {a.size} vs {b.size}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise UndefinedSimilarityError("cosine similarity is undefined for a zero-norm embedding")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def _unit_rows(x):
    n = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(n == 0):
        raise UndefinedSimilarityError("zero-norm embedding in report input")
    return x / n


def cluster_report(embeddings, labels, class_names=None) -> dict:
    """Intra- vs inter-class mean cosine and nearest-centroid accuracy."""
    x = _unit_rows(np.asarray(embeddings, dtype=np.float64))
    y = np.asarray(labels, dtype=np.int64)
    classes = np.unique(y)
    if len(classes) < 2:
        raise ReportError(f"need at least 2 emotion classes, got {len(classes)}")
    sim = x @ x.T
    same = y[:, None] == y[None, :]
    off_diag = ~np.eye(len(y), dtype=bool)
    intra_pairs = same & off_diag
    if not intra_pairs.any():
        raise ReportError("no class has two members; intra-class similarity is undefined")
    intra = float(sim[intra_pairs].mean())
    inter = float(sim[~same].mean())
    centroids = np.stack([x[y == c].mean(0) for c in classes])
    centroids = _unit_rows(centroids)
    pred = classes[np.argmax(x @ centroids.T, axis=1)]
    confusion = np.zeros((len(classes), len(classes)), dtype=np.int64)
    pos = {int(c): i for i, c in enumerate(classes)}
    for t, p in zip(y, pred):
        confusion[pos[int(t)], pos[int(p)]] += 1
    names = list(class_names or [])
    return {
        "classes": [names[c] if c < len(names) else c for c in classes.tolist()],
        "intra_cosine": intra,
        "inter_cosine": inter,
        "margin": intra - inter,
        "accuracy": float((pred == y).mean()),
        "confusion": confusion.tolist(),
        "centroid_cosine": (centroids @ centroids.T).round(6).tolist(),
        "n": int(len(y)),
    }


def emotion_cluster_report(manifest, checkpoint, crop_seed=0) -> dict:
    """Cluster statistics of the shallow, deep and joined embeddings of labeled utterances."""
    ckpt = _as_checkpoint(checkpoint)
    utts = [u for u in load_manifest(manifest) if u.labeled]
    if not utts:
        raise ReportError(f"{manifest}: no labeled utterances")
    model = ckpt.build_model()
    shallow, deep, labels = [], [], []
    for i, u in enumerate(utts):
        s, d = extract_pair(model, _as_stack(u.ssl_path, ckpt), crop_seed + i, ckpt.config.train.crop_len)
        shallow.append(s.numpy())
        deep.append(d.numpy())
        labels.append(u.emotion_label)
    shallow, deep = np.stack(shallow), np.stack(deep)
    names = list(ckpt.registry.emotions)
    return {
        "shallow": cluster_report(shallow, labels, names),
        "deep": cluster_report(deep, labels, names),
        "pair": cluster_report(np.concatenate([shallow, deep], 1), labels, names),
    }


def character_error_rate(hypothesis: str, reference: str) -> float:
    """Levenshtein distance over characters divided by the reference length."""
    if not reference:
        raise InvalidInputError("reference transcript is empty")
    hyp = np.frombuffer(hypothesis.encode("utf-32-le"), dtype=np.uint32).astype(np.int64)
    ref = np.frombuffer(reference.encode("utf-32-le"), dtype=np.uint32).astype(np.int64)
    return kernels.edit_distance(hyp, ref) / len(ref)
