"""Two-stage training: emotion-encoder pre-training, then joint training.

Every random draw inside a step (batch choice, reference crops, dropout) is
derived from ``(seed, step)``, so a run resumed from a checkpoint replays the
same losses as an uninterrupted one.  Results are bit-reproducible only under
the thread count recorded in the config/checkpoint.
"""

from __future__ import annotations

import io
import json
import logging
import math
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .config import LOSS_TERMS, ExperimentConfig
from .container import atomic_write_bytes, read_emtf
from .data import Registry, load_corpus_registry, load_manifest
from .errors import ConfigError, ConfigMismatchError, MigrationError, NonFiniteLossError
from .frontend import FrontEnd, encode
from .model import EmotionalTTS, emotion_ce_loss
from .ssl import load_stack, random_crop

log = logging.getLogger(__name__)

FORMAT_VERSION = 1


# ----------------------------------------------------------------------------- data


@dataclass
class Example:
    utt_id: str
    ids: np.ndarray
    durations: np.ndarray
    pitch: np.ndarray
    energy: np.ndarray
    mel: np.ndarray
    ssl: object  # SSLFeatureStack
    language_id: int
    speaker_id: int
    label: int  # -1 when unlabeled


class TrainingSet:
    """All utterances of a manifest, featurised and held in memory."""

    def __init__(self, utterances, frontend: FrontEnd, frame_rate_hz: float = 80.0):
        self.examples = []
        for u in utterances:
            inv = frontend.inventory(u.language_id)
            self.examples.append(
                Example(
                    u.utt_id,
                    np.asarray(encode(u.phonemes, inv), dtype=np.int64),
                    np.asarray(u.durations, dtype=np.int64),
                    np.asarray(u.pitch, dtype=np.float32),
                    np.asarray(u.energy, dtype=np.float32),
                    read_emtf(u.mel_path, rank=2),
                    load_stack(u.ssl_path, frame_rate_hz),
                    u.language_id,
                    u.speaker_id,
                    -1 if u.emotion_label is None else int(u.emotion_label),
                )
            )
        self.lengths = np.asarray([len(e.mel) for e in self.examples], dtype=np.int64)

    def __len__(self):
        return len(self.examples)

    def subset(self, indices) -> "TrainingSet":
        out = TrainingSet.__new__(TrainingSet)
        out.examples = [self.examples[i] for i in indices]
        out.lengths = self.lengths[list(indices)] if len(indices) else np.zeros(0, dtype=np.int64)
        return out


def epoch_batches(lengths, batch_size, seed, epoch, multiplier=4):
    """Shuffle, bucket by length within chunks of ``batch_size * multiplier``, shuffle batches."""
    rng = np.random.default_rng([seed, epoch, 11])
    perm = rng.permutation(len(lengths))
    chunk = batch_size * max(1, multiplier)
    batches = []
    for c in range(0, len(perm), chunk):
        idx = perm[c : c + chunk]
        idx = idx[np.argsort(lengths[idx], kind="stable")]
        batches += [idx[i : i + batch_size] for i in range(0, len(idx), batch_size)]
    return [batches[i] for i in rng.permutation(len(batches))]


def batches_per_epoch(n, batch_size, multiplier=4):
    chunk = batch_size * max(1, multiplier)
    return sum(math.ceil(min(chunk, n - c) / batch_size) for c in range(0, n, chunk))


def collate(examples, crop_rng, crop_len=200):
    b = len(examples)
    n_max = max(len(e.ids) for e in examples)
    t_max = max(len(e.mel) for e in examples)
    n_mels = examples[0].mel.shape[1]
    ids = np.zeros((b, n_max), dtype=np.int64)
    durs = np.zeros((b, n_max), dtype=np.int64)
    pitch = np.zeros((b, n_max), dtype=np.float32)
    energy = np.zeros((b, n_max), dtype=np.float32)
    mel = np.zeros((b, t_max, n_mels), dtype=np.float32)
    crops, ssl_valid = [], []
    for i, e in enumerate(examples):
        n, t = len(e.ids), len(e.mel)
        ids[i, :n], durs[i, :n], pitch[i, :n], energy[i, :n] = e.ids, e.durations, e.pitch, e.energy
        mel[i, :t] = e.mel
        crop = random_crop(e.ssl, crop_len, crop_rng)
        crops.append(crop.layers)
        ssl_valid.append(crop.valid_frames)
    ssl_mask = np.arange(crop_len)[None, :] < np.asarray(ssl_valid)[:, None]
    lengths = np.asarray([len(e.mel) for e in examples])
    return {
        "utt_ids": [e.utt_id for e in examples],
        "ids": torch.from_numpy(ids),
        "src_mask": torch.from_numpy(ids != 0),
        "durations": torch.from_numpy(durs),
        "pitch": torch.from_numpy(pitch),
        "energy": torch.from_numpy(energy),
        "mel": torch.from_numpy(mel),
        "mel_mask": torch.from_numpy(np.arange(t_max)[None, :] < lengths[:, None]),
        "ssl": torch.from_numpy(np.stack(crops)),
        "ssl_mask": torch.from_numpy(ssl_mask),
        "language_id": torch.tensor([e.language_id for e in examples]),
        "speaker_id": torch.tensor([e.speaker_id for e in examples]),
        "labels": torch.tensor([e.label for e in examples]),
    }


# ----------------------------------------------------------------------------- losses


def _masked_mean(values, mask):
    w = mask.to(values.dtype)
    while w.dim() < values.dim():
        w = w[..., None]
    w = w.expand_as(values)
    return (values * w).sum() / w.sum().clamp(min=1.0)


def compute_terms(model: EmotionalTTS, batch, cfg: ExperimentConfig, stage="joint"):
    """Per-term losses as scalar tensors (all six always present) plus side outputs."""
    zero = batch["mel"].new_zeros(())
    terms = dict.fromkeys(LOSS_TERMS, zero)
    extras = {}
    if stage == "pretrain_emotion":
        shallow, deep = model.embed(batch["ssl"], batch["ssl_mask"])
        logits = model.emotion.classify(shallow, deep)
        terms["emo"] = emotion_ce_loss(*logits, batch["labels"])
        extras["logits"] = logits
        return terms, extras
    use_npc = cfg.train.use_npc and model.npc is not None
    out = model(batch, with_npc=use_npc)
    src_mask = batch["src_mask"]
    diff = out["mel"] - batch["mel"]
    mel_err = diff.pow(2) if cfg.train.mel_loss == "mse" else diff.abs()
    terms["mel"] = _masked_mean(mel_err, out["frame_mask"])
    var = out["variances"]
    terms["pitch"] = _masked_mean((var.pitch - batch["pitch"]).abs(), src_mask)
    terms["energy"] = _masked_mean((var.energy - batch["energy"]).abs(), src_mask)
    log_d = torch.log(batch["durations"].clamp(min=1).to(var.log_durations.dtype))
    terms["dur"] = _masked_mean((var.log_durations - log_d).abs(), src_mask)
    if use_npc:
        terms["npc"] = out["npc"][0]
        extras["npc_indices"] = out["npc"][3]
        extras["frame_mask"] = out["frame_mask"]
    logits = model.emotion.classify(out["shallow"], out["deep"])
    terms["emo"] = emotion_ce_loss(*logits, batch["labels"])
    extras["logits"] = logits
    return terms, extras


def total_loss(terms, weights=None):
    """Weighted sum in float64.  Returns ``(total_tensor, breakdown, total_float)``.

    ``breakdown`` maps each term to its float value; recombining it with the
    same weights in term order reproduces ``total_float`` exactly.
    """
    weights = weights or {}
    breakdown = {}
    total = None
    for name in LOSS_TERMS:
        value = terms.get(name)
        if value is None:
            raise KeyError(f"missing loss term {name!r}")
        value = torch.as_tensor(value)
        if not bool(torch.isfinite(value)):
            raise NonFiniteLossError(name)
        breakdown[name] = float(value.detach())
        part = float(weights.get(name, 1.0)) * value.double()
        total = part if total is None else total + part
    return total, breakdown, float(total.detach())


# ----------------------------------------------------------------------------- checkpoints


@dataclass
class Checkpoint:
    config: ExperimentConfig
    registry: Registry
    frontend: FrontEnd
    model_state: dict
    optimizer_state: dict | None = None
    step: int = 0
    stage: str = "init"
    torch_rng: torch.Tensor | None = None
    num_threads: int = 1
    config_hash: str = ""

    def __post_init__(self):
        if not self.config_hash:
            self.config_hash = arch_hash(self.config, self.registry, self.frontend)

    @property
    def has_npc(self) -> bool:
        return any(k.startswith("npc.") for k in self.model_state)

    def build_model(self) -> EmotionalTTS:
        model = EmotionalTTS(self.config, self.frontend.n_symbols, self.registry.n_emotions, with_npc=self.has_npc)
        model.load_state_dict(self.model_state, strict=True)
        return model

    def without_npc(self) -> "Checkpoint":
        state = {k: v for k, v in self.model_state.items() if not k.startswith("npc.")}
        return Checkpoint(
            self.config, self.registry, self.frontend, state, None, self.step, self.stage,
            self.torch_rng, self.num_threads, self.config_hash,
        )


def arch_hash(cfg: ExperimentConfig, registry: Registry, frontend: FrontEnd) -> str:
    extra = {"n_symbols": frontend.n_symbols, "n_emotions": registry.n_emotions}
    return cfg.arch_hash(extra)


def _canon(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _to_payload(ckpt: Checkpoint) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        # metadata as canonical JSON text so the pickled bytes do not depend on
        # object identity in the live session
        "config": _canon(ckpt.config.to_dict()),
        "config_hash": ckpt.config_hash,
        "registry": _canon(ckpt.registry.to_dict()),
        "frontend": _canon(ckpt.frontend.to_dict()),
        "model": {k: v.detach().clone() for k, v in ckpt.model_state.items()},
        "optimizer": ckpt.optimizer_state,
        "step": ckpt.step,
        "stage": str(ckpt.stage),
        "rng": {"seed": ckpt.config.train.seed, "torch": ckpt.torch_rng},
        "num_threads": ckpt.num_threads,
    }


def _dump(obj) -> bytes:
    buf = io.BytesIO()
    torch.save(obj, buf)
    return buf.getvalue()


def _intern(obj):
    # pickle memoises by object identity; interning every string makes the
    # bytes independent of whether the payload came from a live run or a reload
    if isinstance(obj, str):
        return sys.intern(obj)
    if isinstance(obj, dict):
        return {_intern(k): _intern(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return type(obj)(_intern(v) for v in obj)
    return obj


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    return _dump(_intern(_to_payload(ckpt)))


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    atomic_write_bytes(path, checkpoint_bytes(ckpt))


def load_checkpoint(path, config: ExperimentConfig | None = None) -> Checkpoint:
    """Load a checkpoint; with ``config``, refuse it unless the architecture hash matches."""
    payload = torch.load(path, map_location="cpu", weights_only=False)
    version = payload.get("format_version")
    if version != FORMAT_VERSION:
        raise MigrationError(f"{path}: checkpoint format {version}, this build reads {FORMAT_VERSION}")
    stored_cfg = ExperimentConfig.from_dict(json.loads(payload["config"]))
    registry = Registry.from_dict(json.loads(payload["registry"]))
    frontend = FrontEnd.from_dict(json.loads(payload["frontend"]))
    expected = arch_hash(stored_cfg, registry, frontend)
    if payload["config_hash"] != expected:
        raise ConfigMismatchError(f"{path}: stored config hash does not match its own config")
    if config is not None:
        wanted = arch_hash(config, registry, frontend)
        if wanted != expected:
            raise ConfigMismatchError(
                f"{path}: checkpoint was trained with config {expected}, requested config hashes to {wanted}"
            )
        stored_cfg = ExperimentConfig.from_dict({**config.to_dict()})
    return Checkpoint(
        stored_cfg,
        registry,
        frontend,
        payload["model"],
        payload["optimizer"],
        payload["step"],
        payload["stage"],
        payload["rng"]["torch"],
        payload["num_threads"],
        expected,
    )


# ----------------------------------------------------------------------------- loops


def _resolve_frontend(cfg, manifest_path) -> FrontEnd:
    d = cfg.data.frontend_dir or Path(manifest_path).parent
    return FrontEnd.load(d)


def _resolve_registry(manifest_path, utts) -> Registry:
    return load_corpus_registry(Path(manifest_path).parent) or Registry.from_utterances(utts)


def _check_capacity(cfg, registry):
    if registry.n_speakers > cfg.model.n_speakers or registry.n_languages > cfg.model.n_languages:
        raise ConfigError(
            f"corpus has {registry.n_speakers} speakers / {registry.n_languages} languages; "
            f"model.n_speakers={cfg.model.n_speakers}, model.n_languages={cfg.model.n_languages}"
        )
    if registry.n_emotions < 1:
        raise ConfigError("no emotion classes known; label at least one utterance")


def _step_seed(seed, step):
    return (int(seed) * 1_000_003 + int(step)) % (2**63)


def _set_lr(optimizer, cfg, step):
    lr = cfg.train.lr
    if cfg.train.warmup_steps > 0:
        lr *= min(1.0, step / cfg.train.warmup_steps)
    for group in optimizer.param_groups:
        group["lr"] = lr


def _make_optimizer(params, cfg):
    return torch.optim.Adam(params, lr=cfg.train.lr, betas=cfg.train.adam_betas, eps=cfg.train.adam_eps)


class _LogWriter:
    def __init__(self, path):
        self.path = Path(path) if path else None
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)

    def write(self, record):
        if self.path:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")


def _run(model, data, cfg, stage, optimizer, params, start_step, max_steps, out_dir, on_step, snapshot):
    seed = cfg.train.seed
    bs = min(cfg.train.batch_size, len(data))
    # emotion shifts utterance length, so length buckets would be class-skewed;
    # pre-training sees fixed-length crops anyway and gains nothing from them
    multiplier = 1 if stage == "pretrain_emotion" else cfg.train.bucket_multiplier
    nb = batches_per_epoch(len(data), bs, multiplier)
    writer = _LogWriter(Path(out_dir) / "train_log.jsonl" if out_dir else None)
    cached_epoch, batches = None, None
    code_counts = None
    t0 = time.time()
    model.train()
    for step in range(start_step + 1, max_steps + 1):
        epoch, pos = divmod(step - 1, nb)
        if epoch != cached_epoch:
            batches = epoch_batches(data.lengths, bs, seed, epoch, multiplier)
            cached_epoch = epoch
        batch_examples = [data.examples[i] for i in batches[pos]]
        batch = collate(batch_examples, np.random.default_rng([seed, step, 7]), cfg.train.crop_len)
        torch.manual_seed(_step_seed(seed, step))
        _set_lr(optimizer, cfg, step)
        optimizer.zero_grad(set_to_none=True)
        terms, extras = compute_terms(model, batch, cfg, stage)
        try:
            total, breakdown, total_f = total_loss(terms, cfg.train.loss_weights)
        except NonFiniteLossError as exc:
            raise NonFiniteLossError(exc.term, step, batch["utt_ids"]) from None
        total.backward()
        if cfg.train.grad_clip and cfg.train.grad_clip > 0:
            torch.nn.utils.clip_grad_norm_(params, cfg.train.grad_clip)
        optimizer.step()
        record = {
            "step": step,
            "stage": stage,
            "total": total_f,
            "terms": breakdown,
            "weights": dict(cfg.train.loss_weights),
            "wall_time": round(time.time() - t0, 4),
        }
        if "npc_indices" in extras:
            counts = torch.bincount(
                extras["npc_indices"][extras["frame_mask"]].reshape(-1), minlength=cfg.npc.codebook_size
            )
            code_counts = counts if code_counts is None else code_counts + counts
            if pos == nb - 1:
                p = code_counts.double() / code_counts.sum()
                p = p[p > 0]
                record["epoch"] = epoch
                record["npc_code_entropy"] = float(-(p * p.log()).sum())
                code_counts = None
        writer.write(record)
        if on_step is not None:
            on_step(record)
        if out_dir and cfg.train.ckpt_every and step % cfg.train.ckpt_every == 0 and step != max_steps:
            save_checkpoint(snapshot(step), Path(out_dir) / f"step_{step:06d}.pt")
    return max_steps


def pretrain_emotion(cfg: ExperimentConfig, manifest, out_dir=None, on_step=None) -> Checkpoint:
    """Train only the emotion encoder and its classifier heads on one language."""
    torch.set_num_threads(cfg.train.num_threads)
    utts = load_manifest(manifest)
    registry = _resolve_registry(manifest, utts)
    frontend = _resolve_frontend(cfg, manifest)
    _check_capacity(cfg, registry)
    lang = cfg.train.pretrain_language
    pool = [u for u in utts if u.language_id == lang]
    labeled = [i for i, u in enumerate(pool) if u.labeled]
    if not labeled:
        raise ConfigError(f"no labeled utterances for language {lang}; emotion pre-training needs labels")
    keep = round(cfg.train.labeled_fraction * len(labeled))
    if keep == 0:
        raise ConfigError(f"labeled_fraction={cfg.train.labeled_fraction} leaves no labeled utterances")
    chosen = set(np.random.default_rng([cfg.train.seed, 99]).permutation(labeled)[:keep].tolist())
    for i, u in enumerate(pool):
        if i not in chosen:
            u.emotion_label = None
    data = TrainingSet(pool, frontend)

    torch.manual_seed(cfg.train.seed)
    model = EmotionalTTS(cfg, frontend.n_symbols, registry.n_emotions, with_npc=cfg.train.use_npc)
    params = list(model.emotion.parameters())
    optimizer = _make_optimizer(params, cfg)

    def snapshot(step):
        return Checkpoint(
            cfg, registry, frontend, model.state_dict(), optimizer.state_dict(), step,
            "pretrain_emotion", torch.get_rng_state(), cfg.train.num_threads,
        )

    if out_dir:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
    _run(model, data, cfg, "pretrain_emotion", optimizer, params, 0, cfg.train.pretrain_steps, out_dir, on_step, snapshot)
    ckpt = snapshot(cfg.train.pretrain_steps)
    if out_dir:
        save_checkpoint(ckpt, Path(out_dir) / "checkpoint.pt")
    return ckpt


def joint_train(cfg: ExperimentConfig, manifest, init: Checkpoint | None = None, out_dir=None, on_step=None):
    """Joint training under the six-term objective; resumes if ``init`` is a joint checkpoint."""
    torch.set_num_threads(cfg.train.num_threads)
    utts = load_manifest(manifest)
    if init is not None:
        registry, frontend = init.registry, init.frontend
        if arch_hash(cfg, registry, frontend) != init.config_hash:
            raise ConfigMismatchError("init checkpoint was built with a different architecture config")
        for u in utts:
            registry.check(u.language_id, u.speaker_id)
    else:
        log.warning("joint training from scratch: no pre-trained emotion encoder given")
        registry = _resolve_registry(manifest, utts)
        frontend = _resolve_frontend(cfg, manifest)
    _check_capacity(cfg, registry)
    data = TrainingSet(utts, frontend)

    torch.manual_seed(cfg.train.seed)
    model = EmotionalTTS(cfg, frontend.n_symbols, registry.n_emotions, with_npc=cfg.train.use_npc)
    start = 0
    if init is not None:
        missing, unexpected = model.load_state_dict(init.model_state, strict=False)
        if unexpected or any(not k.startswith("npc.") for k in missing):
            raise ConfigMismatchError(f"checkpoint does not fit the model: missing={missing} unexpected={unexpected}")
    if cfg.train.freeze_emotion:
        for p in model.emotion.parameters():
            p.requires_grad_(False)
    params = [p for p in model.parameters() if p.requires_grad]
    optimizer = _make_optimizer(params, cfg)
    if init is not None and init.stage == "joint" and init.optimizer_state is not None:
        optimizer.load_state_dict(init.optimizer_state)
        start = init.step

    def snapshot(step):
        return Checkpoint(
            cfg, registry, frontend, model.state_dict(), optimizer.state_dict(), step,
            "joint", torch.get_rng_state(), cfg.train.num_threads,
        )

    if out_dir:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
    _run(model, data, cfg, "joint", optimizer, params, start, cfg.train.max_steps, out_dir, on_step, snapshot)
    ckpt = snapshot(cfg.train.max_steps)
    if out_dir:
        save_checkpoint(ckpt, Path(out_dir) / "checkpoint.pt")
    return ckpt


def read_log(path) -> list:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


@torch.no_grad()
def emotion_accuracy(model: EmotionalTTS, data: TrainingSet, crop_seed=0, crop_len=200, batch_size=64):
    """Classification accuracy over labeled examples (shallow, deep and combined heads)."""
    model.eval()
    idx = [i for i, e in enumerate(data.examples) if e.label >= 0]
    hits = {"shallow": 0, "deep": 0, "combined": 0}
    for c in range(0, len(idx), batch_size):
        chunk = [data.examples[i] for i in idx[c : c + batch_size]]
        batch = collate(chunk, np.random.default_rng([crop_seed, c]), crop_len)
        sh, dp = model.embed(batch["ssl"], batch["ssl_mask"])
        ls, ld = model.emotion.classify(sh, dp)
        y = batch["labels"]
        hits["shallow"] += int((ls.argmax(-1) == y).sum())
        hits["deep"] += int((ld.argmax(-1) == y).sum())
        comb = F.log_softmax(ls, -1) + F.log_softmax(ld, -1)
        hits["combined"] += int((comb.argmax(-1) == y).sum())
    n = max(len(idx), 1)
    return {k: v / n for k, v in hits.items()} | {"n": len(idx)}
