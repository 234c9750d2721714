"""Utterance manifests, the speaker/language registry, and the synthetic corpus.

Manifest: UTF-8 JSON lines, one :class:`Utterance` per line with the fields
``utt_id, phonemes, durations, pitch, energy, language_id, speaker_id,
emotion_label, mel_path, ssl_path``.  Feature paths are relative to the
manifest's directory.  ``emotion_label`` may be null or absent (unlabeled).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .config import MelConfig
from .container import atomic_write_text, read_emtf, read_emtf_shape, write_emtf
from .errors import ManifestError, RegistryError, SpecError
from .frontend import FrontEnd
from .ssl import save_stack, synth_stack

_FIELDS = (
    "utt_id",
    "phonemes",
    "durations",
    "pitch",
    "energy",
    "language_id",
    "speaker_id",
    "emotion_label",
    "mel_path",
    "ssl_path",
)


@dataclass
class Utterance:
    utt_id: str
    phonemes: list
    durations: list
    pitch: list
    energy: list
    language_id: int
    speaker_id: int
    emotion_label: int | None
    mel_path: str
    ssl_path: str

    @property
    def n_frames(self) -> int:
        return int(sum(self.durations))

    @property
    def labeled(self) -> bool:
        return self.emotion_label is not None

    def to_record(self) -> dict:
        return {k: getattr(self, k) for k in _FIELDS}


@dataclass
class Registry:
    """Ids known to a corpus/checkpoint: languages, speaker -> language, emotion names."""

    languages: list
    speakers: dict
    emotions: list

    @property
    def n_languages(self) -> int:
        return max(self.languages) + 1

    @property
    def n_speakers(self) -> int:
        return max(self.speakers) + 1

    @property
    def n_emotions(self) -> int:
        return len(self.emotions)

    def check(self, language_id=None, speaker_id=None) -> None:
        if language_id is not None and language_id not in self.languages:
            raise RegistryError(f"unknown language id {language_id}")
        if speaker_id is not None and speaker_id not in self.speakers:
            raise RegistryError(f"unknown speaker id {speaker_id}")

    def to_dict(self) -> dict:
        return {
            "languages": list(self.languages),
            "speakers": {str(k): v for k, v in self.speakers.items()},
            "emotions": list(self.emotions),
        }

    @classmethod
    def from_dict(cls, d) -> "Registry":
        return cls(list(d["languages"]), {int(k): int(v) for k, v in d["speakers"].items()}, list(d["emotions"]))

    @classmethod
    def from_utterances(cls, utts, emotions=None) -> "Registry":
        languages = sorted({u.language_id for u in utts})
        speakers = {u.speaker_id: u.language_id for u in sorted(utts, key=lambda u: u.speaker_id)}
        if emotions is None:
            labels = [u.emotion_label for u in utts if u.labeled]
            emotions = [str(i) for i in range(max(labels) + 1)] if labels else []
        return cls(languages, speakers, list(emotions))


def _dumps(record) -> str:
    return json.dumps(record, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def write_manifest(path, utterances) -> None:
    atomic_write_text(path, "".join(_dumps(u.to_record()) + "\n" for u in utterances))


def _check_record(rec, lineno, root, registry, check_features):
    """Return (utterance or None, issues, registry_issues)."""
    issues, reg_issues = [], []
    missing = [k for k in _FIELDS if k not in rec and k != "emotion_label"]
    utt_id = rec.get("utt_id", "?")
    where = f"line {lineno} (utt_id {utt_id!r})"
    if missing:
        return None, [f"{where}: missing fields {missing}"], []
    n = len(rec["phonemes"])
    if not (len(rec["durations"]) == len(rec["pitch"]) == len(rec["energy"]) == n):
        issues.append(f"{where}: phonemes/durations/pitch/energy lengths differ")
    durs = rec["durations"]
    if any((not isinstance(d, int)) or isinstance(d, bool) or d < 0 for d in durs):
        issues.append(f"{where}: durations must be non-negative integers")
    if not all(math.isfinite(float(v)) for v in list(rec["pitch"]) + list(rec["energy"])):
        issues.append(f"{where}: non-finite pitch/energy target")
    label = rec.get("emotion_label")
    if label is not None and (not isinstance(label, int) or label < 0):
        issues.append(f"{where}: emotion_label must be a non-negative integer or null")
    if registry is not None:
        if rec["language_id"] not in registry.languages:
            reg_issues.append(f"{where}: unknown language id {rec['language_id']}")
        if rec["speaker_id"] not in registry.speakers:
            reg_issues.append(f"{where}: unknown speaker id {rec['speaker_id']}")
        if label is not None and registry.emotions and label >= registry.n_emotions:
            reg_issues.append(f"{where}: emotion label {label} outside {registry.n_emotions} classes")
    if check_features and not issues:
        mel_path = root / rec["mel_path"]
        try:
            shape = read_emtf_shape(mel_path)
        except (OSError, ValueError) as exc:
            issues.append(f"{where}: cannot read mel header: {exc}")
        else:
            if len(shape) != 2 or shape[0] != sum(durs):
                issues.append(f"{where}: sum(durations)={sum(durs)} but mel has {shape[0] if shape else 0} frames")
    if issues or reg_issues:
        return None, issues, reg_issues
    utt = Utterance(**{k: rec.get(k) for k in _FIELDS})
    utt.mel_path = str(root / rec["mel_path"])
    utt.ssl_path = str(root / rec["ssl_path"])
    return utt, [], []


def load_manifest(path, registry: Registry | None = None, check_features: bool = True) -> list:
    """Parse and validate a manifest.  Feature paths come back resolved."""
    path = Path(path)
    root = path.parent
    utts, issues, reg_issues = [], [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                issues.append(f"line {lineno}: malformed JSON ({exc.msg})")
                continue
            utt, bad, bad_reg = _check_record(rec, lineno, root, registry, check_features)
            issues += bad
            reg_issues += bad_reg
            if utt is not None:
                utts.append(utt)
    if issues:
        raise ManifestError(issues + reg_issues)
    if reg_issues:
        raise RegistryError("; ".join(reg_issues))
    return utts


def load_mel(utt: Utterance) -> np.ndarray:
    return read_emtf(utt.mel_path, rank=2)


# ---------------------------------------------------------------- synthetic corpus

DEFAULT_INVENTORIES = (
    ("ka", "ki", "ku", "ke", "ko", "sa", "si", "su", "se", "so", "ta", "te"),
    ("ma_T1", "ma_T2", "na_T1", "na_T3", "la_T2", "la_T4", "pa_T1", "pa_T3", "ro_T2", "ro_T4", "wu_T1", "wu_T3"),
)

DEFAULT_EMOTIONS = ("neutral", "happy", "anger", "sad")

DEFAULT_MODULATION = {
    "neutral": (0.0, 1.0, 1.0),
    "happy": (0.15, 1.2, 0.9),
    "anger": (0.3, 1.4, 0.8),
    "sad": (-0.2, 0.7, 1.3),
}


@dataclass
class SyntheticCorpusSpec:
    n_speakers_per_language: int = 2
    phoneme_inventories: list = field(default_factory=lambda: [list(s) for s in DEFAULT_INVENTORIES])
    emotion_set: list = field(default_factory=lambda: list(DEFAULT_EMOTIONS))
    # emotion -> (pitch_offset, energy_scale, duration_scale)
    emotion_modulation: dict = field(default_factory=lambda: {k: list(v) for k, v in DEFAULT_MODULATION.items()})
    utterances_per_speaker: int = 100
    heldout_per_emotion: int = 2
    labeled_fraction: list = field(default_factory=lambda: [1.0, 0.0])  # per language
    seed: int = 0
    words_per_language: int = 24
    word_length: tuple = (2, 3)
    words_per_utterance: tuple = (3, 5)
    n_mels: int = 80
    pitch_band_bins: int = 24
    noise_std: float = 0.05
    ssl_layers: int = 24
    ssl_dim: int = 16

    def validate(self) -> None:
        invs = [list(s) for s in self.phoneme_inventories]
        if len(invs) < 2:
            raise SpecError("need at least two phoneme inventories")
        seen = set()
        for inv in invs:
            overlap = seen & set(inv)
            if overlap:
                raise SpecError(f"phoneme inventories overlap on {sorted(overlap)}")
            seen |= set(inv)
        missing = [e for e in self.emotion_set if e not in self.emotion_modulation]
        if missing:
            raise SpecError(f"no modulation triple for emotions {missing}")
        for e in self.emotion_set:
            if len(self.emotion_modulation[e]) != 3 or self.emotion_modulation[e][1] <= 0:
                raise SpecError(f"bad modulation for {e!r}: need (pitch_offset, energy_scale>0, duration_scale)")
        if len(self.labeled_fraction) != len(invs):
            raise SpecError("labeled_fraction needs one entry per language")
        if self.pitch_band_bins >= self.n_mels:
            raise SpecError("pitch band must leave room for the formant band")
        if self.utterances_per_speaker < 1 or self.n_speakers_per_language < 1:
            raise SpecError("need at least one speaker and one utterance per speaker")
        if self.ssl_layers < 2 or self.ssl_layers % 2:
            raise SpecError("ssl_layers must be even and >= 2")

    @property
    def n_languages(self) -> int:
        return len(self.phoneme_inventories)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["word_length"] = list(self.word_length)
        d["words_per_utterance"] = list(self.words_per_utterance)
        return d

    @classmethod
    def from_file(cls, path) -> "SyntheticCorpusSpec":
        d = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        try:
            spec = cls(**d)
        except TypeError as exc:
            raise SpecError(str(exc)) from exc
        spec.validate()
        return spec


class _Voice:
    """Deterministic per-symbol and per-speaker acoustic parameters."""

    def __init__(self, spec: SyntheticCorpusSpec):
        self.spec = spec
        self.symbols = {}
        n_formant = spec.n_mels - spec.pitch_band_bins
        bins = np.arange(n_formant)
        gid = 0
        for inv in spec.phoneme_inventories:
            for sym in inv:
                rng = np.random.default_rng([spec.seed, 1, gid])
                env = np.full(n_formant, 0.05)
                for _ in range(2):
                    centre = rng.uniform(0, n_formant - 1)
                    width = rng.uniform(3.0, 6.0)
                    env += rng.uniform(0.5, 1.5) * np.exp(-0.5 * ((bins - centre) / width) ** 2)
                self.symbols[sym] = {
                    "envelope": env,
                    "pitch_offset": float(np.round(rng.uniform(-0.05, 0.05), 4)),
                    "energy": float(np.round(rng.uniform(0.8, 1.2), 4)),
                    "duration": int(rng.integers(3, 7)),
                }
                gid += 1
        n_spk = spec.n_languages * spec.n_speakers_per_language
        self.speakers = {}
        for k in range(n_spk):
            rng = np.random.default_rng([spec.seed, 2, k])
            tilt = rng.uniform(-0.5, 0.5)
            self.speakers[k] = {
                "base_f0": float(np.round(4.9 + 0.5 * k / max(1, n_spk - 1), 4)),
                "tilt": np.exp(tilt * bins / max(1, n_formant - 1)),
            }

    def targets(self, sym, speaker, emotion):
        pitch_offset, energy_scale, duration_scale = self.spec.emotion_modulation[emotion]
        s = self.symbols[sym]
        pitch = self.speakers[speaker]["base_f0"] + s["pitch_offset"] + pitch_offset
        energy = s["energy"] * energy_scale
        duration = max(1, int(round(s["duration"] * duration_scale)))
        return pitch, energy, duration

    def frame(self, sym, speaker, pitch, energy):
        spec = self.spec
        bins = np.arange(spec.pitch_band_bins)
        centre = pitch_to_bin(pitch)
        low = 0.02 + np.exp(-0.5 * ((bins - centre) / 1.2) ** 2)
        high = self.symbols[sym]["envelope"] * self.speakers[speaker]["tilt"]
        return energy * np.concatenate([low, high])


def pitch_to_bin(log_f0):
    """Pitch-ridge centre (in mel bins) used by the synthetic generator."""
    return (log_f0 - 4.4) * 12.0


def pitch_proxy(mel, pitch_band_bins: int = 24) -> float:
    """Mean over frames of the energy centroid in the low pitch band (bins)."""
    frames = mel.frames if hasattr(mel, "frames") else np.asarray(mel)
    w = np.exp(np.asarray(frames, dtype=np.float64)[:, :pitch_band_bins])
    bins = np.arange(pitch_band_bins)
    return float(np.mean((w @ bins) / w.sum(axis=1)))


def _make_lexicon(spec, lang, inv):
    rng = np.random.default_rng([spec.seed, 4, lang])
    lo, hi = spec.word_length
    lexicon = {}
    while len(lexicon) < spec.words_per_language:
        n = int(rng.integers(lo, hi + 1))
        phones = tuple(inv[int(i)] for i in rng.integers(0, len(inv), size=n))
        word = f"w{lang}" + "".join(p.split("_")[0] for p in phones)
        lexicon.setdefault(word, phones)
    return lexicon


def generate_synthetic_corpus(spec: SyntheticCorpusSpec, out_dir) -> Path:
    """Write a bilingual emotional toy corpus; returns the training manifest path.

    Output tree: ``manifest.jsonl`` (training), ``heldout.jsonl`` (unseen,
    always-labeled references), ``corpus.json`` (spec + registry),
    ``inventory_<lang>.txt`` / ``lexicon_<lang>.tsv``, ``mel/*.mel``, ``ssl/*.ssl``.
    """
    spec.validate()
    out = Path(out_dir)
    (out / "mel").mkdir(parents=True, exist_ok=True)
    (out / "ssl").mkdir(parents=True, exist_ok=True)
    voice = _Voice(spec)
    mel_cfg_floor = np.log(MelConfig().log_floor)
    lexicons = {lang: _make_lexicon(spec, lang, inv) for lang, inv in enumerate(spec.phoneme_inventories)}
    frontend = FrontEnd({i: inv for i, inv in enumerate(spec.phoneme_inventories)}, lexicons)
    frontend.save(out)

    train, heldout = [], []
    speakers = {}
    n_emo = len(spec.emotion_set)
    for lang in range(spec.n_languages):
        words = sorted(lexicons[lang])
        for j in range(spec.n_speakers_per_language):
            spk = lang * spec.n_speakers_per_language + j
            speakers[spk] = lang
            n_total = spec.utterances_per_speaker + spec.heldout_per_emotion * n_emo
            for i in range(n_total):
                is_heldout = i >= spec.utterances_per_speaker
                emo_idx = i % n_emo if not is_heldout else (i - spec.utterances_per_speaker) % n_emo
                emotion = spec.emotion_set[emo_idx]
                rng = np.random.default_rng([spec.seed, 3, spk, i])
                n_words = int(rng.integers(spec.words_per_utterance[0], spec.words_per_utterance[1] + 1))
                phones = [p for w in rng.choice(words, size=n_words) for p in lexicons[lang][str(w)]]
                pitch, energy, durs, frames = [], [], [], []
                for sym in phones:
                    p, e, d = voice.targets(sym, spk, emotion)
                    pitch.append(round(p, 6))
                    energy.append(round(e, 6))
                    durs.append(d)
                    frames.append(np.repeat(voice.frame(sym, spk, p, e)[None], d, axis=0))
                lin = np.concatenate(frames)
                mel = np.log(lin) + rng.normal(0.0, spec.noise_std, size=lin.shape)
                mel = np.maximum(mel, mel_cfg_floor).astype(np.float32)
                prefix = "H" if is_heldout else "U"
                utt_id = f"{prefix}_L{lang}_S{spk:02d}_{i:04d}_{emotion}"
                if is_heldout:
                    label = emo_idx
                else:
                    # first round(f * n) utterances of each (speaker, emotion) group keep labels
                    per_group = math.ceil((spec.utterances_per_speaker - emo_idx) / n_emo)
                    rank = i // n_emo
                    label = emo_idx if rank < round(spec.labeled_fraction[lang] * per_group) else None
                write_emtf(out / "mel" / f"{utt_id}.mel", mel)
                save_stack(synth_stack(mel, spec.ssl_layers, spec.ssl_dim, spec.seed), out / "ssl" / f"{utt_id}.ssl")
                utt = Utterance(
                    utt_id, phones, durs, pitch, energy, lang, spk, label, f"mel/{utt_id}.mel", f"ssl/{utt_id}.ssl"
                )
                (heldout if is_heldout else train).append(utt)

    train.sort(key=lambda u: u.utt_id)
    heldout.sort(key=lambda u: u.utt_id)
    write_manifest(out / "manifest.jsonl", train)
    write_manifest(out / "heldout.jsonl", heldout)
    registry = Registry(list(range(spec.n_languages)), speakers, list(spec.emotion_set))
    meta = {"spec": spec.to_dict(), "registry": registry.to_dict()}
    atomic_write_text(out / "corpus.json", json.dumps(meta, sort_keys=True, indent=1) + "\n")
    return out / "manifest.jsonl"


def load_corpus_registry(directory) -> Registry | None:
    path = Path(directory) / "corpus.json"
    if not path.exists():
        return None
    return Registry.from_dict(json.loads(path.read_text(encoding="utf-8"))["registry"])
