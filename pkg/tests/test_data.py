import hashlib
import json

import numpy as np
import pytest

from emotts.container import write_emtf
from emotts.data import (
    Registry,
    SyntheticCorpusSpec,
    Utterance,
    generate_synthetic_corpus,
    load_corpus_registry,
    load_manifest,
    write_manifest,
)
from emotts.errors import ManifestError, RegistryError, SpecError

from conftest import tiny_spec


def _utt(tmp_path, name, durs, label=0, lang=0, spk=0, frames=None):
    write_emtf(tmp_path / f"{name}.mel", np.zeros((frames if frames is not None else sum(durs), 80)))
    n = len(durs)
    return Utterance(name, ["a"] * n, durs, [5.0] * n, [1.0] * n, lang, spk, label, f"{name}.mel", f"{name}.ssl")


def test_manifest_roundtrip_in_order(tmp_path):
    utts = [_utt(tmp_path, f"u{i}", [2, 3], label=None if i == 1 else i) for i in range(3)]
    write_manifest(tmp_path / "m.jsonl", utts)
    back = load_manifest(tmp_path / "m.jsonl")
    assert [u.utt_id for u in back] == ["u0", "u1", "u2"]
    assert back[1].emotion_label is None and not back[1].labeled


def test_duration_sum_violation_names_utt(tmp_path):
    utts = [_utt(tmp_path, "good", [2, 2]), _utt(tmp_path, "broken_7", [2, 2], frames=5)]
    write_manifest(tmp_path / "m.jsonl", utts)
    with pytest.raises(ManifestError, match="broken_7") as info:
        load_manifest(tmp_path / "m.jsonl")
    assert "line 2" in str(info.value)


def test_length_mismatch_reported(tmp_path):
    u = _utt(tmp_path, "x", [1, 1])
    u.pitch = [1.0]
    write_manifest(tmp_path / "m.jsonl", [u])
    with pytest.raises(ManifestError, match="lengths differ"):
        load_manifest(tmp_path / "m.jsonl")


def test_unknown_speaker_is_registry_error(tmp_path):
    write_manifest(tmp_path / "m.jsonl", [_utt(tmp_path, "x", [1], spk=9)])
    reg = Registry([0, 1], {0: 0, 1: 1}, ["n", "h"])
    with pytest.raises(RegistryError, match="speaker id 9"):
        load_manifest(tmp_path / "m.jsonl", reg)


def test_spec_count_arithmetic(tmp_path):
    spec = tiny_spec(utterances_per_speaker=2, heldout_per_emotion=0)
    manifest = generate_synthetic_corpus(spec, tmp_path)
    assert len(load_manifest(manifest)) == 8


def _tree_digest(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def test_same_seed_is_byte_identical(tmp_path):
    spec = tiny_spec(utterances_per_speaker=3)
    generate_synthetic_corpus(spec, tmp_path / "a")
    generate_synthetic_corpus(spec, tmp_path / "b")
    assert _tree_digest(tmp_path / "a") == _tree_digest(tmp_path / "b")


def test_overlapping_inventories_rejected():
    with pytest.raises(SpecError):
        SyntheticCorpusSpec(phoneme_inventories=[["a", "b"], ["b", "c"]]).validate()


def _group(utts):
    out = {}
    for u in utts:
        for sym, p, e, d in zip(u.phonemes, u.pitch, u.energy, u.durations):
            out.setdefault((u.speaker_id, sym, u.utt_id.rsplit("_", 1)[1]), (p, e, d))
    return out


def test_emotion_modulation_recoverable(tiny_corpus):
    spec = SyntheticCorpusSpec(**json.loads((tiny_corpus.parent / "corpus.json").read_text())["spec"])
    targets = _group(load_manifest(tiny_corpus) + load_manifest(tiny_corpus.parent / "heldout.jsonl"))
    for emotion, (dp, es, _) in spec.emotion_modulation.items():
        pairs = [(targets[k], targets[(k[0], k[1], "neutral")]) for k in targets if k[2] == emotion and (k[0], k[1], "neutral") in targets]
        assert pairs
        for (p, e, _), (p0, e0, _) in pairs:
            assert p - p0 == pytest.approx(dp, abs=1e-5)
            assert e / e0 == pytest.approx(es, rel=1e-5)


def test_labels_follow_fraction(tiny_corpus):
    utts = load_manifest(tiny_corpus)
    assert all(u.labeled for u in utts if u.language_id == 0)
    assert not any(u.labeled for u in utts if u.language_id == 1)
    assert all(u.labeled for u in load_manifest(tiny_corpus.parent / "heldout.jsonl"))


def test_corpus_registry(tiny_corpus):
    reg = load_corpus_registry(tiny_corpus.parent)
    assert reg.emotions == ["neutral", "happy", "anger", "sad"]
    assert reg.speakers == {0: 0, 1: 0, 2: 1, 3: 1}
