import math

import numpy as np
import pytest

from emotts.data import load_manifest
from emotts.errors import (
    RegistryError,
    ReportError,
    ShapeError,
    UndefinedSimilarityError,
    UnknownWordError,
)
from emotts.ssl import SSLFeatureStack
from emotts.synthesis import (
    SynthesisRequest,
    character_error_rate,
    cluster_report,
    emotion_cluster_report,
    extract_emotion,
    speaker_cosine,
    synthesize,
)


def test_speaker_cosine_examples():
    assert speaker_cosine([1, 2, 3], [1, 2, 3]) == pytest.approx(1.0)
    assert speaker_cosine([1, 0], [0, 1]) == 0.0
    assert speaker_cosine([1, 1], [1, 0]) == pytest.approx(1 / math.sqrt(2))
    with pytest.raises(UndefinedSimilarityError):
        speaker_cosine([0, 0], [1, 0])
    with pytest.raises(ShapeError):
        speaker_cosine([1, 0], [1, 0, 0])


def test_cluster_report_identical_within_class():
    base = np.eye(3)
    emb = np.repeat(base, 4, axis=0)
    labels = np.repeat([0, 1, 2], 4)
    rep = cluster_report(emb, labels, ["a", "b", "c"])
    assert rep["intra_cosine"] == pytest.approx(1.0)
    assert rep["accuracy"] == 1.0
    assert rep["classes"] == ["a", "b", "c"]
    assert np.trace(rep["confusion"]) == 12


def test_cluster_report_random_is_chance():
    rng = np.random.default_rng(0)
    n = 400
    rep = cluster_report(rng.normal(size=(n, 16)), np.arange(n) % 2)
    # binomial band, 4 sigma around 0.5 (nearest centroid on noise can overfit slightly)
    assert abs(rep["accuracy"] - 0.5) < 4 * math.sqrt(0.25 / n) + 0.05


def test_cluster_report_needs_two_classes():
    with pytest.raises(ReportError):
        cluster_report(np.ones((4, 2)), [0, 0, 0, 0])


def test_cer():
    assert character_error_rate("abc", "abc") == 0.0
    assert character_error_rate("abd", "abc") == pytest.approx(1 / 3)
    assert character_error_rate("", "ab") == 1.0
    assert character_error_rate("สวัสดี", "สวัสดี") == 0.0


def _text(ckpt, lang, n=3):
    words = sorted(ckpt.frontend.lexicons[lang].entries)
    return " ".join(words[:n])


def _heldout(tiny_corpus, lang):
    return [u for u in load_manifest(tiny_corpus.parent / "heldout.jsonl") if u.language_id == lang]


def test_cross_lingual_pipeline_contract(tiny_trained, tiny_corpus, tmp_path):
    _, _, ckpt, _ = tiny_trained
    ref = _heldout(tiny_corpus, 0)[0]
    req = SynthesisRequest(ckpt, _text(ckpt, 1), 1, 2, ref.ssl_path, tmp_path / "o.mel", tmp_path / "o.wav", 3)
    res = synthesize(req)
    assert res.mel.n_frames == int(res.durations.sum())
    assert res.mel.frames.shape[1] == 80
    assert (tmp_path / "o.mel").exists() and (tmp_path / "o.wav").exists()
    again = synthesize(SynthesisRequest(ckpt, req.text, 1, 2, ref.ssl_path, crop_seed=3))
    assert np.array_equal(res.mel.frames, again.mel.frames)


def test_speaker_changes_output(tiny_trained, tiny_corpus):
    _, _, ckpt, _ = tiny_trained
    ref = _heldout(tiny_corpus, 0)[0].ssl_path
    text = _text(ckpt, 1)
    a = synthesize(SynthesisRequest(ckpt, text, 1, 2, ref))
    b = synthesize(SynthesisRequest(ckpt, text, 1, 3, ref))
    assert a.mel.frames.shape != b.mel.frames.shape or not np.array_equal(a.mel.frames, b.mel.frames)


def test_npc_absent_gives_identical_output(tiny_trained, tiny_corpus, tmp_path):
    _, _, ckpt, _ = tiny_trained
    assert ckpt.has_npc and not ckpt.without_npc().has_npc
    ref = _heldout(tiny_corpus, 1)[0].ssl_path
    text = _text(ckpt, 0)
    a = synthesize(SynthesisRequest(ckpt, text, 0, 1, ref, crop_seed=1))
    b = synthesize(SynthesisRequest(ckpt.without_npc(), text, 0, 1, ref, crop_seed=1))
    assert a.mel.frames.tobytes() == b.mel.frames.tobytes()


def test_synthesize_does_not_mutate_checkpoint(tiny_trained, tiny_corpus):
    _, _, ckpt, _ = tiny_trained
    before = {k: v.clone() for k, v in ckpt.model_state.items()}
    synthesize(SynthesisRequest(ckpt, _text(ckpt, 0), 0, 0, _heldout(tiny_corpus, 0)[0].ssl_path))
    assert all(np.array_equal(before[k].numpy(), v.numpy()) for k, v in ckpt.model_state.items())


def test_validation_happens_before_writing(tiny_trained, tiny_corpus, tmp_path):
    _, _, ckpt, _ = tiny_trained
    ref = _heldout(tiny_corpus, 0)[0].ssl_path
    out = tmp_path / "never.mel"
    with pytest.raises(UnknownWordError):
        synthesize(SynthesisRequest(ckpt, "notaword", 0, 0, ref, out))
    with pytest.raises(RegistryError):
        synthesize(SynthesisRequest(ckpt, _text(ckpt, 0), 0, 9, ref, out))
    bad = SSLFeatureStack(np.zeros((6, 10, 8)))
    with pytest.raises(ShapeError):
        synthesize(SynthesisRequest(ckpt, _text(ckpt, 0), 0, 0, bad, out))
    assert not out.exists()


def test_extract_emotion_writes_pair(tiny_trained, tiny_corpus, tmp_path):
    cfg, _, ckpt, _ = tiny_trained
    vec = extract_emotion(ckpt, _heldout(tiny_corpus, 0)[0].ssl_path, 0, tmp_path / "e.emb")
    from emotts.container import read_emtf

    assert vec.shape == (2 * cfg.emotion.emotion_dim,)
    assert np.array_equal(read_emtf(tmp_path / "e.emb", rank=1), vec)


def test_emotion_cluster_report_shape(tiny_trained, tiny_corpus):
    _, _, ckpt, _ = tiny_trained
    rep = emotion_cluster_report(tiny_corpus.parent / "heldout.jsonl", ckpt)
    assert set(rep) == {"shallow", "deep", "pair"}
    assert rep["pair"]["n"] == 16 and len(rep["pair"]["confusion"]) == 4
