"""Feature build, cached dataset, and the window provider."""

import numpy as np
import pytest

from gestprop import corpus, features, prosody, synth, textfeat


@pytest.fixture(scope="module")
def built(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny_corpus")
    spec = synth.SynthSpec(name="tiny", n_speakers=2, duration=15.0)
    recs = synth.generate_synthetic_corpus(spec, seed=7, out_dir=root)
    fdir = root / "features"
    new, failures = features.build_features(recs, fdir)
    assert failures == []
    assert new == sorted(r.rec_id for r in recs)
    emb = textfeat.load_embeddings(root / "vectors.txt")
    ds = features.load_dataset(recs, fdir, emb)
    return root, recs, fdir, emb, ds


def test_build_writes_three_files_per_recording(built):
    _, recs, fdir, _, _ = built
    for rec in recs:
        paths = features.feature_paths(fdir, rec.rec_id)
        assert sorted(paths) == ["frames", "prosody", "text"]
        for p in paths.values():
            assert p.exists()
    assert not list(fdir.glob("*.tmp*"))


def test_build_is_idempotent_unless_forced(built):
    _, recs, fdir, _, _ = built
    stamp = {p: p.stat().st_mtime_ns
             for r in recs for p in features.feature_paths(fdir, r.rec_id).values()}
    again, failures = features.build_features(recs, fdir)
    assert again == [] and failures == []
    assert all(p.stat().st_mtime_ns == t for p, t in stamp.items())

    one = [recs[0]]
    forced, _ = features.build_features(one, fdir, force=True)
    assert forced == [recs[0].rec_id]


def test_missing_audio_is_collected_not_raised(built, tmp_path):
    root, recs, fdir, _, _ = built
    bad = corpus.Recording(rec_id=99, speaker="zz",
                           audio_path=tmp_path / "nope.wav")
    new, failures = features.build_features(list(recs) + [bad], fdir)
    assert new == []                      # the real ones are cached already
    assert len(failures) == 1
    rec_id, msg = failures[0]
    assert rec_id == 99 and "nope.wav" in msg


def test_frame_counts_agree_across_artifacts(built):
    _, recs, fdir, _, _ = built
    for rec in recs:
        paths = features.feature_paths(fdir, rec.rec_id)
        clip = prosody.read_wav(rec.audio_path)
        n = int(clip.duration * 20)
        assert prosody.read_prosody_csv(paths["prosody"]).n_frames == n
        assert corpus.read_frame_csv(paths["frames"]).n_frames == n
        cache = np.load(paths["text"])
        assert cache["ids"].shape == (n, 7)
        assert cache["offsets"].shape == (n, 7)


def test_text_cache_matches_window_oracle(built):
    _, recs, fdir, _, _ = built
    rec = recs[0]
    cache = np.load(features.feature_paths(fdir, rec.rec_id)["text"])
    vocab = [str(w) for w in cache["vocab"]]
    for f in (0, 57, 123, 299):
        slots = textfeat.select_window(rec.words, f / 20.0)
        for s, tok in enumerate(slots):
            if tok is None:
                assert cache["ids"][f, s] == -1
                assert cache["offsets"][f, s] == 0.0
            else:
                assert vocab[cache["ids"][f, s]] == tok.word
                assert cache["offsets"][f, s] == pytest.approx(
                    tok.onset - f / 20.0, abs=1e-6)


def test_dataset_order_matches_fold_plan(built):
    _, recs, fdir, _, ds = built
    assert ds.n_frames == sum(t.n_frames for t in ds.tables)
    assert [t.rec_id for t in ds.tables] == sorted(r.rec_id for r in recs)
    plan = corpus.make_folds_within(ds.tables, k=5)
    assert plan.offsets[-1] == ds.n_frames
    assert np.array_equal(plan.eligible, ds.eligible)
    for fold in range(plan.n_folds):
        val = plan.val[fold]
        assert ds.eligible[val].all()
        # global index g addresses frame g - offset of its recording
        rec_row = np.searchsorted(plan.offsets, val, side="right") - 1
        assert np.array_equal(ds.frame_in_rec[val], val - plan.offsets[rec_row])


def test_labels_and_flags_per_property(built):
    _, _, _, _, ds = built
    dims = {"phase": 5, "category": 4, "semantics": 4, "presence": 1}
    for prop, dim in dims.items():
        pr = features.WindowProvider(ds, prop, "both")
        assert pr.n_labels == dim
        assert pr.exclusive is (prop == "phase")
        idx = np.arange(0, ds.n_frames, 37)
        assert np.array_equal(pr.labels_at(idx),
                              ds.labels_for(prop)[idx].astype(np.float32))
    with pytest.raises(ValueError, match="property"):
        features.WindowProvider(ds, "color", "both")
    with pytest.raises(ValueError, match="modality"):
        features.WindowProvider(ds, "phase", "video")


def test_audio_windows_are_centered_and_standardized(built):
    _, _, _, _, ds = built
    pr = features.WindowProvider(ds, "presence", "audio")
    train_idx = np.where(ds.eligible)[0][:120]
    pr.fit_norm(train_idx)
    rows = ds.prosody[train_idx].astype(np.float64)
    assert np.allclose(pr.norm_mean, rows.mean(axis=0), atol=1e-6)
    assert np.allclose(pr.norm_std, rows.std(axis=0), atol=1e-6)

    g = int(np.where(ds.eligible)[0][40])
    batch = pr.batch(np.array([g]))
    assert batch["audio"].shape == (1, 41, 5)
    want = (ds.prosody[g - 20:g + 21] - pr.norm_mean) / pr.norm_std
    assert np.allclose(batch["audio"][0], want, atol=1e-6)
    assert batch["text"] is None and batch["speaker"] is None


def test_norm_state_roundtrip_and_std_floor(built):
    _, _, _, _, ds = built
    pr = features.WindowProvider(ds, "presence", "audio")
    pr.fit_norm(np.where(ds.eligible)[0])
    state = pr.norm_state()
    pr2 = features.WindowProvider(ds, "presence", "audio")
    pr2.set_norm(state)
    assert np.array_equal(pr.norm_mean, pr2.norm_mean)
    assert np.array_equal(pr.norm_std, pr2.norm_std)

    mean, std = features.compute_norm(np.full((50, 5), 3.25))
    assert np.allclose(mean, 3.25)
    assert np.all(std == pytest.approx(1e-6))
    with pytest.raises(ValueError):
        features.compute_norm(np.zeros((0, 5)))


def test_text_batch_matches_assemble_oracle(built):
    _, recs, _, emb, ds = built
    pr = features.WindowProvider(ds, "semantics", "text")
    rec0 = next(r for r in recs if r.rec_id == ds.tables[0].rec_id)
    for f in (25, 80, 150):
        got = pr.batch(np.array([f]))["text"][0]
        want = textfeat.assemble_text_window(emb, rec0.words, f / 20.0)
        assert np.allclose(got, want, atol=1e-5)


def test_text_no_timing_zeroes_offset_column(built):
    _, _, _, _, ds = built
    idx = np.where(ds.word_ids[:, 3] >= 0)[0][:16]   # frames with a current word
    timed = features.WindowProvider(ds, "semantics", "text").batch(idx)["text"]
    plain = features.WindowProvider(ds, "semantics", "text_no_timing").batch(idx)["text"]
    assert np.abs(timed[:, :, 300]).max() > 0
    assert np.all(plain[:, :, 300] == 0.0)
    assert np.array_equal(timed[:, :, :300], plain[:, :, :300])


def test_oov_words_keep_offset_but_zero_embedding(built):
    root, recs, fdir, emb, _ = built
    target = next(w.word for w in recs[0].words)
    slim = textfeat.EmbeddingTable(
        {w: v for w, v in emb.vectors.items() if w != target}, emb.dim)
    ds = features.load_dataset(recs, fdir, slim)
    hit = np.where(ds.word_ids == features.OOV_ID)
    assert len(hit[0]) > 0
    f, s = int(hit[0][0]), int(hit[1][0])
    text = features.WindowProvider(ds, "semantics", "text").batch(
        np.array([f]))["text"][0]
    assert np.all(text[s, :300] == 0.0)
    assert text[s, 300] == pytest.approx(ds.word_offsets[f, s])
    assert ds.word_offsets[f, s] != 0.0 or s == 3


def test_modalities_gate_streams(built):
    _, _, _, _, ds = built
    g = np.where(ds.eligible)[0][:4]
    audio = features.WindowProvider(ds, "presence", "audio").batch(g)
    text = features.WindowProvider(ds, "presence", "text").batch(g)
    both = features.WindowProvider(ds, "presence", "both").batch(g)
    assert audio["audio"] is not None and audio["text"] is None
    assert text["audio"] is None and text["text"] is not None
    assert both["audio"] is not None and both["text"] is not None
    assert np.array_equal(audio["audio"], both["audio"])
    assert np.array_equal(text["text"], both["text"])


def test_ineligible_frame_rejected_for_audio(built):
    _, _, _, _, ds = built
    pr = features.WindowProvider(ds, "presence", "audio")
    with pytest.raises(ValueError, match="eligible"):
        pr.batch(np.array([0]))
    # text-only windows are defined everywhere
    features.WindowProvider(ds, "presence", "text").batch(np.array([0]))


def test_speaker_onehot(built):
    _, _, _, _, ds = built
    pr = features.WindowProvider(ds, "presence", "both", speaker_onehot=True)
    assert pr.speaker_dim == len(ds.speaker_list) == 2
    idx = np.where(ds.eligible)[0]
    batch = pr.batch(idx[[0, -1]])
    order = ds.speaker_list
    for j, g in enumerate(idx[[0, -1]]):
        k = order.index(ds.speakers[g])
        want = np.zeros(len(order), dtype=np.float32)
        want[k] = 1.0
        assert np.array_equal(batch["speaker"][j], want)
    plain = features.WindowProvider(ds, "presence", "both")
    assert plain.speaker_dim == 0
    assert plain.batch(idx[:2])["speaker"] is None


def test_load_requires_built_features(built, tmp_path):
    _, recs, _, emb, _ = built
    with pytest.raises(FileNotFoundError, match="features"):
        features.load_dataset(recs, tmp_path / "empty", emb)
