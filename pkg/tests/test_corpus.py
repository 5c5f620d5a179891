import numpy as np
import pytest

from ssl_langid.audio import read_wav
from ssl_langid.corpus import (
    LanguageSpec, Phone, build_corpus, confusable_partners, default_partition, gen_language_set,
    partition, synthesize, transition_tv,
)
from ssl_langid.manifest import read_manifest
from oracles import fft_peak_hz


def test_gen_is_deterministic():
    a = gen_language_set(6, 1, seed=3)
    b = gen_language_set(6, 1, seed=3)
    assert [s.to_dict() for s in a] == [s.to_dict() for s in b]
    assert [s.to_dict() for s in a] != [s.to_dict() for s in gen_language_set(6, 1, seed=4)]


def test_confusable_pair_construction():
    specs = gen_language_set(6, 2, seed=0)
    partners = confusable_partners(specs)
    assert partners == {"lang02": "lang03", "lang03": "lang02", "lang04": "lang05", "lang05": "lang04"}
    for a, b in [(specs[2], specs[3]), (specs[4], specs[5])]:
        assert a.phones == b.phones
        assert transition_tv(a.transitions, b.transitions).min() >= 0.3
        np.testing.assert_allclose(a.stationary(), b.stationary(), atol=1e-9)


def test_two_languages_have_disjoint_inventories():
    a, b = gen_language_set(2, 0, seed=0)
    assert not {p.freqs for p in a.phones} & {p.freqs for p in b.phones}


def test_larger_sets_partially_overlap():
    specs = gen_language_set(5, 0, seed=0)
    shared = {p.freqs for p in specs[0].phones} & {p.freqs for p in specs[1].phones}
    assert 0 < len(shared) < len(specs[0].phones)


def test_gen_validation():
    with pytest.raises(ValueError, match="confusable"):
        gen_language_set(4, 3)
    with pytest.raises(ValueError):
        gen_language_set(1, 0)


def test_spec_invariants():
    for s in gen_language_set(6, 1, seed=1):
        np.testing.assert_allclose(s.transitions.sum(1), 1.0, atol=1e-9)
        assert np.all(np.diag(s.transitions) == 0)
    phone = Phone((300.0,), (1.0,))
    with pytest.raises(ValueError):
        LanguageSpec("x", [phone], np.ones((1, 1)))
    with pytest.raises(ValueError):
        LanguageSpec("x", [phone, phone], np.array([[0.5, 0.4], [0.5, 0.5]]))
    with pytest.raises(ValueError, match="Nyquist"):
        LanguageSpec("x", [phone, Phone((9000.0,), (1.0,))], np.full((2, 2), 0.5))


def test_single_phone_walk_peaks_at_component_frequencies():
    phone = Phone((440.0, 1320.0), (1.0, 0.6), (80.0, 120.0), 0.0)
    other = Phone((3000.0,), (1.0,))
    # phone 0 absorbs: stationary mass sits entirely on it
    spec = LanguageSpec("mono", [phone, other], np.array([[1.0, 0.0], [1.0, 0.0]]))
    w, phones = synthesize(spec, 2.0, np.random.default_rng(0), return_phones=True)
    assert set(phones) == {0}
    spectrum = np.abs(np.fft.rfft(w.samples * np.hanning(len(w))))
    freqs = np.fft.rfftfreq(len(w), 1 / w.sample_rate)
    top2 = sorted(freqs[np.argsort(spectrum)[-2:]])
    assert abs(fft_peak_hz(w.samples, w.sample_rate) - 440.0) <= 1.0
    assert abs(top2[0] - 440.0) <= 1.0 and abs(top2[1] - 1320.0) <= 1.0


def test_bigram_statistics_follow_transition_matrix():
    spec = gen_language_set(4, 0, seed=2)[0]
    _, phones = synthesize(spec, 60.0, np.random.default_rng(9), return_phones=True)
    n = len(spec.phones)
    counts = np.zeros((n, n))
    for a, b in zip(phones[:-1], phones[1:]):
        counts[a, b] += 1
    empirical = counts / counts.sum(1, keepdims=True)
    tv = transition_tv(empirical, spec.transitions)
    assert float(spec.stationary() @ tv) <= 0.05


def test_synthesis_duration_and_peak():
    spec = gen_language_set(2, 0, seed=0)[0]
    w = synthesize(spec, 5.0, np.random.default_rng(1))
    assert len(w) == 5 * 16000
    assert np.isclose(np.abs(w.samples).max(), 0.9)


@pytest.fixture(scope="module")
def small_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    specs = gen_language_set(2, 0, seed=0)
    records = build_corpus(specs, 0.01, out, seed=0, eval_hours_per_language=0.002)
    return out, records


def test_build_corpus_manifest(small_corpus):
    out, records = small_corpus
    assert read_manifest(out / "manifest.jsonl") == records
    train = [r for r in records if r.split != "eval"]
    assert {r.label for r in records} == {"lang00", "lang01"}
    assert all(r.duration_s in (4.0, 5.0, 6.0) or r.duration_s >= 4.0 for r in train)
    assert {round(r.duration_s) for r in train} <= {4, 5, 6}
    for lab in ("lang00", "lang01"):
        n = sum(r.label == lab for r in train)
        assert sum(r.label == lab and r.split == "val" for r in train) == max(1, round(0.1 * n))
    w = read_wav(out / records[0].path)
    assert w.sample_rate == 16000 and np.isclose(w.duration, records[0].duration_s)
    paths = [r.path for r in records]
    assert len(paths) == len(set(paths))


def test_build_corpus_is_byte_identical(small_corpus, tmp_path):
    out, _ = small_corpus
    build_corpus(gen_language_set(2, 0, seed=0), 0.01, tmp_path, seed=0, eval_hours_per_language=0.002)
    assert (tmp_path / "manifest.jsonl").read_bytes() == (out / "manifest.jsonl").read_bytes()
    first = sorted(p.relative_to(out) for p in out.rglob("*.wav"))[0]
    assert (tmp_path / first).read_bytes() == (out / first).read_bytes()


def test_partition_examples():
    p = partition({"a", "b", "c", "d"}, {"a", "b"}, {"c"})
    assert p.rest == ["c", "d"] and p.seen == ["a", "b"] and p.unseen == ["c"]
    assert partition({"a", "b"}, {"a", "b"}, set()).rest == []


def test_partition_errors():
    with pytest.raises(ValueError, match="overlap"):
        partition({"a", "b"}, {"a"}, {"a"})
    with pytest.raises(ValueError, match="not in"):
        partition({"a", "b"}, {"z"}, set())


def test_partition_full_scale_sizes():
    langs = [f"l{i:03d}" for i in range(107)]
    p = partition(langs, langs[:23], langs[23:37])
    assert (len(p.seen), len(p.unseen), len(p.rest)) == (23, 14, 84)
    assert set(p.unseen) <= set(p.rest)


def test_default_partition_holds_out_pairs():
    specs = gen_language_set(12, 2, seed=0)
    p = default_partition([s.language for s in specs])
    assert p.unseen == ["lang08", "lang09", "lang10", "lang11"]
    assert set(p.unseen) == set(confusable_partners(specs))


def test_build_corpus_rejects_durations_below_one_segment(tmp_path):
    with pytest.raises(ValueError, match="segment"):
        build_corpus(gen_language_set(2, 0, seed=0), 3.0 / 3600, tmp_path)
