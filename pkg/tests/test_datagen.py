import json
import math

import numpy as np
import pytest

from crossnet import datagen
from crossnet.errors import ConfigurationError, ContractError, FormatError


def test_source_deterministic_and_unit_variance():
    a = datagen.synth_source(7, 1.0)
    b = datagen.synth_source(7, 1.0)
    np.testing.assert_array_equal(a, b)
    assert a.var() == pytest.approx(1.0, abs=1e-6)
    assert a.shape == (8000,)


def test_source_too_short():
    with pytest.raises(ContractError):
        datagen.synth_source(0, 0.4)


def test_sources_weakly_correlated():
    for i in range(20):
        a, b = datagen.synth_source(2 * i, 1.0), datagen.synth_source(2 * i + 1, 1.0)
        rho = abs(np.dot(a, b)) / (np.linalg.norm(a) * np.linalg.norm(b))
        assert rho < 0.3


def test_source_has_silent_gap():
    x = datagen.synth_source(3, 1.0)
    frames = x[: 8000 // 80 * 80].reshape(-1, 80)
    assert np.min(np.abs(frames).max(axis=1)) < 1e-3 * np.abs(x).max()


def test_tail_decays_60db_at_t60():
    spec = datagen.SceneSpec(seed=1, t60=0.4)
    h = datagen.synth_rir(spec, 0, 0)
    start = int(math.ceil(h.delay)) + 1
    tail = h.tail[start:]
    n = np.arange(tail.size)
    # log-energy regression over 20-sample blocks
    blocks = (tail[: tail.size // 20 * 20] ** 2).reshape(-1, 20).mean(axis=1)
    centres = n[: tail.size // 20 * 20].reshape(-1, 20).mean(axis=1)
    slope, _ = np.polyfit(centres, 10 * np.log10(blocks), 1)
    drop = -slope * 0.4 * spec.sample_rate
    assert abs(drop - 60) < 1.0
    env = datagen.tail_envelope(np.array([0, int(0.4 * 8000)]), 0.4, 8000)
    assert 20 * np.log10(env[0] / env[1]) == pytest.approx(60.0)


def test_direct_path_geometry():
    spec = datagen.SceneSpec(seed=2, M=6, distances=[1.2, 1.9], azimuths=[0.3, 2.0])
    mics = spec.mic_positions()
    src = np.array([1.2 * math.cos(0.3), 1.2 * math.sin(0.3)])

    def peak(h):
        i = int(np.argmax(h))
        y0, y1, y2 = h[i - 1], h[i], h[i + 1]
        return i + 0.5 * (y0 - y2) / (y0 - 2 * y1 + y2)

    expect = [np.linalg.norm(src - m) / 343.0 * 8000 for m in mics]
    got = [peak(datagen.synth_rir(spec, 0, m).direct) for m in range(6)]
    for m in range(1, 6):
        assert abs((got[m] - got[0]) - (expect[m] - expect[0])) < 0.5
    # the windowed sinc has unit DC gain, so the taps sum to the 1/r attenuation
    assert datagen.synth_rir(spec, 0, 0).direct.sum() == pytest.approx(1 / np.linalg.norm(src - mics[0]), rel=0.02)


def test_longer_t60_more_tail_energy():
    short = datagen.synth_rir(datagen.SceneSpec(seed=3, t60=0.2), 0, 0)
    long = datagen.synth_rir(datagen.SceneSpec(seed=3, t60=0.5), 0, 0)
    assert np.sum(long.tail ** 2) > np.sum(short.tail ** 2)


def test_anechoic_noiseless_mixture_is_sum_of_refs():
    spec = datagen.SceneSpec.sample(4, M=2, anechoic=True, noise=False)
    mixture, refs, _ = datagen.mix(spec)
    np.testing.assert_array_equal(mixture.samples, refs.sum(axis=0))


def test_snr_matches_drawn_value():
    spec = datagen.SceneSpec.sample(5, M=3)
    spec_clean = datagen.SceneSpec(**{**spec.__dict__, "snr_db": None})
    noisy, _, _ = datagen.mix(spec)
    clean, _, _ = datagen.mix(spec_clean)
    noise = noisy.samples - clean.samples
    for m in range(3):
        snr = 10 * np.log10(np.mean(clean.samples[0] ** 2) / np.mean(noise[m] ** 2))
        assert abs(snr - spec.snr_db) < 0.1
    assert abs(np.corrcoef(noise[0], noise[1])[0, 1]) < 0.05


def test_mix_deterministic():
    spec = datagen.SceneSpec.sample(6, M=2)
    a = datagen.mix(spec)[0].samples
    b = datagen.mix(datagen.SceneSpec.sample(6, M=2))[0].samples
    np.testing.assert_array_equal(a, b)


def test_levels_applied():
    spec = datagen.SceneSpec(seed=7, t60=0.0, snr_db=None, levels_db=[0.0, -5.0], distances=[1.0, 1.0],
                             azimuths=[0.0, 1.0])
    _, refs, _ = datagen.mix(spec)
    ratio = 10 * np.log10(np.mean(refs[1, 0] ** 2) / np.mean(refs[0, 0] ** 2))
    assert ratio == pytest.approx(-5.0, abs=0.5)


def test_sampled_parameters_in_range():
    for seed in range(1000):
        s = datagen.SceneSpec.sample(seed, C=3, M=4)
        assert 0.2 <= s.t60 <= 0.5 and 20 <= s.snr_db <= 30
        assert all(-5 <= v <= 5 for v in s.levels_db)
        assert all(1 <= d <= 2 for d in s.distances)


@pytest.mark.parametrize("bad", [dict(t60=0.1), dict(snr_db=40.0), dict(levels_db=[0.0, 9.0]),
                                 dict(distances=[0.5, 1.0]), dict(sample_rate=44100), dict(levels_db=[0.0])])
def test_spec_rejects(bad):
    with pytest.raises(ConfigurationError):
        datagen.SceneSpec(seed=0, **bad)


def test_dataset_files_and_determinism(tmp_path):
    tpl = datagen.SceneTemplate(duration=0.5, seed=11)
    man = datagen.dataset_generate(4, tmp_path / "a", tpl)
    datagen.dataset_generate(4, tmp_path / "b", tpl)
    wavs = sorted(p.name for p in (tmp_path / "a").glob("*.wav"))
    assert len(wavs) == 12 and len(man["scenes"]) == 4
    for name in wavs + ["manifest.json"]:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    loaded = datagen.load_manifest(tmp_path / "a" / "manifest.json")
    utts = datagen.load_utterances(loaded)
    assert utts[0].mixture.shape == (1, 4000) and utts[0].refs.shape == (2, 4000)
    assert set(man["scenes"][0]) == {"id", "seed", "mixture_path", "ref_paths", "t60", "snr_db", "levels_db"}


def test_manifest_errors(tmp_path):
    p = tmp_path / "m.json"
    p.write_text(json.dumps({"version": 2, "scenes": []}))
    with pytest.raises(FormatError, match="version"):
        datagen.load_manifest(p)
    p.write_text(json.dumps({"version": 1, "scenes": [{"id": "x"}]}))
    with pytest.raises(FormatError, match="seed"):
        datagen.load_manifest(p)
    p.write_text("{")
    with pytest.raises(FormatError):
        datagen.load_manifest(p)
