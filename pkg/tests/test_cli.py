"""CLI behaviour via main(argv): exit codes, JSON reports, file outputs."""

import json

import numpy as np
import pytest

from dcaec.cli import main
from dcaec.dsp import RATE, AudioBuffer
from dcaec.model import ModelConfig, count_params
from dcaec.wavio import write_wav
from dcaec.weights_io import load_weights, save_weights


@pytest.fixture(scope="module")
def desk_weights(tmp_path_factory):
    path = tmp_path_factory.mktemp("weights") / "desk.bin"
    main(["init-weights", "--config", "desk", "--seed", "0",
          "--out", str(path)])
    return path


def _wav(path, samples):
    write_wav(path, AudioBuffer(np.asarray(samples, dtype=np.float64)))
    return path


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as e:
        main(["--version"])
    assert e.value.code == 0


def test_missing_subcommand_rejected():
    with pytest.raises(SystemExit) as e:
        main([])
    assert e.value.code == 2


def test_init_weights_writes_expected_count(desk_weights, capsys):
    store = load_weights(desk_weights)
    assert count_params(store) == 72_028
    assert store.meta["config_hash"] == ModelConfig.desk_mode().config_hash()


def test_process_silence_to_silence(tmp_path, desk_weights, capsys):
    mic = _wav(tmp_path / "mic.wav", np.zeros(RATE // 2))
    far = _wav(tmp_path / "far.wav", np.zeros(RATE // 2))
    out = tmp_path / "out.wav"
    main(["process", "--mic", str(mic), "--farend", str(far),
          "--weights", str(desk_weights), "--out", str(out)])
    rep = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert rep["mode"] == "offline"
    assert rep["rtf"] > 0
    from dcaec.wavio import read_wav
    assert np.max(np.abs(read_wav(out).samples)) <= 1.0 / 32768.0


def test_process_streaming_report(tmp_path, desk_weights, capsys):
    rng = np.random.default_rng(0)
    mic = _wav(tmp_path / "m.wav", 0.05 * rng.normal(size=RATE // 4))
    far = _wav(tmp_path / "f.wav", 0.05 * rng.normal(size=RATE // 4))
    out = tmp_path / "o.wav"
    main(["process", "--mic", str(mic), "--farend", str(far),
          "--weights", str(desk_weights), "--out", str(out), "--streaming"])
    rep = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert rep["mode"] == "streaming"
    assert rep["latency_samples"] <= 640


def test_process_missing_file_exit_2(tmp_path, desk_weights, capsys):
    with pytest.raises(SystemExit) as e:
        main(["process", "--mic", str(tmp_path / "nope.wav"),
              "--farend", str(tmp_path / "nope.wav"),
              "--weights", str(desk_weights),
              "--out", str(tmp_path / "o.wav")])
    assert e.value.code == 2


def test_process_corrupt_weights_exit_2(tmp_path, capsys):
    mic = _wav(tmp_path / "m.wav", np.zeros(RATE // 4))
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"garbage")
    with pytest.raises(SystemExit) as e:
        main(["process", "--mic", str(mic), "--farend", str(mic),
              "--weights", str(bad), "--out", str(tmp_path / "o.wav")])
    assert e.value.code == 2


def test_weights_without_config_exit_2(tmp_path, capsys):
    from collections import OrderedDict
    from dcaec.model import WeightStore
    path = tmp_path / "nocfg.bin"
    save_weights(path, WeightStore(OrderedDict(a=np.zeros(2, dtype=np.float32))))
    mic = _wav(tmp_path / "m.wav", np.zeros(RATE // 4))
    with pytest.raises(SystemExit) as e:
        main(["process", "--mic", str(mic), "--farend", str(mic),
              "--weights", str(path), "--out", str(tmp_path / "o.wav")])
    assert e.value.code == 2


def test_metrics_json(tmp_path, capsys):
    rng = np.random.default_rng(1)
    s = 0.1 * rng.normal(size=RATE)
    est = s + 0.01 * rng.normal(size=RATE)
    ref = _wav(tmp_path / "ref.wav", s)
    est_p = _wav(tmp_path / "est.wav", est)
    mic = _wav(tmp_path / "mic.wav", s + 0.05 * rng.normal(size=RATE))
    main(["metrics", "--est", str(est_p), "--ref", str(ref), "--mic", str(mic)])
    rep = json.loads(capsys.readouterr().out.strip())
    assert rep["si_snr_db"] > 10.0
    assert set(rep["seg_sisnr_per_c"]) == {"1", "10", "20"}
    assert rep["erle_db"] is not None


def test_metrics_length_mismatch_exit_2(tmp_path, capsys):
    a = _wav(tmp_path / "a.wav", np.zeros(1000) + 0.1)
    b = _wav(tmp_path / "b.wav", np.zeros(500) + 0.1)
    with pytest.raises(SystemExit) as e:
        main(["metrics", "--est", str(a), "--ref", str(b), "--mic", str(a)])
    assert e.value.code == 2


def test_simulate_writes_manifest_deterministically(tmp_path, capsys):
    d1, d2 = tmp_path / "s1", tmp_path / "s2"
    argv = ["simulate", "--recipes", "2", "--seed", "11",
            "--rirs", "2", "--clip-seconds", "1.0"]
    main(argv + ["--outdir", str(d1)])
    main(argv + ["--outdir", str(d2)])
    m1 = (d1 / "manifest.jsonl").read_text()
    assert m1 == (d2 / "manifest.jsonl").read_text()
    lines = [json.loads(l) for l in m1.splitlines()]
    assert len(lines) == 2
    for i, rec in enumerate(lines):
        for tag in ("s", "x", "y", "d", "v"):
            f = d1 / rec["files"][tag]
            assert f.exists()
            assert f.name == f"ex{i:05d}_{tag}.wav"
            assert (d1 / rec["files"][tag]).read_bytes() == \
                   (d2 / rec["files"][tag]).read_bytes()


def test_simulate_ranges_file(tmp_path, capsys):
    ranges = tmp_path / "ranges.txt"
    ranges.write_text("ser_db = -5, 5\np_farend_zero = 0\n"
                      "p_noise_zero = 0\ndelay_samples = 0, 0\n")
    out = tmp_path / "sim"
    main(["simulate", "--recipes", "3", "--seed", "2", "--rirs", "2",
          "--clip-seconds", "1.0", "--ranges", str(ranges),
          "--outdir", str(out)])
    for rec in [json.loads(l) for l in (out / "manifest.jsonl").read_text().splitlines()]:
        assert -5.0 <= rec["ser_db"] <= 5.0
        assert rec["delay_samples"] == 0
        assert not rec["farend_zeroed"]


def test_traintoy_smoke(tmp_path, capsys):
    out = tmp_path / "trained.bin"
    main(["traintoy", "--steps", "2", "--examples", "1",
          "--chunk-seconds", "0.25", "--config", "desk",
          "--out", str(out)])
    text = capsys.readouterr().out
    steps = [json.loads(l) for l in text.splitlines() if l.startswith("{")]
    assert len(steps) == 2
    assert out.exists()
    load_weights(out)


def test_bench_report(desk_weights, capsys):
    main(["bench", "--weights", str(desk_weights), "--seconds", "0.5"])
    rep = json.loads(capsys.readouterr().out.strip())
    assert rep["params"] == 72_028
    assert rep["latency_samples"] == 480
    assert rep["rtf"] > 0
