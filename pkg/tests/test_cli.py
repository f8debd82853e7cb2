import hashlib
import json
import logging
import wave

import numpy as np
import pytest

from simulstream import desk_config, init_random, save
from simulstream.audio import read_wav, write_wav
from simulstream.cli import main
from simulstream.errors import InputError
from tests.conftest import noise


@pytest.fixture
def files(tmp_path, rng):
    cfg = desk_config(k=8)
    cfg.save(tmp_path / "desk.json")
    save(init_random(cfg, 0), tmp_path / "desk.bin")
    write_wav(tmp_path / "in.wav", noise(rng, 16000 * 1), 16000)
    return tmp_path


def sha(path):
    return hashlib.sha1(path.read_bytes()).hexdigest()


def pcm(path):
    with wave.open(str(path)) as fh:
        assert fh.getframerate() == 24000 and fh.getnchannels() == 1
        return np.frombuffer(fh.readframes(fh.getnframes()), "<i2").astype(np.int32)


def run_cli(files, out, *extra):
    return main(["run", "--config", str(files / "desk.json"), "--input", str(files / "in.wav"),
                 "--output", str(files / out), *extra])


def test_run_writes_24k_wav(files):
    assert run_cli(files, "o.wav") == 0
    assert pcm(files / "o.wav").size % 600 == 0 and pcm(files / "o.wav").size > 0


def test_thread_count_does_not_change_output(files):
    assert run_cli(files, "a.wav", "--threads", "1") == 0
    assert run_cli(files, "b.wav", "--threads", "2") == 0
    assert sha(files / "a.wav") == sha(files / "b.wav")


def test_offline_within_one_lsb_of_streaming(files):
    assert run_cli(files, "s.wav", "--threads", "1") == 0
    assert run_cli(files, "o.wav", "--mode", "offline") == 0
    s, o = pcm(files / "s.wav"), pcm(files / "o.wav")
    assert s.shape == o.shape
    assert np.max(np.abs(s - o)) <= 1


def test_model_file_and_metrics(files):
    metrics = files / "m.jsonl"
    assert main(["run", "--model", str(files / "desk.bin"), "--k", "8", "--input",
                 str(files / "in.wav"), "--output", str(files / "o.wav"),
                 "--metrics", str(metrics)]) == 0
    rows = [json.loads(line) for line in metrics.read_text().splitlines()]
    assert rows and set(rows[0]) == {"frame_index", "encoder_ms", "decoder_vocoder_ms",
                                     "wall_emit_ms", "rtf"}
    summary = json.loads((files / "m.summary.json").read_text())
    assert summary["output_frames"] == len(rows)
    assert main(["run", "--config", str(files / "desk.json"), "--input", str(files / "in.wav"),
                 "--output", str(files / "o.wav"), "--metrics", str(files / "m.csv")]) == 0
    assert (files / "m.csv").read_text().startswith("frame_index,encoder_ms")


def test_short_input_warns(files, caplog):
    write_wav(files / "short.wav", np.zeros(1600, np.int16), 16000)
    with caplog.at_level(logging.WARNING):
        code = main(["run", "--config", str(files / "desk.json"), "--input",
                     str(files / "short.wav"), "--output", str(files / "o.wav")])
    assert code == 0
    assert "shorter than wait-k delay" in caplog.text


def test_wrong_rate_rejected(files):
    write_wav(files / "8k.wav", np.zeros(8000, np.int16), 8000)
    assert main(["run", "--config", str(files / "desk.json"), "--input", str(files / "8k.wav"),
                 "--output", str(files / "o.wav")]) == 3
    with pytest.raises(InputError):
        read_wav(files / "8k.wav")


def test_missing_input_is_io_error(files):
    assert run_cli(files, "o.wav", "--input", str(files / "nope.wav")) == 3


def test_usage_errors(files, capsys):
    with pytest.raises(SystemExit) as info:
        main(["run", "--input", "x.wav"])
    assert info.value.code == 2
    assert main(["bench", "--configs", "768by6"]) == 2
    (files / "bad.json").write_text('{"k": -1}')
    assert main(["verify", "--config", str(files / "bad.json")]) == 2


def test_verify_passes_and_fails(files, capsys):
    assert main(["verify", "--config", str(files / "desk.json")]) == 0
    assert main(["verify", "--config", str(files / "desk.json"), "--tolerance", "0"]) == 1
    capsys.readouterr()
    assert main(["verify", "--config", str(files / "desk.json"), "--inject-fault", "conv-cache"]) == 1
    out = capsys.readouterr().out
    assert "FAILED in: encoder" in out


def test_bench_rows(files, capsys):
    report = files / "r.json"
    assert main(["bench", "--configs", "256x4,512x4", "--enc-layers", "2", "--k", "5",
                 "--seconds", "0.6", "--repeat", "2", "--int8", "--report", str(report)]) == 0
    data = json.loads(report.read_text())
    assert [(r["decoder_dim"], r["dtype"]) for r in data["rows"]] == [
        (256, "float32"), (256, "int8"), (512, "float32"), (512, "int8")]
    assert data["settings"]["repeat"] == 2


def test_quantize_and_inspect(files, capsys):
    src, dst = files / "desk.bin", files / "desk.i8.bin"
    assert main(["quantize", "--in", str(src), "--out", str(dst)]) == 0
    ratio = src.stat().st_size / dst.stat().st_size
    assert 3.0 <= ratio <= 4.0
    capsys.readouterr()
    assert main(["inspect", "--model", str(dst)]) == 0
    out = capsys.readouterr().out
    assert "dtype: i8" in out
    predicted = int(out.split("predicted file bytes:")[1].split()[0])
    assert predicted == dst.stat().st_size
    # a second pass must refuse
    assert main(["quantize", "--in", str(dst), "--out", str(files / "x.bin")]) == 3


def test_inspect_float(files, capsys):
    assert main(["inspect", "--model", str(files / "desk.bin")]) == 0
    out = capsys.readouterr().out
    predicted = int(out.split("predicted file bytes:")[1].split()[0])
    assert predicted == (files / "desk.bin").stat().st_size
    assert "enc/subsample/w" in out


def test_corrupt_model_is_io_error(files):
    (files / "bad.bin").write_bytes(b"nope")
    assert main(["inspect", "--model", str(files / "bad.bin")]) == 3


def test_seed_env_override(files, monkeypatch):
    monkeypatch.setenv("SIMULSTREAM_SEED", "3")
    assert run_cli(files, "e.wav") == 0
    assert run_cli(files, "s.wav", "--seed", "3") == 0
    assert run_cli(files, "z.wav", "--seed", "0") == 0
    assert sha(files / "e.wav") == sha(files / "s.wav") != sha(files / "z.wav")
    monkeypatch.setenv("SIMULSTREAM_SEED", "abc")
    assert run_cli(files, "e.wav") == 2
