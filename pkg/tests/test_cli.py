import json
import subprocess
import sys

import pytest

from chunkstore import cli
from chunkstore.synth import two_domain_corpus


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    corpus = two_domain_corpus(seed=1, n_out=300, n_in_train=150, n_in_test=12)
    v = corpus.vocab

    def write(name, seqs):
        (root / name).write_text("".join(" ".join(v.decode(s)) + "\n" for s in seqs))

    write("train.src", [p.source for p in corpus.out_domain])
    write("train.tgt", [p.target for p in corpus.out_domain])
    write("ds.src", [p.source for p in corpus.in_train])
    write("ds.tgt", [p.target for p in corpus.in_train])
    write("test.src", [p.source for p in corpus.in_test])
    write("test.tgt", [p.target for p in corpus.in_test])
    write("three.src", [p.source for p in corpus.in_test[:3]])
    config = {"paths": {n: str(root / f) for n, f in [
        ("vocab", "vocab.txt"), ("model", "model.bin"), ("datastore", "ds.bin"),
        ("train_src", "train.src"), ("train_tgt", "train.tgt"), ("ds_src", "ds.src"),
        ("ds_tgt", "ds.tgt"), ("input", "test.src"), ("reference", "test.tgt")]},
        "datastore": {"chunk_size": 8, "d_key": 16, "d_cache": 8},
        "decode": {"max_len": 40}}
    (root / "config.json").write_text(json.dumps(config))
    for cmd in ("build-vocab", "train-model", "build-datastore"):
        assert cli.main([cmd, "--config", str(root / "config.json")]) == 0
    return root


def run(capsys, *args):
    code = cli.main(list(args))
    out = capsys.readouterr()
    return code, out.out, out.err


def records(text):
    return [json.loads(line) for line in text.splitlines() if line.startswith("{")]


def test_translate_base_three_lines(workdir, capsys):
    code, out, _ = run(capsys, "translate", "--config", str(workdir / "config.json"),
                       "--strategy", "base", "--input", str(workdir / "three.src"),
                       "--reference", "")
    assert code == 0
    lines = out.splitlines()
    assert len(lines) == 3
    rec = json.loads(lines[0])
    assert set(rec) == {"id", "hypothesis", "tokens", "ds_searches", "cache_searches", "wall_ms"}
    assert [json.loads(x)["id"] for x in lines] == [0, 1, 2]


def test_translate_with_reference_has_bleu(workdir, capsys):
    code, out, err = run(capsys, "translate", "--config", str(workdir / "config.json"))
    assert code == 0
    recs = records(out)
    assert len(recs) == 12 and all("bleu" in r for r in recs)
    assert "corpus BLEU" in err


def test_missing_datastore_is_a_validation_error(workdir, tmp_path, capsys):
    cfg = json.loads((workdir / "config.json").read_text())
    cfg["paths"]["datastore"] = str(tmp_path / "gone.bin")
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg))
    code, _, err = run(capsys, "translate", "--config", str(path))
    assert code == 1
    assert "paths.datastore" in err


def test_unknown_key_and_bad_flag_exit_1(workdir, tmp_path, capsys):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"decode": {"beems": 3}}))
    assert run(capsys, "translate", "--config", str(path))[0] == 1
    with pytest.raises(SystemExit) as exc:
        cli.main(["translate", "--beam", "many"])
    assert exc.value.code == 1


def test_runtime_error_exit_2(workdir, tmp_path, capsys):
    cfg = json.loads((workdir / "config.json").read_text())
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"junk")
    cfg["paths"]["datastore"] = str(bad)
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg))
    code, _, err = run(capsys, "translate", "--config", str(path))
    assert code == 2 and "expected" in err


def test_flags_override_config(workdir):
    args = cli.build_parser().parse_args(
        ["translate", "--config", str(workdir / "config.json"), "--beam", "2", "--k", "4",
         "--lambda", "0.5", "--schedule", "FIXED(6)", "--index", "ivf", "--nprobe", "3"])
    cfg = cli.resolve_config(args)
    d = cfg.decode_config()
    assert d.beam_size == 2 and d.mix.k == 4 and d.mix.lambda_ds == 0.5
    assert d.schedule.label() == "FIXED(6)"
    assert cfg.datastore.index == "ivf" and cfg.datastore.nprobe == 3
    assert cfg.datastore.chunk_size == 8  # from file


def test_every_flag_has_a_config_field():
    fields = {
        "decode": set(cli.RunConfig().to_dict()["decode"]),
        "schedule": set(cli.RunConfig().to_dict()["schedule"]),
        "datastore": set(cli.RunConfig().to_dict()["datastore"]),
        "paths": set(cli.RunConfig().to_dict()["paths"]),
    }
    for section, key, _ in cli._OVERRIDES.values():
        assert key in fields[section]


def test_output_identical_across_runs_and_threads(workdir, tmp_path, capsys, monkeypatch):
    outs = []
    for threads in ("1", "3", "3"):
        monkeypatch.setenv(cli.THREADS_ENV, threads)
        out_path = tmp_path / f"hyp{len(outs)}.txt"
        cfg = json.loads((workdir / "config.json").read_text())
        cfg["threads"] = 4
        cfg["decode"]["batch"] = 4
        path = tmp_path / "c.json"
        path.write_text(json.dumps(cfg))
        assert run(capsys, "translate", "--config", str(path), "--output", str(out_path))[0] == 0
        outs.append(out_path.read_bytes())
    assert outs[0] == outs[1] == outs[2]
    assert len(outs[0].splitlines()) == 12


def test_ablate_schedule_rows(workdir, tmp_path, capsys):
    cfg = json.loads((workdir / "config.json").read_text())
    cfg["ablate"] = {"strategies": ["cache"]}
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg))
    code, out, _ = run(capsys, "ablate", "--config", str(path))
    assert code == 0
    recs = records(out)
    assert [r["schedule"] for r in recs] == ["FIXED(6)", "FIXED(8)", "GEOMETRIC(2,8)",
                                             "GEOMETRIC(2,16)", "GEOMETRIC(2,32)"]
    for r in recs:
        assert isinstance(r["bleu"], float) and 0 < r["searches_per_token"] < 1


def test_bench_and_onthefly(workdir, capsys):
    code, out, _ = run(capsys, "bench", "--config", str(workdir / "config.json"))
    assert code == 0
    (rec,) = records(out)
    assert rec["command"] == "bench" and "tokens_per_sec" in rec and "bleu" in rec
    code, out, _ = run(capsys, "onthefly", "--config", str(workdir / "config.json"))
    assert code == 0
    summary = records(out)[-1]
    assert summary["summary"] and summary["warm"] + summary["stream"] == 12


def test_console_entry_point(workdir):
    proc = subprocess.run([sys.executable, "-m", "chunkstore.cli", "translate", "--config",
                           str(workdir / "config.json"), "--strategy", "base"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and len(proc.stdout.splitlines()) == 12
