import csv
import io
import os

import numpy as np
import pytest

from nnoc.cli import main
from nnoc.context import ContextHistogram
from nnoc.geometry import voxelize
from nnoc.plyio import load_voxels, write_ply
from nnoc.synthetic import surface_scene


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def tsv(text):
    return list(csv.DictReader(io.StringIO(text), delimiter="\t"))


@pytest.fixture
def data(tmp_path):
    d = tmp_path / "data"
    d.mkdir()
    for s in range(2):
        write_ply(surface_scene(s, 5), d / f"s{s}.ply")
    return d


@pytest.fixture
def model(tmp_path, capsys):
    p = tmp_path / "m.bin"
    assert run(capsys, "init", "--variant", "fnnoc3", "--seed", 2, "-o", p)[0] == 0
    return p


def test_encode_decode_verify(tmp_path, data, model, capsys):
    code, out, _ = run(capsys, "encode", data / "s0.ply", "--model", model, "-o", tmp_path / "s.bin",
                       "--report", "tsv")
    assert code == 0
    summary = tsv(out.split("\n\n")[0])[0]
    bits = int(summary["bits"])
    assert bits == 8 * os.path.getsize(tmp_path / "s.bin")
    n = int(summary["voxels"])
    assert float(summary["bpov"]) == pytest.approx(bits / n, abs=1e-4)
    assert float(summary["bpov_no_header"]) == pytest.approx((bits - 8 * 28) / n, abs=1e-4)
    levels = tsv(out.split("\n\n")[1])
    assert [int(r["level"]) for r in levels] == [3, 4, 5]

    code, _, _ = run(capsys, "decode", tmp_path / "s.bin", "--model", model, "-o", tmp_path / "back.ply")
    assert code == 0
    assert load_voxels(tmp_path / "back.ply") == load_voxels(data / "s0.ply")

    code, out, _ = run(capsys, "verify", data / "s1.ply", "--model", model)
    assert code == 0 and "LOSSLESS: OK" in out


def test_collect_stats(tmp_path, capsys):
    p = tmp_path / "one.ply"
    write_ply(voxelize([(5, 2, 7)], 3), p)
    code, out, _ = run(capsys, "collect", p, "-o", tmp_path / "h1", "--report", "tsv")
    row = tsv(out)[0]
    assert code == 0 and int(row["total"]) == 8 and int(row["unique"]) <= 8
    code, out, _ = run(capsys, "collect", p, p, "-o", tmp_path / "h2", "--report", "tsv", "--threads", 2)
    row2 = tsv(out)[0]
    assert row2["unique"] == row["unique"] and int(row2["total"]) == 16
    assert ContextHistogram.load(tmp_path / "h2").total == 16


def test_train_log_and_determinism(tmp_path, data, capsys):
    run(capsys, "collect", *sorted(data.iterdir()), "--variant", "fnnoc2", "-o", tmp_path / "h")
    outs = []
    for i in range(2):
        code, out, _ = run(capsys, "train", tmp_path / "h", "-o", tmp_path / f"m{i}", "--batch-size", 256,
                           "--max-epochs", 6, "--seed", 3, "--report", "tsv", "--log", tmp_path / f"log{i}",
                           "--figure", tmp_path / f"c{i}.png")
        assert code == 0
        outs.append(out)
    assert (tmp_path / "m0").read_bytes() == (tmp_path / "m1").read_bytes()
    rows = tsv(outs[0])
    best = [float(r["best_val_bits"]) for r in rows]
    assert all(b <= a for a, b in zip(best, best[1:]))
    assert best[-1] < 1.0
    assert (tmp_path / "log0").read_text() == outs[0]
    assert (tmp_path / "c0.png").stat().st_size > 0


def test_bench_table(tmp_path, data, model, capsys):
    base = tmp_path / "base.tsv"
    base.write_text("cloud\tbpov\ns0\t4.0\ns1\t2.0\n")
    code, out, _ = run(capsys, "bench", data, "--model", model, "--baseline", base, "--decode",
                       "--report", "tsv", "--figure", tmp_path / "b.png")
    assert code == 0
    rows = tsv(out)
    per, avg = rows[:-1], rows[-1]
    assert [r["cloud"] for r in per] == ["s0", "s1"]
    bp = [float(r["bpov"]) for r in per]
    assert float(avg["bpov"]) == pytest.approx(np.mean(bp), abs=1e-4)
    for r, b in zip(per, (4.0, 2.0)):
        assert float(r["gain_pct"]) == pytest.approx(100 * (1 - float(r["bpov"]) / b), abs=1e-3)
        assert r["lossless"] == "yes"
    assert (tmp_path / "b.png").stat().st_size > 0


def test_bench_empty_dir(tmp_path, model, capsys):
    (tmp_path / "empty").mkdir()
    code, out, err = run(capsys, "bench", tmp_path / "empty", "--model", model)
    assert code == 3 and out == "" and "no .ply" in err


def test_exit_codes(tmp_path, data, model, capsys):
    code, _, _ = run(capsys, "encode", data / "s0.ply", "--model", model, "--variant", "nnoc", "-o", tmp_path / "x")
    assert code == 4
    code, _, _ = run(capsys, "encode", tmp_path / "missing.ply", "--model", model, "-o", tmp_path / "x")
    assert code == 3
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"garbage")
    code, _, _ = run(capsys, "decode", bad, "--model", model, "-o", tmp_path / "y.ply")
    assert code == 4
    with pytest.raises(SystemExit) as exc:
        main(["encode"])
    assert exc.value.code == 2


def test_encode_twice_identical(tmp_path, data, model, capsys):
    for name in ("a", "b"):
        run(capsys, "encode", data / "s1.ply", "--model", model, "-o", tmp_path / name)
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_synth(tmp_path, capsys):
    code, _, _ = run(capsys, "synth", "-o", tmp_path / "syn", "--count", 2, "--bitdepth", 4, "--seed", 5)
    assert code == 0
    assert sorted(os.listdir(tmp_path / "syn")) == ["scene005.ply", "scene006.ply"]
