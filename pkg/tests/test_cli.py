import csv

import pytest

from csicodec.channel import read_dataset
from csicodec.cli import main


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["gen", "--nc", "64", "--nt", "16", "--count", "40", "--paths", "8",
                 "--seed", "42", "-o", str(d / "train.csid")]) == 0
    assert main(["gen", "--nc", "64", "--nt", "16", "--count", "6", "--seed", "43",
                 "-o", str(d / "test.csid")]) == 0
    for lam_id, name in ((0, "m0.cmck"), (4, "m4.cmck")):
        assert main(["train", "--data", str(d / "train.csid"), "--lambda-id", str(lam_id),
                     "--epochs", "1", "--batch", "8", "--width", "4", "--seed", "1",
                     "-o", str(d / name)]) == 0
    return d


def test_gen_header(workdir):
    assert read_dataset(workdir / "train.csid").header == (64, 16, 40)


def test_gen_is_deterministic(workdir, tmp_path):
    out = tmp_path / "again.csid"
    main(["gen", "--nc", "64", "--nt", "16", "--count", "40", "--paths", "8",
          "--seed", "42", "-o", str(out)])
    assert out.read_bytes() == (workdir / "train.csid").read_bytes()


def test_train_is_deterministic(workdir, tmp_path):
    out = tmp_path / "m.cmck"
    main(["train", "--data", str(workdir / "train.csid"), "--lambda-id", "4", "--epochs", "1",
          "--batch", "8", "--width", "4", "--seed", "1", "-o", str(out)])
    assert out.read_bytes() == (workdir / "m4.cmck").read_bytes()


def test_compress_decompress_eval(workdir, capsys):
    d = workdir
    assert main(["compress", "--model", str(d / "m4.cmck"), "--data", str(d / "test.csid"),
                 "--index", "0", "-o", str(d / "x.cmc")]) == 0
    first = (d / "x.cmc").read_bytes()
    assert first[:4] == b"CMC1"
    main(["compress", "--model", str(d / "m4.cmck"), "--data", str(d / "test.csid"),
          "--index", "0", "-o", str(d / "x.cmc")])
    assert (d / "x.cmc").read_bytes() == first
    assert main(["decompress", "--model", str(d / "m4.cmck"), "-i", str(d / "x.cmc"),
                 "-o", str(d / "hhat.csid")]) == 0
    assert read_dataset(d / "hhat.csid").header == (64, 16, 1)
    capsys.readouterr()
    assert main(["eval", "--data", str(d / "test.csid"), "--recon", str(d / "hhat.csid"),
                 "--index", "0"]) == 0
    fields = dict(kv.split("=") for kv in capsys.readouterr().out.split())
    assert float(fields["nmse_db"]) < float("inf")
    assert 0.0 <= float(fields["rho"]) <= 1.0
    assert main(["eval", "--data", str(d / "test.csid"), "--model", str(d / "m4.cmck")]) == 0
    assert "bit_rate=" in capsys.readouterr().out


def test_sweep_csv(workdir):
    d = workdir
    out = d / "rd.csv"
    assert main(["sweep", "--models", f"{d / 'm4.cmck'},{d / 'm0.cmck'}", "--data",
                 str(d / "test.csid"), "-o", str(out)]) == 0
    rows = list(csv.reader(out.open()))
    assert rows[0] == ["lambda", "bit_rate", "entropy", "nmse_db", "rho"]
    assert len(rows) == 3
    assert [float(r[0]) for r in rows[1:]] == [1e4, 1e6]


def test_padding_flags(workdir, tmp_path):
    odd = tmp_path / "odd.csid"
    main(["gen", "--nc", "60", "--nt", "16", "--count", "2", "--seed", "5", "-o", str(odd)])
    model = str(workdir / "m4.cmck")
    assert main(["compress", "--model", model, "--data", str(odd), "-o", str(tmp_path / "a")]) == 1
    assert main(["compress", "--model", model, "--data", str(odd), "--pad", "zero",
                 "-o", str(tmp_path / "a")]) == 0
    assert main(["decompress", "--model", model, "-i", str(tmp_path / "a"),
                 "-o", str(tmp_path / "b.csid")]) == 0
    assert read_dataset(tmp_path / "b.csid").header == (60, 16, 1)


def test_lambda_by_value_warns(workdir, tmp_path, capsys):
    out = tmp_path / "m.cmck"
    assert main(["train", "--data", str(workdir / "train.csid"), "--lambda", "3e6",
                 "--epochs", "1", "--batch", "8", "--width", "4", "-o", str(out)]) == 0
    captured = capsys.readouterr()
    assert "lambda id 4" in captured.out or "lambda id 5" in captured.out
    assert "not in the table" in captured.err


@pytest.mark.parametrize("argv", [
    [],
    ["bogus"],
    ["gen", "--count", "3"],
    ["gen", "--count", "3", "-o", "x", "--unknown"],
    ["train", "--data", "x", "-o", "y"],
    ["train", "--data", "x", "--lambda-id", "9", "-o", "y"],
    ["train", "--data", "x", "--lambda-id", "1", "--lambda", "1e4", "-o", "y"],
    ["compress", "--model", "m"],
])
def test_usage_errors_exit_2(argv, capsys):
    assert main(argv) == 2
    assert "usage" in capsys.readouterr().err


def test_eval_flag_conflict_is_usage_error(workdir, capsys):
    assert main(["eval", "--data", str(workdir / "test.csid")]) == 2
    assert "usage" in capsys.readouterr().err


def test_runtime_errors_exit_1(workdir, tmp_path, capsys):
    assert main(["compress", "--model", str(tmp_path / "missing.cmck"), "--data",
                 str(workdir / "test.csid"), "-o", str(tmp_path / "x")]) == 1
    garbage = tmp_path / "g.cmc"
    garbage.write_bytes(b"not a stream")
    assert main(["decompress", "--model", str(workdir / "m4.cmck"), "-i", str(garbage),
                 "-o", str(tmp_path / "y")]) == 1
    assert main(["decompress", "--model", str(workdir / "m0.cmck"), "-i",
                 str(workdir / "x.cmc"), "-o", str(tmp_path / "y")]) == 1
    assert "lambda id" in capsys.readouterr().err


def test_index_out_of_range(workdir, tmp_path):
    assert main(["compress", "--model", str(workdir / "m4.cmck"), "--data",
                 str(workdir / "test.csid"), "--index", "99", "-o", str(tmp_path / "x")]) == 2


def test_eval_rejects_mismatched_reconstruction(workdir, tmp_path, capsys):
    other = tmp_path / "other.csid"
    main(["gen", "--nc", "32", "--nt", "16", "--count", "1", "--seed", "9", "-o", str(other)])
    assert main(["eval", "--data", str(workdir / "test.csid"), "--recon", str(other),
                 "--index", "0"]) == 1
    assert "reference is 64x16" in capsys.readouterr().err
