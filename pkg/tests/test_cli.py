import datetime as dt
import re

import numpy as np
import pytest

from paddystage import cli, nn, phenology
from paddystage.cli import EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main

QUICK = ["--epochs", "8", "--batch-size", "32"]


@pytest.fixture
def data(tmp_path):
    path = tmp_path / "d.csv"
    assert main(["synth", "--per-class", "30", "--seed", "7", "--noise", "0.02", "--out", str(path)]) == EXIT_OK
    return path


def test_synth_counts_and_determinism(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["synth", "--per-class", "100", "--seed", "7", "--out", str(a)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "GS3\t100" in out
    assert len(a.read_text().splitlines()) == 501
    main(["synth", "--per-class", "100", "--seed", "7", "--out", str(b)])
    assert a.read_bytes() == b.read_bytes()


def test_synth_rejects_zero_per_class(tmp_path, capsys):
    assert main(["synth", "--per-class", "0", "--out", str(tmp_path / "x.csv")]) == EXIT_USAGE
    assert "per-class" in capsys.readouterr().err


def test_synth_unwritable_path(tmp_path):
    assert main(["synth", "--per-class", "1", "--out", str(tmp_path / "no" / "dir" / "x.csv")]) == EXIT_DATA


def test_train_writes_model_report_and_summary(tmp_path, data, capsys):
    out = tmp_path / "run"
    rc = main(["train", "--method", "dnn+bn+dropout", "--data", str(data), "--seed", "1", "--out", str(out)] + QUICK)
    assert rc == EXIT_OK
    assert capsys.readouterr().out.startswith("dnn+bn+dropout,")
    assert (out / "dnn+bn+dropout.model").exists()
    summary = (out / "dnn+bn+dropout.summary.csv").read_text().splitlines()
    assert summary[0].startswith("method,accuracy,seed")
    assert summary[1].split(",")[0] == "dnn+bn+dropout"
    assert "dropout_placement = after activation" in (out / "dnn+bn+dropout.report.txt").read_text()


def test_train_invalid_method_lists_valid_ones(data, capsys):
    assert main(["train", "--method", "svm", "--data", str(data)]) == EXIT_USAGE
    err = capsys.readouterr().err
    assert "svm" in err and "cnn+bn+dropout" in err


def test_train_is_byte_identical_on_rerun(tmp_path, data):
    for name in ("a", "b"):
        assert main(["train", "--method", "lr+fastdropout,cnn+bn", "--data", str(data), "--seed", "3",
                     "--out", str(tmp_path / name)] + QUICK) == EXIT_OK
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert "cnn+bn.model" in files and "summary.csv" in files
    for name in files:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_train_missing_data_file(tmp_path):
    assert main(["train", "--data", str(tmp_path / "none.csv"), "--out", str(tmp_path)]) == EXIT_DATA


def test_train_numeric_failure_exit_code(tmp_path, data, monkeypatch):
    def diverge(*args):
        raise nn.TrainingDivergedError("non-finite loss at epoch 1, batch 1")

    monkeypatch.setattr(nn, "train", diverge)
    assert main(["train", "--method", "dnn", "--data", str(data), "--out", str(tmp_path)]) == EXIT_NUMERIC


def test_config_file_with_overrides(tmp_path, data, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"# quick run\nmethod = lr\ndata = {data}\nepochs = 3\nseed = 5\nout = {tmp_path / 'o'}\n")
    assert main(["train", "--config", str(cfg), "--seed", "6"]) == EXIT_OK
    captured = capsys.readouterr()
    assert re.search(r"resolved config: .*epochs=3 .*seed=6", captured.err)
    assert (tmp_path / "o" / "lr.summary.csv").read_text().splitlines()[1].split(",")[2] == "6"


def test_config_file_rejects_unknown_keys(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("epochs = 3\nlearning_rat = 0.1\n")
    assert main(["train", "--config", str(cfg)]) == EXIT_USAGE
    assert "learning_rat" in capsys.readouterr().err


def test_predict_on_training_split_matches_report(tmp_path, data, capsys):
    out = tmp_path / "run"
    main(["train", "--method", "dnn", "--data", str(data), "--out", str(out), "--write-splits"] + QUICK)
    report = (out / "dnn.report.txt").read_text()
    train_acc = re.search(r"train_accuracy = (\S+)", report).group(1)
    capsys.readouterr()
    preds = tmp_path / "p.csv"
    assert main(["predict", "--model", str(out / "dnn.model"), "--data", str(out / "train.csv"),
                 "--out", str(preds)]) == EXIT_OK
    assert f"accuracy vs labels: {train_acc} " in capsys.readouterr().out
    lines = preds.read_text().splitlines()
    assert lines[0] == "row_index,stage,p_GS1,p_GS2,p_GS3,p_GS4,p_GS5"
    first = lines[1].split(",")
    assert first[0] == "0" and first[1].startswith("GS")
    assert sum(float(v) for v in first[2:]) == pytest.approx(1.0)


def test_predict_empty_input(tmp_path, data):
    main(["train", "--method", "lr", "--data", str(data), "--out", str(tmp_path)] + QUICK)
    empty = tmp_path / "empty.csv"
    empty.write_text("date,b1,b2,b3,b4,b5,b6,b7,cloud,stage\n")
    preds = tmp_path / "p.csv"
    assert main(["predict", "--model", str(tmp_path / "lr.model"), "--data", str(empty), "--out", str(preds)]) == EXIT_OK
    assert preds.read_text().splitlines()[1:] == []


def test_predict_corrupted_model_names_section(tmp_path, data, capsys):
    main(["train", "--method", "dnn", "--data", str(data), "--out", str(tmp_path)] + QUICK)
    model = tmp_path / "dnn.model"
    lines = model.read_text().split("\n")
    i = next(k for k, line in enumerate(lines) if line.startswith("[layer.2]"))
    lines[i + 1] = lines[i + 1].replace("1", "2", 1)
    model.write_text("\n".join(lines))
    assert main(["predict", "--model", str(model), "--data", str(data)]) == EXIT_DATA
    assert "section 'layer.2'" in capsys.readouterr().err


def test_predict_feature_width_mismatch(tmp_path, data, capsys):
    from paddystage.features import Standardizer

    net = nn.build_softmax_regression(n_features=4).set_mode("infer")
    path = tmp_path / "narrow.model"
    cli.save_model(path, net, Standardizer.identity(), {"method": "lr"})
    assert main(["predict", "--model", str(path), "--data", str(data)]) == EXIT_DATA
    assert "expects 4 features" in capsys.readouterr().err


def test_phenology_on_canonical_profile(tmp_path, capsys):
    prof = phenology.canonical_profile()
    series = phenology.write_series(prof.series, tmp_path / "s.csv")
    out = tmp_path / "st.csv"
    assert main(["phenology", "--series", str(series), "--out", str(out)]) == EXIT_OK
    printed = dict(line.split() for line in capsys.readouterr().out.splitlines())
    truth = {"flooding": prof.flooding, "heading": prof.heading, "harvest": prof.harvest}
    for name, idx in truth.items():
        detected = prof.series.dates.index(dt.date.fromisoformat(printed[name]))
        assert abs(detected - idx) <= 1
    assert len(out.read_text().splitlines()) == 24


def test_phenology_constant_series_warns(tmp_path, capsys):
    path = tmp_path / "c.csv"
    path.write_text("date,evi,lswi\n" + "".join(f"2016-01-{d:02d},0.3,0.1\n" for d in range(1, 8)))
    assert main(["phenology", "--series", str(path), "--out", str(tmp_path / "o.csv")]) == EXIT_OK
    assert "no flooding" in capsys.readouterr().err
    assert set(line.split(",")[1] for line in (tmp_path / "o.csv").read_text().splitlines()[1:]) == {"GS5"}


def test_phenology_short_series_is_an_error(tmp_path):
    path = tmp_path / "c.csv"
    path.write_text("date,evi,lswi\n2016-01-01,0.3,0.1\n2016-01-17,0.3,0.1\n2016-02-02,0.3,0.1\n")
    assert main(["phenology", "--series", str(path)]) == EXIT_DATA


def test_report_command(tmp_path, data, capsys):
    main(["train", "--method", "lr,dnn", "--data", str(data), "--out", str(tmp_path)] + QUICK)
    capsys.readouterr()
    table = tmp_path / "table.txt"
    assert main(["report", str(tmp_path / "lr.summary.csv"), str(tmp_path / "dnn.summary.csv"),
                 "--out", str(table)]) == EXIT_OK
    lines = table.read_text().splitlines()
    assert lines[0].startswith("Method") and lines[2].startswith("lr ") and lines[3].startswith("dnn ")


@pytest.mark.parametrize("argv, code", [
    (["--help"], EXIT_OK),
    ([], EXIT_USAGE),
    (["train", "--bogus"], EXIT_USAGE),
    (["frobnicate"], EXIT_USAGE),
    (["phenology", "--series", "s.csv", "--smooth", "2"], EXIT_USAGE),
    (["phenology", "--series", "missing.csv"], EXIT_DATA),
])
def test_usage_exit_codes(argv, code):
    assert main(argv) == code


def test_all_methods_token():
    assert cli._methods("all") == list(cli.evaluation.METHODS)
    assert cli._methods("lr, dnn") == ["lr", "dnn"]
    with pytest.raises(cli.UsageError):
        cli._methods("")
    assert np.all([m in cli.evaluation.METHODS for m in cli._methods("all")])
