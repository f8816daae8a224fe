import datetime as dt

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from paddystage import ingest
from paddystage.ingest import Dataset, Sample, SplitSpec
from paddystage.stages import STAGES

HEADER = "date,b1,b2,b3,b4,b5,b6,b7,cloud,stage"
DAY = dt.date(2015, 10, 2)


def make(counts, cloudy=()):
    """Dataset with ``counts[stage]`` samples per stage; band 1 encodes the row id."""
    samples = []
    for stage, n in counts.items():
        for _ in range(n):
            i = len(samples)
            samples.append(Sample(DAY, (i / 1000.0,) + (0.1,) * 6, i in cloudy, stage))
    return Dataset(tuple(samples), "test")


def test_parse_single_row(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text(HEADER + "\n2015-10-02,0.10,0.09,0.08,0.07,0.35,0.20,0.15,0,GS1\n")
    d = ingest.parse_samples(p)
    assert len(d) == 1
    s = d[0]
    assert s.date == DAY
    assert s.bands == (0.10, 0.09, 0.08, 0.07, 0.35, 0.20, 0.15)
    assert s.cloud is False and s.stage == "GS1"


def test_parse_reports_every_bad_line(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text(HEADER + "\n"
                 "2015-10-02,0.1,0.1,0.1,0.1,0.1,0.1,0,GS1\n"
                 "2015-10-02,0.1,0.1,0.1,0.1,0.1,0.1,0.1,0,GS1\n"
                 "2015-10-02,0.1,0.1,x,0.1,0.1,0.1,0.1,0,GS9\n")
    with pytest.raises(ingest.SampleFileError) as err:
        ingest.parse_samples(p)
    assert [n for n, _ in err.value.errors] == [2, 4]
    assert "line 2" in str(err.value)


@pytest.mark.parametrize("row, needle", [
    ("2015-13-02,0.1,0.1,0.1,0.1,0.1,0.1,0.1,0,GS1", "date"),
    ("2015-10-02,0.1,0.1,0.1,0.1,0.1,0.1,nan,0,GS1", "non-finite"),
    ("2015-10-02,0.1,0.1,0.1,0.1,0.1,0.1,0.1,2,GS1", "cloud"),
    ("2015-10-02,0.1,0.1,0.1,0.1,0.1,0.1,0.1,0,GS6", "stage"),
])
def test_parse_field_errors(tmp_path, row, needle):
    p = tmp_path / "s.csv"
    p.write_text(HEADER + "\n" + row + "\n")
    with pytest.raises(ingest.SampleFileError, match=needle):
        ingest.parse_samples(p)


def test_header_only_file_is_empty_dataset(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text(HEADER + "\n")
    assert len(ingest.parse_samples(p)) == 0


def test_bad_header_and_missing_file(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("date,b1\n")
    with pytest.raises(ingest.SampleFileError, match="line 1"):
        ingest.parse_samples(p)
    with pytest.raises(FileNotFoundError):
        ingest.parse_samples(tmp_path / "missing.csv")


def test_unlabelled_rows_parse_with_no_stage(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text(HEADER + "\n2015-10-02,0.1,0.1,0.1,0.1,0.1,0.1,0.1,1,\n")
    s = ingest.parse_samples(p)[0]
    assert s.stage is None and s.cloud is True


def test_write_then_parse_round_trips(tmp_path):
    d = ingest.synthesize_dataset(3, 0.05, 1)
    back = ingest.parse_samples(ingest.write_samples(d, tmp_path / "d.csv"))
    assert back.samples == d.samples


def test_sample_validation():
    with pytest.raises(ValueError):
        Sample(DAY, (0.1,) * 6)
    with pytest.raises(ValueError):
        Sample(DAY, (0.1,) * 7, stage="GS0")


def test_remove_cloud():
    d = make({"GS1": 3}, cloudy={1})
    assert [s.bands[0] for s in ingest.remove_cloud(d)] == [0.0, 0.002]
    assert len(ingest.remove_cloud(make({"GS1": 2}, cloudy={0, 1}))) == 0
    clear = make({"GS1": 4})
    assert ingest.remove_cloud(clear).samples == clear.samples


def test_balance_downsamples_to_minimum():
    d = make({"GS1": 10, "GS2": 4, "GS3": 7})
    out = ingest.balance_classes(d, seed=3)
    assert out.class_counts() == {"GS1": 4, "GS2": 4, "GS3": 4}
    gs2 = [s for s in d if s.stage == "GS2"]
    assert [s for s in out if s.stage == "GS2"] == gs2


def test_balance_keeps_already_balanced_input_intact():
    d = make({"GS1": 5, "GS2": 5})
    assert ingest.balance_classes(d, seed=9).samples == d.samples


def test_balance_reaches_large_equal_counts():
    # Equal counts at field-campaign scale; shares one Sample object to stay cheap.
    s1 = Sample(DAY, (0.1,) * 7, False, "GS1")
    s2 = Sample(DAY, (0.2,) * 7, False, "GS2")
    d = Dataset((s1,) * 61_000 + (s2,) * 59_720)
    assert ingest.balance_classes(d, 0).class_counts() == {"GS1": 59_720, "GS2": 59_720}


@settings(max_examples=40, deadline=None)
@given(st.dictionaries(st.sampled_from(STAGES), st.integers(1, 30), min_size=1), st.integers(0, 2**16))
def test_balance_properties(counts, seed):
    d = make(counts)
    out = ingest.balance_classes(d, seed)
    m = min(counts.values())
    assert out.class_counts() == {k: m for k in STAGES if k in counts}
    pos = [d.samples.index(s) for s in out]
    assert pos == sorted(pos)
    assert ingest.balance_classes(d, seed).samples == out.samples


def test_split_examples():
    train, test = ingest.split_train_test(make({"GS1": 9}), SplitSpec(2 / 3, 0))
    assert (len(train), len(test)) == (6, 3)
    train, test = ingest.split_train_test(make({"GS1": 6, "GS2": 6}), SplitSpec(2 / 3, 0))
    assert train.class_counts() == {"GS1": 4, "GS2": 4}
    assert test.class_counts() == {"GS1": 2, "GS2": 2}
    train, test = ingest.split_train_test(make({"GS1": 5}), SplitSpec(0.5, 0))
    assert (len(train), len(test)) == (2, 3)


def test_split_rejects_singleton_class_and_bad_fraction():
    with pytest.raises(ValueError, match="GS2"):
        ingest.split_train_test(make({"GS1": 4, "GS2": 1}), SplitSpec())
    with pytest.raises(ValueError):
        SplitSpec(1.0)


@settings(max_examples=40, deadline=None)
@given(st.dictionaries(st.sampled_from(STAGES), st.integers(2, 25), min_size=1),
       st.floats(0.1, 0.9), st.integers(0, 1000))
def test_split_is_a_stratified_partition(counts, frac, seed):
    d = make(counts)
    train, test = ingest.split_train_test(d, SplitSpec(frac, seed))
    assert sorted(s.bands for s in train.samples + test.samples) == sorted(s.bands for s in d)
    for stage, n in counts.items():
        assert train.class_counts().get(stage, 0) == int(np.floor(frac * n))


def test_stratified_folds_partition():
    d = make({"GS1": 7, "GS2": 9})
    folds = ingest.stratified_folds(d, 3, 1)
    assert sorted(i for f in folds for i in f) == list(range(16))
    for f in folds:
        stages = [d[i].stage for i in f]
        assert 2 <= stages.count("GS1") <= 3 and stages.count("GS2") == 3


def test_synthesize_contract():
    d = ingest.synthesize_dataset(10, 0.0, 5)
    assert len(d) == 50
    assert d.class_counts() == {s: 10 for s in STAGES}
    b = d.bands()
    assert b.min() >= 0.0 and b.max() <= 1.0
    assert ingest.synthesize_dataset(10, 0.0, 5) == d
    assert ingest.synthesize_dataset(10, 0.03, 5) == ingest.synthesize_dataset(10, 0.03, 5)


def test_synthesize_validates_arguments():
    with pytest.raises(ValueError):
        ingest.synthesize_dataset(0, 0.0, 1)
    with pytest.raises(ValueError):
        ingest.synthesize_dataset(1, -0.1, 1)


def test_noiseless_synthetic_stages_are_linearly_separable():
    from paddystage import fastdropout, features, nn

    d = ingest.synthesize_dataset(40, 0.0, 2)
    X = features.featurize_dataset(d)
    z = features.fit_standardizer(X)
    model, _ = fastdropout.train_logistic(features.apply_standardizer(z, X), d.labels(),
                                          nn.TrainConfig(learning_rate=0.1, batch_size=32, epochs=300))
    pred, _ = fastdropout.fd_predict(model, features.apply_standardizer(z, X))
    assert np.mean(pred == d.labels()) == 1.0
