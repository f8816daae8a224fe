import numpy as np
import pytest

from paddystage import container, nn
from paddystage.nn import BatchNorm, Dense, Dropout, Network, ReLU, Softmax, TrainConfig


def blobs(n=200, seed=0):
    rng = np.random.default_rng(seed)
    y = np.repeat([0, 1], n // 2)
    centers = np.array([[-2.0, -2.0], [2.0, 2.0]])
    return centers[y] + rng.normal(scale=0.5, size=(n, 2)), y


def test_sgd_examples():
    p, v = np.zeros(1), np.zeros(1)
    nn.sgd_step([p], [np.ones(1)], [v], TrainConfig(learning_rate=0.1, momentum=0.0))
    assert p[0] == pytest.approx(-0.1)

    p, v = np.array([0.7]), np.zeros(1)
    nn.sgd_step([p], [np.zeros(1)], [v], TrainConfig())
    assert p[0] == 0.7

    p, v = np.zeros(1), np.zeros(1)
    cfg = TrainConfig(learning_rate=0.1, momentum=0.9)
    nn.sgd_step([p], [np.ones(1)], [v], cfg)
    assert (v[0], p[0]) == pytest.approx((-0.1, -0.1))
    nn.sgd_step([p], [np.ones(1)], [v], cfg)
    assert (v[0], p[0]) == pytest.approx((-0.19, -0.29))


def test_sgd_shape_mismatch():
    with pytest.raises(ValueError):
        nn.sgd_step([np.zeros(2)], [np.zeros(3)], [np.zeros(2)], TrainConfig())


def test_train_config_validation():
    for bad in (dict(learning_rate=0), dict(momentum=1.0), dict(batch_size=0), dict(epochs=-1), dict(seed=-1)):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


def test_zero_epochs_leave_parameters_untouched():
    net = nn.build_dnn(2, 2, hidden=(4,), seed=1)
    before = [p.copy() for _, _, p in net.parameters()]
    X, y = blobs(20)
    net, trace = nn.train(net, X, y, TrainConfig(epochs=0))
    assert trace == []
    for b, (_, _, p) in zip(before, net.parameters()):
        np.testing.assert_array_equal(b, p)


def test_softmax_regression_separates_blobs():
    X, y = blobs()
    net, trace = nn.train(nn.build_softmax_regression(2, 2), X, y, TrainConfig(batch_size=32, epochs=200))
    assert trace[-1]["accuracy"] == 1.0
    assert [t["epoch"] for t in trace] == list(range(1, 201))


@pytest.mark.parametrize("builder", [
    lambda: nn.build_dnn(2, 2, hidden=(8, 4), batch_norm=True, dropout=0.3, seed=4),
    lambda: nn.build_cnn(2, 2, filters=(3,), width=2, batch_norm=True, dropout=0.3, seed=4),
])
def test_training_is_deterministic(builder):
    X, y = blobs(60)
    cfg = TrainConfig(batch_size=16, epochs=5, seed=9)
    a, ta = nn.train(builder(), X, y, cfg)
    b, tb = nn.train(builder(), X, y, cfg)
    assert ta == tb
    for (_, _, p), (_, _, q) in zip(a.parameters(), b.parameters()):
        np.testing.assert_array_equal(p, q)


def test_trailing_singleton_batch_is_merged():
    X, y = blobs(130)
    net = nn.build_dnn(2, 2, hidden=(4,), batch_norm=True)
    nn.train(net, X[:129], y[:129], TrainConfig(batch_size=128, epochs=1))
    batches = nn.network._batches(129, 128, np.random.default_rng(0))
    assert [len(b) for b in batches] == [129]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_reported():
    X, y = blobs(20)
    with pytest.raises(nn.TrainingDivergedError, match=r"non-finite loss at epoch \d+, batch \d+"):
        nn.train(nn.build_softmax_regression(2, 2), X * 1e300, y, TrainConfig(epochs=2))


def _identity_net():
    d = Dense(5, 5)
    d.W[:] = np.eye(5)
    return Network([d, Softmax()], (5,)).set_mode("infer")


def test_predict_argmax_and_ties():
    net = _identity_net()
    stages, proba = nn.predict(net, np.array([[0, 0, 0, 0, 1.0], [0.0] * 5]))
    assert stages.tolist() == [4, 0]
    assert np.max(np.abs(proba.sum(axis=1) - 1.0)) < 1e-12


def test_predict_requires_infer_mode():
    net = nn.build_softmax_regression(2, 2)
    with pytest.raises(RuntimeError):
        nn.predict(net, np.zeros((1, 2)))


def test_trained_network_rows_are_batch_independent():
    X, y = blobs(64)
    net, _ = nn.train(nn.build_cnn(2, 2, filters=(4,), width=2, batch_norm=True, dropout=0.2), X, y,
                      TrainConfig(batch_size=16, epochs=3))
    _, full = nn.predict(net, X)
    for i in range(0, 64, 7):
        np.testing.assert_array_equal(nn.predict(net, X[i:i + 1])[1][0], full[i])


@pytest.mark.parametrize("layers, msg", [
    ([Dense(3, 2)], "softmax"),
    ([Dense(3, 4), ReLU(), Softmax()], "dense"),
    ([Dense(3, 4), BatchNorm(4), ReLU(), Dense(4, 2), Softmax()], "bias disabled"),
    ([Dense(3, 4, bias=False), BatchNorm(4), Dense(4, 2), Softmax()], "activation"),
    ([Dense(3, 4), Dropout(0.5), ReLU(), Dense(4, 2), Softmax()], "dropout"),
    ([Dense(3, 4), Dense(5, 2), Softmax()], "width"),
    ([Dense(3, 2), Softmax(), Softmax()], "exactly one"),
])
def test_composition_rules(layers, msg):
    with pytest.raises(ValueError, match=msg):
        Network(layers, (3,))


def test_input_regularizers_are_allowed():
    net = Network([BatchNorm(3), Dense(3, 2), Softmax()], (3,))
    assert net.describe() == ["batchnorm", "dense", "softmax"]
    net = Network([Dropout(0.2), Dense(3, 2), Softmax()], (3,))
    assert net.describe() == ["dropout", "dense", "softmax"]


def test_set_mode_validation():
    with pytest.raises(ValueError):
        nn.build_softmax_regression().set_mode("eval")


def test_save_and_load_round_trip(tmp_path):
    X, y = blobs(40)
    net, _ = nn.train(nn.build_dnn(2, 2, hidden=(5,), batch_norm=True, dropout=0.5, seed=3), X, y,
                      TrainConfig(batch_size=8, epochs=3))
    path = nn.save_network(tmp_path / "m.model", net, [("note", {"k": 1})])
    loaded, extras = nn.load_network(path)
    assert extras == {"note": {"k": 1}}
    np.testing.assert_array_equal(nn.predict(loaded, X)[1], nn.predict(net, X)[1])
    again = nn.save_network(tmp_path / "n.model", loaded, [("note", {"k": 1})])
    assert again.read_bytes() == path.read_bytes()


def test_load_names_corrupted_layer_section(tmp_path):
    net = nn.build_dnn(2, 2, hidden=(3,))
    path = nn.save_network(tmp_path / "m.model", net)
    lines = path.read_text().split("\n")
    i = lines.index(next(line for line in lines if line.startswith("[layer.2]")))
    lines[i + 1] = lines[i + 1].replace("0", "1", 1)
    path.write_text("\n".join(lines))
    with pytest.raises(container.ContainerError) as err:
        nn.load_network(path)
    assert err.value.section == "layer.2"
