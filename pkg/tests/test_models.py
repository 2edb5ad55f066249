import io

import numpy as np
import pytest

from coalfed import models
from coalfed.errors import ArchMismatchError, EmptyDataError, SchemaError
from coalfed.models import (
    AnalysisTask,
    Dataset,
    ModelArch,
    Schema,
    TrainConfig,
    empty_dataset,
    evaluate,
    get_weights,
    load_model,
    model_from_bytes,
    model_to_bytes,
    save_model,
    set_weights,
    train,
    training_loss,
)

from conftest import linear_dataset


def test_exact_line_fit():
    # y = 2x - 1 is recoverable exactly up to optimizer tolerance
    data = linear_dataset(np.linspace(-1, 1, 21), slope=2.0, intercept=-1.0)
    arch = ModelArch("linear", 1)
    model = train(arch, data, TrainConfig(learning_rate=0.2, epochs=4000))
    assert model.predict([0.0]) == pytest.approx(-1.0, abs=1e-8)
    assert model.predict([1.0]) == pytest.approx(1.0, abs=1e-8)
    assert evaluate(model, data, "mse") < 1e-16


def test_training_is_deterministic():
    data = linear_dataset(np.linspace(0, 1, 30), slope=1.5, noise=0.1, seed=2)
    arch = ModelArch("mlp", 1, hidden=(8,))
    cfg = TrainConfig(learning_rate=0.05, epochs=300, batch_size=5,
                      optimizer="minibatch_sgd", seed=9)
    m1 = train(arch, data, cfg)
    m2 = train(arch, data, cfg)
    assert m1.fingerprint() == m2.fingerprint()


def test_training_order_invariant():
    data = linear_dataset(np.linspace(0, 1, 30), slope=1.5, noise=0.1, seed=2)
    rng = np.random.default_rng(0)
    perm = rng.permutation(len(data))
    shuffled = data.subset(perm)
    arch = ModelArch("mlp", 1, hidden=(8,))
    cfg = TrainConfig(learning_rate=0.05, epochs=300, batch_size=5,
                      optimizer="minibatch_sgd", seed=9)
    assert train(arch, data, cfg).fingerprint() == train(arch, shuffled, cfg).fingerprint()


def test_polynomial_close_to_least_squares():
    # gradient descent should land within 10x of the normal-equation optimum
    rng = np.random.default_rng(5)
    xs = np.linspace(0, 3, 120)
    ys = np.polyval([1.0, -4.5, 5.0, 0.0], xs) + rng.normal(0, 0.05, xs.size)
    data = Dataset(Schema(("x",), None, (-10.0, 10.0)), xs.reshape(-1, 1), ys)
    arch = ModelArch("polynomial", 1, 3, feature_offset=(1.5,), feature_scale=(1.5,))
    model = train(arch, data, TrainConfig(learning_rate=0.05, epochs=3000))

    Xe = arch.expand(xs.reshape(-1, 1))
    A = np.hstack([Xe, np.ones((xs.size, 1))])
    coef, *_ = np.linalg.lstsq(A, ys, rcond=None)
    ls_mse = float(np.mean((A @ coef - ys) ** 2))
    gd_mse = evaluate(model, data, "mse")
    assert gd_mse <= 10 * ls_mse


def test_loss_decreases_over_training():
    data = linear_dataset(np.linspace(0, 1, 40), slope=3.0, noise=0.2, seed=1)
    arch = ModelArch("polynomial", 1, 2)
    losses = []
    for epochs in (1, 10, 100, 1000):
        m = train(arch, data, TrainConfig(learning_rate=0.1, epochs=epochs))
        losses.append(training_loss(m, data))
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_zero_init_predicts_zero():
    arch = ModelArch("linear", 2)
    model = models.Model(arch, np.zeros(3))
    assert model.predict([4.0, -7.0]) == 0.0


def test_get_set_weights_round_trip():
    data = linear_dataset(np.linspace(0, 1, 10))
    m = train(ModelArch("linear", 1), data, TrainConfig(epochs=50))
    w = get_weights(m)
    m2 = set_weights(m, w)
    assert m2.fingerprint() == m.fingerprint()
    other = models.Model(ModelArch("linear", 2), np.zeros(3))
    with pytest.raises(ArchMismatchError):
        set_weights(other, w)


def test_save_load_round_trip_exact():
    data = linear_dataset(np.linspace(0, 1, 25), slope=-0.3, noise=0.05, seed=3)
    m = train(ModelArch("polynomial", 1, 3), data,
              TrainConfig(learning_rate=0.02, epochs=500))
    buf = io.StringIO()
    save_model(m, buf)
    buf.seek(0)
    m2 = load_model(buf)
    assert m2.fingerprint() == m.fingerprint()
    assert model_from_bytes(model_to_bytes(m)).fingerprint() == m.fingerprint()


def test_classification_train_and_tie_break():
    rng = np.random.default_rng(7)
    X = np.vstack([rng.normal(0, 0.3, (40, 2)), rng.normal(3, 0.3, (40, 2))])
    y = np.asarray(["a"] * 40 + ["b"] * 40, dtype=object)
    data = Dataset(Schema(("f0", "f1"), ("a", "b")), X, y)
    arch = ModelArch("linear", 2, classes=("a", "b"))
    m = train(arch, data, TrainConfig(learning_rate=0.5, epochs=500,
                                      loss="cross_entropy"))
    assert evaluate(m, data, "accuracy") == 1.0
    # zero weights -> uniform scores -> lowest-index class wins
    tie = models.Model(arch, np.zeros(2 * 2 + 2))
    assert tie.predict([1.0, 1.0]) == "a"


def test_arch_fingerprint_sensitivity():
    a = ModelArch("polynomial", 1, 3)
    b = ModelArch("polynomial", 1, 4)
    assert a.fingerprint() != b.fingerprint()
    assert a.fingerprint() == ModelArch("polynomial", 1, 3).fingerprint()


def test_train_errors():
    arch = ModelArch("linear", 1)
    with pytest.raises(EmptyDataError):
        train(arch, empty_dataset(Schema(("x",), None, (0.0, 1.0))),
              TrainConfig())
    data = linear_dataset([0.0, 1.0])
    with pytest.raises(ArchMismatchError):
        train(arch, data, TrainConfig(loss="cross_entropy"))
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    bad = Dataset(Schema(("x", "y")), np.zeros((3, 2)), np.zeros(3))
    with pytest.raises(ArchMismatchError):
        train(arch, bad, TrainConfig())


def test_dataset_schema_checks():
    with pytest.raises(SchemaError):
        Dataset(Schema(("x",)), np.zeros((3, 1)), np.zeros(2))
    with pytest.raises(SchemaError):
        Dataset(Schema(("x", "y")), np.zeros((3, 1)), np.zeros(3))


def test_analysis_task_fit(curve_scenario, cubic_arch, cubic_cfg):
    _, sites, _ = curve_scenario
    task = AnalysisTask(cubic_arch, cubic_cfg)
    m = task.fit(sites[0])
    assert m.fingerprint() == train(cubic_arch, sites[0], cubic_cfg).fingerprint()
