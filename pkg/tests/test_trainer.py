import numpy as np
import pytest

from bsodh.codec import encode, load_model
from bsodh.data import synth_clusters
from bsodh.errors import ConfigError, FormatError
from bsodh.evaluation import RetrievalSetup, evaluate
from bsodh.optimizer import Hyperparams
from bsodh.similarity import BalanceFactors
from bsodh.trainer import TrainerConfig, batches, load_codes, run_online, save_codes

from conftest import random_codes


@pytest.fixture(scope="module")
def stream():
    return synth_clusters(5, 16, 60, 20.0, seed=3)


def test_codes_roundtrip(tmp_path, rng):
    B = random_codes(rng, 5, 9)
    save_codes(tmp_path / "c.bsodc", B)
    np.testing.assert_array_equal(load_codes(tmp_path / "c.bsodc"), B)
    raw = (tmp_path / "c.bsodc").read_bytes()
    (tmp_path / "t.bsodc").write_bytes(raw[:-1])
    with pytest.raises(FormatError):
        load_codes(tmp_path / "t.bsodc")


def test_run_online_shapes(stream):
    X, y = stream
    cfg = TrainerConfig(bits=12, batch_size=50)
    res = run_online(batches(X, y, 50), cfg)
    assert res.model.stage == 6 and len(res.stages) == 6
    assert res.state.B_e.shape == (12, 300) and res.codes.shape == (12, 300)
    np.testing.assert_array_equal(res.codes, encode(res.model, X))
    assert res.stages[0].sweeps == 0
    assert [s.existing_size for s in res.stages] == [0, 50, 100, 150, 200, 250]


def test_run_online_seeded(stream):
    X, y = stream
    cfg = TrainerConfig(bits=8, batch_size=60)
    a = run_online(batches(X, y, 60), cfg)
    b = run_online(batches(X, y, 60), cfg)
    np.testing.assert_array_equal(a.model.weights, b.model.weights)
    c = run_online(batches(X, y, 60), TrainerConfig(bits=8, batch_size=60, hp=Hyperparams(seed=1)))
    assert not np.array_equal(a.model.weights, c.model.weights)


def test_backends_train_identically(stream):
    X, y = stream
    a = run_online(batches(X, y, 60), TrainerConfig(bits=16, batch_size=60, backend="python"))
    b = run_online(batches(X, y, 60), TrainerConfig(bits=16, batch_size=60))
    np.testing.assert_array_equal(a.model.weights, b.model.weights)


def test_total_batches(stream):
    X, y = stream
    res = run_online(batches(X, y, 50), TrainerConfig(bits=8, batch_size=50, total_batches=3))
    assert res.model.stage == 3
    with pytest.raises(ConfigError):
        run_online(batches(X, y, 100), TrainerConfig(bits=8, batch_size=100, total_batches=4))
    with pytest.raises(ConfigError):
        run_online(iter(()), TrainerConfig())


def test_checkpoints(tmp_path, stream):
    X, y = stream
    cfg = TrainerConfig(bits=8, batch_size=100, checkpoint_every=2, checkpoint_dir=str(tmp_path))
    res = run_online(batches(X, y, 100), cfg)
    model, _ = load_model(tmp_path / "stage_00002.bsodh")
    assert model.stage == 2
    assert load_codes(tmp_path / "stage_00002.bsodc").shape == (8, 200)
    assert not (tmp_path / "stage_00003.bsodh").exists()
    assert res.model.stage == 3


def test_zero_center_fit_on_first_batch(stream):
    X, y = stream
    res = run_online(batches(X, y, 100), TrainerConfig(bits=8, batch_size=100, normalization="zero-center"))
    np.testing.assert_allclose(res.normalizer.mean, X[:, :100].mean(axis=1))


def test_separable_stream_retrieves(stream):
    X, y = stream
    res = run_online(batches(X, y, 50), TrainerConfig(bits=16, batch_size=50))
    rep = evaluate(RetrievalSetup(res.codes[:, :30], res.codes[:, 30:], y[:30], y[30:]))
    assert rep.map >= 0.9


def test_balance_matters_on_separable_stream():
    X, y = synth_clusters(10, 32, 100, 20.0, seed=1)
    out = {}
    for f in (BalanceFactors(1.2, 0.2), BalanceFactors(1.0, 1.0)):
        res = run_online(batches(X, y, 100), TrainerConfig(bits=32, batch_size=100, hp=Hyperparams(factors=f)))
        out[f] = evaluate(RetrievalSetup(res.codes[:, :100], res.codes[:, 100:], y[:100], y[100:]))
    assert out[BalanceFactors(1.2, 0.2)].precision_at_H2 > out[BalanceFactors(1.0, 1.0)].precision_at_H2
