import numpy as np
import pytest
from sklearn.cluster import KMeans

from selfclassifier import data as D
from selfclassifier import metrics as M
from selfclassifier.errors import ParameterError


def test_generator_deterministic():
    a = D.generate_mixture(3, 4, 16, 500, 10.0)
    b = D.generate_mixture(3, 4, 16, 500, 10.0)
    assert np.array_equal(a.points, b.points) and np.array_equal(a.labels, b.labels)
    c = D.generate_mixture(4, 4, 16, 500, 10.0)
    assert not np.array_equal(a.points, c.points)


def test_generator_balanced_counts():
    ds = D.generate_mixture(0, 3, 2, 10, 1.0)
    assert sorted(np.bincount(ds.labels)) == [3, 3, 4]
    assert ds.dim == 2 and len(ds) == 10


def test_kmeans_oracle_on_standard_mixture():
    ds = D.generate_mixture(0, 4, 16, 2000, 10.0)
    pred = KMeans(4, n_init=10, random_state=0).fit_predict(ds.points)
    assert M.hungarian_acc(pred, ds.labels)[0] >= 0.99


def test_zero_separation_is_chance():
    accs = []
    for seed in range(5):
        ds = D.generate_mixture(seed, 4, 8, 2000, 0.0)
        pred = KMeans(4, n_init=3, random_state=0).fit_predict(ds.points)
        accs.append(M.hungarian_acc(pred, ds.labels)[0])
    assert np.mean(accs) < 0.32


@pytest.mark.parametrize("kw", [dict(n_classes=1), dict(n_points=2), dict(dim=0), dict(separation=-1)])
def test_generator_validation(kw):
    args = dict(seed=0, n_classes=4, dim=3, n_points=20, separation=1.0)
    with pytest.raises(ParameterError):
        D.generate_mixture(**{**args, **kw})


def test_augment_identity():
    x = np.arange(6.0)
    assert np.array_equal(D.augment(x, "global", 0, sigma_global=0), x)
    assert np.array_equal(D.augment(x, "local", 0, sigma_local=0, keep_fraction=1.0), x)


def test_augment_seeds_differ():
    x = np.ones(8)
    assert not np.array_equal(D.augment(x, "global", 1), D.augment(x, "global", 2))
    assert np.array_equal(D.augment(x, "global", 1), D.augment(x, "global", 1))


def test_global_noise_energy():
    sigma, d = 0.7, 12
    x = np.zeros((10_000, d))
    out = D.augment(x, "global", np.random.default_rng(0), sigma_global=sigma)
    assert np.mean((out ** 2).sum(1)) == pytest.approx(sigma ** 2 * d, rel=0.05)


def test_local_keeps_fraction():
    x = np.ones((50, 10))
    out = D.augment(x, "local", 0, sigma_local=0, keep_fraction=0.3)
    assert np.all((out != 0).sum(1) == 3)


def test_augment_bad_kind():
    with pytest.raises(ParameterError):
        D.augment(np.ones(3), "crop", 0)


def unit(rng, n, d):
    v = rng.normal(size=(n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def test_queue_fifo_and_capacity():
    q = D.NNQueue(5, 3)
    vecs = unit(np.random.default_rng(0), 8, 3)
    for v in vecs:
        q.push(v)
        assert len(q) <= 5
    assert np.array_equal(q.contents(), vecs[3:])
    assert q.fill == 1.0


def test_queue_bulk_push_over_capacity():
    q = D.NNQueue(4, 2)
    vecs = unit(np.random.default_rng(1), 7, 2)
    q.push(vecs[:2])
    q.push(vecs[2:])
    assert np.array_equal(q.contents(), vecs[3:])


def test_queue_rejects_non_unit():
    with pytest.raises(ParameterError):
        D.NNQueue(3, 2).push(np.array([1.0, 1.0]))


def test_nn_self_and_basis():
    q = D.NNQueue(4, 3)
    e = np.eye(3)
    q.push(e[:2])
    assert np.array_equal(D.nn_replace(q, e[0]), e[0])
    v = unit(np.random.default_rng(2), 1, 3)[0]
    q.push(v)
    assert np.array_equal(D.nn_replace(q, v), v)


def test_nn_matches_brute_force():
    rng = np.random.default_rng(3)
    bank, queries = unit(rng, 100, 8), unit(rng, 30, 8)
    q = D.NNQueue(100, 8)
    q.push(bank)
    got = q.nearest(queries)
    for qv, g in zip(queries, got):
        best = max(range(100), key=lambda i: float(bank[i] @ qv))
        assert np.array_equal(g, bank[best])


def test_nn_ties_go_to_oldest():
    q = D.NNQueue(4, 2)
    a = np.array([1.0, 0.0])
    b = np.array([0.0, 1.0])
    q.push(np.stack([b, a, a]))
    assert np.array_equal(q.nearest(np.array([[0.6, 0.8]]))[0], b)
    assert q.nearest(np.array([[np.sqrt(0.5), np.sqrt(0.5)]]))[0].tolist() == b.tolist()


def test_empty_queue_returns_query():
    q = D.NNQueue(3, 2)
    v = np.array([0.6, 0.8])
    assert np.array_equal(q.nearest(v), v)


def test_csv_round_trip(tmp_path):
    ds = D.generate_mixture(1, 3, 4, 30, 2.0)
    path = tmp_path / "d.csv"
    D.write_csv(ds, path)
    back = D.read_csv(path)
    assert np.array_equal(back.points, ds.points)
    assert np.array_equal(back.labels, ds.labels)
    assert np.array_equal(D.read_labels(path), ds.labels)
    txt = tmp_path / "l.txt"
    txt.write_text("\n".join(map(str, ds.labels)) + "\n")
    assert np.array_equal(D.read_labels(txt), ds.labels)


def test_csv_bad_header(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("a,b\n1,2\n")
    with pytest.raises(ParameterError):
        D.read_csv(p)
