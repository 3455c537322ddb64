import numpy as np

from interactnav.env import reduced_config
from interactnav.rl.supervised import collect_labelled_windows, isi_accuracy, train_isi

ENV = reduced_config()


def test_collect_shapes_and_determinism():
    a = collect_labelled_windows(ENV, 3, 40, stride=5)
    b = collect_labelled_windows(ENV, 3, 40, stride=5)
    nv = ENV.n_vehicles
    assert len(a) == 40
    assert a.x.shape == (40, ENV.history, ENV.n_slots, 4) and a.z.shape == (40, nv, 2)
    assert (a.mask[:, 1:1 + nv].sum(1) > 0).all()
    assert set(np.unique(a.z)) <= {0.0, 1.0}
    np.testing.assert_array_equal(a.x, b.x)
    np.testing.assert_array_equal(a.z, b.z)
    sub = a.subset(np.arange(5))
    assert len(sub) == 5 and (sub.episode == a.episode[:5]).all()


def test_train_returns_best_weights():
    tr = collect_labelled_windows(ENV, 0, 64, stride=5)
    va = collect_labelled_windows(ENV, 1, 32, stride=5)
    pred, best, hist = train_isi(ENV, tr, va, hidden=8, batch=16, max_steps=20, eval_every=5)
    assert len(hist) == 4
    assert best == max(((h["trait_acc"], h["intention_acc"]) for h in hist), key=sum)
    assert isi_accuracy(pred, va) == best
    assert all(0.0 <= v <= 1.0 for v in best)
