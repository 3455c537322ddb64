import numpy as np
import pytest

from interactnav.learn import tape as T
from interactnav.learn.check import grad_check
from interactnav.learn.params import ParamStore
from interactnav.models.encoder import (
    EncoderConfig,
    STGraphEncoder,
    adjacency,
    gat_message_pass,
    gcn_message_pass,
    sage_message_pass,
)

IDENT = lambda x: x  # noqa: E731


def _enc(mp, nv=3, npd=2, hidden=8, seed=0):
    cfg = EncoderConfig(n_vehicles=nv, n_pedestrians=npd, hidden=hidden, message_passing=mp)
    return STGraphEncoder(ParamStore(), "enc", cfg, np.random.default_rng(seed)), cfg


def _window(cfg, B=2, W=5, seed=1, live=None):
    rng = np.random.default_rng(seed)
    S = cfg.n_slots
    x = rng.normal(scale=10.0, size=(B, W, S, 4))
    mask = np.ones((B, S)) if live is None else np.tile(live, (B, 1)).astype(float)
    tm = np.ones((B, W, S)) * mask[:, None, :]
    tm[:, :2, -1] = 0.0  # a late arrival
    return x, tm, mask


def test_adjacency_no_self_edges():
    A = adjacency(np.array([[1, 1, 0, 1.0]]))
    assert A[0].trace() == 0
    assert A[0, 2].sum() == 0 and A[0, :, 2].sum() == 0
    assert A[0].sum() == 6


def test_gat_single_neighbour_and_uniform():
    rng = np.random.default_rng(0)
    H = 4
    W, a1, a2 = rng.normal(size=(H, H)), rng.normal(size=H), rng.normal(size=H)
    v = rng.normal(size=(1, 2, H))
    _, alpha = gat_message_pass(v, np.ones((1, 2)), W, a1, a2)
    np.testing.assert_array_equal(alpha.data[0], [[0, 1], [1, 0]])
    v = np.tile(rng.normal(size=(1, 1, H)), (1, 4, 1))
    _, alpha = gat_message_pass(v, np.ones((1, 4)), W, a1, a2)
    np.testing.assert_allclose(alpha.data[0], (1 - np.eye(4)) / 3, atol=1e-15)


def test_gat_rows_sum_to_one_and_isolated_fallback():
    rng = np.random.default_rng(1)
    H = 6
    W, a1, a2 = rng.normal(size=(H, H)), rng.normal(size=H), rng.normal(size=H)
    v = rng.normal(size=(3, 5, H))
    mask = np.array([[1, 1, 1, 1, 1], [1, 0, 1, 1, 0], [1, 0, 0, 0, 0.0]])
    out, alpha = gat_message_pass(v, mask, W, a1, a2)
    a = alpha.data
    assert (a >= 0).all()
    live_rows = adjacency(mask).sum(-1) > 0
    np.testing.assert_allclose(a.sum(-1)[live_rows], 1.0, atol=1e-9)
    np.testing.assert_allclose(out.data[2, 0], T.elu(v[2, 0] @ W).data, atol=1e-15)


def test_gcn_examples():
    f1, f2 = np.array([1.0, 2.0, -1.0]), np.array([3.0, 0.0, 5.0])
    out = gcn_message_pass(f1[None, None], np.ones((1, 1)), np.eye(3), act=IDENT)
    np.testing.assert_array_equal(out.data[0, 0], f1)
    v = np.stack([f1, f1])[None]
    np.testing.assert_allclose(gcn_message_pass(v, np.ones((1, 2)), np.eye(3), act=IDENT).data[0], v[0])
    v = np.stack([f1, f2])[None]
    out = gcn_message_pass(v, np.ones((1, 2)), np.eye(3), act=IDENT).data[0]
    np.testing.assert_allclose(out, [(f1 + f2) / 2] * 2, atol=1e-15)


def test_sage_unit_norm_mean_and_permutation():
    rng = np.random.default_rng(2)
    H = 5
    W = rng.normal(size=(2 * H, H))
    v = rng.normal(size=(2, 4, H))
    mask = np.ones((2, 4))
    out = sage_message_pass(v, mask, W).data
    np.testing.assert_allclose(np.linalg.norm(out, axis=-1), 1.0, atol=1e-12)
    # single neighbour: the message is that neighbour's features exactly
    W_msg = np.vstack([np.zeros((H, H)), np.eye(H)])
    out = sage_message_pass(v[:, :2], np.ones((2, 2)), W_msg, act=IDENT).data
    n = v[:, 1] / np.linalg.norm(v[:, 1], axis=-1, keepdims=True)
    np.testing.assert_allclose(out[:, 0], n, atol=1e-15)
    # shuffling neighbours leaves node 0 unchanged
    perm = [0, 3, 1, 2]
    a = sage_message_pass(v, mask, W).data[:, 0]
    b = sage_message_pass(v[:, perm], mask, W).data[:, 0]
    np.testing.assert_allclose(a, b, atol=1e-12)
    # zero pre-normalisation output stays zero
    z = sage_message_pass(np.zeros((1, 2, H)), np.ones((1, 2)), W, act=IDENT).data
    assert not z.any()


@pytest.mark.parametrize("mp", ["gat", "gcn", "sage"])
def test_permutation_equivariance(mp):
    enc, cfg = _enc(mp)
    x, tm, mask = _window(cfg)
    perm = np.arange(cfg.n_slots)
    perm[1:4] = [3, 1, 2]  # vehicles
    perm[4:6] = [5, 4]  # pedestrians
    a = enc.encode(x, tm, mask).full.data
    b = enc.encode(x[:, :, perm], tm[:, :, perm], mask[:, perm]).full.data
    np.testing.assert_allclose(b, a[:, perm], atol=1e-12, rtol=0)


@pytest.mark.parametrize("mp", ["gat", "gcn", "sage"])
def test_duplicate_agents_identical(mp):
    enc, cfg = _enc(mp)
    x, tm, mask = _window(cfg)
    x[:, :, 2] = x[:, :, 1]
    tm[:, :, 2] = tm[:, :, 1]
    e = enc.encode(x, tm, mask).full.data
    np.testing.assert_array_equal(e[:, 1], e[:, 2])


@pytest.mark.parametrize("mp", ["gat", "gcn", "sage"])
def test_self_half_independent_of_others(mp):
    enc, cfg = _enc(mp)
    x, tm, mask = _window(cfg)
    H = cfg.hidden
    a = enc.encode(x, tm, mask)
    x2 = x.copy()
    x2[:, :, 2:] = 0.0
    b = enc.encode(x2, tm, mask)
    np.testing.assert_array_equal(a.full.data[:, 1, :H], b.full.data[:, 1, :H])
    assert not np.allclose(a.full.data[:, 1, H:], b.full.data[:, 1, H:])


def test_ego_only_and_padding():
    enc, cfg = _enc("gat")
    live = np.zeros(cfg.n_slots)
    live[0] = 1
    x, tm, mask = _window(cfg, live=live)
    e = enc.encode(x, tm, mask).full.data
    assert e.shape == (2, cfg.n_slots, 2 * cfg.hidden)
    assert not e[:, 1:].any()
    x2 = x.copy()
    x2[:, :, 1:] = 99.0  # padded slots are ignored
    np.testing.assert_array_equal(enc.encode(x2, tm, mask).full.data, e)


def test_slot_count_checked():
    enc, cfg = _enc("gat")
    x, tm, mask = _window(cfg)
    with pytest.raises(T.ShapeError):
        enc.encode(x[:, :, :-1], tm[:, :, :-1], mask[:, :-1])


def test_config_validation():
    with pytest.raises(ValueError):
        EncoderConfig(message_passing="gin")
    with pytest.raises(ValueError):
        EncoderConfig(rounds=0)


@pytest.mark.parametrize("mp", ["gat", "gcn", "sage"])
def test_encoder_gradcheck(mp):
    enc, cfg = _enc(mp, hidden=5)
    x, tm, mask = _window(cfg, W=3)
    mask[1, 3] = 0.0
    tm[1, :, 3] = 0.0
    probe = np.random.default_rng(9).normal(size=(2, cfg.n_slots, 2 * cfg.hidden))
    rep = grad_check(lambda: T.tsum(T.mul(enc.encode(x, tm, mask).full, probe)), enc.store)
    assert rep.passed, rep.errors
