import numpy as np
import pytest

from interactnav.env import collect_noego_dataset, reduced_config
from interactnav.learn import tape as T
from interactnav.learn.check import grad_check
from interactnav.learn.params import ParamStore, adam_step
from interactnav.models import (
    ContractError,
    EncoderConfig,
    FrozenPredictor,
    Predictor,
    TPHead,
    gaussian_kl,
    interactivity,
    isi_loss,
    tp_loss,
    without_ego_view,
)
from interactnav.models.heads import isi_loss_from_probs, scene_batch_scores
from interactnav.rl.pretrain import evaluate_ade, noego_env_config, pretrain_noego

TF = 10


def _pred(seed=0, hidden=8, with_isi=True, nv=3, npd=2):
    cfg = EncoderConfig(n_vehicles=nv, n_pedestrians=npd, hidden=hidden)
    return Predictor(ParamStore(), "p", cfg, TF, np.random.default_rng(seed), with_isi=with_isi, hidden=hidden)


def _window(cfg, B=4, W=4, seed=1):
    rng = np.random.default_rng(seed)
    x = rng.normal(scale=10.0, size=(B, W, cfg.n_slots, 4))
    mask = np.ones((B, cfg.n_slots))
    mask[0, -1] = 0
    tm = np.ones((B, W, cfg.n_slots)) * mask[:, None]
    return x, tm, mask


def test_interactivity_examples():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(5, TF, 2))
    assert not interactivity(a, a).any()
    assert interactivity(a + 1.0, a)[0] == pytest.approx(20.0, abs=1e-12)
    b = rng.normal(size=(5, TF, 2))
    np.testing.assert_array_equal(interactivity(a, b), interactivity(b, a))
    assert (interactivity(a, b) > 0).all()
    with pytest.raises(T.ShapeError):
        interactivity(a, a[:, :5])


@pytest.mark.parametrize("var", [0.5, 0.01, 1.0, 7.3])
def test_kl_identity(var):
    rng = np.random.default_rng(int(var * 100))
    a = rng.normal(scale=3.0, size=(50, TF, 2))
    b = rng.normal(scale=3.0, size=(50, TF, 2))
    # closed-form diagonal Gaussian KL written out independently of the package
    kl = 0.5 * (np.log(var / var) + (var + (a - b) ** 2) / var - 1.0).sum(axis=(-2, -1))
    np.testing.assert_allclose(2 * var * kl, interactivity(a, b), atol=1e-9, rtol=0)
    np.testing.assert_allclose(2 * var * gaussian_kl(a, b, var, var), interactivity(a, b), atol=1e-9, rtol=0)


def test_isi_loss_examples():
    y = np.array([[1.0, 0.0, 1.0]])
    n = np.array([[0.0, 1.0, 1.0]])
    m = np.ones((1, 3))
    logits = np.stack([np.where(y > 0, 50.0, -50.0), np.where(n > 0, 50.0, -50.0)], axis=-1)
    assert isi_loss(logits, y, n, m).data < 1e-20
    assert isi_loss(np.zeros((1, 3, 2)), y, n, m).data == pytest.approx(2 * np.log(2), abs=1e-15)
    assert isi_loss_from_probs(np.full((1, 3), 0.5), np.full((1, 3), 0.5), y, n, m) == pytest.approx(2 * np.log(2))
    # masked vehicles do not count
    m2 = np.array([[1.0, 1.0, 0.0]])
    logits[0, 2] = [-50.0, -50.0]
    assert isi_loss(logits, y, n, m2).data < 1e-20


def test_tp_loss_examples():
    rng = np.random.default_rng(3)
    pred = rng.normal(size=(2, 4, TF, 2))
    fut = rng.normal(size=(2, 4, TF, 2))
    m = np.ones((2, 4))
    assert tp_loss(pred, fut, np.zeros((2, 4)), m).data == 0.0
    want = ((pred - fut) ** 2).sum(axis=(-2, -1)).mean()
    assert tp_loss(pred, fut, np.ones((2, 4)), m).data == pytest.approx(want, rel=1e-14)


def test_tp_loss_scores_are_constants():
    rng = np.random.default_rng(4)
    s = ParamStore()
    s.add("mu", rng.normal(size=(3, TF, 2)))
    fut = rng.normal(size=(3, TF, 2))
    m = np.ones(3)
    w = rng.uniform(0.5, 2.0, size=3)
    loss = tp_loss(s["mu"], fut, w, m)
    loss.backward()
    np.testing.assert_allclose(s["mu"].grad, 2 * w[:, None, None] * (s["mu"].data - fut) / 3, atol=1e-14)
    assert grad_check(lambda: tp_loss(s["mu"], fut, w, m), s).passed


def test_tp_head_residual_base():
    s = ParamStore()
    head = TPHead(s, "tp", 6, TF, np.random.default_rng(0), hidden=8, zero_last=True)
    emb = np.random.default_rng(1).normal(size=(2, 3, 6))
    cur = np.random.default_rng(2).normal(size=(2, 3, 2))
    out = head(T.Tensor(emb), cur).data
    assert out.shape == (2, 3, TF, 2)
    np.testing.assert_array_equal(out, np.repeat(cur[:, :, None], TF, axis=2))


def test_beliefs_valid_and_near_half_at_init():
    p = _pred(hidden=64)
    x, tm, mask = _window(p.enc_cfg, B=64)
    b = p.beliefs(p.embed(x, tm, mask))
    live = b.mask > 0
    for q in (b.p_conservative, b.p_yield):
        assert ((q >= 0) & (q <= 1)).all()
        assert abs(q[live].mean() - 0.5) <= 0.2


def test_isi_only_for_vehicles():
    p = _pred()
    x, tm, mask = _window(p.enc_cfg)
    emb = p.embed(x, tm, mask)
    assert p.infer_internal_state(emb, [1, 3]).p_conservative.shape == (4, 2)
    for bad in ([0], [4], [1, 5]):
        with pytest.raises(ContractError):
            p.infer_internal_state(emb, bad)
    with pytest.raises(ContractError):
        _pred(with_isi=False).isi_logits(emb)


def test_heads_gradcheck():
    p = _pred(hidden=5)
    x, tm, mask = _window(p.enc_cfg, B=2, W=3)
    rng = np.random.default_rng(5)
    nv = p.enc_cfg.n_vehicles
    y, n = rng.integers(0, 2, (2, nv)).astype(float), rng.integers(0, 2, (2, nv)).astype(float)
    fut = x[:, -1, :, None, :2] + rng.normal(size=(2, p.enc_cfg.n_slots, TF, 2))
    w = rng.uniform(0, 3, size=(2, p.enc_cfg.n_slots))

    def loss():
        emb = p.embed(x, tm, mask)
        return T.add(isi_loss(p.isi_logits(emb), y, n, mask[:, 1:1 + nv]), tp_loss(p.predict(emb, x), fut, w, mask))

    rep = grad_check(loss, p.store, max_entries=12)
    assert rep.passed, rep.errors


def test_frozen_branch_ignores_ego_and_never_changes():
    ref = _pred(seed=3, with_isi=False)
    frozen = FrozenPredictor(ref)
    x, tm, mask = _window(ref.enc_cfg)
    a = frozen.predict(x, tm, mask)
    x2 = x.copy()
    x2[:, :, 0] += 37.0
    np.testing.assert_array_equal(frozen.predict(x2, tm, mask), a)
    # an optimiser step over the whole store leaves the frozen weights untouched
    mu = ref.predict(ref.embed(x, tm, mask), x)
    T.tsum(T.square(mu)).backward()
    adam_step(ref.store, 1e-2)
    assert frozen.verify()
    _, _, m = without_ego_view(x, tm, mask)
    assert not m[:, 0].any()


def test_scene_scores_zero_for_ego_and_padding():
    rng = np.random.default_rng(6)
    a, b = rng.normal(size=(2, 5, TF, 2)), rng.normal(size=(2, 5, TF, 2))
    mask = np.ones((2, 5))
    mask[1, 4] = 0
    w = scene_batch_scores(a, b, mask)
    assert not w[:, 0].any() and w[1, 4] == 0.0
    assert (w[:, 1:4] > 0).all()


def test_pretraining_deterministic():
    env = reduced_config()
    data = collect_noego_dataset(noego_env_config(env), [0], 3, steps=60)
    r1 = pretrain_noego(env, "gat", 0, data=data, max_steps=6, eval_every=3, hidden=8, batch=8)
    r2 = pretrain_noego(env, "gat", 0, data=data, max_steps=6, eval_every=3, hidden=8, batch=8)
    assert r1.predictor.store.digest() == r2.predictor.store.digest()
    assert r1.history == r2.history


def test_pretrained_predictor_error_below_half_metre():
    env = reduced_config()
    res = pretrain_noego(env, "gat", 0, episodes=60, max_steps=600, eval_every=200, hidden=32)
    held_out = collect_noego_dataset(noego_env_config(env), [77], 10)
    assert evaluate_ade(res.predictor, held_out) < 0.5
