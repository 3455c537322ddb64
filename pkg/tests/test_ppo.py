import numpy as np
import pytest

from interactnav.learn import tape as T
from interactnav.learn.check import NumericError, grad_check
from interactnav.learn.params import ParamStore
from interactnav.rl.ppo import clip_contribution, compute_gae, normalize_advantages, ppo_loss


def gae_double_loop(r, v, d, gamma, lam, last):
    """A_t evaluated term by term from each t to the end of its episode."""
    n = len(r)
    nxt = np.append(v[1:], last)
    delta = [r[k] + gamma * nxt[k] * (1.0 - d[k]) - v[k] for k in range(n)]
    out = np.zeros(n)
    for t in range(n):
        end = t
        while end < n - 1 and not d[end]:
            end += 1
        s = 0.0
        for k in range(end, t - 1, -1):
            s = delta[k] + gamma * lam * s
        out[t] = s
    return out


def gae_power_series(r, v, d, gamma, lam, last):
    n = len(r)
    nxt = np.append(v[1:], last)
    out = np.zeros(n)
    for t in range(n):
        k = t
        while True:
            out[t] += (gamma * lam) ** (k - t) * (r[k] + gamma * nxt[k] * (1.0 - d[k]) - v[k])
            if d[k] or k == n - 1:
                break
            k += 1
    return out


@pytest.mark.parametrize("ratio,adv,want", [(1.5, 1.0, 1.2), (0.5, -1.0, -0.8), (1.0, 3.0, 3.0),
                                           (0.5, 1.0, 0.5), (1.5, -1.0, -1.5)])
def test_clip_table(ratio, adv, want):
    assert clip_contribution(ratio, adv, 0.2) == want


def test_clip_bound():
    rng = np.random.default_rng(0)
    r = np.exp(rng.normal(size=10_000))
    a = rng.normal(size=10_000)
    assert (clip_contribution(r, a) <= 1.2 * np.abs(a) + 1e-15).all()


def test_gae_matches_double_loop():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        n = int(rng.integers(1, 40))
        r, v = rng.normal(size=n), rng.normal(size=n)
        d = rng.random(n) < 0.1
        last = float(rng.normal())
        gamma, lam = rng.uniform(0.8, 1.0), rng.uniform(0.5, 1.0)
        adv, ret = compute_gae(r, v, d, gamma, lam, last)
        np.testing.assert_array_equal(adv, gae_double_loop(r, v, d, gamma, lam, last))
        np.testing.assert_allclose(adv, gae_power_series(r, v, d, gamma, lam, last), rtol=0, atol=1e-12)
        np.testing.assert_array_equal(ret, adv + v)


def test_gae_monte_carlo_limit_and_single_step():
    r = np.array([0.1, -0.3, 0.5, 2.0])
    adv, _ = compute_gae(r, np.zeros(4), [0, 0, 0, 1], 1.0, 1.0)
    np.testing.assert_allclose(adv, [2.3, 2.2, 2.5, 2.0], atol=1e-15)
    adv, ret = compute_gae([1.5], [0.4], [1], 0.99, 0.95, last_value=9.0)
    assert adv[0] == 1.5 - 0.4 and ret[0] == 1.5


def test_normalized_advantages():
    a = normalize_advantages(np.random.default_rng(2).normal(3, 5, size=500))
    assert abs(a.mean()) < 1e-12 and abs(a.std() - 1) < 1e-6


def test_ppo_identity_ratio_gives_mean_advantage():
    rng = np.random.default_rng(3)
    logits = rng.normal(size=(32, 3))
    acts = rng.integers(0, 3, 32)
    logp = T.log_softmax(logits).data[np.arange(32), acts]
    adv = rng.normal(size=32)
    obj, info = ppo_loss(T.Tensor(logits), acts, logp, adv, entropy_coef=0.0)
    assert obj.data == pytest.approx(adv.mean(), abs=1e-14)
    assert info["clip_frac"] == 0.0


def test_ppo_gradcheck_and_non_finite():
    rng = np.random.default_rng(4)
    s = ParamStore()
    s.add("logits", rng.normal(size=(16, 3)))
    acts = rng.integers(0, 3, 16)
    old = T.log_softmax(s["logits"].data + rng.normal(scale=0.1, size=(16, 3))).data[np.arange(16), acts]
    adv = rng.normal(size=16)
    rep = grad_check(lambda: ppo_loss(s["logits"], acts, old, adv)[0], s)
    assert rep.passed, rep.errors
    with pytest.raises(NumericError), np.errstate(over="ignore"):
        ppo_loss(s["logits"], acts, np.full(16, -1e6), adv)
