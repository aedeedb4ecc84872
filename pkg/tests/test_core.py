import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lidpurify import core
from lidpurify.core import (BatchPredictions, WeightTriple, assign_weights, ce_loss, combine_view_weights,
                            consistency_loss, decide_update, gce_loss, mix_samples, prediction_delta,
                            t_scores, total_losses, view_weight)
from lidpurify.numkit import make_rng, one_hot
from oracles import numeric_grad, rel_err


# -- weights -----------------------------------------------------------------


def test_weight_combination_hand_value():
    w = combine_view_weights(0.8, 0.3)
    assert (float(w.w_clean), float(w.w_hard), float(w.w_noisy)) == pytest.approx((0.3, 0.5, 0.2))
    assert float(w.w_clean + w.w_hard + w.w_noisy) == pytest.approx(1.0, abs=1e-12)


def test_view_weight_interpolates():
    # batch with quantiles 2 (p=0) and 6 (p=1)
    assert view_weight(3.0, [2.0, 6.0], 0.0, 1.0) == pytest.approx(0.75)


def test_low_lid_is_clean_corner():
    scores = [1.0, 2.0, 3.0, 4.0, 5.0]
    w = assign_weights(0.5, 0.1, scores, scores, 0.2, 0.8)
    assert (float(w.w_clean), float(w.w_hard), float(w.w_noisy)) == (1.0, 0.0, 0.0)


def test_degenerate_spread_binary():
    scores = [2.0, 2.0, 2.0]
    assert view_weight(2.0, scores, 0.1, 0.9) == 1.0
    assert view_weight(2.5, scores, 0.1, 0.9) == 0.0


def test_eps_order_checked():
    with pytest.raises(ValueError):
        view_weight(1.0, [1.0, 2.0], 0.9, 0.1)


def test_weights_batched():
    rng = make_rng(0)
    s1, s2 = rng.gamma(3.0, size=50), rng.gamma(3.0, size=50)
    w = assign_weights(s1, s2, s1, s2, 0.001, 0.5)
    for i in range(50):
        wi = assign_weights(s1[i], s2[i], s1, s2, 0.001, 0.5)
        assert float(wi.w_clean) == w.w_clean[i] and float(wi.w_noisy) == w.w_noisy[i]


@given(st.floats(0, 1), st.floats(0, 1))
def test_weight_simplex(w1, w2):
    w = combine_view_weights(w1, w2)
    parts = [float(w.w_clean), float(w.w_hard), float(w.w_noisy)]
    assert all(0.0 <= p <= 1.0 for p in parts)
    assert abs(sum(parts) - 1.0) <= 1e-9


# -- loss families -----------------------------------------------------------


def test_ce_values():
    assert float(ce_loss(one_hot(2, 4), one_hot(2, 4))[0]) == 0.0
    assert float(ce_loss(one_hot(3, 10), np.full(10, 0.1))[0]) == pytest.approx(math.log(10), rel=1e-14)
    assert math.log(10) == pytest.approx(2.302585, abs=1e-6)


def test_gce_values():
    p = np.array([0.5, 0.3, 0.2])
    y = one_hot(0, 3)
    assert float(gce_loss(y, p, 1.0)[0]) == pytest.approx(0.5, abs=1e-15)
    expected = (1 - 0.5 ** 0.7) / 0.7
    assert expected == pytest.approx(0.549183, abs=1e-6)
    assert float(gce_loss(y, p, 0.7)[0]) == pytest.approx(expected, rel=1e-14)


@pytest.mark.parametrize("q", [0.0, -0.1, 1.5])
def test_gce_rejects_q(q):
    with pytest.raises(ValueError):
        gce_loss(one_hot(0, 2), np.array([0.5, 0.5]), q)


def test_gce_limits_random_pairs():
    rng = make_rng(11)
    q = 1e-4
    for _ in range(100):
        n_c = int(rng.integers(2, 8))
        y = rng.dirichlet(np.ones(n_c))
        p = rng.dirichlet(np.ones(n_c))
        # GCE = CE - q/2 * sum y ln^2 p + O(q^2)
        gap = float(gce_loss(y, p, q)[0]) - float(ce_loss(y, p)[0])
        second = -q / 2 * float(np.sum(y * np.log(p) ** 2))
        assert abs(gap - second) <= 1e-3 * abs(second) + 1e-12
        t = int(rng.integers(n_c))
        assert float(gce_loss(one_hot(t, n_c), p, 1.0)[0]) == 1.0 - p[t]


def test_gce_near_ce_for_moderate_probs():
    rng = make_rng(12)
    for _ in range(100):
        p = 0.9 * rng.dirichlet(np.ones(4)) + 0.025
        y = rng.dirichlet(np.ones(4))
        assert abs(float(gce_loss(y, p, 1e-4)[0]) - float(ce_loss(y, p)[0])) <= 1e-3


@pytest.mark.parametrize("fn", [ce_loss, lambda y, p: gce_loss(y, p, 0.7), lambda y, p: gce_loss(y, p, 0.3)])
def test_loss_gradients(fn):
    rng = make_rng(12)
    for _ in range(20):
        n_c = int(rng.integers(2, 6))
        y = rng.dirichlet(np.ones(n_c))
        p = rng.dirichlet(np.ones(n_c)) + 0.05

        num = numeric_grad(lambda: float(fn(y, p)[0]), p)
        assert rel_err(fn(y, p)[1], num) <= 1e-4


def test_consistency_values():
    p = np.array([0.2, 0.5, 0.3])
    assert float(consistency_loss(p, p)[0]) == pytest.approx(0.0, abs=1e-15)
    assert float(consistency_loss(one_hot(0, 3), one_hot(2, 3))[0]) == 1.0
    assert float(consistency_loss(np.array([1.0, 0.0]), np.array([0.6, 0.8]))[0]) == pytest.approx(0.4)


def test_consistency_zero_vector():
    with pytest.raises(ValueError):
        consistency_loss(np.zeros(3), np.ones(3))


def test_consistency_gradients():
    rng = make_rng(13)
    for _ in range(20):
        a = rng.dirichlet(np.ones(4))
        b = rng.dirichlet(np.ones(4))
        _, g1, g2 = consistency_loss(a, b)
        assert rel_err(g1, numeric_grad(lambda: float(consistency_loss(a, b)[0]), a)) <= 1e-4
        assert rel_err(g2, numeric_grad(lambda: float(consistency_loss(a, b)[0]), b)) <= 1e-4


# -- mixing --------------------------------------------------------------------


def test_mix_identity_at_lambda_one():
    rng = make_rng(1)
    v, y = rng.normal(size=(5, 3)), one_hot([0, 1, 2, 0, 1], 3)
    mv, my, lam, _ = mix_samples(v, y, 1.0, rng, lam=1.0)
    np.testing.assert_array_equal(mv, v)
    np.testing.assert_array_equal(my, y)


def test_mix_label_hand_value():
    v = np.zeros((2, 2))
    y = np.array([[1.0, 0, 0], [0, 1.0, 0]])
    _, my, _, _ = mix_samples(v, y, 1.0, lam=0.3, partners=np.array([1, 0]))
    np.testing.assert_allclose(my[0], [0.3, 0.7, 0.0], rtol=1e-15)


def test_mix_lambda_uniform():
    rng = make_rng(2)
    lams = [mix_samples(np.zeros((2, 1)), np.eye(2), 1.0, rng)[2] for _ in range(100_000)]
    assert abs(np.mean(lams) - 0.5) <= 0.005


def test_mix_errors():
    with pytest.raises(ValueError):
        mix_samples(np.zeros((1, 2)), np.eye(1), 1.0, make_rng(0))
    with pytest.raises(ValueError):
        mix_samples(np.zeros((2, 2)), np.eye(2), 0.0, make_rng(0))


def test_mix_partners_permutation():
    rng = make_rng(3)
    _, _, _, r = mix_samples(np.zeros((9, 2)), np.tile(np.eye(3), (3, 1)), 1.0, rng)
    assert sorted(r) == list(range(9))


def test_cutmix_grid_mode():
    rng = make_rng(4)
    v = np.stack([np.zeros(16), np.ones(16)])
    y = np.eye(2)
    mv, my, lam, r = mix_samples(v, y, 1.0, rng, grid_shape=(4, 4), lam=0.5, partners=np.array([1, 0]))
    # the pasted area fraction equals 1 - lam and labels follow the recomputed lam
    assert mv[0].mean() == pytest.approx(1.0 - lam)
    assert set(np.unique(mv[0])) <= {0.0, 1.0}
    np.testing.assert_allclose(my[0], [lam, 1 - lam])


# -- objectives ----------------------------------------------------------------


def random_batch(rng, n=2, n_c=3):
    def probs():
        # kept away from zero so finite differences stay accurate
        return 0.8 * rng.dirichlet(np.ones(n_c), size=n) + 0.2 / n_c

    y = one_hot(rng.integers(0, n_c, size=n), n_c)
    return BatchPredictions(
        labels=y,
        gen=(probs(), probs()), dis=(probs(), probs()), dis_wrong=(probs(), probs()),
        gen_mix=(probs(), probs()), dis_mix=(probs(), probs()),
        partners=(rng.permutation(n), rng.permutation(n)),
        lambdas=(float(rng.random()), float(rng.random())),
    )


def random_weights(rng, n):
    w1, w2 = rng.random(n), rng.random(n)
    return combine_view_weights(w1, w2)


def straight_line(batch, weights, lam_star, lam_cons, q):
    """Loop-by-loop recomputation of both objectives."""
    def ce(y, p):
        return -sum(a * math.log(max(b, 1e-12)) for a, b in zip(y, p))

    def gce(y, p):
        return sum(a * (1 - max(b, 1e-12) ** q) / q for a, b in zip(y, p))

    def cos(a, b):
        return sum(x * y for x, y in zip(a, b)) / math.sqrt(sum(x * x for x in a) * sum(y * y for y in b))

    ge = ld = 0.0
    n = len(batch.labels)
    for i in range(n):
        y = batch.labels[i]
        wc, wh, wn = weights.w_clean[i], weights.w_hard[i], weights.w_noisy[i]
        clean_ge = hard_ge = noisy_ge = clean_ld = hard_ld = noisy_ld = cons = 0.0
        for k in range(2):
            clean_ge += ce(y, batch.gen[k][i])
            hard_ge += gce(y, batch.gen[k][i])
            clean_ld += ce(y, batch.dis[k][i]) + lam_star * ce(y, batch.dis_wrong[k][i])
            hard_ld += gce(y, batch.dis[k][i]) + lam_star * gce(y, batch.dis_wrong[k][i])
            lam, r = batch.lambdas[k], batch.partners[k][i]
            noisy_ge += lam * ce(y, batch.gen_mix[k][i]) + (1 - lam) * ce(batch.labels[r], batch.gen_mix[k][i])
            noisy_ld += lam * ce(y, batch.dis_mix[k][i]) + (1 - lam) * ce(batch.labels[r], batch.dis_mix[k][i])
            cons += 1 - cos(batch.dis[k][i], batch.dis_wrong[k][i])
        ge += wc * clean_ge + wh * hard_ge + wn * noisy_ge
        ld += wc * clean_ld + wh * hard_ld + wn * (noisy_ld + lam_cons * cons)
    return ge, ld


def test_total_losses_match_straight_line():
    rng = make_rng(20)
    for _ in range(10):
        batch = random_batch(rng)
        weights = random_weights(rng, 2)
        res = total_losses(batch, weights, 0.5, 10.0, 0.7)
        ge, ld = straight_line(batch, weights, 0.5, 10.0, 0.7)
        assert res.loss_ge == pytest.approx(ge, abs=1e-9)
        assert res.loss_ld == pytest.approx(ld, abs=1e-9)


def test_clean_corner_is_plain_ce():
    rng = make_rng(21)
    batch = random_batch(rng, n=5)
    res = total_losses(batch, WeightTriple.corner(5, "clean"))
    expected = sum(float(ce_loss(batch.labels, batch.gen[k])[0].sum()) for k in range(2))
    assert res.loss_ge == expected
    assert res.terms["hard_ge"] == res.terms["noisy_ge"] == 0.0


def test_hard_corner_is_plain_gce():
    rng = make_rng(22)
    batch = random_batch(rng, n=5)
    res = total_losses(batch, WeightTriple.corner(5, "hard"), q=0.7)
    expected = sum(float(gce_loss(batch.labels, batch.gen[k], 0.7)[0].sum()) for k in range(2))
    assert res.loss_ge == pytest.approx(expected, rel=1e-15)


def test_noisy_corner_uniform_predictions():
    rng = make_rng(23)
    n, n_c = 4, 5
    batch = random_batch(rng, n=n, n_c=n_c)
    uniform = np.full((n, n_c), 1.0 / n_c)
    batch.gen_mix = (uniform, uniform)
    batch.dis_mix = (uniform, uniform)
    res = total_losses(batch, WeightTriple.corner(n, "noisy"), lambda_cons=0.0)
    # two views, n instances, ln(n_c) each, whatever lambda was drawn
    assert res.terms["noisy_ge"] == pytest.approx(2 * n * math.log(n_c), rel=1e-14)
    assert res.loss_ld == pytest.approx(2 * n * math.log(n_c), rel=1e-14)


def test_noisy_weight_requires_mixed_predictions():
    rng = make_rng(24)
    batch = random_batch(rng)
    batch.gen_mix = None
    with pytest.raises(ValueError):
        total_losses(batch, WeightTriple.corner(2, "noisy"))


def test_non_finite_term_named():
    rng = make_rng(25)
    batch = random_batch(rng)
    bad = WeightTriple(np.array([np.nan, 0.0]), np.zeros(2), np.zeros(2))
    with pytest.raises(FloatingPointError, match="clean_ge"):
        total_losses(batch, bad)


def test_total_losses_gradients():
    rng = make_rng(26)
    for _ in range(20):
        batch = random_batch(rng, n=3)
        weights = random_weights(rng, 3)
        res = total_losses(batch, weights, 0.5, 10.0, 0.7)
        for key, owner in [("gen", "loss_ge"), ("gen_mix", "loss_ge"), ("dis", "loss_ld"),
                           ("dis_wrong", "loss_ld"), ("dis_mix", "loss_ld")]:
            for k in range(2):
                arr = getattr(batch, key)[k]
                num = numeric_grad(lambda: getattr(total_losses(batch, weights, 0.5, 10.0, 0.7), owner), arr)
                assert rel_err(res.grads[key][k], num) <= 1e-4, (key, k)


# -- label update --------------------------------------------------------------


def test_prediction_delta_values():
    assert float(prediction_delta([0.3, 0.7], [0.3, 0.7])) == 0.0
    assert float(prediction_delta(one_hot(0, 3), one_hot(2, 3))) == 2.0
    assert float(prediction_delta([0.7, 0.3], [0.5, 0.5])) == pytest.approx(0.4)


@given(st.integers(0, 2 ** 32 - 1), st.integers(2, 12))
@settings(max_examples=200)
def test_delta_range(seed, n_c):
    rng = make_rng(seed)
    a, b = rng.dirichlet(np.ones(n_c) * 0.3, size=2)
    d = float(prediction_delta(a, b))
    assert 0.0 <= d <= 2.0
    assert 0.0 <= (2 - d) / 2 <= 1.0


def test_t_score_hand_value():
    # union quantiles 0 and 1 at eps (0, 1); lid 0.5 -> q = 0.5
    tl, tp = t_scores(0.5, 0.5, [0.0, 1.0], 0.4, 2.0, 0.0, 1.0)
    assert float(tl) == pytest.approx(0.4)
    assert float(tp) == 0.0


def test_t_score_double_clamp():
    tl, _ = t_scores(-5.0, 0.5, [0.0, 1.0, 2.0], 0.0, 0.0, 0.0, 1.0)
    assert float(tl) == 1.0


def test_decide_update_rule():
    p = one_hot(3, 5) * 0.6 + 0.08
    dec = decide_update((0.2, 0.3), (0.4, 0.5), p, p, 0.1)
    assert bool(dec.update) and int(dec.new_class) == 3
    np.testing.assert_array_equal(dec.new_label(5), one_hot(3, 5))


def test_decide_update_requires_agreement():
    a, b = one_hot(1, 3) * 0.8 + 0.2 / 3, one_hot(2, 3) * 0.8 + 0.2 / 3
    assert not bool(decide_update((0.0, 0.0), (1.0, 1.0), a, b, 0.1).update)


def test_decide_update_threshold():
    p = np.array([0.1, 0.9])
    assert not bool(decide_update((0.0, 0.0), (0.09, 0.5), p, p, 0.1).update)


def test_argmax_ties_lowest_index():
    p = np.array([0.4, 0.4, 0.2])
    assert int(decide_update((0.0, 0.0), (1.0, 1.0), p, p, 0.1).new_class) == 0


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1), st.floats(0, 1), st.floats(0, 1), st.integers(0, 1))
def test_decide_update_monotone(tl1, tl2, tp1, tp2, bump, which):
    p = np.array([0.2, 0.8])
    before = bool(decide_update((tl1, tl2), (tp1, tp2), p, p, 0.1).update)
    raised = [tp1, tp2]
    raised[which] = min(1.0, raised[which] + bump)
    after = bool(decide_update((tl1, tl2), tuple(raised), p, p, 0.1).update)
    assert after or not before
