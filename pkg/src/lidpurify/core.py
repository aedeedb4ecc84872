"""Loss weighting, loss families, sample mixing and the label-update rule.

All functions are batched over rows: label/probability arguments are
``(n, n_classes)`` arrays (a single vector also works) and per-instance
outputs are length-n arrays. Scores, quantiles, weights, deltas and t values
are treated as constants; gradients are only returned w.r.t. probabilities.
"""
from dataclasses import dataclass, field

import numpy as np

from .numkit import argmax_low, one_hot, quantile

P_FLOOR = 1e-12


@dataclass
class WeightTriple:
    w_clean: np.ndarray
    w_hard: np.ndarray
    w_noisy: np.ndarray

    @classmethod
    def corner(cls, n, which):
        w = {"clean": np.zeros(n), "hard": np.zeros(n), "noisy": np.zeros(n)}
        w[which] = np.ones(n)
        return cls(w["clean"], w["hard"], w["noisy"])


@dataclass
class UpdateDecision:
    update: np.ndarray
    new_class: np.ndarray
    t_label: tuple
    t_pseudo: tuple

    def new_label(self, n_classes):
        return one_hot(self.new_class, n_classes)


def quantile_position(lid, scores, eps_low, eps_high):
    """``(q_high - lid) / (q_high - q_low)`` using batch quantiles of ``scores``.

    A zero spread (q_high == q_low) maps to 1 where lid <= q_low, else 0.
    """
    if not 0.0 <= eps_low <= eps_high <= 1.0:
        raise ValueError(f"need 0 <= eps_low <= eps_high <= 1, got {eps_low}, {eps_high}")
    q_low = quantile(scores, eps_low)
    q_high = quantile(scores, eps_high)
    lid = np.asarray(lid, dtype=np.float64)
    if q_high == q_low:
        return np.where(lid <= q_low, 1.0, 0.0)
    return (q_high - lid) / (q_high - q_low)


def view_weight(lid, scores, eps_low, eps_high):
    return np.clip(quantile_position(lid, scores, eps_low, eps_high), 0.0, 1.0)


def combine_view_weights(w1, w2):
    w1 = np.asarray(w1, dtype=np.float64)
    w2 = np.asarray(w2, dtype=np.float64)
    return WeightTriple(np.minimum(w1, w2), np.abs(w1 - w2), np.minimum(1.0 - w1, 1.0 - w2))


def assign_weights(lid_w_view1, lid_w_view2, batch_scores_v1, batch_scores_v2, eps_low, eps_high):
    """Clean/hard/noisy weights from the two views' LID scores."""
    if len(batch_scores_v1) == 0 or len(batch_scores_v2) == 0:
        raise ValueError("batch score lists must be non-empty")
    w1 = view_weight(lid_w_view1, batch_scores_v1, eps_low, eps_high)
    w2 = view_weight(lid_w_view2, batch_scores_v2, eps_low, eps_high)
    return combine_view_weights(w1, w2)


# -- loss families -----------------------------------------------------------


def _pair(y, p):
    y = np.asarray(y, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if y.shape != p.shape:
        raise ValueError(f"shape mismatch {y.shape} vs {p.shape}")
    return y, p


def ce_loss(y, p):
    """Cross entropy ``-sum y log p`` and its gradient w.r.t. ``p``."""
    y, p = _pair(y, p)
    pc = np.maximum(p, P_FLOOR)
    return -(y * np.log(pc)).sum(axis=-1), -y / pc


def gce_loss(y, p, q=0.7):
    """Generalized cross entropy ``sum y (1 - p^q) / q`` and its gradient."""
    if not 0.0 < q <= 1.0:
        raise ValueError(f"GCE q={q} outside (0, 1]")
    y, p = _pair(y, p)
    pc = np.maximum(p, P_FLOOR)
    return (y * (1.0 - pc ** q)).sum(axis=-1) / q, -y * pc ** (q - 1.0)


def consistency_loss(p1, p2):
    """``1 - cos(p1, p2)`` with gradients for both arguments."""
    p1, p2 = _pair(p1, p2)
    n1 = np.linalg.norm(p1, axis=-1, keepdims=True)
    n2 = np.linalg.norm(p2, axis=-1, keepdims=True)
    if np.any(n1 == 0) or np.any(n2 == 0):
        raise ValueError("cosine of a zero vector")
    cos = (p1 * p2).sum(axis=-1, keepdims=True) / (n1 * n2)
    g1 = -(p2 / (n1 * n2) - cos * p1 / n1 ** 2)
    g2 = -(p1 / (n1 * n2) - cos * p2 / n2 ** 2)
    return 1.0 - cos[..., 0], g1, g2


# -- mixing ------------------------------------------------------------------


def mix_samples(batch_views, batch_labels, alpha=1.0, rng=None, grid_shape=None, lam=None, partners=None):
    """Mix each row with a random partner row of the same batch.

    Vector mode (default) is Mixup: ``lam * v + (1 - lam) * v_partner``.
    With ``grid_shape=(H, W)`` the rows are read as H x W grids (optionally
    with leading channels) and a random rectangle of area ~ ``1 - lam`` is
    pasted from the partner; ``lam`` is then recomputed from the clipped box.
    Labels are always mixed linearly with the returned ``lam``.

    Returns ``(mixed_views, mixed_labels, lam, partners)``.
    """
    v = np.asarray(batch_views, dtype=np.float64)
    y = np.asarray(batch_labels, dtype=np.float64)
    n = v.shape[0]
    if n < 2:
        raise ValueError("mixing needs a batch of at least 2")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if partners is None:
        partners = rng.permutation(n)
    if lam is None:
        lam = float(rng.beta(alpha, alpha))
    if grid_shape is None:
        mixed = lam * v + (1.0 - lam) * v[partners]
    else:
        mixed, lam = _cutmix_grid(v, partners, lam, grid_shape, rng)
    y_mix = lam * y + (1.0 - lam) * y[partners]
    return mixed, y_mix, lam, partners


def _cutmix_grid(v, partners, lam, grid_shape, rng):
    h, w = grid_shape
    grids = v.reshape(v.shape[0], -1, h, w)
    cut = np.sqrt(1.0 - lam)
    ch, cw = int(h * cut), int(w * cut)
    cy, cx = rng.integers(h), rng.integers(w)
    y0, y1 = np.clip(cy - ch // 2, 0, h), np.clip(cy + ch // 2, 0, h)
    x0, x1 = np.clip(cx - cw // 2, 0, w), np.clip(cx + cw // 2, 0, w)
    mask = np.ones((h, w))
    mask[y0:y1, x0:x1] = 0.0
    mixed = mask * grids + (1.0 - mask) * grids[partners]
    lam = 1.0 - (y1 - y0) * (x1 - x0) / (h * w)
    return mixed.reshape(v.shape), float(lam)


# -- combined objectives -----------------------------------------------------


@dataclass
class BatchPredictions:
    """Everything the objectives need for one batch.

    ``gen``/``dis``/``dis_wrong``/``gen_mix``/``dis_mix`` are pairs (one per
    view) of ``(n, n_classes)`` probability arrays; the mixed entries may be
    ``None`` when no instance carries noisy weight.
    """

    labels: np.ndarray
    gen: tuple
    dis: tuple
    dis_wrong: tuple
    gen_mix: tuple = None
    dis_mix: tuple = None
    partners: tuple = None
    lambdas: tuple = None


@dataclass
class LossResult:
    loss_ge: float
    loss_ld: float
    terms: dict
    grads: dict = field(default_factory=dict)


def _zeros_like_pair(pair):
    return [np.zeros_like(pair[0]), np.zeros_like(pair[1])]


def total_losses(batch, weights, lambda_star=0.5, lambda_cons=10.0, q=0.7):
    """Weighted clean/hard/noisy objectives of both subnets, summed over the batch.

    Returns a :class:`LossResult` whose ``grads`` hold dL/dprobs for every
    prediction set (``gen``, ``gen_mix`` feed the generator loss; the rest feed
    the discriminator loss).
    """
    y = np.asarray(batch.labels, dtype=np.float64)
    wc = np.asarray(weights.w_clean, dtype=np.float64)[:, None]
    wh = np.asarray(weights.w_hard, dtype=np.float64)[:, None]
    wn = np.asarray(weights.w_noisy, dtype=np.float64)[:, None]
    terms = dict.fromkeys(
        ["clean_ge", "hard_ge", "noisy_ge", "clean_ld", "hard_ld", "noisy_ld", "cons_ld"], 0.0)
    grads = {
        "gen": _zeros_like_pair(batch.gen),
        "dis": _zeros_like_pair(batch.dis),
        "dis_wrong": _zeros_like_pair(batch.dis_wrong),
    }
    for k in range(2):
        ce_g, dce_g = ce_loss(y, batch.gen[k])
        ce_d, dce_d = ce_loss(y, batch.dis[k])
        ce_w, dce_w = ce_loss(y, batch.dis_wrong[k])
        terms["clean_ge"] += float((wc[:, 0] * ce_g).sum())
        terms["clean_ld"] += float((wc[:, 0] * (ce_d + lambda_star * ce_w)).sum())
        grads["gen"][k] += wc * dce_g
        grads["dis"][k] += wc * dce_d
        grads["dis_wrong"][k] += wc * lambda_star * dce_w

        if np.any(wh > 0):
            gce_g, dgce_g = gce_loss(y, batch.gen[k], q)
            gce_d, dgce_d = gce_loss(y, batch.dis[k], q)
            gce_w, dgce_w = gce_loss(y, batch.dis_wrong[k], q)
            terms["hard_ge"] += float((wh[:, 0] * gce_g).sum())
            terms["hard_ld"] += float((wh[:, 0] * (gce_d + lambda_star * gce_w)).sum())
            grads["gen"][k] += wh * dgce_g
            grads["dis"][k] += wh * dgce_d
            grads["dis_wrong"][k] += wh * lambda_star * dgce_w

    if np.any(wn > 0):
        if batch.gen_mix is None or batch.dis_mix is None:
            raise ValueError("noisy weight present but no mixed predictions supplied")
        grads["gen_mix"] = _zeros_like_pair(batch.gen_mix)
        grads["dis_mix"] = _zeros_like_pair(batch.dis_mix)
        for k in range(2):
            lam, partner = batch.lambdas[k], batch.partners[k]
            y_partner = y[partner]
            for name, probs in (("ge", batch.gen_mix[k]), ("ld", batch.dis_mix[k])):
                own, d_own = ce_loss(y, probs)
                other, d_other = ce_loss(y_partner, probs)
                mixed = lam * own + (1.0 - lam) * other
                terms[f"noisy_{name}"] += float((wn[:, 0] * mixed).sum())
                key = "gen_mix" if name == "ge" else "dis_mix"
                grads[key][k] += wn * (lam * d_own + (1.0 - lam) * d_other)
            cons, g1, g2 = consistency_loss(batch.dis[k], batch.dis_wrong[k])
            terms["cons_ld"] += float((wn[:, 0] * cons).sum())
            grads["dis"][k] += wn * lambda_cons * g1
            grads["dis_wrong"][k] += wn * lambda_cons * g2
        terms["noisy_ld"] += lambda_cons * terms["cons_ld"]

    for name, value in terms.items():
        if not np.isfinite(value):
            raise FloatingPointError(f"non-finite loss term {name}")
    loss_ge = terms["clean_ge"] + terms["hard_ge"] + terms["noisy_ge"]
    loss_ld = terms["clean_ld"] + terms["hard_ld"] + terms["noisy_ld"]
    return LossResult(loss_ge, loss_ld, terms, grads)


# -- label update ------------------------------------------------------------


def prediction_delta(p_gen, p_dis):
    """L1 gap between two distributions; lies in [0, 2]."""
    return np.abs(np.asarray(p_gen, dtype=np.float64) - np.asarray(p_dis, dtype=np.float64)).sum(axis=-1)


def t_scores(lid_u_label, lid_u_pseudo, union_scores, delta_label, delta_pseudo, eps_low, eps_high):
    """Reliability of the current label and of the pseudo-label for one view."""
    q_label = quantile_position(lid_u_label, union_scores, eps_low, eps_high)
    q_pseudo = quantile_position(lid_u_pseudo, union_scores, eps_low, eps_high)
    t_label = np.clip(q_label * (2.0 - np.asarray(delta_label)) / 2.0, 0.0, 1.0)
    t_pseudo = np.clip(q_pseudo * (2.0 - np.asarray(delta_pseudo)) / 2.0, 0.0, 1.0)
    return t_label, t_pseudo


def decide_update(t_label, t_pseudo, pseudo1, pseudo2, eps_k=0.1):
    """Replace a label only if both views prefer the agreeing pseudo-label."""
    tl1, tl2 = (np.asarray(t) for t in t_label)
    tp1, tp2 = (np.asarray(t) for t in t_pseudo)
    c1 = argmax_low(pseudo1)
    c2 = argmax_low(pseudo2)
    update = (tp1 > tl1) & (tp2 > tl2) & (tp1 > eps_k) & (tp2 > eps_k) & (c1 == c2)
    return UpdateDecision(update, c1, (tl1, tl2), (tp1, tp2))
