"""Two-subnet training loop: warm-up, LID-weighted losses, epoch-end label updates."""
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import core
from .lid import lid_union_scores, lid_weight_scores
from .metrics import LidReport, UpdateRecord, accuracy, lid_auc
from .nn import Subnet, add_grads
from .noiselab import make_views, wrong_classes
from .numkit import make_rng, one_hot

MODES = ("colafier", "plain-ce", "plain-gce")


@dataclass
class TrainConfig:
    total_epochs: int = 60
    warmup_epochs: int = 15
    batch_size: int = 128
    lr: float = 1e-3
    weight_decay: float = 1e-3
    eps_w_low: float = 0.001
    eps_w_high_start: float = 0.05
    eps_u_low: float = 0.001
    eps_u_high_start: float = 0.5
    ramp_epochs: int = 30
    eps_k: float = 0.1
    lambda_star: float = 0.5
    lambda_cons: float = 10.0
    gce_q: float = 0.7
    k_nn: int = 20
    seed: int = 0
    hidden: tuple = (64, 64)
    width: int = 64
    sigma1: float = 0.05
    sigma2: float = 0.05
    p_drop: float = 0.1
    mix_alpha: float = 1.0
    record_wall_time: bool = False

    def validate(self):
        if self.total_epochs < 1:
            raise ValueError("total_epochs: must be >= 1")
        if not 0 <= self.warmup_epochs < self.total_epochs:
            raise ValueError("warmup_epochs: need 0 <= warmup_epochs < total_epochs")
        for name in ("eps_w_low", "eps_w_high_start", "eps_u_low", "eps_u_high_start", "eps_k"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name}: must lie in [0, 1]")
        if self.eps_w_low > self.eps_w_high_start:
            raise ValueError("eps_w_low: must not exceed eps_w_high_start")
        if self.eps_u_low > self.eps_u_high_start:
            raise ValueError("eps_u_low: must not exceed eps_u_high_start")
        if self.k_nn < 1:
            raise ValueError("k_nn: must be >= 1")
        if self.batch_size < self.k_nn + 1:
            raise ValueError("batch_size: need batch_size >= k_nn + 1")
        if self.ramp_epochs < 1:
            raise ValueError("ramp_epochs: must be >= 1")
        if not 0.0 < self.gce_q <= 1.0:
            raise ValueError("gce_q: must lie in (0, 1]")
        if self.mix_alpha <= 0:
            raise ValueError("mix_alpha: must be positive")
        if not 0.0 <= self.p_drop <= 1.0:
            raise ValueError("p_drop: must lie in [0, 1]")
        if self.lr <= 0 or self.weight_decay < 0:
            raise ValueError("lr: must be positive and weight_decay non-negative")
        return self


@dataclass
class EpochReport:
    epoch: int
    phase: str
    accuracy: float
    loss_clean: float
    loss_hard: float
    loss_noisy: float
    loss_ge: float
    loss_ld: float
    updated: int
    update_precision: float = None
    lid_auc: float = None
    eps_w_high: float = None
    eps_u_high: float = None
    noise_rate: float = None
    wall_ms: float = 0.0

    def as_dict(self):
        return asdict(self)


def schedule_eps_high(start, epoch_since_warmup, ramp_epochs):
    """Linear ramp from ``start`` to 1 over ``ramp_epochs`` post-warm-up epochs."""
    if ramp_epochs < 1:
        raise ValueError("ramp_epochs must be >= 1")
    frac = min(1.0, max(0, epoch_since_warmup) / ramp_epochs)
    return start + (1.0 - start) * frac


def make_batches(n, batch_size, min_size, rng):
    """Seeded shuffle split into batches; a short tail merges into its predecessor."""
    perm = rng.permutation(n)
    batches = [perm[i:i + batch_size] for i in range(0, n, batch_size)]
    if len(batches) > 1 and len(batches[-1]) < min_size:
        tail = batches.pop()
        batches[-1] = np.concatenate([batches[-1], tail])
    if len(batches[0]) < min_size:
        raise ValueError(f"dataset of {n} instances cannot fill a batch of {min_size}")
    return batches


class Trainer:
    """Owns both subnets and the training set's mutable labels.

    ``mode`` selects the full method (``colafier``) or a baseline that keeps
    the same harness with weighting and label updates switched off
    (``plain-ce``: clean corner, ``plain-gce``: hard corner every epoch).
    """

    def __init__(self, train_set, test_set, config, mode="colafier"):
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}")
        self.config = config.validate()
        self.mode = mode
        self.train_set = train_set
        self.test_set = test_set
        self.rng = make_rng(config.seed)
        d, n_c = train_set.dim, train_set.n_classes
        self.n_classes = n_c
        self.gen = Subnet(d, n_c, config.hidden, config.width, conditioned=False, rng=self.rng)
        self.dis = Subnet(d, n_c, config.hidden, config.width, conditioned=True, rng=self.rng)
        self.epoch = 0
        self.reports = []
        self.lid_reports = []
        self.update_log = []
        self.initial_noise_rate = train_set.noise_rate()

    # -- schedules ---------------------------------------------------------

    def eps_high(self, epoch):
        since = epoch - self.config.warmup_epochs - 1
        c = self.config
        return (schedule_eps_high(c.eps_w_high_start, since, c.ramp_epochs),
                schedule_eps_high(c.eps_u_high_start, since, c.ramp_epochs))

    def is_warmup(self, epoch):
        return epoch <= self.config.warmup_epochs

    # -- epochs --------------------------------------------------------------

    def run(self, epochs=None, callback=None):
        last = self.config.total_epochs if epochs is None else min(self.config.total_epochs, self.epoch + epochs)
        while self.epoch < last:
            report = self.run_epoch()
            if callback is not None:
                callback(report)
        return self.reports

    def run_epoch(self):
        epoch = self.epoch + 1
        if self.mode == "colafier" and not self.is_warmup(epoch):
            report = self.train_epoch(epoch)
        else:
            report = self.warmup_epoch(epoch)
        self.epoch = epoch
        self.reports.append(report)
        return report

    def warmup_epoch(self, epoch):
        """Plain (unweighted) epoch; also the whole run for baseline modes."""
        corner = "hard" if self.mode == "plain-gce" else "clean"
        return self._epoch(epoch, corner=corner)

    def train_epoch(self, epoch):
        return self._epoch(epoch, corner=None)

    def _epoch(self, epoch, corner):
        t0 = time.perf_counter()
        c = self.config
        ds = self.train_set
        eps_w, eps_u = self.eps_high(epoch)
        # labels are frozen for the whole epoch; updates land afterwards
        labels = ds.noisy.copy()
        sums = dict.fromkeys(["clean", "hard", "noisy", "ge", "ld"], 0.0)
        lid_parts = []
        pending = {}
        for b, idx in enumerate(make_batches(len(ds), c.batch_size, c.k_nn + 1, self.rng)):
            try:
                out = self._batch(idx, labels, corner, eps_w, eps_u)
            except FloatingPointError as err:
                raise FloatingPointError(f"epoch {epoch} batch {b}: {err}") from err
            res = out["losses"]
            sums["clean"] += res.terms["clean_ge"] + res.terms["clean_ld"]
            sums["hard"] += res.terms["hard_ge"] + res.terms["hard_ld"]
            sums["noisy"] += res.terms["noisy_ge"] + res.terms["noisy_ld"]
            sums["ge"] += res.loss_ge
            sums["ld"] += res.loss_ld
            lid_parts.append(LidReport(
                np.full(len(idx), epoch), ds.ids[idx], out["lid1"], out["lid2"], labels[idx] != ds.true[idx]))
            for i, new in out["updates"]:
                pending[int(i)] = int(new)

        applied = []
        for i, new in sorted(pending.items()):
            if new != ds.noisy[i]:
                applied.append(UpdateRecord(epoch, int(ds.ids[i]), int(ds.noisy[i]), new))
                ds.noisy[i] = new
        self.update_log.extend(applied)
        precision = None
        if applied:
            pos = {int(j): k for k, j in enumerate(ds.ids)}
            precision = sum(r.new == ds.true[pos[r.id]] for r in applied) / len(applied)

        lid_report = LidReport.concat(lid_parts)
        self.lid_reports.append(lid_report)
        try:
            auc_value = lid_auc(lid_report)
        except ValueError:
            auc_value = None
        n = len(ds)
        wall = (time.perf_counter() - t0) * 1000.0 if c.record_wall_time else 0.0
        return EpochReport(
            epoch=epoch,
            phase="warmup" if self.is_warmup(epoch) else "main",
            accuracy=accuracy(self.gen, self.test_set),
            loss_clean=sums["clean"] / n,
            loss_hard=sums["hard"] / n,
            loss_noisy=sums["noisy"] / n,
            loss_ge=sums["ge"] / n,
            loss_ld=sums["ld"] / n,
            updated=len(applied),
            update_precision=precision,
            lid_auc=auc_value,
            eps_w_high=eps_w,
            eps_u_high=eps_u,
            noise_rate=ds.noise_rate(),
            wall_ms=wall,
        )

    # -- one mini-batch --------------------------------------------------------

    def _batch(self, idx, labels, corner, eps_w, eps_u):
        c = self.config
        n = len(idx)
        n_c = self.n_classes
        rng = self.rng
        x = self.train_set.x[idx]
        y_cls = labels[idx]
        y = one_hot(y_cls, n_c)

        # (1) views and wrong labels
        v1, v2 = make_views(x, rng, c.sigma1, c.sigma2, c.p_drop)
        y_wrong = one_hot(wrong_classes(y_cls, n_c, rng), n_c)

        # (2) predictions and weighting LID
        pg, tr_gen = self.gen.gen_forward(np.vstack([v1, v2]))
        pd, z, tr_dis = self.dis.dis_forward(np.vstack([v1, v2, v1, v2]), np.vstack([y, y, y_wrong, y_wrong]))
        gen = (pg[:n], pg[n:])
        dis = (pd[:n], pd[n:2 * n])
        dis_wrong = (pd[2 * n:3 * n], pd[3 * n:])
        z1, z2 = z[:n], z[n:2 * n]
        lid1 = lid_weight_scores(z1, c.k_nn)
        lid2 = lid_weight_scores(z2, c.k_nn)

        # (3) weights, mixing, objectives
        if corner is None:
            weights = core.assign_weights(lid1, lid2, lid1, lid2, c.eps_w_low, eps_w)
        else:
            weights = core.WeightTriple.corner(n, corner)
        batch = core.BatchPredictions(y, gen, dis, dis_wrong)
        tr_gen_mix = tr_dis_mix = None
        if np.any(weights.w_noisy > 0):
            m1, ym1, lam1, r1 = core.mix_samples(v1, y, c.mix_alpha, rng)
            m2, ym2, lam2, r2 = core.mix_samples(v2, y, c.mix_alpha, rng)
            pgm, tr_gen_mix = self.gen.gen_forward(np.vstack([m1, m2]))
            pdm, _, tr_dis_mix = self.dis.dis_forward(np.vstack([m1, m2]), np.vstack([ym1, ym2]))
            batch.gen_mix = (pgm[:n], pgm[n:])
            batch.dis_mix = (pdm[:n], pdm[n:])
            batch.partners = (r1, r2)
            batch.lambdas = (lam1, lam2)
        losses = core.total_losses(batch, weights, c.lambda_star, c.lambda_cons, c.gce_q)

        # (4) update decisions from the pre-step outputs
        updates = []
        if corner is None:
            updates = self._decide(idx, v1, v2, gen, dis, z1, z2, eps_u)

        g = losses.grads
        grads_gen = self.gen.backward(tr_gen, np.vstack(g["gen"]))
        grads_dis = self.dis.backward(tr_dis, np.vstack([*g["dis"], *g["dis_wrong"]]))
        if tr_gen_mix is not None:
            grads_gen = add_grads(grads_gen, self.gen.backward(tr_gen_mix, np.vstack(g["gen_mix"])))
            grads_dis = add_grads(grads_dis, self.dis.backward(tr_dis_mix, np.vstack(g["dis_mix"])))
        self.gen.adamw_step(grads_gen, c.lr, c.weight_decay)
        self.dis.adamw_step(grads_dis, c.lr, c.weight_decay)
        return {"losses": losses, "lid1": lid1, "lid2": lid2, "weights": weights, "updates": updates}

    def _decide(self, idx, v1, v2, gen, dis, z1, z2, eps_u):
        c = self.config
        n = len(idx)
        p_gd, z_hat, _ = self.dis.dis_forward(np.vstack([v1, v2]), np.vstack(gen))
        t_label, t_pseudo = [], []
        for k, z_k in enumerate((z1, z2)):
            lu_label, lu_pseudo = lid_union_scores(z_k, z_hat[k * n:(k + 1) * n], c.k_nn)
            union = np.concatenate([lu_label, lu_pseudo])
            d_label = core.prediction_delta(gen[k], dis[k])
            d_pseudo = core.prediction_delta(gen[k], p_gd[k * n:(k + 1) * n])
            tl, tp = core.t_scores(lu_label, lu_pseudo, union, d_label, d_pseudo, c.eps_u_low, eps_u)
            t_label.append(tl)
            t_pseudo.append(tp)
        dec = core.decide_update(t_label, t_pseudo, gen[0], gen[1], c.eps_k)
        return [(i, cls) for i, cls, u in zip(idx, dec.new_class, dec.update) if u]
