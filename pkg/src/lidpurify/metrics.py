"""Accuracy, LID false-label AUC, and label-purification statistics."""
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

LID_REPORT_HEADER = "epoch,id,lid_v1,lid_v2,is_false"


@dataclass
class LidReport:
    epoch: np.ndarray
    ids: np.ndarray
    lid_v1: np.ndarray
    lid_v2: np.ndarray
    is_false: np.ndarray

    def __len__(self):
        return len(self.ids)

    @classmethod
    def concat(cls, reports):
        return cls(*(np.concatenate([getattr(r, f) for r in reports])
                     for f in ("epoch", "ids", "lid_v1", "lid_v2", "is_false")))

    def at_epoch(self, epoch):
        sel = self.epoch == epoch
        return LidReport(self.epoch[sel], self.ids[sel], self.lid_v1[sel], self.lid_v2[sel], self.is_false[sel])


@dataclass
class UpdateRecord:
    epoch: int
    id: int
    old: int
    new: int


def accuracy(model, test_set):
    """Fraction of test instances whose argmax prediction is the true class."""
    if len(test_set) == 0:
        raise ValueError("empty test set")
    probs, _ = model.gen_forward(test_set.x)
    return accuracy_from_probs(probs, test_set.true)


def accuracy_from_probs(probs, true_classes):
    true_classes = np.asarray(true_classes)
    if true_classes.size == 0:
        raise ValueError("empty test set")
    return float(np.mean(np.argmax(probs, axis=-1) == true_classes))


def auc(scores, positive):
    """Rank-based ROC AUC (Mann-Whitney) with midranks for ties."""
    scores = np.asarray(scores, dtype=np.float64)
    positive = np.asarray(positive, dtype=bool)
    n_pos = int(positive.sum())
    n_neg = positive.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("degenerate report: need both true- and false-labeled instances")
    ranks = rankdata(scores, method="average")
    return float((ranks[positive].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def lid_auc(report):
    """AUC of the mean-of-views LID score as a false-label detector."""
    return auc((np.asarray(report.lid_v1) + np.asarray(report.lid_v2)) / 2.0, report.is_false)


def purification_stats(dataset, update_log):
    """``(updated_count, update_precision, residual_noise_rate)``.

    Precision is the share of applied updates whose new class is the true
    class; it is ``None`` when nothing was updated.
    """
    count = len(update_log)
    if count:
        pos = {int(i): j for j, i in enumerate(dataset.ids)}
        hits = sum(rec.new == dataset.true[pos[rec.id]] for rec in update_log)
        precision = hits / count
    else:
        precision = None
    return count, precision, dataset.noise_rate()


def top_k_average(values, k=3):
    v = sorted(values, reverse=True)[:k]
    if not v:
        raise ValueError("no values")
    return float(np.mean(v))


def write_lid_report(path, report):
    with open(path, "w") as fh:
        fh.write(LID_REPORT_HEADER + "\n")
        for e, i, a, b, f in zip(report.epoch, report.ids, report.lid_v1, report.lid_v2, report.is_false):
            fh.write(f"{int(e)},{int(i)},{float(a)!r},{float(b)!r},{int(bool(f))}\n")


def read_lid_report(path):
    with open(path) as fh:
        header = fh.readline().strip()
        if header != LID_REPORT_HEADER:
            raise ValueError(f"{path}: unexpected header {header!r}")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    cols = list(zip(*rows)) if rows else [()] * 5
    return LidReport(
        np.array(cols[0], dtype=np.int64), np.array(cols[1], dtype=np.int64),
        np.array(cols[2], dtype=np.float64), np.array(cols[3], dtype=np.float64),
        np.array(cols[4], dtype=np.int64).astype(bool),
    )
