"""Synthetic blobs, label-noise injection, two-view augmentation, wrong labels."""
from dataclasses import dataclass

import numpy as np
from scipy.stats import truncnorm

from .numkit import one_hot, pairwise_distances

NOISE_KINDS = ("symmetric", "asymmetric", "instance")
INSTANCE_RATE_STD = 0.1


@dataclass
class LabeledInstance:
    id: int
    x: np.ndarray
    noisy_label: np.ndarray
    true_label: np.ndarray


class Dataset:
    """Column store of instances.

    ``noisy`` holds the current (mutable) class indices; ``true`` is frozen at
    construction and only read by evaluation code.
    """

    def __init__(self, x, noisy, true, n_classes, ids=None, centers=None):
        self.x = np.asarray(x, dtype=np.float64)
        self.noisy = np.array(noisy, dtype=np.int64)
        true = np.array(true, dtype=np.int64)
        true.setflags(write=False)
        self.true = true
        self.n_classes = int(n_classes)
        self.ids = np.arange(len(self.x)) if ids is None else np.asarray(ids, dtype=np.int64)
        self.centers = centers

    def __len__(self):
        return len(self.x)

    def __getitem__(self, i):
        return LabeledInstance(
            int(self.ids[i]), self.x[i],
            one_hot(self.noisy[i], self.n_classes), one_hot(self.true[i], self.n_classes),
        )

    @property
    def dim(self):
        return self.x.shape[1]

    def noisy_onehot(self):
        return one_hot(self.noisy, self.n_classes)

    def true_onehot(self):
        return one_hot(self.true, self.n_classes)

    def noise_rate(self):
        return float(np.mean(self.noisy != self.true))

    def copy(self):
        return Dataset(self.x.copy(), self.noisy.copy(), self.true, self.n_classes, self.ids.copy(), self.centers)


def _draw_centers(d, n_c, spread, rng, tries=100):
    for _ in range(tries):
        c = rng.normal(size=(n_c, d))
        c /= np.linalg.norm(c, axis=1, keepdims=True)
        if n_c < 2:
            return c
        sep = pairwise_distances(c)[np.triu_indices(n_c, 1)].min()
        if sep >= 2 * spread:
            return c
    raise ValueError(f"could not place {n_c} unit centers {2 * spread} apart in {tries} draws")


def _sample_clusters(centers, n, spread, rng):
    n_c, d = centers.shape
    labels = np.arange(n) % n_c
    labels = labels[rng.permutation(n)]
    x = centers[labels] + spread * rng.normal(size=(n, d))
    return x, labels


def make_blobs(n, d, n_c, spread, rng):
    """Balanced Gaussian clusters around unit-norm random centres."""
    if n < n_c:
        raise ValueError("need at least one instance per class")
    if d < 2:
        raise ValueError("need d >= 2")
    centers = _draw_centers(d, n_c, spread, rng)
    x, labels = _sample_clusters(centers, n, spread, rng)
    return Dataset(x, labels, labels, n_c, centers=centers)


def make_split(n_train, n_test, d, n_c, spread, rng):
    """Train and test sets drawn around the same centres."""
    train = make_blobs(n_train, d, n_c, spread, rng)
    x, labels = _sample_clusters(train.centers, n_test, spread, rng)
    test = Dataset(x, labels, labels, n_c, centers=train.centers)
    return train, test


def expected_noise_rate(kind, ratio):
    if kind == "instance":
        lo, hi = (0 - ratio) / INSTANCE_RATE_STD, (1 - ratio) / INSTANCE_RATE_STD
        return float(truncnorm.mean(lo, hi, loc=ratio, scale=INSTANCE_RATE_STD))
    return float(ratio)


def inject_noise(dataset, kind, ratio, rng):
    """Corrupt labels starting from the true labels; returns a new dataset."""
    if kind not in NOISE_KINDS:
        raise ValueError(f"unknown noise kind {kind!r}")
    if not 0.0 <= ratio < 1.0:
        raise ValueError(f"noise ratio {ratio} outside [0, 1)")
    out = dataset.copy()
    n, n_c = len(out), out.n_classes
    true = out.true
    if ratio == 0.0:
        out.noisy = true.copy()
        return out
    if kind == "symmetric":
        flip = rng.random(n) < ratio
        shift = rng.integers(1, n_c, size=n)
        out.noisy = np.where(flip, (true + shift) % n_c, true)
    elif kind == "asymmetric":
        flip = rng.random(n) < ratio
        out.noisy = np.where(flip, (true + 1) % n_c, true)
    else:
        lo, hi = (0 - ratio) / INSTANCE_RATE_STD, (1 - ratio) / INSTANCE_RATE_STD
        rates = truncnorm.rvs(lo, hi, loc=ratio, scale=INSTANCE_RATE_STD, size=n, random_state=rng)
        proj = rng.normal(size=(out.dim, n_c))
        logits = out.x @ proj
        logits[np.arange(n), true] = -np.inf
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        u = rng.random(n)
        dest = (p.cumsum(axis=1) < u[:, None]).sum(axis=1)
        # cumsum rounding can push u past the last bucket
        dest = np.where(dest >= n_c, np.argmax(p, axis=1), dest)
        flip = rng.random(n) < rates
        out.noisy = np.where(flip, dest, true)
    return out


def make_views(x, rng, sigma1=0.05, sigma2=0.05, p_drop=0.1):
    """Weak view (jitter) and strong view (jitter + coordinate dropout)."""
    x = np.asarray(x, dtype=np.float64)
    v1 = x + sigma1 * rng.normal(size=x.shape)
    v2 = x + sigma2 * rng.normal(size=x.shape)
    keep = rng.random(x.shape) >= p_drop
    return v1, v2 * keep


def wrong_classes(classes, n_classes, rng):
    """Uniform draw among the other n_classes - 1 classes, per entry."""
    if n_classes < 2:
        raise ValueError("wrong label needs at least 2 classes")
    classes = np.asarray(classes, dtype=np.int64)
    return (classes + rng.integers(1, n_classes, size=classes.shape)) % n_classes


def assign_wrong_label(noisy_label, rng):
    """One-hot in, one-hot out; the output class always differs."""
    y = np.asarray(noisy_label)
    n_c = y.shape[-1]
    return one_hot(wrong_classes(np.argmax(y, axis=-1), n_c, rng), n_c)


# -- text export ----------------------------------------------------------
#
# First line:  #lidpurify-dataset n_classes=<C> d=<d>
# Then one record per line:  id,x_0,...,x_{d-1},noisy,true
# Floats are written with repr() so a round trip is exact.


def save_dataset(path, dataset):
    with open(path, "w") as fh:
        fh.write(f"#lidpurify-dataset n_classes={dataset.n_classes} d={dataset.dim}\n")
        for i in range(len(dataset)):
            feats = ",".join(repr(float(v)) for v in dataset.x[i])
            fh.write(f"{dataset.ids[i]},{feats},{dataset.noisy[i]},{dataset.true[i]}\n")


def load_dataset(path):
    with open(path) as fh:
        head = fh.readline().split()
        if not head or head[0] != "#lidpurify-dataset":
            raise ValueError(f"{path}: missing dataset header")
        meta = dict(kv.split("=") for kv in head[1:])
        n_c, d = int(meta["n_classes"]), int(meta["d"])
        ids, xs, noisy, true = [], [], [], []
        for lineno, line in enumerate(fh, start=2):
            parts = line.strip().split(",")
            if len(parts) != d + 3:
                raise ValueError(f"{path}:{lineno}: expected {d + 3} fields, got {len(parts)}")
            ids.append(int(parts[0]))
            xs.append([float(v) for v in parts[1:d + 1]])
            noisy.append(int(parts[d + 1]))
            true.append(int(parts[d + 2]))
    return Dataset(np.array(xs).reshape(-1, d), noisy, true, n_c, ids=ids)
