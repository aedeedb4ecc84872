"""Shared numeric primitives: distances, quantiles, layer norm, seeded RNG.

Everything works on float64 numpy arrays. Rows are instances.
"""
import numpy as np
from scipy.spatial.distance import cdist, pdist, squareform

LN_EPS = 1e-5


def make_rng(seed):
    """PCG64 generator; the stream is fixed by numpy for a given seed."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def as_matrix(a):
    m = np.asarray(a, dtype=np.float64)
    if m.ndim == 1:
        m = m[:, None]
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D array, got shape {m.shape}")
    return m


def pairwise_distances(points):
    """Symmetric n x n Euclidean distance matrix with an exact zero diagonal."""
    p = as_matrix(points)
    if p.shape[0] < 2:
        raise ValueError("batch too small")
    return squareform(pdist(p, metric="euclidean"))


def cross_distances(a, b):
    return cdist(as_matrix(a), as_matrix(b), metric="euclidean")


def quantile(values, p):
    """Linear-interpolation quantile at fraction ``p`` (h = p*(n-1))."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise ValueError("quantile of empty input")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"quantile fraction {p} outside [0, 1]")
    return float(np.quantile(v, p, method="linear"))


def layer_norm(v, scale=None, shift=None, eps=LN_EPS):
    """Normalize the last axis to zero mean / unit population variance.

    ``scale`` and ``shift`` are the optional affine parameters of the owning
    layer. Works row-wise on a batch.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] < 2:
        raise ValueError("layer_norm needs at least 2 entries")
    mu = v.mean(axis=-1, keepdims=True)
    var = v.var(axis=-1, keepdims=True)
    out = (v - mu) / np.sqrt(var + eps)
    if scale is not None:
        out = out * scale
    if shift is not None:
        out = out + shift
    return out


def softmax(logits):
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def one_hot(classes, n_classes):
    classes = np.asarray(classes, dtype=np.int64)
    out = np.zeros(classes.shape + (n_classes,), dtype=np.float64)
    np.put_along_axis(out, classes[..., None], 1.0, axis=-1)
    return out


def argmax_low(p):
    """Argmax over the last axis; ties go to the lowest index."""
    return np.argmax(np.asarray(p), axis=-1)


def check_finite(a, what):
    if not np.all(np.isfinite(a)):
        raise FloatingPointError(f"non-finite values in {what}")
