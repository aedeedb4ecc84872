"""Dense subnets with hand-written backward passes and an AdamW optimizer.

Two flavours share one class:

* generator subnet: ``x -> MLP backbone -> affine head -> softmax``
* discriminator subnet: ``(x, y) -> LayerNorm(backbone(x) + y @ E) = z -> head -> softmax``

The discriminator exposes ``z``, the label-conditioned representation used for
LID scoring. All forwards are batched: ``x`` is ``(n, d_in)`` (a single
``(d_in,)`` vector is promoted to a batch of one).
"""
from dataclasses import dataclass, field

import numpy as np

from .numkit import LN_EPS, check_finite, softmax

BETA1 = 0.9
BETA2 = 0.999
ADAM_EPS = 1e-8

MAGIC = "LIDPURIFY-CHECKPOINT v1"


@dataclass
class ForwardTrace:
    """Intermediates retained for ``backward``; tied to a parameter version."""

    version: int
    inputs: list
    pre: list
    feat: np.ndarray
    probs: np.ndarray
    y: np.ndarray = None
    nhat: np.ndarray = None
    inv_std: np.ndarray = None
    z: np.ndarray = None


class Subnet:
    """Parameters plus AdamW state of one subnet.

    ``hidden`` lists the hidden widths of the backbone; ``width`` is the
    backbone output width d. With ``conditioned=True`` the subnet carries a
    label-embedding table and LayerNorm affine parameters.
    """

    def __init__(self, d_in, n_classes, hidden=(64, 64), width=64, conditioned=False, rng=None):
        rng = np.random.default_rng(0) if rng is None else rng
        self.d_in = d_in
        self.n_classes = n_classes
        self.width = width
        self.conditioned = conditioned
        sizes = [d_in, *hidden, width]
        self.n_layers = len(sizes) - 1
        self.params = {}
        for i, (fi, fo) in enumerate(zip(sizes[:-1], sizes[1:])):
            self.params[f"W{i}"] = _glorot(rng, fi, fo)
            self.params[f"b{i}"] = np.zeros(fo)
        if conditioned:
            self.params["emb"] = rng.normal(0.0, 0.02, size=(n_classes, width))
            self.params["ln_scale"] = np.ones(width)
            self.params["ln_shift"] = np.zeros(width)
        self.params["Wh"] = _glorot(rng, width, n_classes)
        self.params["bh"] = np.zeros(n_classes)
        self.m = {k: np.zeros_like(v) for k, v in self.params.items()}
        self.v = {k: np.zeros_like(v) for k, v in self.params.items()}
        self.step = 0
        # bumped on every parameter mutation so old traces can be detected
        self.version = 0

    # -- forward ---------------------------------------------------------

    def _backbone(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.shape[1] != self.d_in:
            raise ValueError(f"input width {x.shape[1]} != {self.d_in}")
        inputs, pre = [], []
        h = x
        for i in range(self.n_layers):
            inputs.append(h)
            a = h @ self.params[f"W{i}"] + self.params[f"b{i}"]
            pre.append(a)
            h = np.maximum(a, 0.0) if i < self.n_layers - 1 else a
        return inputs, pre, h

    def gen_forward(self, x):
        """Class probabilities from features alone; returns ``(probs, trace)``."""
        if self.conditioned:
            raise ValueError("gen_forward on a label-conditioned subnet")
        inputs, pre, feat = self._backbone(x)
        probs = softmax(feat @ self.params["Wh"] + self.params["bh"])
        return probs, ForwardTrace(self.version, inputs, pre, feat, probs)

    def dis_forward(self, x, y):
        """Probabilities and representation ``z`` for (features, label) pairs.

        ``y`` rows must be distributions over classes (one-hot or mixed).
        Returns ``(probs, z, trace)``.
        """
        if not self.conditioned:
            raise ValueError("dis_forward on an unconditioned subnet")
        y = np.asarray(y, dtype=np.float64)
        if y.ndim == 1:
            y = y[None, :]
        if (y.shape[-1] != self.n_classes or np.any(y < -1e-12)
                or np.any(np.abs(y.sum(axis=1) - 1.0) > 1e-6)):
            raise ValueError("label not a distribution")
        inputs, pre, feat = self._backbone(x)
        if y.shape[0] != feat.shape[0]:
            raise ValueError("feature and label batch sizes differ")
        s = feat + y @ self.params["emb"]
        mu = s.mean(axis=1, keepdims=True)
        inv_std = 1.0 / np.sqrt(s.var(axis=1, keepdims=True) + LN_EPS)
        nhat = (s - mu) * inv_std
        z = nhat * self.params["ln_scale"] + self.params["ln_shift"]
        probs = softmax(z @ self.params["Wh"] + self.params["bh"])
        trace = ForwardTrace(self.version, inputs, pre, feat, probs, y=y, nhat=nhat, inv_std=inv_std, z=z)
        return probs, z, trace

    # -- backward --------------------------------------------------------

    def backward(self, trace, grad_probs):
        """Parameter gradients given dL/dprobs for every row of the trace."""
        if trace.version != self.version:
            raise RuntimeError("stale trace: parameters changed since forward")
        g = np.asarray(grad_probs, dtype=np.float64).reshape(trace.probs.shape)
        p = trace.probs
        dlogits = p * (g - (g * p).sum(axis=1, keepdims=True))
        grads = {}
        top = trace.z if self.conditioned else trace.feat
        grads["Wh"] = top.T @ dlogits
        grads["bh"] = dlogits.sum(axis=0)
        dtop = dlogits @ self.params["Wh"].T
        if self.conditioned:
            grads["ln_scale"] = (dtop * trace.nhat).sum(axis=0)
            grads["ln_shift"] = dtop.sum(axis=0)
            dn = dtop * self.params["ln_scale"]
            ds = trace.inv_std * (
                dn - dn.mean(axis=1, keepdims=True)
                - trace.nhat * (dn * trace.nhat).mean(axis=1, keepdims=True)
            )
            grads["emb"] = trace.y.T @ ds
            dh = ds
        else:
            dh = dtop
        for i in reversed(range(self.n_layers)):
            if i < self.n_layers - 1:
                dh = dh * (trace.pre[i] > 0)
            grads[f"W{i}"] = trace.inputs[i].T @ dh
            grads[f"b{i}"] = dh.sum(axis=0)
            if i > 0:
                dh = dh @ self.params[f"W{i}"].T
        return grads

    # -- update ----------------------------------------------------------

    def adamw_step(self, grads, lr=1e-3, weight_decay=1e-3):
        """One decoupled-weight-decay Adam step, in place. Returns ``self``."""
        for k, gk in grads.items():
            if not np.all(np.isfinite(gk)):
                raise FloatingPointError(f"gradient explosion in {k}")
        self.step += 1
        c1 = 1.0 - BETA1 ** self.step
        c2 = 1.0 - BETA2 ** self.step
        for k, w in self.params.items():
            gk = grads.get(k)
            if gk is None:
                gk = np.zeros_like(w)
            w *= 1.0 - lr * weight_decay
            self.m[k] = BETA1 * self.m[k] + (1.0 - BETA1) * gk
            self.v[k] = BETA2 * self.v[k] + (1.0 - BETA2) * gk * gk
            w -= lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + ADAM_EPS)
            check_finite(w, f"parameter {k}")
        self.version += 1
        return self

    # -- (de)serialization -----------------------------------------------

    def state_arrays(self, prefix=""):
        out = {}
        for k, w in self.params.items():
            out[f"{prefix}{k}"] = w
            out[f"{prefix}adam_m.{k}"] = self.m[k]
            out[f"{prefix}adam_v.{k}"] = self.v[k]
        out[f"{prefix}adam_step"] = np.array([float(self.step)])
        return out

    def load_state_arrays(self, arrays, prefix=""):
        for k in self.params:
            self.params[k] = _fit(arrays[f"{prefix}{k}"], self.params[k].shape, k)
            self.m[k] = _fit(arrays[f"{prefix}adam_m.{k}"], self.params[k].shape, k)
            self.v[k] = _fit(arrays[f"{prefix}adam_v.{k}"], self.params[k].shape, k)
        self.step = int(arrays[f"{prefix}adam_step"].ravel()[0])
        self.version += 1


def add_grads(a, b):
    if a is None:
        return dict(b)
    return {k: a[k] + b[k] for k in a}


def _glorot(rng, fan_in, fan_out):
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_in, fan_out))


def _fit(arr, shape, name):
    arr = np.asarray(arr, dtype=np.float64)
    if arr.size != int(np.prod(shape)):
        raise ValueError(f"checkpoint array {name} has {arr.size} values, expected shape {shape}")
    return arr.reshape(shape).copy()


# -- checkpoint container ----------------------------------------------------
#
# Text header, one array per line, then raw little-endian float64 payload in
# header order (each array row-major):
#
#   LIDPURIFY-CHECKPOINT v1
#   <count>
#   <name> <rows> <cols>
#   ...
#   DATA
#   <binary>
#
# 1-D arrays are stored with rows=1.


def save_checkpoint(path, arrays):
    lines = [MAGIC, str(len(arrays))]
    blobs = []
    for name, arr in arrays.items():
        if any(ch.isspace() for ch in name):
            raise ValueError(f"array name {name!r} contains whitespace")
        a = np.asarray(arr, dtype="<f8")
        m = a.reshape(1, -1) if a.ndim <= 1 else a.reshape(a.shape[0], -1)
        lines.append(f"{name} {m.shape[0]} {m.shape[1]}")
        blobs.append(np.ascontiguousarray(m).tobytes())
    lines.append("DATA")
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
        for b in blobs:
            fh.write(b)


def load_checkpoint(path):
    with open(path, "rb") as fh:
        if fh.readline().decode("ascii").rstrip("\n") != MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        count = int(fh.readline())
        header = []
        for _ in range(count):
            name, rows, cols = fh.readline().decode("ascii").split()
            header.append((name, int(rows), int(cols)))
        if fh.readline().decode("ascii").rstrip("\n") != "DATA":
            raise ValueError(f"{path}: malformed header")
        out = {}
        for name, rows, cols in header:
            buf = fh.read(8 * rows * cols)
            if len(buf) != 8 * rows * cols:
                raise ValueError(f"{path}: truncated payload at {name}")
            out[name] = np.frombuffer(buf, dtype="<f8").reshape(rows, cols).astype(np.float64)
    return out
