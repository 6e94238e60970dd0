"""Delayed-XOR sequence task with a simple tanh RNN, trained by BPTT.

Each sequence carries two input channels: a random value bit and a marker
flag.  Exactly two positions are marked - one uniform in the first half, one
uniform in the second half - and the target is the XOR of the two marked
value bits.  Memorizing either bit alone is useless, which is what makes the
task pathological for gradient descent.
"""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError
from .base import Problem, with_defaults


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _logistic_loss(z, y):
    # mean of softplus(z) - z*y, numerically stable
    return float(np.mean(np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))))


class _RnnCore:
    """Weight packing and batched forward/backward for the 1-layer tanh RNN.

    The time loop reuses a single stacked input buffer (inputs; previous
    state; bias row) per step, and the forward pass keeps those buffers so
    backpropagation through time revisits them without reallocation.
    """

    def __init__(self, seq_len: int, hidden: int):
        self.seq_len = seq_len
        self.hidden = hidden
        self.w1_shape = (hidden, 2 + hidden + 1)
        self.w2_shape = (1, hidden + 1)
        self.dim = hidden * (2 + hidden + 1) + (hidden + 1)

    def unpack(self, theta):
        theta = np.asarray(theta, dtype=np.float64)
        split = self.w1_shape[0] * self.w1_shape[1]
        return theta[:split].reshape(self.w1_shape), theta[split:].reshape(self.w2_shape)

    def _forward(self, w1, w2, x, keep_inputs: bool):
        seq_len, batch, _ = x.shape
        hid = self.hidden
        states = np.empty((seq_len, hid, batch))
        inputs = np.empty((seq_len, 2 + hid + 1, batch)) if keep_inputs else None
        buf = np.empty((2 + hid + 1, batch))
        buf[-1] = 1.0
        s = np.zeros((hid, batch))
        for t in range(seq_len):
            buf[:2] = x[t].T
            buf[2 : 2 + hid] = s
            if keep_inputs:
                inputs[t] = buf
            s = np.tanh(w1 @ buf, out=states[t])
        logits = w2[0, :hid] @ s + w2[0, hid]
        return logits, states, inputs

    def loss(self, theta, x, y):
        w1, w2 = self.unpack(theta)
        logits, _, _ = self._forward(w1, w2, x, keep_inputs=False)
        return _logistic_loss(logits, y)

    def loss_and_grad(self, theta, x, y):
        w1, w2 = self.unpack(theta)
        logits, states, inputs = self._forward(w1, w2, x, keep_inputs=True)
        seq_len, batch = x.shape[0], x.shape[1]
        hid = self.hidden
        value = _logistic_loss(logits, y)

        dz = (_sigmoid(logits) - y) / batch
        dw2 = np.empty(self.w2_shape)
        dw2[0, :hid] = states[-1] @ dz
        dw2[0, hid] = dz.sum()
        dw1 = np.zeros_like(w1)
        w1_rec_t = np.ascontiguousarray(w1[:, 2 : 2 + hid].T)
        ds = np.outer(w2[0, :hid], dz)
        for t in range(seq_len - 1, -1, -1):
            dpre = ds * (1.0 - states[t] ** 2)
            dw1 += dpre @ inputs[t].T
            if t:
                ds = w1_rec_t @ dpre
        return value, np.concatenate([dw1.ravel(), dw2.ravel()])


def sample_xor_batch(seq_len: int, batch: int, rng: np.random.Generator):
    """Sequences (seq_len, batch, 2) and XOR labels (batch,).

    Channel 0 carries the value bits as +-1 (random at every step, so the
    unmarked ones act as distractors); channel 1 flags the two marked
    positions, one uniform in each half of the sequence.
    """
    values = rng.integers(0, 2, size=(batch, seq_len))
    first = rng.integers(0, seq_len // 2, size=batch)
    second = rng.integers(seq_len // 2, seq_len, size=batch)
    x = np.zeros((seq_len, batch, 2))
    x[:, :, 0] = values.T * 2.0 - 1.0
    cols = np.arange(batch)
    x[first, cols, 1] = 1.0
    x[second, cols, 1] = 1.0
    y = (values[cols, first] ^ values[cols, second]).astype(np.float64)
    return x, y


def xor_make(
    seq_len: int,
    hidden: int,
    rng: np.random.Generator | None = None,
    batch_size: int = 64,
    eval_batch: int = 256,
    init_scale: float = 0.3,
    recurrent_gain: float = 1.0,
    success_loss: float = 0.1,
) -> Problem:
    """Delayed-XOR problem over the RNN weights; fresh batch per call."""
    if seq_len < 4:
        raise DimensionError(f"sequence length must be >= 4, got {seq_len}")
    if hidden < 2:
        raise DimensionError(f"hidden size must be >= 2, got {hidden}")
    if rng is None:
        rng = np.random.default_rng()
    core = _RnnCore(seq_len, hidden)
    batch_rng = np.random.default_rng(rng.integers(2**63))
    eval_rng = np.random.default_rng(rng.integers(2**63))
    eval_set = sample_xor_batch(seq_len, eval_batch, eval_rng)

    def sample_batch():
        return sample_xor_batch(seq_len, batch_size, batch_rng)

    def resolve(batch):
        return batch if batch is not None else sample_batch()

    def loss(theta, batch=None):
        x, y = resolve(batch)
        return core.loss(theta, x, y)

    def loss_and_grad(theta, batch=None):
        x, y = resolve(batch)
        return core.loss_and_grad(theta, x, y)

    def grad(theta, batch=None):
        return loss_and_grad(theta, batch)[1]

    def init_theta(init_rng: np.random.Generator):
        # Recurrent block near unit spectral radius so markers separated by
        # the full sequence can still reach the logit at initialization.
        w1 = np.zeros(core.w1_shape)
        w1[:, :2] = init_scale * init_rng.standard_normal((hidden, 2))
        gauss = init_rng.standard_normal((hidden, hidden))
        q, r = np.linalg.qr(gauss)
        w1[:, 2 : 2 + hidden] = recurrent_gain * q * np.sign(np.diag(r))
        w2 = init_scale * init_rng.standard_normal(core.w2_shape)
        return np.concatenate([w1.ravel(), w2.ravel()])

    return with_defaults(
        name=f"xor(T={seq_len},H={hidden})",
        dim=core.dim,
        loss=loss,
        grad=grad,
        loss_and_grad=loss_and_grad,
        sample_batch=sample_batch,
        init_theta=init_theta,
        eval_loss=lambda theta: core.loss(theta, *eval_set),
        success_loss=success_loss,
    )
