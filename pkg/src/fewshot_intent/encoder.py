"""Semantic encoder: Bi-LSTM contextualization + multi-head self-attention.

An utterance's embedding matrix X (T, d_w) becomes hidden states
H (T, 2*d_h) via forward/backward LSTM scans, then r attention heads
A = softmax(W_s2 tanh(W_s1 H^T)) over the word axis produce head
representations M = A H (r, 2*d_h).  Columns [0, d_h) of M are the forward
view, [d_h, 2*d_h) the backward view.  All ops accept leading batch axes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor


@dataclass
class EncodedInstance:
    """Encoder output for one utterance (or a batch with leading axes)."""

    H: Tensor  # (..., T, 2*d_h)
    A: Tensor  # (..., r, T)
    M: Tensor  # (..., r, 2*d_h)

    @property
    def d_h(self) -> int:
        return self.M.shape[-1] // 2

    @property
    def m_forward(self) -> Tensor:
        return self.M[..., :self.d_h]

    @property
    def m_backward(self) -> Tensor:
        return self.M[..., self.d_h:]

    @property
    def h_forward(self) -> Tensor:
        return self.H[..., :self.d_h]

    @property
    def h_backward(self) -> Tensor:
        return self.H[..., self.d_h:]


def _lstm_init(rng, d_in: int, d_h: int):
    bound = 1.0 / np.sqrt(d_h)
    W = rng.uniform(-bound, bound, size=(d_in + d_h, 4 * d_h))
    b = rng.uniform(-bound, bound, size=4 * d_h)
    b[d_h:2 * d_h] = 1.0  # forget-gate bias starts open
    return W, b


def init_encoder_params(store: ParamStore, rng, d_w: int, d_h: int, d_a: int, r: int):
    for direction in ("fwd", "bwd"):
        W, b = _lstm_init(rng, d_w, d_h)
        store.add(f"encoder.{direction}.W", W)
        store.add(f"encoder.{direction}.b", b)
    b1 = 1.0 / np.sqrt(2 * d_h)
    store.add("encoder.W_s1", rng.uniform(-b1, b1, size=(d_a, 2 * d_h)))
    b2 = 1.0 / np.sqrt(d_a)
    store.add("encoder.W_s2", rng.uniform(-b2, b2, size=(r, d_a)))


def run_bilstm(X: Tensor, store: ParamStore) -> Tensor:
    """(..., T, d_w) -> (..., T, 2*d_h); column blocks are forward|backward."""
    W = store["encoder.fwd.W"]
    d_h = W.shape[1] // 4
    if X.shape[-1] != W.shape[0] - d_h:
        raise ValueError(f"input dim {X.shape[-1]} does not match encoder d_w={W.shape[0] - d_h}")
    fwd = ad.lstm_scan(X, W, store["encoder.fwd.b"])
    bwd = ad.lstm_scan(X, store["encoder.bwd.W"], store["encoder.bwd.b"], reverse=True)
    return ad.concat([fwd, bwd], axis=-1)


def attend_heads(H: Tensor, store: ParamStore) -> tuple[Tensor, Tensor]:
    """H (..., T, 2*d_h) -> A (..., r, T) row-stochastic over words, M = A H."""
    axes = tuple(range(H.ndim - 2)) + (H.ndim - 1, H.ndim - 2)
    logits = ad.matmul(store["encoder.W_s2"],
                       ad.tanh(ad.matmul(store["encoder.W_s1"], ad.transpose(H, axes))))
    A = ad.softmax(logits, axis=-1)
    return A, ad.matmul(A, H)


def encode(X: Tensor, store: ParamStore) -> EncodedInstance:
    H = run_bilstm(X, store)
    A, M = attend_heads(H, store)
    return EncodedInstance(H=H, A=A, M=M)
