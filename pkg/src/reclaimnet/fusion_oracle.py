"""Reference implementation of the gated fusion layer, forward and backward.

Kept deliberately free of torch: plain numpy with hand-derived chain-rule
gradients, so it can serve as an independent oracle for the production
layer. Operates on single vectors.

Shapes: ``w1`` is (gate_dim, 2*hidden), ``w2`` is (hidden, gate_dim);
biases may be None for the exact no-bias equation mode.
"""

from __future__ import annotations

import numpy as np


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    positive = x >= 0
    out[positive] = 1.0 / (1.0 + np.exp(-x[positive]))
    expx = np.exp(x[~positive])
    out[~positive] = expx / (1.0 + expx)
    return out


def gate_forward(
    w1: np.ndarray,
    b1: np.ndarray | None,
    w2: np.ndarray,
    b2: np.ndarray | None,
    h_text: np.ndarray,
    h_user: np.ndarray,
) -> dict[str, np.ndarray]:
    """Compute gate and fused vector; returns all intermediates for reuse.

    gate = sigmoid(w2 @ tanh(w1 @ [h_text ; h_user] (+ b1)) (+ b2))
    fused = gate * h_text + (1 - gate) * h_user
    """
    if h_text.shape != h_user.shape:
        raise ValueError(f"hidden vectors disagree: {h_text.shape} vs {h_user.shape}")
    joint = np.concatenate([h_text, h_user])
    if w1.shape[1] != joint.shape[0]:
        raise ValueError(f"w1 expects input dim {w1.shape[1]}, got {joint.shape[0]}")
    if w2.shape != (h_text.shape[0], w1.shape[0]):
        raise ValueError(f"w2 has shape {w2.shape}, expected {(h_text.shape[0], w1.shape[0])}")
    pre_tanh = w1 @ joint + (b1 if b1 is not None else 0.0)
    hidden = np.tanh(pre_tanh)
    pre_gate = w2 @ hidden + (b2 if b2 is not None else 0.0)
    gate = _sigmoid(pre_gate)
    fused = gate * h_text + (1.0 - gate) * h_user
    return {
        "joint": joint,
        "pre_tanh": pre_tanh,
        "hidden": hidden,
        "pre_gate": pre_gate,
        "gate": gate,
        "fused": fused,
    }


def gate_backward(
    w1: np.ndarray,
    b1: np.ndarray | None,
    w2: np.ndarray,
    b2: np.ndarray | None,
    h_text: np.ndarray,
    h_user: np.ndarray,
    upstream: np.ndarray,
) -> dict[str, np.ndarray]:
    """Analytic gradients of ``upstream . fused`` w.r.t. parameters and inputs.

    Chain rule, innermost first:
      d_gate   = upstream * (h_text - h_user)
      d_pregate= d_gate * gate * (1 - gate)
      d_hidden = w2.T @ d_pregate
      d_pretanh= d_hidden * (1 - hidden^2)
      d_joint  = w1.T @ d_pretanh
    plus the direct paths d_h_text += upstream * gate,
    d_h_user += upstream * (1 - gate).
    """
    state = gate_forward(w1, b1, w2, b2, h_text, h_user)
    gate, hidden, joint = state["gate"], state["hidden"], state["joint"]
    d = h_text.shape[0]

    d_gate = upstream * (h_text - h_user)
    d_pre_gate = d_gate * gate * (1.0 - gate)
    d_w2 = np.outer(d_pre_gate, hidden)
    d_b2 = d_pre_gate.copy()
    d_hidden = w2.T @ d_pre_gate
    d_pre_tanh = d_hidden * (1.0 - hidden**2)
    d_w1 = np.outer(d_pre_tanh, joint)
    d_b1 = d_pre_tanh.copy()
    d_joint = w1.T @ d_pre_tanh

    d_h_text = upstream * gate + d_joint[:d]
    d_h_user = upstream * (1.0 - gate) + d_joint[d:]
    return {
        "w1": d_w1,
        "b1": d_b1,
        "w2": d_w2,
        "b2": d_b2,
        "h_text": d_h_text,
        "h_user": d_h_user,
    }
