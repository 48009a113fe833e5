"""Few-shot and generalized few-shot intent detection.

A Bi-LSTM + multi-head self-attention encoder feeds a multi-perspective
semantic matcher and an attention-weighted aggregation classifier; training
is episodic.  The numerical core is a small reverse-mode autodiff engine on
numpy whose gradients are verified by finite differences.
"""

__version__ = "0.1.0"
