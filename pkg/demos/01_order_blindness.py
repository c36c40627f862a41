"""
Why attention needs a positional signal
=======================================

Without a mask, a QKV block treats its input as a set: shuffling the
sequence only shuffles the output rows. A causal mask helps a little, and a
positional kernel ``C = U L`` breaks the symmetry for real.

Run with ``python3 demos/01_order_blindness.py``.
"""

import numpy as np

from poskernel.attention import sequence_response, vanilla_qkv_oracle
from poskernel.verify import masked_response, permutation_matrix

rng = np.random.default_rng(0)
N, K, d = 12, 4, 3

# a window of four distinct items, as an N x K one-hot matrix
items = [7, 2, 9, 4]
X = np.zeros((N, K))
X[items, np.arange(K)] = 1.0
M = rng.standard_normal((N, d))
W_Q, W_K, W_V = (rng.standard_normal((d, d)) for _ in range(3))

# reverse the window
R = permutation_matrix([3, 2, 1, 0])
print("reversed window:", [int(i) for i in np.argmax(X @ R, axis=0)])

Y = vanilla_qkv_oracle(X, M, W_Q, W_K, W_V)
Y_rev = vanilla_qkv_oracle(X @ R, M, W_Q, W_K, W_V)
print("unmasked: reversed output == reversed rows of output?",
      np.allclose(Y_rev, R.T @ Y))

# with a causal mask the first position can only see itself, so order now matters
Ym = masked_response(X, M, W_Q, W_K, W_V)
Ym_rev = masked_response(X @ R, M, W_Q, W_K, W_V)
print("masked:   same test?", np.allclose(Ym_rev, R.T @ Ym))

# the item-level kernel W, and a random triangular pair for the positional kernel
W = M @ W_Q @ W_K.T @ M.T
C = np.triu(rng.standard_normal((K, K))) @ np.tril(rng.standard_normal((K, K)))
lhs = sequence_response(X @ R, W, M, C)
print("kernel:   permuting X equals conjugating C?",
      np.allclose(lhs, R.T @ sequence_response(X, W, M, R @ C @ R.T)))
print("kernel:   but a fixed C does not commute with R:",
      not np.allclose(lhs, R.T @ sequence_response(X, W, M, C)))
