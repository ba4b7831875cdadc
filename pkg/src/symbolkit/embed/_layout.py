"""Stochastic-gradient layout of the fuzzy graph.

Sequential negative-sampling SGD over the edge list, minimizing the
fuzzy cross-entropy between graph memberships and the low-dimensional
kernel 1/(1 + a d^(2b)).  The loop is strictly ordered and drives its
own xorshift generator, so a fixed seed reproduces coordinates exactly.
"""

from __future__ import annotations

import numpy as np
from numba import njit

_CLIP = 4.0


@njit(cache=True, inline="always")
def _xorshift(state):
    s = state[0]
    s ^= s << np.uint64(13)
    s ^= s >> np.uint64(7)
    s ^= s << np.uint64(17)
    state[0] = s
    return s


@njit(cache=True, inline="always")
def _clip(v):
    if v > _CLIP:
        return _CLIP
    if v < -_CLIP:
        return -_CLIP
    return v


@njit(cache=True)
def optimize_layout(head_emb, tail_emb, head, tail, n_epochs,
                    epochs_per_sample, a, b, seed, initial_alpha,
                    negative_sample_rate, move_other):
    """Run the layout in place on head_emb (and tail_emb if move_other).

    head/tail index edge endpoints; an edge is visited every
    epochs_per_sample[e] epochs and triggers negative_sample_rate
    repulsive updates against uniformly sampled vertices per visit.
    """
    dim = head_emb.shape[1]
    n_vertices = tail_emb.shape[0]
    state = np.empty(1, dtype=np.uint64)
    state[0] = np.uint64(seed * 2654435761 + 1)

    epochs_per_negative_sample = epochs_per_sample / negative_sample_rate
    epoch_of_next_sample = epochs_per_sample.copy()
    epoch_of_next_negative_sample = epochs_per_negative_sample.copy()
    alpha = initial_alpha

    for epoch in range(n_epochs):
        for e in range(epochs_per_sample.shape[0]):
            if epoch_of_next_sample[e] > epoch:
                continue
            i = head[e]
            j = tail[e]

            dist_sq = 0.0
            for d in range(dim):
                diff = head_emb[i, d] - tail_emb[j, d]
                dist_sq += diff * diff
            if dist_sq > 0.0:
                grad_coeff = (-2.0 * a * b * dist_sq ** (b - 1.0)) \
                    / (a * dist_sq ** b + 1.0)
            else:
                grad_coeff = 0.0
            for d in range(dim):
                grad_d = _clip(grad_coeff * (head_emb[i, d] - tail_emb[j, d]))
                head_emb[i, d] += grad_d * alpha
                if move_other:
                    tail_emb[j, d] -= grad_d * alpha
            epoch_of_next_sample[e] += epochs_per_sample[e]

            n_neg = int((epoch - epoch_of_next_negative_sample[e])
                        / epochs_per_negative_sample[e])
            for _ in range(n_neg):
                r = _xorshift(state)
                kv = int(r % np.uint64(n_vertices))
                dist_sq = 0.0
                for d in range(dim):
                    diff = head_emb[i, d] - tail_emb[kv, d]
                    dist_sq += diff * diff
                if dist_sq > 0.0:
                    grad_coeff = 2.0 * b \
                        / ((0.001 + dist_sq) * (a * dist_sq ** b + 1.0))
                elif j == kv:
                    continue
                else:
                    grad_coeff = 0.0
                for d in range(dim):
                    if grad_coeff > 0.0:
                        grad_d = _clip(grad_coeff * (head_emb[i, d] - tail_emb[kv, d]))
                    else:
                        grad_d = _CLIP
                    head_emb[i, d] += grad_d * alpha
            epoch_of_next_negative_sample[e] += \
                n_neg * epochs_per_negative_sample[e]

        alpha = initial_alpha * (1.0 - (epoch + 1) / n_epochs)
