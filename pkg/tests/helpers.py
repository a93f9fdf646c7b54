"""Shared test utilities."""

import numpy as np

from covertnet.gnn_models import forward_tensor, init_params


def projected_output_loss(spec, batches, seed):
    """Smooth O(1) readout of every node output, so finite differences stay accurate."""
    rng = np.random.default_rng(1000 + seed)
    proj = [rng.normal(size=b.features.shape[:2] + (1,)) for b in batches]

    def loss(lv):
        total = None
        for b, r in zip(batches, proj):
            out = forward_tensor(spec, lv, b.features, b.adjacency, b.weights, b.norm_adj, 1.0)
            term = (out * r).sum()
            total = term if total is None else total + term
        return total

    return loss


def generic_params(spec, seed):
    """Initial weights with nonzero biases: zero biases park pre-activations on ReLU kinks."""
    p = init_params(spec, seed)
    rng = np.random.default_rng(seed)
    for k in p:
        if k.endswith(".bias"):
            p[k] = rng.normal(0, 0.1, p[k].shape)
    return p
