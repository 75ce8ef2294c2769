"""SGD with momentum and the step learning-rate schedule."""
import numpy as np


def sgd_step(params, grads, state, lr, momentum=0.9, weight_decay=0.0):
    """In-place momentum SGD on dicts of arrays keyed by parameter name.

    v <- momentum * v + grad + weight_decay * param
    param <- param - lr * v

    ``state`` maps names to velocity buffers and is filled lazily. Returns
    ``(params, state)``.
    """
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"sgd_step: gradient for {name!r} has shape {g.shape}, parameter has {p.shape}")
        v = state.get(name)
        if v is None:
            v = state[name] = np.zeros_like(p)
        elif v.shape != p.shape:
            raise ValueError(f"sgd_step: velocity for {name!r} has shape {v.shape}, parameter has {p.shape}")
        v *= momentum
        v += g
        if weight_decay:
            v += weight_decay * p
        p -= lr * v
    return params, state


def halving_schedule(lr, epochs, halvings=3):
    """Per-epoch learning rates, halved ``halvings`` times at evenly spaced epochs."""
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    spans = halvings + 1
    return [lr * 0.5 ** min(halvings, (e * spans) // epochs) for e in range(epochs)]
