import numpy as np


class SGD:
    """Mini-batch SGD with heavy-ball momentum and L2 weight decay.

    Per parameter: ``g = grad + wd * value``, ``buf = momentum * buf + g``,
    ``value -= lr * buf``. Parameters whose name appears in ``no_decay`` skip
    the weight-decay term.
    """

    def __init__(self, params, lr=0.1, momentum=0.9, weight_decay=5e-4, no_decay=()):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.no_decay = set(no_decay)
        self.buffers = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        for p, buf in zip(self.params, self.buffers):
            g = p.grad
            if self.weight_decay and p.name not in self.no_decay:
                g = g + self.weight_decay * p.data
            buf *= self.momentum
            buf += g
            p.data -= (self.lr * buf).astype(p.data.dtype, copy=False)


def sgd_step(params, state):
    """Functional alias: apply one step of ``state`` (an :class:`SGD`) to ``params``."""
    if list(params) != state.params:
        raise ValueError("optimizer state was built for a different parameter list")
    state.step()
