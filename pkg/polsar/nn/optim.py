"""Adam with a step-decayed learning rate."""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class StepDecay:
    """``lr(epoch) = base_lr * gamma ** (epoch // step_epochs)``."""

    base_lr: float = 1e-3
    gamma: float = 0.9
    step_epochs: int = 50

    def lr_at(self, epoch):
        return self.base_lr * self.gamma ** (int(epoch) // self.step_epochs)


def adam_step(value, grad, m, v, t, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """
    One Adam update of a single array.

    Args:
        value, grad: Current parameter and its gradient
        m, v: First and second moment estimates (same shape)
        t: 1-based step count
        lr: Step size

    Returns:
        (new value, new m, new v)
    """
    m = beta1 * m + (1.0 - beta1) * grad
    v = beta2 * v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    value = value - lr * m_hat / (np.sqrt(v_hat) + eps)
    return value, m, v


class Adam:
    """
    Adam over a list of Parameters.

    Moments are kept in float64 and the updated values are cast back to
    each parameter's dtype. Parameters without a gradient are skipped.
    """

    def __init__(self, parameters, schedule=None, beta1=0.9, beta2=0.999, eps=1e-8):
        self.parameters = list(parameters)
        self.schedule = schedule or StepDecay()
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros(p.shape, dtype=np.float64) for p in self.parameters]
        self.v = [np.zeros(p.shape, dtype=np.float64) for p in self.parameters]

    def zero_grad(self):
        for parameter in self.parameters:
            parameter.zero_grad()

    def step(self, epoch):
        self.t += 1
        lr = self.schedule.lr_at(epoch)
        for index, parameter in enumerate(self.parameters):
            if parameter.grad is None:
                continue
            value, self.m[index], self.v[index] = adam_step(
                parameter.data.astype(np.float64),
                parameter.grad.astype(np.float64),
                self.m[index],
                self.v[index],
                self.t,
                lr,
                self.beta1,
                self.beta2,
                self.eps,
            )
            parameter.data = value.astype(parameter.dtype)
        return lr
