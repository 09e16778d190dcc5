"""Adam with linear warmup, and a finite-difference gradient checker."""

import math
from collections.abc import Callable, Iterable

import numpy as np

from ._params import ParamSet


def warmup_lr(lr: float, warmup_ratio: float, step: int, total_steps: int) -> float:
    """Linear warmup to ``lr`` over ``warmup_ratio * total_steps`` steps, then constant."""
    if step < 1:
        raise ValueError(f"step must be at least 1, got {step}")
    warmup_steps = int(math.floor(warmup_ratio * total_steps))
    if warmup_steps <= 0 or step >= warmup_steps:
        return lr
    return lr * step / warmup_steps


class Adam:
    """Adam over a `ParamSet`, without weight decay unless asked.

    Parameters
    ----------
    lr : float
        Peak learning rate.
    warmup_ratio : float
        Fraction of ``total_steps`` spent warming up linearly.
    total_steps : int
        Length of the schedule.
    """

    def __init__(
        self,
        lr: float = 1e-5,
        warmup_ratio: float = 0.1,
        total_steps: int = 1,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        self.lr = lr
        self.warmup_ratio = warmup_ratio
        self.total_steps = total_steps
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m: ParamSet | None = None
        self.v: ParamSet | None = None

    def current_lr(self) -> float:
        return warmup_lr(self.lr, self.warmup_ratio, max(self.step_count, 1), self.total_steps)

    def step(self, params: ParamSet, grads: ParamSet, names: Iterable[str] | None = None) -> None:
        """Update ``params`` in place; ``names`` restricts the update (frozen groups)."""
        if self.m is None or self.v is None:
            self.m, self.v = params.zeros_like(), params.zeros_like()
        self.step_count += 1
        lr = warmup_lr(self.lr, self.warmup_ratio, self.step_count, self.total_steps)
        beta1, beta2 = self.betas
        correction1 = 1.0 - beta1**self.step_count
        correction2 = 1.0 - beta2**self.step_count
        for name in names if names is not None else grads.names:
            grad = grads[name]
            if self.weight_decay:
                grad = grad + self.weight_decay * params[name]
            m, v = self.m[name], self.v[name]
            m *= beta1
            m += (1.0 - beta1) * grad
            v *= beta2
            v += (1.0 - beta2) * grad**2
            params[name] = params[name] - lr * (m / correction1) / (np.sqrt(v / correction2) + self.eps)

    def state(self) -> dict:
        return {
            "lr": self.lr,
            "warmup_ratio": self.warmup_ratio,
            "total_steps": self.total_steps,
            "betas": list(self.betas),
            "eps": self.eps,
            "weight_decay": self.weight_decay,
            "step_count": self.step_count,
        }

    @classmethod
    def from_state(cls, state: dict, m: ParamSet | None = None, v: ParamSet | None = None) -> "Adam":
        optimizer = cls(
            lr=state["lr"],
            warmup_ratio=state["warmup_ratio"],
            total_steps=state["total_steps"],
            betas=tuple(state["betas"]),
            eps=state["eps"],
            weight_decay=state["weight_decay"],
        )
        optimizer.step_count = state["step_count"]
        optimizer.m, optimizer.v = m, v
        return optimizer


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-8)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def gradient_check(
    loss_and_grads: Callable[[], tuple[float, ParamSet]],
    params: ParamSet,
    h: float = 1e-4,
    names: Iterable[str] | None = None,
) -> dict[str, float]:
    """Compare analytic gradients with central finite differences.

    ``loss_and_grads`` must evaluate the loss at the current values of ``params``,
    which are perturbed in place and restored.

    Returns
    -------
    dict[str, float]
        Relative error per parameter group: max absolute difference over the larger
        of the two max-norms.
    """
    _, analytic = loss_and_grads()
    errors = {}
    for name in names if names is not None else params.names:
        array = params[name]
        numeric = np.zeros_like(array)
        for index in np.ndindex(array.shape):
            original = array[index]
            array[index] = original + h
            plus = loss_and_grads()[0]
            array[index] = original - h
            minus = loss_and_grads()[0]
            array[index] = original
            numeric[index] = (plus - minus) / (2 * h)
        errors[name] = relative_error(analytic[name] if name in analytic else np.zeros_like(array), numeric)
    return errors
