"""Adam, a seeded mini-batch driver, and a finite-difference gradient checker.

All optimisers here update parameter arrays in place.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

LossAndGrad = Callable[[np.ndarray], "tuple[float, list[np.ndarray]]"]


@dataclass
class Adam:
    """Adam with bias-corrected moments (Kingma & Ba)."""

    params: list[np.ndarray]
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not self.m:
            self.m = [np.zeros_like(p) for p in self.params]
            self.v = [np.zeros_like(p) for p in self.params]

    def step(self, grads: Sequence[np.ndarray]) -> None:
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def minibatch_adam(
    params: list[np.ndarray],
    loss_and_grad: LossAndGrad,
    n: int,
    *,
    lr: float,
    batch_size: int,
    seed: int,
    min_epochs: int = 1,
    max_epochs: int = 1,
    tol: float | None = None,
    optimizer: Adam | None = None,
) -> tuple[Adam, list[float]]:
    """Run Adam over seeded shuffled mini-batches of ``range(n)``.

    After each epoch past ``min_epochs`` the full-batch gradient is evaluated
    and training stops once its max-norm drops below ``tol``. Returns the
    optimizer (its state) and the mean mini-batch loss of every epoch.
    """
    if batch_size < 1 or lr <= 0:
        raise ValueError("batch_size and lr must be positive")
    rng = np.random.default_rng(seed)
    opt = optimizer if optimizer is not None else Adam(params, lr=lr)
    history = []
    all_idx = np.arange(n)
    for epoch in range(max_epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            loss, grads = loss_and_grad(idx)
            opt.step(grads)
            losses.append(loss)
        history.append(float(np.mean(losses)) if losses else float("nan"))
        if tol is not None and epoch + 1 >= min_epochs and epoch + 1 < max_epochs:
            _, grads = loss_and_grad(all_idx)
            if max(float(np.max(np.abs(g))) if g.size else 0.0 for g in grads) < tol:
                break
    return opt, history


def check_gradients(
    loss_and_grad: Callable[[], "tuple[float, list[np.ndarray]]"],
    params: list[np.ndarray],
    h: float = 1e-5,
    n_checks: int = 40,
    seed: int = 0,
    floor: float = 1e-6,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_and_grad`` must read the current contents of ``params``. A random
    subsample of ``n_checks`` entries is perturbed (the entries with the
    largest analytic gradient are always included). Relative error is
    ``|a - n| / max(|a|, |n|, floor)``; the floor keeps roundoff on
    near-zero gradients from dominating.
    """
    _, analytic = loss_and_grad()
    analytic = [g.copy() for g in analytic]
    sizes = np.array([p.size for p in params])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    total = int(offsets[-1])
    rng = np.random.default_rng(seed)
    flat_grad = np.concatenate([g.ravel() for g in analytic]) if total else np.zeros(0)
    picks = set(rng.choice(total, size=min(n_checks, total), replace=False).tolist())
    picks.update(np.argsort(-np.abs(flat_grad))[: max(1, n_checks // 4)].tolist())

    worst = 0.0
    for flat in sorted(picks):
        k = int(np.searchsorted(offsets, flat, side="right") - 1)
        pos = np.unravel_index(flat - offsets[k], params[k].shape)
        old = params[k][pos]
        params[k][pos] = old + h
        up, _ = loss_and_grad()
        params[k][pos] = old - h
        down, _ = loss_and_grad()
        params[k][pos] = old
        numeric = (up - down) / (2 * h)
        a = analytic[k][pos]
        worst = max(worst, abs(a - numeric) / max(abs(a), abs(numeric), floor))
    return worst
