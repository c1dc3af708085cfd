"""Adam and the step schedules for learning rate and RHS sample count."""

from __future__ import annotations

import math

import numpy as np

from .errors import ValidationError
from .log import get_logger

_log = get_logger("optim")

BETA1 = 0.9
BETA2 = 0.999
EPSILON = 1e-8


def learning_rate(step: int, total_steps: int, base: float = 1e-3, decay: float = 0.33) -> float:
    """Base rate, multiplied by ``decay`` after each third of training (twice at most)."""
    stage = min(2, (3 * step) // total_steps)
    return base * decay**stage


def schedule_M(step: int, total_steps: int, M0: int = 32) -> int:  # noqa: N802
    """RHS samples per residual: M0 doubled after every fifth of training."""
    if not 0 <= step < total_steps:
        raise ValidationError(f"step {step} outside [0, {total_steps})")
    return M0 * 2 ** ((5 * step) // total_steps)


def _fit(moment: np.ndarray, param: np.ndarray) -> np.ndarray:
    """Zero-pad a moment array along axis 0 to follow a grown parameter."""
    if moment.shape == param.shape:
        return moment
    if moment.shape[1:] != param.shape[1:] or moment.shape[0] > param.shape[0]:
        raise ValidationError(
            f"optimizer moment {moment.shape} cannot follow parameter {param.shape}"
        )
    pad = np.zeros((param.shape[0] - moment.shape[0], *param.shape[1:]), dtype=moment.dtype)
    return np.concatenate([moment, pad])


class Adam:
    """Adam with the stepped learning-rate schedule.

    Parameters are passed on every call and updated in place, so arrays
    that grow between steps (new LOD blocks) get zero moments for their new
    rows.
    """

    def __init__(self, total_steps: int, base_lr: float = 1e-3, decay: float = 0.33,
                 beta1: float = BETA1, beta2: float = BETA2, eps: float = EPSILON) -> None:
        if total_steps < 1:
            raise ValidationError("total_steps must be >= 1")
        self.total_steps = total_steps
        self.base_lr = base_lr
        self.decay = decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.skipped = 0
        self.m: list[np.ndarray] = []
        self.v: list[np.ndarray] = []

    @property
    def lr(self) -> float:
        return learning_rate(self.step_count, self.total_steps, self.base_lr, self.decay)

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> bool:
        """One update. Returns False when skipped for non-finite gradients."""
        if len(params) != len(grads):
            raise ValidationError(f"{len(params)} parameter arrays but {len(grads)} gradients")
        for p, g in zip(params, grads, strict=True):
            if p.shape != g.shape:
                raise ValidationError(
                    f"gradient shape {g.shape} does not match parameter {p.shape}"
                )

        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        elif len(self.m) != len(params):
            raise ValidationError("parameter list changed length between optimizer steps")
        self.m = [_fit(m, p) for m, p in zip(self.m, params, strict=True)]
        self.v = [_fit(v, p) for v, p in zip(self.v, params, strict=True)]

        lr = self.lr
        self.step_count += 1
        if not all(np.all(np.isfinite(g)) for g in grads):
            self.skipped += 1
            _log.warning("non-finite gradient at step %d, update skipped", self.step_count)
            return False

        t = self.step_count
        correction1 = 1.0 - self.beta1**t
        correction2 = 1.0 - self.beta2**t
        for p, g, m, v in zip(params, grads, self.m, self.v, strict=True):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= (lr * (m / correction1) / (np.sqrt(v / correction2) + self.eps)).astype(p.dtype)
        return True

    def skip(self) -> None:
        """Advance the schedule without updating anything."""
        self.step_count += 1
        self.skipped += 1

    def state_dict(self) -> dict[str, np.ndarray]:
        state: dict[str, np.ndarray] = {
            "step_count": np.array(self.step_count, dtype=np.int64),
            "skipped": np.array(self.skipped, dtype=np.int64),
        }
        for i, (m, v) in enumerate(zip(self.m, self.v, strict=True)):
            state[f"m{i}"] = m
            state[f"v{i}"] = v
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        self.step_count = int(state["step_count"])
        self.skipped = int(state["skipped"])
        n = sum(1 for key in state if key.startswith("m"))
        self.m = [np.array(state[f"m{i}"]) for i in range(n)]
        self.v = [np.array(state[f"v{i}"]) for i in range(n)]


def lod_update_steps(total_steps: int, updates: int = 3) -> list[int]:
    """Steps after which LOD factors are updated: ceil(j*T/8) for j = 1..updates."""
    return sorted({math.ceil(j * total_steps / 8) for j in range(1, updates + 1)})
