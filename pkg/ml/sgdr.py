import math
from dataclasses import dataclass


@dataclass(frozen=True)
class SgdrSchedule:
    """Cosine annealing from ``eta_max`` to ``eta_min`` restarted at every pass."""

    passes: int
    steps_per_pass: int
    eta_max: float
    eta_min: float = 0.0

    def __post_init__(self):
        if self.passes < 1 or self.steps_per_pass < 1:
            raise ValueError("passes and steps_per_pass must be positive")
        if not 0.0 <= self.eta_min <= self.eta_max:
            raise ValueError(f"need 0 <= eta_min <= eta_max, got {self.eta_min} and {self.eta_max}")

    @property
    def total_steps(self):
        return self.passes * self.steps_per_pass

    def pass_of(self, global_step):
        return min(global_step // self.steps_per_pass, self.passes - 1)

    def __call__(self, global_step):
        return sgdr_lr(self, global_step)


def sgdr_lr(schedule, global_step):
    """
    Learning rate at ``global_step``. The step closing the last pass
    (``passes * steps_per_pass``) returns ``eta_min``; later steps are an error.
    """
    if global_step < 0 or global_step > schedule.total_steps:
        raise ValueError(f"step {global_step} is outside [0, {schedule.total_steps}]")
    if global_step == schedule.total_steps:
        within = schedule.steps_per_pass
    else:
        within = global_step % schedule.steps_per_pass
    span = schedule.eta_max - schedule.eta_min
    return schedule.eta_min + 0.5 * span * (1.0 + math.cos(math.pi * within / schedule.steps_per_pass))
