"""Candidate architecture generators.

* ``constant``: the same single architecture every iteration.
* ``dynamic``: one deeper and one wider variant of the last selected
  architecture (of the start architecture in the first iteration).
* ``dynamic_reconsider``: ``dynamic`` plus the last selected (or start)
  architecture itself.

Candidates that would push the ensemble past the parameter budget are
dropped; an empty proposal means the search stops.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

from adanas.model import ArchSpec, TaskShape, param_count


class GeneratorKind(str, enum.Enum):
    CONSTANT = "constant"
    DYNAMIC = "dynamic"
    DYNAMIC_RECONSIDER = "dynamic_reconsider"


@dataclass(frozen=True)
class GeneratorSpec:
    kind: GeneratorKind
    constant_arch: ArchSpec | None = None
    start_arch: ArchSpec | None = None
    depth_increment: int = 1
    width_increment: int = 8
    budget: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", GeneratorKind(self.kind))
        for name in ("constant_arch", "start_arch"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, ArchSpec.parse(value))
        if self.kind is GeneratorKind.CONSTANT and self.constant_arch is None:
            raise ValueError("constant generator needs constant_arch")
        if self.kind is not GeneratorKind.CONSTANT:
            if self.start_arch is None:
                raise ValueError(f"{self.kind.value} generator needs start_arch")
            if self.depth_increment < 1 or self.width_increment < 1:
                raise ValueError("increments must be >= 1")
        if self.budget is not None and self.budget < 1:
            raise ValueError(f"budget must be positive, got {self.budget}")


def check_budget(prev_total, candidate: ArchSpec, budget, task: TaskShape) -> bool:
    if prev_total < 0:
        raise ValueError("prev_total must be >= 0")
    if budget is None:
        return True
    return prev_total + param_count(candidate, task) <= budget


def propose(gen: GeneratorSpec, prev_ensemble, task: TaskShape) -> list[ArchSpec]:
    """Candidate architectures for the next iteration, budget-filtered and deduplicated."""
    members = list(prev_ensemble.members) if prev_ensemble is not None else []
    if gen.kind is GeneratorKind.CONSTANT:
        raw = [gen.constant_arch]
    else:
        base = members[-1].arch if members else gen.start_arch
        raw = [base.deeper(gen.depth_increment), base.wider(gen.width_increment)]
        if gen.kind is GeneratorKind.DYNAMIC_RECONSIDER:
            raw.append(base)
    prev_total = sum(m.params.total_count for m in members)
    out = []
    for arch in raw:
        if arch not in out and check_budget(prev_total, arch, gen.budget, task):
            out.append(arch)
    return out
