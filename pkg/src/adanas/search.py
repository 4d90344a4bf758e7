"""The iterative search: propose, train, select, grow.

Each iteration proposes candidate architectures, trains every candidate from
a fresh initialization (optionally distilling from the previous ensemble),
fits its mixture weights, and keeps the candidate whose addition gives the
lowest ensemble loss on the full training set. The winner is frozen and
appended.
"""
from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from adanas import rng as rng_mod
from adanas.autograd.optim import SGD
from adanas.autograd.tensor import NumericError
from adanas.data import AugmentConfig, Dataset, batch_iterator, eval_inputs
from adanas.ensemble import (
    Ensemble,
    MixtureProblem,
    MixtureWeightState,
    WeightMode,
    mixed_loss,
    uniform_weights,
)
from adanas.generator import GeneratorSpec, propose
from adanas.losses import KDConfig, KDMode, candidate_objective, kd_loss, teacher_logits
from adanas.model import ArchSpec, Subnetwork, build_subnetwork, logits, predict_logits

log = logging.getLogger(__name__)


class SearchError(RuntimeError):
    def __init__(self, message, reports=()):
        super().__init__(message)
        self.reports = list(reports)


@dataclass
class RunConfig:
    iterations: int
    generator: GeneratorSpec
    kd: KDConfig = field(default_factory=KDConfig)
    weight_mode: WeightMode = WeightMode.UNIFORM
    steps_per_iteration: int = 1000
    batch_size: int = 32
    base_lr: float = 0.025
    momentum: float = 0.9
    clip_norm: float = 5.0
    lambda_kd: float = 1.0
    seed: int = 0
    weight_lr: float = 0.01
    weight_steps: int = 100
    weight_interval: int = 100
    weight_batch_size: int | None = None
    log_every: int = 100
    augment: AugmentConfig | None = None

    def __post_init__(self):
        self.weight_mode = WeightMode(self.weight_mode)
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.steps_per_iteration < 0 or self.batch_size < 1:
            raise ValueError("steps_per_iteration must be >= 0 and batch_size >= 1")
        if self.lambda_kd < 0:
            raise ValueError("lambda_kd must be >= 0")
        if self.weight_interval < 1 or self.log_every < 1 or self.weight_steps < 0:
            raise ValueError("weight_interval and log_every must be >= 1, weight_steps >= 0")
        if self.weight_batch_size is not None and self.weight_batch_size < 1:
            raise ValueError("weight_batch_size must be >= 1 or None (full batch)")


@dataclass
class CandidateResult:
    arch: ArchSpec
    index: int
    net: Subnetwork | None
    weights: np.ndarray | None
    final_objective: float = float("nan")
    lr_trace: list = field(default_factory=list)
    grad_norms: list = field(default_factory=list)
    records: list = field(default_factory=list)
    error: str | None = None

    @property
    def ok(self):
        return self.error is None


@dataclass
class IterationReport:
    iteration: int
    candidates: list
    selected: int
    selected_arch: str
    weights: list
    cumulative_params: int
    wall_time: float = 0.0

    def to_record(self):
        return {"type": "iteration", **asdict(self)}


@dataclass
class RunResult:
    ensemble: Ensemble
    reports: list
    selection_checksums: list
    stop_reason: str


def candidate_streams(seed, iteration, index):
    """Independent init and batch streams for candidate ``index`` of ``iteration``."""
    return (rng_mod.stream(seed, "init", iteration, index),
            rng_mod.stream(seed, "batches", iteration, index))


def train_candidate(arch, prev_ensemble: Ensemble, config: RunConfig, dataset: Dataset,
                    weight_state: MixtureWeightState | None = None, *, iteration=1, index=0,
                    problem: MixtureProblem | None = None) -> CandidateResult:
    """Train one candidate from scratch; in learned-weight mode also fit its mixture weights.

    ``problem`` caches the previous members' full-training-set logits for
    weight fitting; one is built if omitted.
    """
    init_gen, batch_gen = candidate_streams(config.seed, iteration, index)
    net = arch if isinstance(arch, Subnetwork) else build_subnetwork(
        arch, dataset.task, config.seed, iteration_born=iteration, rng=init_gen)
    result = CandidateResult(net.arch, index, net, None)
    prev = prev_ensemble if prev_ensemble is not None else Ensemble()
    n_members = len(prev) + 1
    learned = config.weight_mode is WeightMode.LEARNED
    if learned:
        if weight_state is None:
            weight_state = MixtureWeightState.uniform(n_members, config.weight_lr)
        if problem is None:
            problem = MixtureProblem(prev.members, eval_inputs(dataset.x_train, config.augment), dataset.y_train)
        if config.weight_batch_size is None:
            fit_weights = problem.descend
        else:
            weight_gen = rng_mod.stream(config.seed, "weights", iteration, index)

            def fit_weights(state, n):
                return problem.descend_minibatch(state, n, config.weight_batch_size, weight_gen)
    kd_active = config.kd.mode is not KDMode.NOKD and len(prev) > 0 and config.lambda_kd > 0
    prev_sub = prev.members[-1] if len(prev) else None

    steps = config.steps_per_iteration
    batches = batch_iterator(dataset.x_train, dataset.y_train, config.batch_size,
                             augment_cfg=config.augment, gen=batch_gen)
    opt = SGD(net.params, max(steps, 1), config.base_lr, config.momentum, config.clip_norm) if steps else None
    window = []
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            for step in range(steps):
                xb, yb = next(batches)
                out = logits(net, xb)
                teacher = teacher_logits(config.kd.mode, prev, prev_sub, xb) if kd_active else None
                kd = kd_loss(config.kd, prev, prev_sub, out, teacher=teacher)
                loss = candidate_objective(out, yb, kd, config.lambda_kd)
                opt.zero_grad()
                loss.backward()
                lr = opt.step()
                window.append(loss.item())
                result.lr_trace.append(lr)
                result.grad_norms.append(opt.last_grad_norm)
                if learned and (step + 1) % config.weight_interval == 0:
                    problem.update_candidate(net)
                    fit_weights(weight_state, 1)
                if (step + 1) % config.log_every == 0 or step + 1 == steps:
                    result.records.append({
                        "type": "step", "iteration": iteration, "candidate": index, "arch": str(net.arch),
                        "step": step + 1, "loss": float(np.mean(window)), "lr": lr,
                        "grad_norm": opt.last_grad_norm,
                    })
                    window = []
                result.final_objective = loss.item()
            if learned:
                problem.update_candidate(net)
                fit_weights(weight_state, config.weight_steps)
                result.weights = np.array(weight_state.weights)
            else:
                result.weights = uniform_weights(n_members)
    except (NumericError, FloatingPointError) as exc:
        result.error = f"diverged: {exc}"
        log.warning("candidate %s (iteration %d) disqualified: %s", net.arch, iteration, exc)
    return result


def argmin_with_tiebreak(losses, archs):
    """Index of the smallest loss; exact ties go to the smaller ArchSpec, then the lower index."""
    if not losses:
        raise ValueError("no candidates to select from")
    return min(range(len(losses)), key=lambda j: (losses[j], archs[j], j))


def select_best(candidates, prev_ensemble: Ensemble, x, y, member_logits=None):
    """Return ``(j*, [(loss, error) per candidate])`` over surviving candidates.

    Each candidate is scored as the previous ensemble plus that candidate,
    mixed with the candidate's own weight vector, on ``(x, y)`` in order.
    Disqualified candidates score ``(inf, 1.0)`` and are never chosen.
    """
    if not candidates:
        raise ValueError("select_best needs at least one candidate")
    prev = prev_ensemble if prev_ensemble is not None else Ensemble()
    fixed = member_logits if member_logits is not None else [predict_logits(m, x) for m in prev.members]
    scores = []
    for c in candidates:
        if not c.ok:
            scores.append((float("inf"), 1.0))
            continue
        scores.append(mixed_loss(fixed + [predict_logits(c.net, x)], c.weights, y))
    alive = [j for j, c in enumerate(candidates) if c.ok]
    if not alive:
        raise ValueError("every candidate was disqualified")
    pick = argmin_with_tiebreak([scores[j][0] for j in alive], [candidates[j].arch for j in alive])
    return alive[pick], scores


def run(config: RunConfig, dataset: Dataset, workers=1, sink=None) -> RunResult:
    """Grow an ensemble for ``config.iterations`` iterations or until the budget stops it.

    ``sink`` receives every metrics record (dicts) in a deterministic order.
    Candidates of one iteration train on up to ``workers`` threads.
    """
    emit = sink or (lambda record: None)
    ensemble = Ensemble(weight_mode=config.weight_mode)
    x_sel = eval_inputs(dataset.x_train, config.augment)
    y_sel = dataset.y_train
    member_logits = []
    reports, checksums = [], []
    stop_reason = "iterations"
    for i in range(1, config.iterations + 1):
        t0 = time.perf_counter()
        archs = propose(config.generator, ensemble, dataset.task)
        if not archs:
            stop_reason = "budget"
            log.info("iteration %d: no candidate fits the budget; stopping", i)
            break
        learned = config.weight_mode is WeightMode.LEARNED

        def train(j_arch):
            j, arch = j_arch
            problem = MixtureProblem(ensemble.members, x_sel, y_sel, member_logits) if learned else None
            return train_candidate(arch, ensemble, config, dataset, iteration=i, index=j, problem=problem)

        if workers > 1 and len(archs) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(train, enumerate(archs)))
        else:
            results = [train(ja) for ja in enumerate(archs)]
        for r in results:
            for rec in r.records:
                emit(rec)
        try:
            j_star, scores = select_best(results, ensemble, x_sel, y_sel, member_logits)
        except ValueError as exc:
            raise SearchError(f"iteration {i}: {exc}", reports) from exc
        winner = results[j_star]
        winner.net.freeze()
        member_logits.append(predict_logits(winner.net, x_sel))
        ensemble = ensemble.extended(winner.net, winner.weights)
        checksums.append(winner.net.checksum())
        report = IterationReport(
            iteration=i,
            candidates=[{
                "arch": str(r.arch),
                "params": r.net.params.total_count,
                "final_objective": r.final_objective,
                "ensemble_loss": s[0],
                "error_rate": s[1],
                "weights": None if r.weights is None else [float(w) for w in r.weights],
                "disqualified": r.error,
            } for r, s in zip(results, scores)],
            selected=j_star,
            selected_arch=str(winner.arch),
            weights=[float(w) for w in ensemble.weights],
            cumulative_params=ensemble.total_params,
            wall_time=time.perf_counter() - t0,
        )
        reports.append(report)
        emit(report.to_record())
        log.info("iteration %d: selected %s, ensemble loss %.4f", i, winner.arch, scores[j_star][0])
    if not len(ensemble):
        raise SearchError("no iteration completed (budget too small for the first candidate)", reports)
    return RunResult(ensemble, reports, checksums, stop_reason)
