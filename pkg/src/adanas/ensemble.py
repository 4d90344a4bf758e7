"""Weighted-logit ensembles and mixture-weight training.

The ensemble's logits are ``sum_k w_k * h_k(x)``; softmax is applied after
mixing. Members are frozen, and mixture-weight training only ever sees their
logits as constants, so it cannot change any subnetwork parameter.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from adanas.autograd import ops
from adanas.autograd.tensor import Tensor
from adanas.losses import classification_loss
from adanas.model import Subnetwork, load_checkpoint, predict_logits, save_checkpoint


class WeightMode(str, enum.Enum):
    UNIFORM = "uniform"
    LEARNED = "learned"


def uniform_weights(i) -> np.ndarray:
    if i < 1:
        raise ValueError(f"need at least one member, got {i}")
    return np.full(i, 1.0 / i)


@dataclass
class Ensemble:
    members: list = field(default_factory=list)
    weights: np.ndarray = field(default_factory=lambda: np.zeros(0))
    weight_mode: WeightMode = WeightMode.UNIFORM

    def __post_init__(self):
        self.weight_mode = WeightMode(self.weight_mode)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if len(self.weights) != len(self.members):
            raise ValueError(f"{len(self.members)} members but {len(self.weights)} weights")
        for m in self.members:
            if not m.frozen:
                raise ValueError(f"ensemble member {m} is not frozen")

    def __len__(self):
        return len(self.members)

    @property
    def total_params(self):
        return sum(m.params.total_count for m in self.members)

    def extended(self, net: Subnetwork, weights) -> "Ensemble":
        """A new ensemble with ``net`` (frozen here) appended and the full weight vector replaced."""
        if not net.frozen:
            net.freeze()
        weights = uniform_weights(len(self) + 1) if self.weight_mode is WeightMode.UNIFORM else weights
        return Ensemble(self.members + [net], weights, self.weight_mode)


def ensemble_logits(ens: Ensemble, batch, extra=None, weights=None) -> Tensor:
    """Mixed logits over members plus an optional ``(subnetwork, weight)`` term.

    Frozen members enter as constants. An unfrozen ``extra`` network is
    evaluated on the tape, so its gradient flows if the caller backprops.
    ``weights`` overrides the full weight vector (members first, extra last).
    """
    parts = [Tensor(predict_logits(m, batch)) for m in ens.members]
    w = list(ens.weights)
    if extra is not None:
        net, wx = extra
        from adanas.model import logits

        parts.append(logits(net, batch))
        w.append(wx)
    if not parts:
        raise ValueError("ensemble_logits: empty ensemble and no extra candidate")
    if weights is not None:
        w = weights
    if not isinstance(w, Tensor):
        w = Tensor(np.asarray(w, dtype=np.float64))
    return ops.mix(w, parts)


def ensemble_logits_array(ens: Ensemble, batch) -> np.ndarray:
    if len(ens) == 0:
        raise ValueError("ensemble_logits: empty ensemble and no extra candidate")
    out = np.zeros(0)
    for k, (m, wk) in enumerate(zip(ens.members, ens.weights)):
        term = wk * predict_logits(m, batch)
        out = term if k == 0 else out + term
    return out


def mixed_loss(member_logits, weights, labels):
    """Cross entropy and top-1 error of ``sum_k weights[k] * member_logits[k]``."""
    mixed = ops.mix(Tensor(np.asarray(weights, dtype=np.float64)), [Tensor(l) for l in member_logits])
    loss = classification_loss(mixed, labels).item()
    err = float(np.mean(np.argmax(mixed.data, axis=1) != np.asarray(labels)))
    return loss, err


def ensemble_loss(ens: Ensemble, x, y):
    """Mean cross entropy and top-1 error of the ensemble on ``(x, y)``."""
    if len(ens) == 0:
        raise ValueError("ensemble_loss needs a nonempty ensemble")
    return mixed_loss([predict_logits(m, x) for m in ens.members], ens.weights, y)


@dataclass
class MixtureWeightState:
    """Candidate-local mixture weights (previous members first, candidate last)."""

    weights: np.ndarray
    lr: float = 0.01
    steps_taken: int = 0

    @classmethod
    def uniform(cls, i, lr=0.01):
        return cls(uniform_weights(i), lr)


class MixtureProblem:
    """Full-batch ensemble loss as a function of the weights only.

    Member logits are computed once; the candidate's are refreshed by
    ``update_candidate``. Everything is held as detached arrays.
    """

    def __init__(self, members, x, y, member_logits=None):
        self.x = x
        self.y = np.asarray(y)
        self.fixed = list(member_logits) if member_logits is not None else [predict_logits(m, x) for m in members]
        self.candidate = None

    def update_candidate(self, net):
        self.candidate = predict_logits(net, self.x)

    def _parts(self):
        return self.fixed + ([self.candidate] if self.candidate is not None else [])

    def loss(self, weights):
        return mixed_loss(self._parts(), weights, self.y)[0]

    def loss_and_grad(self, weights, rows=None):
        """Loss and gradient in the weights, over all examples or just ``rows``."""
        parts, y = self._parts(), self.y
        if rows is not None:
            parts, y = [p[rows] for p in parts], y[rows]
        w = Tensor(np.asarray(weights, dtype=np.float64), requires_grad=True)
        loss = classification_loss(ops.mix(w, [Tensor(l) for l in parts]), y)
        loss.backward()
        return loss.item(), w.grad

    def descend(self, state: MixtureWeightState, steps, max_halvings=30):
        """Gradient descent with step halving: an update is only taken if it lowers the loss.

        ``state.lr`` is the trial step size for every update.
        """
        w = np.array(state.weights, dtype=np.float64)
        for _ in range(steps):
            loss, g = self.loss_and_grad(w)
            lr = state.lr
            for _ in range(max_halvings):
                trial = w - lr * g
                if self.loss(trial) <= loss:
                    w = trial
                    break
                lr *= 0.5
            state.steps_taken += 1
        state.weights = w
        return w

    def descend_minibatch(self, state: MixtureWeightState, steps, batch_size, gen):
        """Plain gradient steps at ``state.lr`` on random ``batch_size`` subsets.

        No descent guarantee on the full loss; rows are drawn from ``gen``.
        """
        w = np.array(state.weights, dtype=np.float64)
        m = len(self.y)
        for _ in range(steps):
            rows = gen.choice(m, size=min(batch_size, m), replace=False)
            w = w - state.lr * self.loss_and_grad(w, rows)[1]
            state.steps_taken += 1
        state.weights = w
        return w


def train_mixture_weights(state: MixtureWeightState, members, candidate, data, steps, problem=None):
    """Fit ``state.weights`` by full-batch descent on the ensemble loss over ``data = (x, y)``.

    Member and candidate logits are constants here; no subnetwork changes.
    """
    if problem is None:
        x, y = data
        problem = MixtureProblem(members, x, y)
        if candidate is not None:
            problem.update_candidate(candidate)
    expected = len(problem._parts())
    if len(state.weights) != expected:
        raise ValueError(f"weight vector has {len(state.weights)} entries, ensemble has {expected}")
    return problem.descend(state, steps)


def save_manifest(ens: Ensemble, run_dir, extra=None) -> Path:
    """Write member checkpoints under ``run_dir/checkpoints`` and ``run_dir/manifest.json``."""
    run_dir = Path(run_dir)
    (run_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
    members = []
    for k, m in enumerate(ens.members):
        rel = f"checkpoints/member_{k:02d}_{m.arch}.ckpt".replace("@", "at")
        save_checkpoint(m, run_dir / rel)
        members.append({
            "checkpoint": rel,
            "arch": str(m.arch),
            "iteration_born": m.iteration_born,
            "params": m.params.total_count,
            "checksum": m.checksum(),
        })
    manifest = {
        "format": "adanas-ensemble/1",
        "weight_mode": ens.weight_mode.value,
        "weights": [float(w) for w in ens.weights],
        "members": members,
        "total_params": ens.total_params,
    }
    if extra:
        manifest.update(extra)
    path = run_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_manifest(path):
    """Return ``(ensemble, manifest_dict)``; every member checksum is verified."""
    path = Path(path)
    manifest = json.loads(path.read_text())
    members = []
    for entry in manifest["members"]:
        ckpt = path.parent / entry["checkpoint"]
        if not ckpt.exists():
            raise FileNotFoundError(f"member checkpoint missing: {ckpt}")
        try:
            members.append(load_checkpoint(ckpt, expected_checksum=entry["checksum"]))
        except ValueError as exc:
            raise ValueError(f"member {entry['arch']} ({entry['checkpoint']}): {exc}") from exc
    return Ensemble(members, manifest["weights"], manifest["weight_mode"]), manifest
