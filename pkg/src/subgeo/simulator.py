"""Sequential LoRA training over a task sequence.

Effective weights are ``W = w0 + B @ A``.  Plain gradient descent runs on
(B, A) with ``dL/dB = G A^T`` and ``dL/dA = B^T G``, where G is the gradient
with respect to W.

Adapter layout:

* ``adapter_reuse="merge"`` (default): every task starts a fresh adapter
  (B = 0) on top of the weights left by the previous task, i.e. finished
  adapters are merged into the base and frozen.
* ``adapter_reuse="shared"``: one adapter keeps training across all tasks.
  Only ``vanilla`` and ``ewc`` support it.
* ``task_specific`` always gets a fresh adapter on the bare base weights and
  task i is evaluated with its own adapter, so it cannot be forgotten.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import linalg
from .analysis import effective_rank
from .errors import DivergenceError, PreconditionError
from .rng import stream
from .subspace import Subspace, principal_angles
from .tasks import SyntheticTask, TaskSequence

STRATEGIES = ("vanilla", "task_specific", "ogd_project", "ortho_reg", "ewc")
ADAPTER_REUSE = ("merge", "shared")

DIVERGENCE_LOSS = 1e12
PATIENCE = 5
MAX_HALVINGS = 10


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.02
    steps_per_task: int = 600
    strategy: str = "vanilla"
    reg_lambda: float = 0.0
    rank: int = 4
    grad_sample_count: int = 32
    energy_threshold: float = 0.99
    seed: int = 0
    adapter_reuse: str = "merge"

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise PreconditionError("learning_rate must be > 0")
        if self.steps_per_task < 0:
            raise PreconditionError("steps_per_task must be >= 0")
        if self.strategy not in STRATEGIES:
            raise PreconditionError(f"unknown strategy {self.strategy!r}")
        if self.reg_lambda < 0:
            raise PreconditionError("reg_lambda must be >= 0")
        if self.rank < 1:
            raise PreconditionError("rank must be >= 1")
        if self.grad_sample_count < 1:
            raise PreconditionError("grad_sample_count must be >= 1")
        if not 0 < self.energy_threshold <= 1:
            raise PreconditionError("energy_threshold must be in (0, 1]")
        if self.adapter_reuse not in ADAPTER_REUSE:
            raise PreconditionError(f"unknown adapter_reuse {self.adapter_reuse!r}")
        if self.adapter_reuse == "shared" and self.strategy not in ("vanilla", "ewc"):
            raise PreconditionError(f"strategy {self.strategy!r} needs adapter_reuse='merge'")

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "steps_per_task": self.steps_per_task,
            "strategy": self.strategy,
            "reg_lambda": self.reg_lambda,
            "rank": self.rank,
            "grad_sample_count": self.grad_sample_count,
            "energy_threshold": self.energy_threshold,
            "seed": self.seed,
            "adapter_reuse": self.adapter_reuse,
        }


@dataclass(frozen=True)
class AdapterState:
    b: np.ndarray
    a: np.ndarray
    w0: np.ndarray

    @property
    def weights(self) -> np.ndarray:
        return self.w0 + self.b @ self.a


def init_adapter(d: int, m: int, r: int, w0, seed: int) -> AdapterState:
    """B = 0, A ~ N(0, 1/r), so the adapter starts as an exact zero update."""
    if not 1 <= r <= min(d, m):
        raise PreconditionError(f"adapter rank {r} outside [1, min(d, m)] = [1, {min(d, m)}]")
    w0 = linalg.as_matrix(w0, "w0")
    if w0.shape != (d, m):
        raise PreconditionError(f"w0 has shape {w0.shape}, expected {(d, m)}")
    a = stream(seed, "simulator.adapter").standard_normal((r, m)) / math.sqrt(r)
    return AdapterState(np.zeros((d, r)), a, w0.copy())


@dataclass
class StrategyMemory:
    """What a strategy carries from finished tasks into the next one."""

    bases: list[np.ndarray] = field(default_factory=list)
    previous_b: list[np.ndarray] = field(default_factory=list)
    anchors: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list)
    _union: np.ndarray | None = None

    def union_basis(self) -> np.ndarray | None:
        if self._union is None and self.bases:
            self._union = _union_basis(self.bases)
        return self._union

    def add_basis(self, basis: np.ndarray) -> None:
        self.bases.append(basis)
        self._union = None


@dataclass
class TaskTrace:
    gradient_samples: list[np.ndarray]
    sample_steps: list[int]
    delta: np.ndarray
    initial_loss: float
    final_loss: float
    halvings: list[int]
    final_learning_rate: float

    def sample_matrix(self) -> np.ndarray:
        """All gradient samples side by side: d x (k * m)."""
        return np.hstack(self.gradient_samples)


def _union_basis(bases: list[np.ndarray]) -> np.ndarray:
    return linalg.orthonormal_basis(np.hstack(bases), 1.0)


def _project_out(g: np.ndarray, union: np.ndarray | None) -> np.ndarray:
    if union is None:
        return g
    return g - union @ (union.T @ g)


def ogd_project_gradient(g, memory_bases) -> np.ndarray:
    """Remove from each column of ``g`` its component in the stored subspaces.

    The stored bases are first merged into one orthonormal basis, so
    overlapping subspaces are not subtracted twice.
    """
    g = linalg.as_matrix(g, "gradient")
    if not memory_bases:
        return g.copy()
    for basis in memory_bases:
        if basis.shape[0] != g.shape[0]:
            raise PreconditionError(f"basis has {basis.shape[0]} rows, gradient has {g.shape[0]}")
    return _project_out(g, _union_basis(list(memory_bases)))


def ortho_penalty_gradient(b_current, b_previous, lam: float) -> tuple[float, np.ndarray]:
    """``lam * sum_p ||B_p^T B||_F^2`` and its gradient in B."""
    b = np.asarray(b_current, dtype=float)
    penalty = 0.0
    grad = np.zeros_like(b)
    for bp in b_previous:
        if bp.shape[0] != b.shape[0]:
            raise PreconditionError(f"previous B has {bp.shape[0]} rows, current has {b.shape[0]}")
        cross = bp.T @ b
        penalty += float(np.sum(cross * cross))
        grad += bp @ cross
    return lam * penalty, 2.0 * lam * grad


def ewc_penalty_gradient(w, anchors, lam: float) -> tuple[float, np.ndarray]:
    """Diagonal quadratic penalty ``lam * sum F_ij (w_ij - anchor_ij)^2``."""
    w = np.asarray(w, dtype=float)
    penalty = 0.0
    grad = np.zeros_like(w)
    for anchor, fisher in anchors:
        if anchor.shape != w.shape or fisher.shape != w.shape:
            raise PreconditionError("anchor/fisher shape does not match weights")
        diff = w - anchor
        penalty += float(np.sum(fisher * diff * diff))
        grad += fisher * diff
    return lam * penalty, 2.0 * lam * grad


def _sample_steps(steps: int, k: int) -> list[int]:
    if steps == 0:
        return []
    return sorted(set(np.linspace(0, steps - 1, k).round().astype(int).tolist()))


def train_task(state: AdapterState, task: SyntheticTask, cfg: TrainConfig,
               memory: StrategyMemory | None = None,
               rng: np.random.Generator | None = None) -> tuple[AdapterState, TaskTrace]:
    """Run ``cfg.steps_per_task`` gradient-descent steps on (B, A).

    If the objective rises for 5 consecutive steps the learning rate is
    halved (at most 10 times).  An objective above 1e12 or a non-finite one
    raises :class:`DivergenceError`.
    """
    memory = memory if memory is not None else StrategyMemory()
    if state.w0.shape != task.shape:
        raise PreconditionError(f"adapter weights {state.w0.shape} vs task {task.shape}")
    b, a, w0 = state.b.copy(), state.a.copy(), state.w0
    w_before = w0 + b @ a
    lr = cfg.learning_rate
    strategy = cfg.strategy
    union = memory.union_basis() if strategy == "ogd_project" else None
    sample_at = set(_sample_steps(cfg.steps_per_task, cfg.grad_sample_count))

    samples, sample_steps, halvings = [], [], []
    prev_obj = math.inf
    rising = 0
    initial_loss = task.loss(w_before)
    for step in range(cfg.steps_per_task):
        w = w0 + b @ a
        obj = task.loss(w)
        g = task.gradient(w, rng)
        if step in sample_at:
            samples.append(g)
            sample_steps.append(step)
        if strategy == "ewc" and memory.anchors:
            pen, gp = ewc_penalty_gradient(w, memory.anchors, cfg.reg_lambda)
            obj += pen
            g = g + gp
        elif strategy == "ogd_project":
            g = _project_out(g, union)
        grad_b = g @ a.T
        grad_a = b.T @ g
        if strategy == "ortho_reg" and memory.previous_b:
            pen, gpb = ortho_penalty_gradient(b, memory.previous_b, cfg.reg_lambda)
            obj += pen
            grad_b += gpb

        if not math.isfinite(obj) or obj > DIVERGENCE_LOSS:
            raise DivergenceError(f"objective {obj:.3g} exceeded {DIVERGENCE_LOSS:g}", step)
        rising = rising + 1 if obj > prev_obj else 0
        if rising >= PATIENCE and len(halvings) < MAX_HALVINGS:
            lr *= 0.5
            halvings.append(step)
            rising = 0
        prev_obj = obj

        b = b - lr * grad_b
        a = a - lr * grad_a

    new_state = AdapterState(b, a, w0)
    w_after = new_state.weights
    trace = TaskTrace(samples, sample_steps, w_after - w_before, initial_loss,
                      task.loss(w_after), halvings, lr)
    return new_state, trace


@dataclass
class RunRecord:
    """Everything measured in one sequential run.

    Matrices are indexed ``[i, t]``: task i evaluated after training task t.
    Only ``i < t`` entries of the forgetting matrices are meaningful.
    """

    strategy: str
    rank: int
    seed: int
    losses: np.ndarray
    forgetting_immediate: np.ndarray
    forgetting_cumulative: np.ndarray
    theta_min_measured: np.ndarray
    theta_min_prescribed: np.ndarray
    update_norms: np.ndarray
    effective_ranks: np.ndarray
    final_losses: np.ndarray
    halvings: list[list[int]]
    config: dict
    estimated_dims: list[int] = field(default_factory=list)
    per_block: list["RunRecord"] = field(default_factory=list)
    gradient_samples: list[np.ndarray] | None = None

    @property
    def n_tasks(self) -> int:
        return self.losses.shape[0]

    @property
    def consecutive_theta_min(self) -> np.ndarray:
        return np.array([self.theta_min_measured[t, t + 1] for t in range(self.n_tasks - 1)])

    def pairs(self):
        """(i, t) for every earlier task i and later task t, sorted by (t, i)."""
        return [(i, t) for t in range(self.n_tasks) for i in range(t)]

    def to_dict(self) -> dict:
        def mat(x):
            return [[_json_float(v) for v in row] for row in np.asarray(x)]

        def vec(x):
            return [_json_float(v) for v in np.asarray(x)]

        out = {
            "strategy": self.strategy,
            "rank": self.rank,
            "seed": self.seed,
            "n_tasks": self.n_tasks,
            "forgetting_immediate": mat(self.forgetting_immediate),
            "forgetting_cumulative": mat(self.forgetting_cumulative),
            "losses": mat(self.losses),
            "consecutive_theta_min": vec(self.consecutive_theta_min),
            "theta_min_measured": mat(self.theta_min_measured),
            "theta_min_prescribed": mat(self.theta_min_prescribed),
            "update_norms": vec(self.update_norms),
            "effective_ranks": vec(self.effective_ranks),
            "final_losses": vec(self.final_losses),
            "estimated_dims": list(self.estimated_dims),
            "lr_halvings": self.halvings,
            "config": self.config,
        }
        if self.per_block:
            out["per_block"] = [blk.to_dict() for blk in self.per_block]
        return out


def _json_float(v) -> float | None:
    v = float(v)
    return v if math.isfinite(v) else None


def _estimate(samples: np.ndarray, threshold: float) -> tuple[Subspace | None, float]:
    """Estimated gradient subspace and effective rank from one SVD."""
    if samples.size == 0 or not np.any(samples):
        return None, math.nan
    res = linalg.svd(samples)
    k = linalg.energy_rank(res.s, threshold)
    return Subspace(res.u[:, :k].copy()), effective_rank(res.s)


def run_sequence(seq: TaskSequence, cfg: TrainConfig, *, block: int = 0,
                 keep_samples: bool = False) -> RunRecord:
    """Train the tasks of ``seq`` in order and measure forgetting and geometry."""
    n = len(seq)
    if n < 1:
        raise PreconditionError("need at least one task")
    d, m = seq.ambient_dim, seq.output_dim
    strategy = cfg.strategy
    memory = StrategyMemory()
    own_weights: list[np.ndarray] = []

    def adapter(t: int, base: np.ndarray) -> AdapterState:
        return init_adapter(d, m, cfg.rank, base, seed=_adapter_seed(cfg.seed, block, t))

    def eval_weights(i: int, current: np.ndarray) -> np.ndarray:
        return own_weights[i] if strategy == "task_specific" else current

    losses = np.zeros((n, n))
    estimates: list[Subspace | None] = []
    update_norms, eranks, final_losses, halvings = [], [], [], []
    kept = [] if keep_samples else None
    state = adapter(0, seq.w0)
    for t, task in enumerate(seq.tasks):
        if t > 0 and strategy == "task_specific":
            state = adapter(t, seq.w0)
        elif t > 0 and cfg.adapter_reuse == "merge":
            state = adapter(t, state.weights)
        rng = stream(cfg.seed, "simulator.noise", block, t) if task.noise_sigma > 0 else None
        try:
            state, trace = train_task(state, task, cfg, memory, rng)
        except DivergenceError as exc:
            raise exc.with_task(t) from exc

        current = state.weights
        own_weights.append(current)
        samples = trace.sample_matrix() if trace.gradient_samples else np.zeros((d, 0))
        if kept is not None:
            kept.append(samples)
        est, erank = _estimate(samples, cfg.energy_threshold)
        estimates.append(est)
        eranks.append(erank)
        update_norms.append(float(np.linalg.norm(trace.delta)))
        final_losses.append(trace.final_loss)
        halvings.append(trace.halvings)

        if strategy == "ogd_project" and est is not None:
            memory.add_basis(est.basis)
        elif strategy == "ortho_reg":
            memory.previous_b.append(state.b.copy())
        elif strategy == "ewc" and trace.gradient_samples:
            fisher = np.mean(np.stack(trace.gradient_samples) ** 2, axis=0)
            memory.anchors.append((current.copy(), fisher))

        for i in range(t + 1):
            losses[i, t] = seq.tasks[i].loss(eval_weights(i, current))

    immediate = np.zeros((n, n))
    cumulative = np.zeros((n, n))
    measured = np.full((n, n), math.nan)
    prescribed = np.full((n, n), math.nan)
    for t in range(n):
        for i in range(t):
            immediate[i, t] = losses[i, t] - losses[i, t - 1]
            cumulative[i, t] = losses[i, t] - losses[i, i]
            if estimates[i] is not None and estimates[t] is not None:
                measured[i, t] = measured[t, i] = principal_angles(estimates[i], estimates[t]).theta_min
            prescribed[i, t] = prescribed[t, i] = principal_angles(
                seq.tasks[i].subspace, seq.tasks[t].subspace).theta_min

    return RunRecord(
        strategy=strategy,
        rank=cfg.rank,
        seed=cfg.seed,
        losses=losses,
        forgetting_immediate=immediate,
        forgetting_cumulative=cumulative,
        theta_min_measured=measured,
        theta_min_prescribed=prescribed,
        update_norms=np.array(update_norms),
        effective_ranks=np.array(eranks),
        final_losses=np.array(final_losses),
        halvings=halvings,
        config=cfg.to_dict(),
        estimated_dims=[e.dim if e is not None else 0 for e in estimates],
        gradient_samples=kept,
    )


def _adapter_seed(seed: int, block: int, t: int) -> int:
    return int(stream(seed, "simulator.adapter_seed", block, t).integers(0, 2**63))


def run_blocks(block_seqs: list[TaskSequence], cfg: TrainConfig, *,
               keep_samples: bool = False) -> RunRecord:
    """Independent (subspace, adapter) blocks trained side by side.

    Each block stands in for one adapted layer.  The top-level forgetting and
    loss matrices are sums over blocks; angles and effective ranks are block
    means; update norms combine as the Frobenius norm of the concatenation.
    """
    if not block_seqs:
        raise PreconditionError("need at least one block")
    n = len(block_seqs[0])
    if any(len(s) != n for s in block_seqs):
        raise PreconditionError("all blocks must have the same number of tasks")
    blocks = [run_sequence(s, cfg, block=k, keep_samples=keep_samples)
              for k, s in enumerate(block_seqs)]
    if len(blocks) == 1:
        return replace(blocks[0], per_block=[blocks[0]])

    def total(attr):
        return np.sum([getattr(b, attr) for b in blocks], axis=0)

    def mean(attr):
        return np.mean([getattr(b, attr) for b in blocks], axis=0)

    return RunRecord(
        strategy=cfg.strategy,
        rank=cfg.rank,
        seed=cfg.seed,
        losses=total("losses"),
        forgetting_immediate=total("forgetting_immediate"),
        forgetting_cumulative=total("forgetting_cumulative"),
        theta_min_measured=mean("theta_min_measured"),
        theta_min_prescribed=mean("theta_min_prescribed"),
        update_norms=np.sqrt(np.sum([b.update_norms ** 2 for b in blocks], axis=0)),
        effective_ranks=mean("effective_ranks"),
        final_losses=total("final_losses"),
        halvings=[sum((b.halvings[t] for b in blocks), []) for t in range(n)],
        config=cfg.to_dict(),
        estimated_dims=[int(x) for x in total("estimated_dims")],
        per_block=blocks,
    )
