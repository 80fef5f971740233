"""Training: risk-weighted reconstruction + KL + collision regularization.

The per-window loss samples latent modes from the posterior (top modes plus
a few random ones, probabilities renormalized over the selection), decodes
each sampled mode with the policy decoder, and scores squared position error
against the ground-truth futures. Mode weights are then reshaped by the dual
form of CVaR: minimize sum(w_i * loss_i) subject to 0 <= w_i <= q_i / alpha
and sum(w) = 1, solved exactly by a greedy fill in ascending-loss order.
Small alpha concentrates weight on the best modes (keeps them diverse);
alpha = 1 recovers the plain expectation.

Gradient treatment: the CVaR optimum has an active-set structure — modes
below the loss quantile sit at their cap q_i/alpha, one marginal mode
absorbs the leftover budget, the rest get zero. With that split frozen
(it is locally constant), the objective sum_capped (q_i/alpha) L_i +
remainder * L_marginal is an honest smooth function of the parameters:
decoder gradients arrive through the per-mode errors with the risk-shaped
weights, and the posterior's reconstruction signal arrives through the
renormalized probabilities q_i (pushing mass toward modes that reconstruct
the realized future, since capped modes have L_i < L_marginal).

Late in training (alpha above a threshold) the prediction-error gradient is
blocked for every sampled mode except the one the posterior ranks highest,
which keeps improving mode probabilities without re-collapsing the decoder.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import geometry
from .autodiff import Value
from .data import TrainingWindow
from .encoder import joint_log_tensor, kl_divergence
from .model import CliqueModel, ModelConfig


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite; carries the offending report."""


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 40
    batch_size: int = 8
    learning_rate: float = 1e-3
    kl_weight: float = 1.0
    collision_weight: float = 1.0
    collision_sharpness: float = 10.0
    collision_buffer: float = 0.0
    n_top: int = 4                  # highest-probability posterior modes per window
    n_random: int = 2               # extra random modes from the rest
    alpha_start: float = 0.2
    alpha_end: float = 1.0
    alpha_detach_threshold: float = 0.8
    seed: int = 0

    def __post_init__(self):
        for a in (self.alpha_start, self.alpha_end):
            if not (0.0 < a <= 1.0):
                raise ValueError("alpha must lie in (0, 1]")
        if self.n_top + self.n_random < 1:
            raise ValueError("n_top + n_random must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @staticmethod
    def from_dict(d: dict) -> "TrainingConfig":
        return TrainingConfig(**d)


@dataclass
class LossReport:
    likelihood: float
    kl: float
    collision: float
    total: float
    alpha: float = 1.0
    epoch: int = -1

    @staticmethod
    def mean(reports: list["LossReport"]) -> "LossReport":
        n = len(reports)
        return LossReport(
            likelihood=sum(r.likelihood for r in reports) / n,
            kl=sum(r.kl for r in reports) / n,
            collision=sum(r.collision for r in reports) / n,
            total=sum(r.total for r in reports) / n,
            alpha=reports[-1].alpha,
            epoch=reports[-1].epoch,
        )


def cvar_weights(q: np.ndarray, losses: np.ndarray, alpha: float) -> np.ndarray:
    """Exact minimizer of sum(w*losses) s.t. 0 <= w <= q/alpha, sum(w) = 1.

    Greedy fill in ascending-loss order saturates the per-mode caps until the
    unit budget is spent. alpha = 1 returns q itself (the only feasible
    point); alpha at or below the probability of the best mode puts all
    weight there.
    """
    return _cvar_active_set(q, losses, alpha)[0]


def _cvar_active_set(q: np.ndarray, losses: np.ndarray, alpha: float):
    """(weights, capped_mask, marginal_index) of the greedy CVaR solution.

    capped modes sit at their cap q/alpha; the marginal mode absorbs the
    leftover budget. The active-set split is what makes the loss honestly
    differentiable w.r.t. q: d(objective)/dq_i = (L_i - L_marginal)/alpha for
    capped modes and 0 elsewhere (envelope theorem).
    """
    q = np.asarray(q, dtype=np.float64)
    losses = np.asarray(losses, dtype=np.float64)
    if q.shape != losses.shape or q.ndim != 1:
        raise ValueError("q and losses must be 1-D with equal length")
    if abs(q.sum() - 1.0) > 1e-6:
        raise ValueError(f"q must sum to 1 (got {q.sum()!r})")
    if not (0.0 < alpha <= 1.0):
        raise ValueError("alpha must lie in (0, 1]")
    if alpha == 1.0:
        # every mode is exactly at its cap; no marginal mode
        return q.copy(), np.ones_like(q, dtype=bool), int(np.argmin(losses))
    caps = q / alpha
    order = np.lexsort((np.arange(q.size), losses))  # ascending loss, ties by index
    w = np.zeros_like(q)
    capped = np.zeros(q.size, dtype=bool)
    marginal = int(order[0])
    remaining = 1.0
    for idx in order:
        take = min(caps[idx], remaining)
        w[idx] = take
        remaining -= take
        if take < caps[idx] - 1e-15 or remaining <= 0.0:
            marginal = int(idx)
            break
        capped[idx] = True
    return w, capped, marginal


def alpha_schedule(config: TrainingConfig, epoch: int) -> float:
    """Linear ramp from alpha_start at epoch 0 to alpha_end at the last epoch."""
    if config.epochs == 1:
        return config.alpha_end
    frac = epoch / (config.epochs - 1)
    return config.alpha_start + (config.alpha_end - config.alpha_start) * min(max(frac, 0.0), 1.0)


@dataclass
class ModeSelection:
    """Sampled latent modes and the frozen CVaR active set.

    The mode selection and the CVaR active-set split are locally constant
    (they change only on measure-zero boundaries); freezing them makes the
    loss a smooth function of the parameters, which is what backward
    differentiates and what the finite-difference checks vary.
    """

    z_batch: np.ndarray               # (B, n_agents)
    q_weights: np.ndarray             # (B,) renormalized posterior probabilities
    cvar: np.ndarray | None = None    # (B,) CVaR weights at the base point
    capped: np.ndarray | None = None  # (B,) bool: modes at their q/alpha cap
    marginal: int | None = None       # index absorbing the leftover budget
    alpha: float | None = None


def elbo_loss(window: TrainingWindow, model: CliqueModel, config: TrainingConfig,
              rng: np.random.Generator, alpha: float | None = None,
              selection: ModeSelection | None = None):
    """Risk-weighted ELBO for one window.

    Returns (LossReport, total, selection): total is the scalar Value to
    backpropagate (cvar-weighted squared position error + kl_weight * exact
    KL(posterior || prior) + collision_weight * weighted collision penalty);
    selection records the sampled modes and weights actually used. Passing a
    selection back in freezes the sampling and the CVaR weighting.
    """
    if alpha is None:
        alpha = config.alpha_start
    clique = window.clique
    horizon = model.config.horizon
    for a in clique.agents:
        if a.future is None or len(a.future) < horizon:
            raise ValueError(f"agent {a.id} lacks a {horizon}-step future")

    tables_q, tables_p, enc = model.posterior_tables(clique)
    if selection is None:
        gibbs_q = tables_q.to_gibbs(model.config.enumeration_cap)
        samples = gibbs_q.training_sample(config.n_top, config.n_random, rng)
        z_batch = np.array([list(a.values) for a, _ in samples], dtype=np.int64)
    else:
        z_batch = selection.z_batch

    # Renormalized posterior probabilities of the selected modes, kept
    # differentiable: the posterior's reconstruction signal flows through
    # these (the normalization over the selection stops the loss from being
    # shrunk to zero by deflating every selected probability).
    joint_q = joint_log_tensor(tables_q)
    sel_logs = ad.stack([joint_q[tuple(z)] for z in z_batch], axis=0)
    q_sel = ad.softmax(sel_logs, axis=-1)  # (B,)
    q_weights = q_sel.data.copy()

    free_ids = list(clique.ids)
    refs = model.decoder.reference_trajectories(clique, enc, z_batch, free_ids)
    record = model.decoder.rollout(clique, z_batch, refs, {})

    batch = z_batch.shape[0]
    err = None  # (B,) squared position error accumulated over agents and steps
    for agent in clique.agents:
        gt = agent.future[:horizon, 0:2]
        stacked = ad.concat(record.states[agent.id], axis=0)  # (T*B, 4), row t*B+b
        d = stacked[:, 0:2] - np.repeat(gt, batch, axis=0)
        e = (d * d).sum(axis=1).reshape(horizon, batch).sum(axis=0)
        err = e if err is None else err + e

    if selection is not None and selection.cvar is not None:
        weights, capped, marginal = selection.cvar, selection.capped, selection.marginal
        base_q, alpha_used = selection.q_weights, selection.alpha
    else:
        weights, capped, marginal = _cvar_active_set(q_weights, err.data, alpha)
        base_q, alpha_used = q_weights, alpha
    n_modes = z_batch.shape[0]
    if alpha > config.alpha_detach_threshold and n_modes > 1:
        # block prediction-error gradients for all but the highest-posterior
        # mode; the probability factors stay live so the encoder keeps
        # learning mode probabilities
        keep = int(np.argmax(base_q))
        mask = np.zeros(n_modes)
        mask[keep] = 1.0
        err_used = err * Value(mask) + err.detach() * Value(1.0 - mask)
    else:
        err_used = err
    # CVaR objective with the active set frozen: capped modes contribute at
    # q/alpha, the marginal mode absorbs the rest of the unit budget. Both
    # the per-mode errors and the posterior probabilities stay live, so the
    # decoder trains on the risk-shaped weights and the posterior learns to
    # move mass toward the modes that reconstruct the realized future.
    capped_q = q_sel * Value(capped.astype(np.float64)) * (1.0 / alpha_used)
    likelihood = (capped_q * err_used).sum() \
        + (1.0 - capped_q.sum()) * err_used[marginal]

    kl = kl_divergence(tables_q, tables_p)

    if config.collision_weight > 0.0 and len(clique) > 1:
        # Uniform over the sampled modes, not CVaR-weighted: scene
        # consistency is required of every decoded mode, and risk weights
        # would zero the penalty exactly on the modes that mispredict this
        # window (leaving their collision behavior untrained).
        pen = geometry.penalty_per_mode(
            [record.states[a.id] for a in clique.agents],
            [a.footprint for a in clique.agents],
            sharpness=config.collision_sharpness, buffer=config.collision_buffer)
        collision = pen.mean()
    else:
        collision = Value(0.0)

    total = likelihood + config.kl_weight * kl + config.collision_weight * collision
    report = LossReport(likelihood=float(likelihood.data), kl=float(kl.data),
                        collision=float(collision.data), total=float(total.data),
                        alpha=alpha)
    used = ModeSelection(z_batch=z_batch, q_weights=base_q, cvar=np.asarray(weights),
                         capped=capped, marginal=marginal, alpha=alpha_used)
    return report, total, used


class Adam:
    """Adaptive-moment gradient step over a ParameterStore."""

    def __init__(self, store, learning_rate=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.store = store
        self.lr = learning_rate
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {name: np.zeros_like(v.data) for name, v in store.items()}
        self.v = {name: np.zeros_like(v.data) for name, v in store.items()}
        self.t = 0

    def step(self, grad_scale: float = 1.0):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        for name, p in self.store.items():
            if p.grad is None:
                continue
            g = p.grad * grad_scale
            self.m[name] = b1 * self.m[name] + (1 - b1) * g
            self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            m_hat = self.m[name] / bias1
            v_hat = self.v[name] / bias2
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def train(dataset: list[TrainingWindow], config: TrainingConfig,
          model_config: ModelConfig | None = None, model: CliqueModel | None = None,
          log=None, checkpoint_path=None):
    """Optimize the model on the dataset; returns (model, per-epoch reports).

    Deterministic given config.seed: shuffling and latent sampling come from
    one seeded generator. Raises TrainingDivergedError on a non-finite loss.
    When checkpoint_path is given the trained model is persisted there.
    """
    if not dataset:
        raise ValueError("dataset is empty")
    if model is None:
        model = CliqueModel(model_config or ModelConfig())
    opt = Adam(model.params, learning_rate=config.learning_rate)
    rng = np.random.default_rng(config.seed)
    order = np.arange(len(dataset))
    history: list[LossReport] = []
    for epoch in range(config.epochs):
        alpha = alpha_schedule(config, epoch)
        rng.shuffle(order)
        reports = []
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            model.params.zero_grads()
            for idx in batch:
                report, total, _ = elbo_loss(dataset[int(idx)], model, config, rng, alpha)
                if not math.isfinite(report.total):
                    raise TrainingDivergedError(
                        f"non-finite loss at epoch {epoch}, window {int(idx)}: {report}")
                ad.backward(total)
                report.epoch = epoch
                reports.append(report)
            opt.step(grad_scale=1.0 / len(batch))
        epoch_report = LossReport.mean(reports)
        history.append(epoch_report)
        if log is not None:
            log(f"epoch {epoch:3d}  alpha={alpha:.3f}  total={epoch_report.total:.4f}  "
                f"recon={epoch_report.likelihood:.4f}  kl={epoch_report.kl:.4f}  "
                f"col={epoch_report.collision:.5f}")
    if checkpoint_path is not None:
        model.save(checkpoint_path, extra_meta={"training": config.to_dict(),
                                                "windows": len(dataset)})
    return model, history
