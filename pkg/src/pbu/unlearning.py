"""Partially blinded unlearning and the retrain / fine-tune baselines.

:func:`run_pbu` sees only the initial checkpoint and the forget-class
examples; there is deliberately no parameter through which retain data
could reach it.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .classifier import Adam, TrainConfig, log_likelihood_tensor, train
from .errors import ContaminationError, ContractError, DivergenceError
from .fisher import FORMS, MODES, fisher, mahalanobis_tensor
from .rng import Rng

LOSS_LIMIT = 1e12


@dataclass
class PBUConfig:
    alpha: float = 1.0
    beta: float = 0.0
    gamma: float = 0.0
    eta: float = 1e-3
    steps: int = 100
    fisher_mode: str = "empirical"
    fisher_form: str = "diagonal"
    optimizer: str = "gd"
    batch_size: int | None = None
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise ContractError(f"{name} must be finite and >= 0, got {v}")
        if not (np.isfinite(self.eta) and self.eta > 0):
            raise ContractError(f"eta must be > 0, got {self.eta}")
        if self.steps < 1:
            raise ContractError(f"steps must be >= 1, got {self.steps}")
        if self.optimizer not in ("gd", "adam"):
            raise ContractError(f"optimizer must be 'gd' or 'adam', got {self.optimizer!r}")
        if self.fisher_mode not in MODES or self.fisher_form not in FORMS:
            raise ContractError(f"bad Fisher settings {self.fisher_mode}/{self.fisher_form}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ContractError("batch_size must be >= 1")


@dataclass
class PBUCounters:
    """Instrumentation for the single-phase and blindness properties."""

    fisher_computations: int = 0
    optimization_phases: int = 0
    retain_examples_seen: int = 0


@dataclass
class UnlearnResult:
    theta_u: np.ndarray
    loss_trace: list
    wall_time: float
    steps_run: int
    epochs: float
    counters: PBUCounters = field(default_factory=PBUCounters)


def _forget_class(s_n):
    if len(s_n) == 0:
        raise ContractError("forget set S_n is empty")
    classes = np.unique(s_n.y)
    if classes.size != 1:
        raise ContractError(f"forget set must hold a single class, found {classes.tolist()}")
    return int(classes[0])


def pbu_loss_tensor(spec, theta, theta_star, F, s_n, cfg):
    terms = []
    if cfg.alpha:
        terms.append(ad.scale(log_likelihood_tensor(spec, theta, s_n), cfg.alpha))
    if cfg.beta:
        terms.append(ad.scale(mahalanobis_tensor(theta, theta_star, F), cfg.beta))
    if cfg.gamma:
        delta = ad.sub(theta, theta_star)
        terms.append(ad.scale(ad.reduce_sum(ad.square(delta)), cfg.gamma))
    if not terms:
        return ad.scale(ad.reduce_sum(theta), 0.0)
    out = terms[0]
    for t in terms[1:]:
        out = ad.add(out, t)
    return out


def pbu_loss(spec, theta, theta_star, F, s_n, cfg):
    """``alpha*log P(S_n|theta) + beta*Mahalanobis + gamma*||theta - theta*||^2``."""
    _forget_class(s_n)
    return pbu_loss_tensor(spec, theta, theta_star, F, s_n, cfg).item()


def pbu_loss_and_grad(spec, theta, theta_star, F, s_n, cfg):
    return ad.value_and_grad(
        lambda t: pbu_loss_tensor(spec, t, theta_star, F, s_n, cfg), theta
    )


class PBUStepper:
    """Update rule for the unlearning loop: plain GD or Adam."""

    def __init__(self, cfg, size):
        self.cfg = cfg
        self.adam = (
            Adam(size, cfg.eta, cfg.beta1, cfg.beta2, cfg.eps) if cfg.optimizer == "adam" else None
        )

    def __call__(self, theta, grad, step=0):
        if not np.all(np.isfinite(grad)):
            raise DivergenceError(f"non-finite gradient at unlearning step {step}")
        if self.adam is not None:
            return self.adam.step(theta, grad)
        return theta - self.cfg.eta * grad


def pbu_step(theta, grad, cfg, stepper=None, step=0):
    """One update ``theta - eta * grad`` (or an Adam move when configured)."""
    stepper = stepper or PBUStepper(cfg, np.asarray(theta).size)
    return stepper(np.asarray(theta, dtype=np.float64), np.asarray(grad, dtype=np.float64), step)


def run_pbu(spec, initial, s_n, cfg, fisher_out=None):
    """Unlearn the class held in ``s_n`` starting from ``initial``.

    The Fisher is computed once at the initial parameters on ``s_n``; then
    ``cfg.steps`` updates follow. ``loss_trace[t]`` is the loss at the
    parameters before update ``t``. If ``fisher_out`` is a list, the Fisher
    estimate is appended to it for persistence.
    """
    forget = _forget_class(s_n)
    counters = PBUCounters()
    counters.retain_examples_seen += int(np.sum(s_n.y != forget))
    start = time.perf_counter()
    theta_star = np.array(initial.theta, dtype=np.float64)
    F = fisher(spec, theta_star, s_n, cfg.fisher_mode, cfg.fisher_form)
    counters.fisher_computations += 1
    if fisher_out is not None:
        fisher_out.append(F)

    counters.optimization_phases += 1
    stepper = PBUStepper(cfg, theta_star.size)
    n = len(s_n)
    rng = Rng(cfg.seed)
    theta = theta_star.copy()
    trace = []
    order, cursor = None, n
    for t in range(cfg.steps):
        if cfg.batch_size is None or cfg.batch_size >= n:
            batch = s_n
        else:
            if cursor + cfg.batch_size > n:
                order, cursor = rng.permutation(n), 0
            batch = s_n.subset(order[cursor:cursor + cfg.batch_size])
            cursor += cfg.batch_size
        loss, grad = pbu_loss_and_grad(spec, theta, theta_star, F, batch, cfg)
        if not np.isfinite(loss) or abs(loss) > LOSS_LIMIT:
            raise DivergenceError(f"unlearning loss diverged ({loss:.3e}) at step {t}")
        trace.append(loss)
        theta = stepper(theta, grad, t)
    per_step = n if cfg.batch_size is None else min(cfg.batch_size, n)
    return UnlearnResult(
        theta_u=theta,
        loss_trace=trace,
        wall_time=time.perf_counter() - start,
        steps_run=cfg.steps,
        epochs=cfg.steps * per_step / n,
        counters=counters,
    )


def _check_clean(s_p, forget_class):
    if len(s_p) == 0:
        raise ContractError("retain set S_p is empty")
    if forget_class is not None:
        hits = int(np.sum(s_p.y == forget_class))
        if hits:
            raise ContaminationError(
                f"retain set holds {hits} examples of forget class {forget_class}"
            )


def retrain_baseline(spec, s_p, cfg, forget_class=None):
    """Train from scratch on the retain set only."""
    _check_clean(s_p, forget_class)
    return train(spec, s_p, cfg)


def finetune_baseline(initial, s_p, cfg, forget_class=None):
    """Continue training ``initial`` on the retain set only."""
    _check_clean(s_p, forget_class)
    if not isinstance(cfg, TrainConfig):
        raise ContractError("finetune_baseline expects a TrainConfig")
    return train(initial.spec, s_p, cfg, theta0=initial.theta)

