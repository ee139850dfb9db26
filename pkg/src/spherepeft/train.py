"""Fine-tuning loop for the toy dual-tower encoder and its diagnostic report."""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .config import RunConfig
from .dcrc import param_count_dcrc
from .grad_engine import (
    AdamState,
    AdapterState,
    adam_step,
    adapter_forward,
    energy_diagnostics,
    loss_and_grad,
)
from .ortho_param import param_count_pop
from .toy_model import (
    PretrainedStack,
    SynthBatch,
    alignment_loss,
    forward_tower,
    make_pretrained,
    synth_pairs,
)

__all__ = ["TrainReport", "TrainResult", "parameter_summary", "unadapted_loss", "train"]

log = logging.getLogger(__name__)

CLIP_CAVEAT = (
    "informational: the set of adapted matrices per layer is not specified, "
    "so this ratio is not comparable to the ~4% reference figure"
)


def parameter_summary(cfg: RunConfig) -> dict:
    """Closed-form trainable and frozen counts and their ratio.

    Frozen parameters are the ``m`` adapted square matrices per layer and
    tower plus the two output projections.
    """
    pop = param_count_pop(cfg)
    dcrc = param_count_dcrc(cfg)
    frozen = cfg.L * cfg.m * (cfg.d_v ** 2 + cfg.d_e ** 2) + cfg.embed_dim * (cfg.d_v + cfg.d_e)
    trainable = pop["pop_total"] + dcrc["dcrc_total"]
    return {
        **pop,
        **dcrc,
        "trainable_total": trainable,
        "frozen_total": frozen,
        "trainable_to_frozen_ratio": trainable / frozen,
        "trainable_fraction_of_all": trainable / (trainable + frozen),
    }


@dataclass
class TrainReport:
    losses: list = field(default_factory=list)
    text_pre_dcrc_rel_gap: list = field(default_factory=list)
    text_post_dcrc_ortho_residual: list = field(default_factory=list)
    grad_norms: list = field(default_factory=list)
    unadapted_loss: float = float("nan")
    parameters: dict = field(default_factory=dict)
    seed: int = 0
    config: dict = field(default_factory=dict)
    start_iteration: int = 0
    wall_clock_seconds: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    report: TrainReport
    state: AdapterState
    moments: AdamState
    stack: PretrainedStack
    batch: SynthBatch


def unadapted_loss(cfg: RunConfig, stack: PretrainedStack, batch: SynthBatch) -> float:
    """Loss of the frozen towers with no adapter at all."""
    E_v = forward_tower(stack, None, batch.x_image, "image")
    E_e = forward_tower(stack, None, batch.x_text, "text")
    return alignment_loss(E_v, E_e, cfg.tau)


def train(cfg: RunConfig, state: AdapterState | None = None, moments: AdamState | None = None) -> TrainResult:
    """Run ``cfg.iterations`` full-batch Adam steps on the adapter.

    The loss recorded at iteration ``t`` is evaluated before the ``t``-th
    update. Passing ``state``/``moments`` from a checkpoint resumes a run.
    """
    started = time.perf_counter()
    stack = make_pretrained(cfg, cfg.seed)
    batch = synth_pairs(cfg, cfg.seed, cfg.batch_size)
    state = AdapterState.init(cfg) if state is None else state
    moments = AdamState.zeros(state.size) if moments is None else moments
    report = TrainReport(
        unadapted_loss=unadapted_loss(cfg, stack, batch),
        parameters=parameter_summary(cfg),
        seed=cfg.seed,
        config=cfg.to_dict(),
        start_iteration=moments.t,
    )
    params = state.flatten()
    for it in range(cfg.iterations):
        value, grad = loss_and_grad(state, stack, batch)
        diag = energy_diagnostics(adapter_forward(state, stack), stack)
        report.losses.append(value)
        report.text_pre_dcrc_rel_gap.append(diag["text_pre_dcrc_rel_gap"])
        report.text_post_dcrc_ortho_residual.append(diag["text_post_dcrc_ortho_residual"])
        report.grad_norms.append(float(np.linalg.norm(grad)))
        if it % 50 == 0:
            log.debug("iter %d loss %.6f", it, value)
        params, moments = adam_step(params, grad, moments, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
        state = state.unflatten(params)
    report.wall_clock_seconds = time.perf_counter() - started
    return TrainResult(report, state, moments, stack, batch)
