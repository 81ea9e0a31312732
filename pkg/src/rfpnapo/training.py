"""The one trainer every method shares: batch loop, AdamW, metrics rows.

Preference methods differ only in the per-record loss functional they hand to
step_with_terms; the optimizer path and the metrics schema are identical.
"""
from __future__ import annotations

from typing import TYPE_CHECKING, Callable

import numpy as np

from .errors import ConfigurationError, NumericError
from .numerics import (
    MlpSpec,
    OptimState,
    ParamVector,
    adam_step,
    loss_value_and_grad,
    mlp_init,
    optim_init,
)
from .rectflow import ConditionalMixture, FlowBatch, cfm_objective

if TYPE_CHECKING:
    from .pnapo import AlignConfig
    from .prefdata import PreferenceRecord

# A term maps (params, record) -> (loss, gradient, extras) where extras carries
# "margin" and "beta_eff" for the metrics row.
Term = Callable[[ParamVector, "PreferenceRecord"], tuple[float, ParamVector, dict]]


def step_with_terms(
    params: ParamVector,
    optim: OptimState,
    batch: list,
    term: Term,
    step_index: int,
) -> tuple[ParamVector, OptimState, dict]:
    """Average per-record losses/gradients over a batch and apply one AdamW step."""
    losses, margins, betas, grads = [], [], [], []
    for rec in batch:
        loss, grad, extras = term(params, rec)
        losses.append(loss)
        grads.append(grad)
        margins.append(extras.get("margin", 0.0))
        betas.append(extras.get("beta_eff", 0.0))
    loss = float(np.mean(losses))
    grad = np.mean(np.stack(grads), axis=0)
    if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
        raise NumericError(f"non-finite loss or gradient at step {step_index}")
    metrics = {
        "step": step_index,
        "loss": loss,
        "margin_mean": float(np.mean(margins)),
        "beta_eff_mean": float(np.mean(betas)),
        "grad_norm": float(np.linalg.norm(grad)),
    }
    optim, params = adam_step(optim, params, grad)
    return params, optim, metrics


def run_alignment(
    ref_params: ParamVector,
    spec: MlpSpec,
    records: list,
    cfg: "AlignConfig",
) -> tuple[ParamVector, list[dict]]:
    """Train a copy of the reference on preference records; returns (params, metric rows).

    RNG order per step: batch index draw, then whatever the method's term
    draws per record in batch order.
    """
    # late imports keep the module graph acyclic; the term builders live with
    # their losses
    from . import baselines, pnapo

    if not records:
        raise ConfigurationError("alignment needs at least one preference record")
    params = np.array(ref_params, dtype=np.float64, copy=True)
    optim = optim_init(params.size, cfg.lr, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    n = len(records)
    batch_size = min(cfg.batch, n)
    rows: list[dict] = []
    for step_index in range(1, cfg.steps + 1):
        idx = rng.choice(n, size=batch_size, replace=False)
        batch = [records[int(i)] for i in idx]
        if cfg.method == "pnapo":
            term = pnapo.make_pnapo_term(
                ref_params, spec, cfg.schedule, step_index, rng, cfg.shared_t
            )
        elif cfg.method == "dpo":
            term = baselines.make_dpo_term(ref_params, spec, cfg.schedule.beta, rng)
        else:  # sft
            term = baselines.make_sft_term(spec, rng)
        params, optim, metrics = step_with_terms(params, optim, batch, term, step_index)
        rows.append(metrics)
    return params, rows


def run_pretrain(
    spec: MlpSpec,
    mixture: ConditionalMixture,
    steps: int,
    batch: int,
    lr: float,
    seed: int,
    weight_decay: float = 0.0,
) -> tuple[ParamVector, list[dict]]:
    """Fit the velocity field by regression on straight paths from the mixture.

    Init uses `seed`; the data stream uses seed+1 so the two draws stay
    distinct. RNG order per step: condition indices, mixture draws, prior
    noise, times.
    """
    if steps < 1 or batch < 1 or lr <= 0:
        raise ConfigurationError("pretraining needs steps >= 1, batch >= 1, lr > 0")
    if mixture.dim != spec.data_dim or mixture.n_conditions != spec.cond_dim:
        raise ConfigurationError(
            f"mixture ({mixture.dim}, {mixture.n_conditions}) does not match "
            f"model ({spec.data_dim}, {spec.cond_dim})"
        )
    params = mlp_init(spec, seed)
    optim = optim_init(params.size, lr, weight_decay=weight_decay)
    rng = np.random.default_rng(seed + 1)
    eye = np.eye(spec.cond_dim)
    rows: list[dict] = []
    for step_index in range(1, steps + 1):
        ks = rng.integers(spec.cond_dim, size=batch)
        x0 = mixture.sample_batch(rng, ks)
        xT = rng.standard_normal((batch, spec.data_dim))
        t = rng.random(batch)
        flow = FlowBatch(x0=x0, xT=xT, cond=eye[ks], t=t)
        loss, grad = loss_value_and_grad(cfm_objective(spec, flow), params)
        rows.append(
            {"step": step_index, "loss": loss, "grad_norm": float(np.linalg.norm(grad))}
        )
        optim, params = adam_step(optim, params, grad)
    return params, rows
