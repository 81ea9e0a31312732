"""Baseline preference objectives sharing the trainer: fresh-noise DPO and SFT.

The DPO variant scores each candidate against a freshly drawn prior sample
instead of the stored one — structurally the same objective with the stored
noise swapped out, which is exactly how the two are compared.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable

import numpy as np

from .errors import ShapeError
from .numerics import (
    FunctionLoss,
    MlpSpec,
    ParamVector,
    forward_single_cached,
    vjp_single,
)
from .pnapo import pnapo_loss, pnapo_value_grad
from .rectflow import FlowBatch, cfm_loss

if TYPE_CHECKING:
    from .prefdata import PreferenceRecord


@dataclass(frozen=True)
class DpoSampleDraw:
    """Fresh per-branch prior draws and the shared time for one DPO term."""

    eps_w: np.ndarray
    eps_l: np.ndarray
    t: float

    def __post_init__(self):
        object.__setattr__(self, "eps_w", np.asarray(self.eps_w, dtype=np.float64))
        object.__setattr__(self, "eps_l", np.asarray(self.eps_l, dtype=np.float64))
        if self.eps_w.shape != self.eps_l.shape or self.eps_w.ndim != 1:
            raise ShapeError("draws must be two 1-D vectors of equal length")


def _substitute_noise(rec: "PreferenceRecord", draw: DpoSampleDraw) -> "PreferenceRecord":
    # same record, stored noises replaced by the fresh draws; x0/cond untouched
    from .prefdata import PreferenceRecord

    if draw.eps_w.shape != rec.x0w.shape:
        raise ShapeError(
            f"draw dimension {draw.eps_w.shape} does not match record {rec.x0w.shape}"
        )
    return PreferenceRecord(
        cond=rec.cond, x0w=rec.x0w, x0l=rec.x0l, xTw=draw.eps_w, xTl=draw.eps_l,
        delta_r=rec.delta_r,
    )


def dpo_loss(
    params: ParamVector,
    ref_params: ParamVector,
    spec: MlpSpec,
    rec: "PreferenceRecord",
    draw: DpoSampleDraw,
    beta: float,
) -> float:
    """Logistic preference loss with fresh prior draws; ignores the stored noises.

    Coincides exactly with the noise-aware loss when draw equals the stored
    noises and the times match.
    """
    return pnapo_loss(params, ref_params, spec, _substitute_noise(rec, draw), draw.t, beta)


def dpo_value_grad(
    params: ParamVector,
    ref_params: ParamVector,
    spec: MlpSpec,
    rec: "PreferenceRecord",
    draw: DpoSampleDraw,
    beta: float,
) -> tuple[float, ParamVector, float]:
    return pnapo_value_grad(params, ref_params, spec, _substitute_noise(rec, draw), draw.t, beta)


def dpo_objective(
    ref_params: ParamVector,
    spec: MlpSpec,
    rec: "PreferenceRecord",
    draw: DpoSampleDraw,
    beta: float,
) -> FunctionLoss:
    def value(params: ParamVector) -> float:
        return dpo_loss(params, ref_params, spec, rec, draw, beta)

    def value_and_grad(params: ParamVector) -> tuple[float, ParamVector]:
        loss, grad, _ = dpo_value_grad(params, ref_params, spec, rec, draw, beta)
        return loss, grad

    return FunctionLoss(value, value_and_grad)


def make_dpo_term(
    ref_params: ParamVector,
    spec: MlpSpec,
    beta: float,
    rng: np.random.Generator,
) -> Callable:
    """Per-record DPO functional. RNG order per record: t, eps_w, eps_l."""

    def term(params: ParamVector, rec: "PreferenceRecord") -> tuple[float, ParamVector, dict]:
        t = float(rng.random())
        draw = DpoSampleDraw(
            eps_w=rng.standard_normal(rec.dim), eps_l=rng.standard_normal(rec.dim), t=t
        )
        loss, grad, margin = dpo_value_grad(params, ref_params, spec, rec, draw, beta)
        return loss, grad, {"margin": margin, "beta_eff": beta}

    return term


def sft_loss(params: ParamVector, spec: MlpSpec, batch: FlowBatch) -> float:
    """Plain matching loss on winner samples paired with fresh noise."""
    return cfm_loss(params, spec, batch)


def make_sft_term(spec: MlpSpec, rng: np.random.Generator) -> Callable:
    """Per-record SFT functional on the winner only. RNG order: xT, then t."""

    def term(params: ParamVector, rec: "PreferenceRecord") -> tuple[float, ParamVector, dict]:
        xT = rng.standard_normal(rec.dim)
        t = float(rng.random())
        xt = (1.0 - t) * rec.x0w + t * xT
        target = xT - rec.x0w
        inp = np.concatenate([xt, rec.cond, [t]])
        v, cache = forward_single_cached(params, spec, inp)
        residual = v - target
        loss = float(residual @ residual)
        grad = vjp_single(params, spec, cache, 2.0 * residual)
        return loss, grad, {"margin": 0.0, "beta_eff": 0.0}

    return term


__all__ = [
    "DpoSampleDraw",
    "dpo_loss",
    "dpo_value_grad",
    "dpo_objective",
    "make_dpo_term",
    "sft_loss",
    "make_sft_term",
]
