"""Preference pairs: analytic rewards, pair generation, labeling, dataset format.

Every record stores, verbatim, the prior noise that produced each candidate.
That coupling is the whole point: downstream training scores a candidate
against the exact straight path from its own stored noise, so regenerating a
sample from (noise, condition, sampler settings) must reproduce it bit for bit.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DataError, ParseError, RfpnapoError, ShapeError
from .fileio import fmt17, read_text, write_text
from .numerics import MlpSpec, ParamVector
from .rectflow import SamplerConfig, euler_sample, one_hot

REWARD_KINDS = ("mode_distance", "quadratic_bowl", "direction_dot")

DATASET_TAG = "rfpnapo-pairs"
DATASET_VERSION = "v1"


@dataclass(frozen=True)
class RewardSpec:
    """Analytic reward: kind plus one parameter vector per condition.

    kind:
        mode_distance  -> reward = -||x - params[k]||_2
        quadratic_bowl -> reward = -(x - params[k])^T A (x - params[k]), A = quad or I
        direction_dot  -> reward = <params[k], x>
    """

    kind: str
    params: np.ndarray  # (n_conditions, data_dim)
    quad: np.ndarray | None = None  # optional (d, d) PSD matrix for quadratic_bowl

    def __post_init__(self):
        if self.kind not in REWARD_KINDS:
            raise ConfigurationError(f"unknown reward kind {self.kind!r}")
        object.__setattr__(self, "params", np.asarray(self.params, dtype=np.float64))
        if self.params.ndim != 2:
            raise ShapeError("reward params must be (n_conditions, data_dim)")
        if self.quad is not None:
            quad = np.asarray(self.quad, dtype=np.float64)
            d = self.params.shape[1]
            if quad.shape != (d, d):
                raise ShapeError(f"quadratic form must be ({d}, {d}), got {quad.shape}")
            object.__setattr__(self, "quad", quad)


def reward_eval(rspec: RewardSpec, x: np.ndarray, cond: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    cond = np.asarray(cond, dtype=np.float64)
    if cond.shape != (rspec.params.shape[0],):
        raise ShapeError(
            f"condition has shape {cond.shape}, reward defines {rspec.params.shape[0]} conditions"
        )
    if x.shape != (rspec.params.shape[1],):
        raise ShapeError(f"sample has shape {x.shape}, reward expects ({rspec.params.shape[1]},)")
    k = int(np.argmax(cond))
    if rspec.kind == "mode_distance":
        return float(-np.linalg.norm(x - rspec.params[k]))
    if rspec.kind == "quadratic_bowl":
        delta = x - rspec.params[k]
        quad = rspec.quad if rspec.quad is not None else np.eye(x.size)
        return float(-(delta @ quad @ delta))
    if rspec.kind == "direction_dot":
        return float(np.dot(rspec.params[k], x))
    raise ConfigurationError(f"unknown reward kind {rspec.kind!r}")


@dataclass
class PreferenceRecord:
    """Winner/loser samples with their own prior noises and the reward gap."""

    cond: np.ndarray
    x0w: np.ndarray
    x0l: np.ndarray
    xTw: np.ndarray
    xTl: np.ndarray
    delta_r: float

    def __post_init__(self):
        for name in ("cond", "x0w", "x0l", "xTw", "xTl"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        d = self.x0w.shape
        if not (self.x0l.shape == self.xTw.shape == self.xTl.shape == d) or len(d) != 1:
            raise ShapeError("sample/noise fields must share one 1-D shape")
        if self.cond.ndim != 1:
            raise ShapeError("condition must be 1-D")
        if not math.isfinite(self.delta_r) or self.delta_r < 0.0:
            raise DataError(f"preference gap must be finite and >= 0, got {self.delta_r}")

    @property
    def dim(self) -> int:
        return self.x0w.shape[0]


@dataclass(frozen=True)
class DatasetHeader:
    dim: int
    cond_dim: int
    steps: int
    ref_hash: str

    def __post_init__(self):
        if self.dim < 1 or self.cond_dim < 1 or self.steps < 1:
            raise ShapeError("header dims and steps must be >= 1")
        if not self.ref_hash or any(ch.isspace() for ch in self.ref_hash):
            raise ShapeError("reference hash must be a non-empty token")


@dataclass
class PreferenceDataset:
    header: DatasetHeader
    records: list[PreferenceRecord]

    def __len__(self) -> int:
        return len(self.records)


def generate_pair_rng(
    ref_params: ParamVector,
    spec: MlpSpec,
    cond: np.ndarray,
    sampler_cfg: SamplerConfig,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Two candidates for one condition. RNG order: noise A, then noise B."""
    xta = rng.standard_normal(spec.data_dim)
    xtb = rng.standard_normal(spec.data_dim)
    xa, _ = euler_sample(ref_params, spec, xta, cond, sampler_cfg)
    xb, _ = euler_sample(ref_params, spec, xtb, cond, sampler_cfg)
    return xa, xta, xb, xtb


def generate_pair(
    ref_params: ParamVector,
    spec: MlpSpec,
    cond: np.ndarray,
    sampler_cfg: SamplerConfig,
    seed: int,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    return generate_pair_rng(ref_params, spec, cond, sampler_cfg, np.random.default_rng(seed))


def label_pair(
    rspec: RewardSpec,
    cond: np.ndarray,
    xa: np.ndarray,
    xta: np.ndarray,
    xb: np.ndarray,
    xtb: np.ndarray,
) -> PreferenceRecord:
    """Order a candidate pair by reward. Ties keep the first candidate as winner."""
    ra = reward_eval(rspec, xa, cond)
    rb = reward_eval(rspec, xb, cond)
    if ra >= rb:
        return PreferenceRecord(cond=cond, x0w=xa, x0l=xb, xTw=xta, xTl=xtb, delta_r=ra - rb)
    return PreferenceRecord(cond=cond, x0w=xb, x0l=xa, xTw=xtb, xTl=xta, delta_r=rb - ra)


def build_dataset(
    ref_params: ParamVector,
    spec: MlpSpec,
    rspec: RewardSpec,
    sampler_cfg: SamplerConfig,
    n_records: int,
    base_seed: int,
    ref_hash: str,
    threads: int = 1,
) -> PreferenceDataset:
    """Generate n_records labeled pairs from the frozen reference model.

    Record i is a pure function of seed base_seed + i (condition draw, then
    the two noises), so the result is independent of `threads`.
    """
    if n_records < 0:
        raise ConfigurationError(f"record count must be >= 0, got {n_records}")
    if threads < 1:
        raise ConfigurationError(f"thread count must be >= 1, got {threads}")
    if rspec.params.shape != (spec.cond_dim, spec.data_dim):
        raise ShapeError(
            f"reward params shape {rspec.params.shape} does not match model "
            f"({spec.cond_dim}, {spec.data_dim})"
        )

    def make_record(i: int) -> PreferenceRecord:
        rng = np.random.default_rng(base_seed + i)
        cond = one_hot(int(rng.integers(spec.cond_dim)), spec.cond_dim)
        xa, xta, xb, xtb = generate_pair_rng(ref_params, spec, cond, sampler_cfg, rng)
        return label_pair(rspec, cond, xa, xta, xb, xtb)

    if threads == 1:
        records = [make_record(i) for i in range(n_records)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(make_record, range(n_records)))
    header = DatasetHeader(
        dim=spec.data_dim, cond_dim=spec.cond_dim, steps=sampler_cfg.steps, ref_hash=ref_hash
    )
    return PreferenceDataset(header=header, records=records)


def replay_sample(
    ref_params: ParamVector, spec: MlpSpec, header: DatasetHeader, rec: PreferenceRecord, winner: bool
) -> np.ndarray:
    """Re-run the recorded sampler on a stored noise; must match the stored sample."""
    noise = rec.xTw if winner else rec.xTl
    x0, _ = euler_sample(ref_params, spec, noise, rec.cond, SamplerConfig(steps=header.steps))
    return x0


def audit_dataset(dataset: PreferenceDataset, ref_params: ParamVector, spec: MlpSpec) -> float:
    """Replay every stored noise and return the max |stored - replayed| (0.0 = exact)."""
    worst = 0.0
    for rec in dataset.records:
        if rec.delta_r < 0:
            raise DataError("negative preference gap in dataset")
        for winner in (True, False):
            stored = rec.x0w if winner else rec.x0l
            replayed = replay_sample(ref_params, spec, dataset.header, rec, winner)
            diff = float(np.max(np.abs(stored - replayed)))
            if diff > worst:
                worst = diff
    return worst


# --- text format --------------------------------------------------------------
# line 1: rfpnapo-pairs v1 dim=<d> cdim=<k> steps=<s> refhash=<hex>
# then one record per line, six " | "-separated fields:
# cond | x0w | x0l | xTw | xTl | delta_r   (vectors space-separated, 17 digits)


def _fmt_vec(v: np.ndarray) -> str:
    return " ".join(fmt17(x) for x in v)


def _parse_vec(field: str, expect: int, line: int) -> np.ndarray:
    tokens = field.split()
    if len(tokens) != expect:
        raise ParseError(f"expected {expect} numbers, found {len(tokens)}", line=line)
    try:
        return np.array([float(tok) for tok in tokens])
    except ValueError:
        raise ParseError(f"bad number in field {field!r}", line=line) from None


def write_dataset(path: str, dataset: PreferenceDataset) -> None:
    h = dataset.header
    lines = [
        f"{DATASET_TAG} {DATASET_VERSION} dim={h.dim} cdim={h.cond_dim} "
        f"steps={h.steps} refhash={h.ref_hash}"
    ]
    for rec in dataset.records:
        if rec.dim != h.dim or rec.cond.shape != (h.cond_dim,):
            raise ShapeError("record dimensions do not match dataset header")
        fields = [
            _fmt_vec(rec.cond),
            _fmt_vec(rec.x0w),
            _fmt_vec(rec.x0l),
            _fmt_vec(rec.xTw),
            _fmt_vec(rec.xTl),
            fmt17(rec.delta_r),
        ]
        lines.append(" | ".join(fields))
    write_text(path, "\n".join(lines) + "\n")


def read_dataset(path: str) -> PreferenceDataset:
    content = read_text(path, "pair dataset")
    lines = content.splitlines()
    if not lines:
        raise ParseError("empty dataset file", line=1)
    tokens = lines[0].split()
    if len(tokens) != 6 or tokens[0] != DATASET_TAG or tokens[1] != DATASET_VERSION:
        raise ParseError(f"bad dataset header {lines[0]!r}", line=1)
    values: dict[str, str] = {}
    for tok, key in zip(tokens[2:], ("dim", "cdim", "steps", "refhash")):
        prefix = key + "="
        if not tok.startswith(prefix):
            raise ParseError(f"expected {key}=..., found {tok!r}", line=1)
        values[key] = tok[len(prefix):]
    try:
        header = DatasetHeader(
            dim=int(values["dim"]),
            cond_dim=int(values["cdim"]),
            steps=int(values["steps"]),
            ref_hash=values["refhash"],
        )
    except (ValueError, RfpnapoError) as exc:
        raise ParseError(f"bad dataset header: {exc}", line=1) from None
    records: list[PreferenceRecord] = []
    for lineno, raw in enumerate(lines[1:], start=2):
        if raw == "":
            continue
        fields = raw.split(" | ")
        if len(fields) != 6:
            raise ParseError(f"expected 6 fields, found {len(fields)}", line=lineno)
        cond = _parse_vec(fields[0], header.cond_dim, lineno)
        vecs = [_parse_vec(f, header.dim, lineno) for f in fields[1:5]]
        delta = _parse_vec(fields[5], 1, lineno)[0]
        try:
            records.append(
                PreferenceRecord(
                    cond=cond, x0w=vecs[0], x0l=vecs[1], xTw=vecs[2], xTl=vecs[3], delta_r=delta
                )
            )
        except RfpnapoError as exc:
            raise ParseError(str(exc), line=lineno) from None
    return PreferenceDataset(header=header, records=records)
