"""Monte Carlo BLER sweeps, CSV output and experiment configuration files."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import astuple, dataclass, fields
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .channel import apply_channel, generate_channel
from .coding import CRC_WIDTH, CodeConfig, encode_transport, make_ldpc
from .messages import ContractError
from .receiver import STRATEGIES, OuterLoopConfig, run_receiver
from .transmitter import ConfigurationError, SchemeLayout, build_scheme, map_bits

log = logging.getLogger(__name__)

SNR_COMMENT = "snr_db is the per-UE, per-rx-antenna average received Es/N0 on occupied REs"
DETECTOR_NAMES = ("mpa", "epa", "ese", "mmse")

__all__ = [
    "ExperimentConfig",
    "BlerRecord",
    "ConfigurationError",
    "build_layout",
    "build_code",
    "run_trial",
    "run_sweep",
    "emit_csv",
    "read_csv",
    "format_csv",
    "parse_config_text",
    "load_config",
    "dump_config",
    "wilson_interval",
    "snr_at_bler",
]


def _split(value):
    if isinstance(value, str):
        return [v for v in value.replace(",", " ").split() if v]
    return value


class ExperimentConfig(BaseModel):
    """One sweep: a scheme, a receiver and a grid of (SNR, outer-iteration) points."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    name: str = "experiment"
    scheme: str = "cb_ofdma"
    order: int = 4
    spreading_length: int = 4
    codebook_file: Optional[str] = None
    n_ue: int = Field(6, ge=1)
    n_re: int = Field(864, ge=1)
    n_rx: int = Field(2, ge=1)
    coherence_re: int = Field(12, ge=1)
    tbs_bits: int = Field(480, ge=1)
    code_info_bits: Optional[int] = None
    bp_iterations: int = Field(25, ge=1)
    detector: str = "mmse"
    mmse_mode: str = "chip"
    epa_damping: float = Field(0.5, gt=0, le=1)
    ic: str = "hybrid_pic"
    inner_iterations: Optional[int] = Field(None, ge=1)
    outer_iterations: tuple[int, ...] = (0, 1, 2, 3)
    snr_db: tuple[float, ...] = (0.0,)
    power_offsets_db: Optional[tuple[float, ...]] = None
    n_blocks: int = Field(100, ge=1)
    master_seed: int = 1

    _split_lists = field_validator("outer_iterations", "snr_db", "power_offsets_db", mode="before")(_split)

    @model_validator(mode="after")
    def _check(self):
        if not self.snr_db:
            raise ValueError("snr_db must list at least one value")
        if not self.outer_iterations or min(self.outer_iterations) < 0:
            raise ValueError("outer_iterations must be a nonempty list of non-negative integers")
        if self.detector not in DETECTOR_NAMES:
            raise ValueError(f"detector must be one of {DETECTOR_NAMES}")
        if self.ic not in STRATEGIES:
            raise ValueError(f"ic must be one of {STRATEGIES}")
        if self.mmse_mode not in ("chip", "block"):
            raise ValueError("mmse_mode must be 'chip' or 'block'")
        if self.n_re % self.coherence_re:
            raise ValueError(f"coherence_re={self.coherence_re} must divide n_re={self.n_re}")
        if self.power_offsets_db is not None and len(self.power_offsets_db) != self.n_ue:
            raise ValueError("power_offsets_db needs one entry per UE")
        return self

    @property
    def tb_bits(self) -> int:
        return self.tbs_bits + CRC_WIDTH

    def receiver_config(self) -> OuterLoopConfig:
        params = {}
        if self.detector == "mmse":
            params["mode"] = self.mmse_mode
        elif self.detector == "epa":
            params["damping"] = self.epa_damping
        return OuterLoopConfig(self.ic, max(self.outer_iterations), self.detector, params, self.inner_iterations)


@dataclass(frozen=True)
class BlerRecord:
    scheme: str
    detector: str
    ic: str
    ol: int
    snr_db: float
    n_blocks: int
    block_errors: int
    bler: float
    mean_ol_used: float
    op_count_mean: float
    wall_seed: int

    def sort_key(self):
        return (self.scheme, self.detector, self.ic, self.ol, self.snr_db)


# ------------------------------------------------------------------ setup

def build_layout(cfg: ExperimentConfig) -> SchemeLayout:
    params = {"order": cfg.order, "spreading_length": cfg.spreading_length}
    if cfg.codebook_file:
        params["codebook_file"] = cfg.codebook_file
    return build_scheme(cfg.scheme, cfg.n_ue, cfg.n_re, **params)


def build_code(cfg: ExperimentConfig, layout: SchemeLayout) -> CodeConfig:
    """LDPC code spanning exactly one UE's coded bits on the layout."""
    n = layout.coded_bits_per_layer
    k = cfg.code_info_bits or cfg.tb_bits
    if k < cfg.tb_bits:
        raise ConfigurationError(f"code_info_bits={k} cannot carry {cfg.tb_bits} payload+CRC bits")
    if k >= n:
        raise ConfigurationError(f"{k} info bits do not fit the {n} coded bits a UE gets on this layout")
    try:
        code = make_ldpc(n, k, bp_iterations=cfg.bp_iterations)
    except ContractError as exc:
        raise ConfigurationError(str(exc)) from None
    return code.with_transport_block(cfg.tb_bits)


# ------------------------------------------------------------------ trials

@dataclass(frozen=True)
class TrialOutcome:
    errors: np.ndarray  # per requested OL: UEs in error
    ol_used: np.ndarray
    ops: np.ndarray


def run_trial(cfg: ExperimentConfig, layout: SchemeLayout, code: CodeConfig,
              snr_index: int, trial_index: int) -> TrialOutcome:
    """One transmission and reception, scored at every requested outer-iteration count.

    The random stream depends only on ``(master_seed, snr_index, trial_index)``.
    """
    rng = np.random.default_rng([cfg.master_seed, snr_index, trial_index])
    payloads = rng.integers(0, 2, (cfg.n_ue, code.payload_bits), dtype=np.uint8)
    tx = np.stack([map_bits(j, encode_transport(payloads[j], code), layout) for j in range(cfg.n_ue)])
    ch = generate_channel(layout, cfg.n_rx, cfg.coherence_re, rng)
    snr = np.full(cfg.n_ue, cfg.snr_db[snr_index])
    if cfg.power_offsets_db is not None:
        snr = snr + np.asarray(cfg.power_offsets_db)
    grid = apply_channel(tx, ch, snr, rng)
    res = run_receiver(grid, layout, cfg.receiver_config(), code)
    last = len(res.payload_snapshots) - 1
    errors, used, ops = [], [], []
    for ol in cfg.outer_iterations:
        t = min(ol, last)
        errors.append(int(np.sum(np.any(res.payload_snapshots[t] != payloads, axis=1))))
        used.append(t)
        ops.append(res.op_snapshots[t])
    return TrialOutcome(np.array(errors), np.array(used), np.array(ops))


def run_sweep(cfg: ExperimentConfig, trial_order: Iterable[int] | None = None,
              progress=None) -> list[BlerRecord]:
    """Run ``n_blocks`` trials per SNR and return one record per (OL, SNR) pair.

    ``trial_order`` permutes the execution order of trial indices; results do
    not depend on it.
    """
    layout = build_layout(cfg)
    code = build_code(cfg, layout)
    cfg.receiver_config()
    order = list(range(cfg.n_blocks)) if trial_order is None else list(trial_order)
    if sorted(order) != list(range(cfg.n_blocks)):
        raise ValueError("trial_order must be a permutation of range(n_blocks)")
    records = []
    n_ol = len(cfg.outer_iterations)
    for si, snr in enumerate(cfg.snr_db):
        errors = np.zeros(n_ol, dtype=np.int64)
        used = np.zeros(n_ol, dtype=np.int64)
        ops = np.zeros(n_ol, dtype=np.int64)
        for t in order:
            out = run_trial(cfg, layout, code, si, t)
            errors += out.errors
            used += out.ol_used
            ops += out.ops
        for i, ol in enumerate(cfg.outer_iterations):
            records.append(BlerRecord(
                cfg.scheme, cfg.detector, cfg.ic, int(ol), float(snr), cfg.n_blocks, int(errors[i]),
                errors[i] / (cfg.n_blocks * cfg.n_ue), used[i] / cfg.n_blocks, ops[i] / cfg.n_blocks,
                cfg.master_seed))
        log.info("%s snr=%g done: %s", cfg.name, snr, errors.tolist())
        if progress is not None:
            progress(cfg, snr, errors)
    return sorted(records, key=BlerRecord.sort_key)


# --------------------------------------------------------------------- CSV

_FIELDS = [f.name for f in fields(BlerRecord)]


def _fmt(value) -> str:
    if isinstance(value, float):
        return format(value, ".6g")
    return str(value)


def format_csv(records, comments: Iterable[str] = ()) -> str:
    buf = io.StringIO()
    for c in comments:
        buf.write(f"# {c}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_FIELDS)
    for rec in sorted(records, key=BlerRecord.sort_key):
        writer.writerow([_fmt(v) for v in astuple(rec)])
    return buf.getvalue()


def emit_csv(records, destination, comments: Iterable[str] = ()) -> None:
    """Write records (header first, fixed row order) to ``destination``.

    ``comments`` become leading ``#`` lines.  Raises ``OSError`` naming the
    path when it cannot be written.
    """
    text = format_csv(records, comments)
    path = Path(destination)
    try:
        path.write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def read_csv(source) -> list[BlerRecord]:
    lines = [ln for ln in Path(source).read_text().splitlines() if not ln.startswith("#")]
    rows = list(csv.DictReader(lines))
    out = []
    for row in rows:
        vals = []
        for f in fields(BlerRecord):
            raw = row[f.name]
            vals.append(raw if f.type == "str" else (int(raw) if f.type == "int" else float(raw)))
        out.append(BlerRecord(*vals))
    return out


# ------------------------------------------------------------- config files

def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key] = value
    return values


def make_config(values: dict) -> ExperimentConfig:
    cleaned = {k: (None if v in ("", "none", "None") else v) for k, v in values.items()}
    try:
        return ExperimentConfig(**cleaned)
    except ValidationError as exc:
        raise ConfigurationError(str(exc)) from None


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    path = Path(path)
    text = path.read_text()  # OSError propagates with the path
    values = parse_config_text(text, str(path))
    values.update(overrides or {})
    return make_config(values)


def dump_config(cfg: ExperimentConfig) -> str:
    lines = []
    for key, value in cfg.model_dump().items():
        if value is None:
            continue
        if isinstance(value, (tuple, list)):
            value = ", ".join(_fmt(v) for v in value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


# ------------------------------------------------------------------- stats

def wilson_interval(errors: int, trials: int, alpha: float = 0.05) -> tuple[float, float]:
    from statsmodels.stats.proportion import proportion_confint

    lo, hi = proportion_confint(errors, trials, alpha=alpha, method="wilson")
    return float(lo), float(hi)


def snr_at_bler(snrs, blers, target: float = 0.1) -> float:
    """SNR where the BLER curve crosses ``target`` (log-BLER linear interpolation).

    Returns NaN when the sweep never brackets the target.
    """
    pts = sorted(zip(snrs, blers))
    for (s0, b0), (s1, b1) in zip(pts, pts[1:]):
        if b0 >= target >= b1 and b0 > b1:
            l0 = np.log(max(b0, 1e-12))
            l1 = np.log(max(b1, 1e-12))
            return float(s0 + (np.log(target) - l0) / (l1 - l0) * (s1 - s0))
    return float("nan")
