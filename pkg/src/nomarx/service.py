"""HTTP front end over the simulator core.

Run with ``nomarx serve`` or ``uvicorn nomarx.service:app``.  Sweeps run
synchronously in the request (FastAPI executes sync endpoints in a worker
thread), so this is meant for a workstation or a small shared box, not for
untrusted traffic.
"""

from __future__ import annotations

from dataclasses import asdict
from typing import Optional

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel

from . import __version__
from .harness import SNR_COMMENT, ExperimentConfig, format_csv, run_sweep
from .messages import ContractError
from .presets import PRESETS
from .transmitter import ConfigurationError, build_scheme

app = FastAPI(title="nomarx", version=__version__)


class SweepRequest(BaseModel):
    config: ExperimentConfig


class Record(BaseModel):
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


class SweepResponse(BaseModel):
    name: str
    records: list[Record]
    csv: str


class PresetInfo(BaseModel):
    name: str
    description: str
    configs: list[ExperimentConfig]
    notes: list[str]


class CodebookInfo(BaseModel):
    scheme: str
    n_layers: int
    order: int
    block_size: int
    d_f: list[int]
    m_p: list[int]
    # alphabets[layer][symbol][re] as [re, im]
    alphabets: list[list[list[list[float]]]]


@app.get("/health")
def health():
    return {"status": "ok", "version": __version__}


@app.get("/presets", response_model=list[PresetInfo])
def presets():
    return [PresetInfo(name=p.name, description=p.description, configs=list(p.configs), notes=list(p.notes))
            for p in PRESETS.values()]


@app.post("/sweep", response_model=SweepResponse)
def sweep(req: SweepRequest):
    try:
        records = run_sweep(req.config)
    except (ConfigurationError, ContractError) as exc:
        raise HTTPException(status_code=400, detail=str(exc))
    return SweepResponse(name=req.config.name, records=[Record(**asdict(r)) for r in records],
                         csv=format_csv(records, [SNR_COMMENT]))


@app.get("/codebook/{scheme}", response_model=CodebookInfo)
def codebook(scheme: str, n_ue: int = 6, order: int = 4, spreading_length: Optional[int] = None):
    block = {"cb_ofdma": 1, "nls": spreading_length or 4, "scma": 4}.get(scheme)
    if block is None:
        raise HTTPException(status_code=404, detail=f"unknown scheme {scheme!r}")
    try:
        layout = build_scheme(scheme, n_ue, block, order=order, spreading_length=block)
    except ConfigurationError as exc:
        raise HTTPException(status_code=400, detail=str(exc))
    table = [[[[float(v.real), float(v.imag)] for v in sym] for sym in layer] for layer in layout.alphabets]
    return CodebookInfo(scheme=scheme, n_layers=layout.n_layers, order=layout.order,
                        block_size=layout.block_size, d_f=[int(v) for v in layout.d_f],
                        m_p=[int(v) for v in layout.m_p], alphabets=table)
