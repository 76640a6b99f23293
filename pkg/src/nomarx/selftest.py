"""Built-in oracle checks behind ``nomarx selftest``.

Each check compares the production code against an independent, slower
reference (bitwise CRC division, exhaustive enumeration, closed forms).
The full suite with property tests lives in the repository's ``tests/``.
"""

from __future__ import annotations

import time

import numpy as np

from .channel import apply_channel, generate_channel
from .coding import crc16, ldpc_decode, ldpc_encode, make_ldpc, syndrome
from .detectors import DetectorInput, brute_force_oracle, epa_detect, mmse_detect, mpa_detect
from .harness import ExperimentConfig, run_sweep
from .transmitter import build_scheme, hard_demap, map_bits


def _crc_long_division(bits) -> int:
    reg = 0xFFFF
    for b in bits:
        top = (reg >> 15) & 1
        reg = (reg << 1) & 0xFFFF
        if top ^ int(b):
            reg ^= 0x1021
    return reg


def check_crc() -> str:
    msg = np.unpackbits(np.frombuffer(b"123456789", np.uint8))
    assert crc16(msg) == 0x29B1, hex(crc16(msg))
    rng = np.random.default_rng(0)
    for n in (1, 7, 16, 61, 200):
        bits = rng.integers(0, 2, n)
        assert crc16(bits) == _crc_long_division(bits)
    return "check value 0x29B1, 5 random lengths match long division"


def check_ldpc() -> str:
    code = make_ldpc(192, 64)
    rng = np.random.default_rng(1)
    for _ in range(10):
        word = ldpc_encode(rng.integers(0, 2, code.info_bits), code)
        assert not syndrome(word, code).any()
        res = ldpc_decode(np.where(word == 0, 4.0, -4.0), code)
        assert np.array_equal(res.hard_bits, word) and res.syndrome_ok
    return "10 codewords: zero syndrome, noiseless decode"


def check_mapping() -> str:
    rng = np.random.default_rng(2)
    for kind, j, k in (("cb_ofdma", 3, 8), ("nls", 4, 8), ("scma", 6, 8)):
        layout = build_scheme(kind, j, k)
        for layer in range(j):
            bits = rng.integers(0, 2, layout.coded_bits_per_layer)
            assert np.array_equal(hard_demap(map_bits(layer, bits, layout), layer, layout), bits)
    return "hard demap inverts map_bits for all three schemes"


def _instance(rng, kind, n_layers, n_re, snr_db=None, prior_scale=0.0):
    layout = build_scheme(kind, n_layers, n_re)
    ch = generate_channel(layout, int(rng.integers(1, 3)), 1, rng)
    bits = rng.integers(0, 2, (n_layers, layout.coded_bits_per_layer))
    tx = np.stack([map_bits(j, bits[j], layout) for j in range(n_layers)])
    snr = rng.uniform(-3, 12) if snr_db is None else snr_db
    grid = apply_channel(tx, ch, np.full(n_layers, snr), rng)
    priors = rng.normal(0, prior_scale, bits.shape) if prior_scale else None
    return grid, layout, priors


def check_mpa_oracle() -> str:
    rng = np.random.default_rng(3)
    worst = 0.0
    for t in range(10):
        grid, layout, priors = _instance(rng, "cb_ofdma", 1 + t % 3, 4, prior_scale=1.5)
        inp = DetectorInput(grid, layout, priors)
        delta = np.abs(mpa_detect(inp).extrinsic_llrs - brute_force_oracle(inp).extrinsic_llrs).max()
        worst = max(worst, float(delta))
    assert worst < 1e-6, worst
    return f"10 single-FN instances, max |dLLR| = {worst:.1e}"


def check_mmse_is_one_epa_round() -> str:
    rng = np.random.default_rng(4)
    grid, layout, priors = _instance(rng, "scma", 6, 8, snr_db=3.0, prior_scale=2.0)
    a = mmse_detect(DetectorInput(grid, layout, priors), "chip")
    b = epa_detect(DetectorInput(grid, layout, priors, inner_iterations=1))
    delta = float(np.abs(a.extrinsic_llrs - b.extrinsic_llrs).max())
    assert delta < 1e-9, delta
    return f"chip MMSE equals one EPA round, max |dLLR| = {delta:.1e}"


def check_noiseless_link() -> str:
    cfg = ExperimentConfig(n_ue=1, n_re=48, tbs_bits=24, snr_db=(60.0,), n_blocks=5, outer_iterations=(0,))
    rec = run_sweep(cfg)[0]
    assert rec.block_errors == 0, rec
    return "1 UE at 60 dB: 0 block errors in 5 trials"


CHECKS = [check_crc, check_ldpc, check_mapping, check_mpa_oracle, check_mmse_is_one_epa_round,
          check_noiseless_link]


def run_selftest(verbose: bool = True) -> bool:
    ok = True
    for check in CHECKS:
        name = check.__name__.removeprefix("check_")
        start = time.perf_counter()
        try:
            detail = check()
            status = "PASS"
        except AssertionError as exc:
            ok = False
            status, detail = "FAIL", f"assertion failed: {exc}"
        if verbose:
            print(f"{status} {name:<24} {detail} ({time.perf_counter() - start:.2f}s)")
    return ok
