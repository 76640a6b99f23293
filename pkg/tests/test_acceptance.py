"""Acceptance criteria at full desk scale (2000 blocks per point).

The Monte Carlo curves take roughly half an hour on one core.  Curves are
computed once per session and shared between criteria.  Each criterion adds
one PASS/FAIL line to the "acceptance criteria" section of the summary.
"""

import functools
import math
import time

import numpy as np
import pytest

from nomarx.cli import main
from nomarx.coding import crc16, crc_attach, crc_check, default_code, encode_transport, ldpc_decode
from nomarx.detectors import DetectorInput, brute_force_oracle, mmse_detect, mpa_detect
from nomarx.harness import format_csv, read_csv, run_sweep, snr_at_bler, wilson_interval
from nomarx.presets import PRESETS, get_preset
from nomarx.transmitter import build_scheme

from instances import detector_input, random_tree_layout
from oracles import crc16_long_division

pytestmark = pytest.mark.acceptance

TARGET = 0.1
_TIMES: dict[str, float] = {}


def config(name):
    for preset in PRESETS.values():
        for cfg in preset.configs:
            if cfg.name == name:
                return cfg
    raise KeyError(name)


@functools.cache
def curve(name):
    cfg = config(name)
    start = time.perf_counter()
    records = run_sweep(cfg)
    _TIMES[name] = time.perf_counter() - start
    return cfg, records


def at(records, ol):
    """Records of one OL, in SNR order."""
    return [r for r in records if r.ol == ol]


def interval(rec, n_ue):
    return wilson_interval(rec.block_errors, rec.n_blocks * n_ue)


def crossing(records, ol):
    rows = at(records, ol)
    return snr_at_bler([r.snr_db for r in rows], [r.bler for r in rows], TARGET)


def test_criterion_1_mpa_oracle_equivalence(acceptance_report):
    rng = np.random.default_rng(2018)
    start = time.perf_counter()
    worst = 0.0
    sizes = []
    for _ in range(50):
        layout = random_tree_layout(rng, max_layers=3, max_re=4, order=4)
        inp, _ = detector_input(layout, rng, n_rx=int(rng.integers(1, 3)), snr_db=rng.uniform(-5, 20),
                                prior_scale=2.0, inner=2 * layout.n_layers + 1)
        sizes.append((layout.n_layers, layout.block_size))
        delta = np.abs(mpa_detect(inp).extrinsic_llrs - brute_force_oracle(inp).extrinsic_llrs).max()
        worst = max(worst, float(delta))
    elapsed = time.perf_counter() - start
    ok = worst < 1e-6 and elapsed < 10
    acceptance_report(1, ok, f"50 tree instances, max |dLLR| = {worst:.2e} (< 1e-6), {elapsed:.2f} s (< 10 s)")
    assert max(s[0] for s in sizes) == 3 and max(s[1] for s in sizes) == 4
    assert ok


def test_criterion_2_epa_close_to_mpa(acceptance_report):
    _, epa = curve("scma_epa_hybrid")
    _, mpa = curve("scma_mpa_hybrid")
    runtime = _TIMES["scma_epa_hybrid"] + _TIMES["scma_mpa_hybrid"]
    s_epa, s_mpa = crossing(epa, 3), crossing(mpa, 3)
    gap = abs(s_epa - s_mpa)
    ok = gap <= 0.7 and runtime < 600
    acceptance_report(2, ok, f"SCMA OL3 SNR@0.1: EPA {s_epa:.3f} dB, MPA {s_mpa:.3f} dB, gap {gap:.3f} dB "
                             f"(<= 0.7), {runtime / 60:.1f} min (< 10)")
    assert ok


def test_criterion_3_outer_loop_convergence(acceptance_report):
    cfg, recs = curve("cb_mmse_hybrid")
    mid = cfg.snr_db[len(cfg.snr_db) // 2]
    point = {r.ol: r for r in recs if r.snr_db == mid}
    lo0, _ = interval(point[0], cfg.n_ue)
    _, hi3 = interval(point[3], cfg.n_ue)
    separated = point[3].bler < point[0].bler and hi3 < lo0
    monotone = all(point[k + 1].bler <= point[k].bler * 1.1 for k in range(3))
    ok = separated and monotone
    trail = ", ".join(f"OL{k} {point[k].bler:.4f}" for k in range(4))
    acceptance_report(3, ok, f"CB-OFDMA MMSE+hybrid at {mid:g} dB: {trail}; OL3 upper {hi3:.4f} < OL0 lower {lo0:.4f}")
    assert ok


def test_criterion_4_ic_ranking(acceptance_report):
    names = {"hybrid": "cb_mmse_hybrid_pic", "soft": "cb_mmse_soft_pic", "hard": "cb_mmse_hard_sic"}
    curves = {k: {r.snr_db: r for r in at(curve(v)[1], 3)} for k, v in names.items()}
    n_ue = config("cb_mmse_hybrid_pic").n_ue
    checked, strict, ok = [], False, True
    for snr in sorted(curves["hybrid"]):
        recs = {k: c[snr] for k, c in curves.items()}
        if not any(0.01 <= r.bler <= 0.5 for r in recs.values()):
            continue
        ci = {k: interval(r, n_ue) for k, r in recs.items()}
        # a <= b "up to confidence overlap": violated only if a's interval sits wholly above b's
        ok &= not ci["hybrid"][0] > ci["soft"][1]
        ok &= not ci["soft"][0] > ci["hard"][1]
        strict |= ci["hybrid"][1] < ci["hard"][0]
        checked.append(f"{snr:g} dB H/S/SIC {recs['hybrid'].bler:.3f}/{recs['soft'].bler:.3f}/{recs['hard'].bler:.3f}")
    ok = ok and strict and bool(checked)
    acceptance_report(4, ok, "OL3 " + "; ".join(checked) + f"; hybrid separated from hard SIC: {strict}")
    assert ok


def test_criterion_5_detector_convergence(acceptance_report):
    s = {}
    note = {}
    for det in ("epa", "mmse", "ese"):
        cfg, recs = curve(f"cb_{det}_hybrid")
        s[det] = crossing(recs, 2)
        note[det] = f"{s[det]:.2f}"
        if math.isnan(s[det]) and min(r.bler for r in at(recs, 2)) > TARGET:
            # never reaches the target on the sweep: the crossing lies beyond the top SNR
            s[det] = max(cfg.snr_db)
            note[det] = f"> {s[det]:g}"
    ok = s["epa"] + 0.3 <= s["mmse"] and s["epa"] + 0.3 <= s["ese"]
    acceptance_report(5, ok, f"CB-OFDMA OL2 SNR@0.1: EPA {note['epa']} dB, MMSE {note['mmse']} dB, "
                             f"ESE {note['ese']} dB (EPA ahead by >= 0.3)")
    assert not math.isnan(s["epa"])
    assert ok


def test_criterion_6_scheme_comparison(acceptance_report, tmp_path):
    preset = get_preset("fig6_scheme_comparison")
    _, scma = curve("scma_epa_hybrid")
    _, cb = curve("wide_cb_epa_hybrid")
    out = tmp_path / "fig6.csv"
    out.write_text(format_csv(scma + cb, preset.comments))
    header = [ln for ln in out.read_text().splitlines() if ln.startswith("#")]
    assert any("codebook" in ln for ln in header)
    s_scma, s_cb = crossing(scma, 3), crossing(cb, 3)
    ok = s_scma < s_cb
    # SNR is per occupied RE: an SCMA layer sits on half the REs, so it spends half a CB-OFDMA UE's energy
    duty = config("scma_epa_hybrid").n_re / (2 * config("wide_cb_epa_hybrid").n_re)
    equal_energy = s_scma + 10 * np.log10(duty)
    acceptance_report(6, ok, f"6 UEs OL3 SNR@0.1: SCMA {s_scma:.2f} dB vs CB-OFDMA {s_cb:.2f} dB (SCMA lower "
                             f"required); at equal per-UE energy SCMA would sit at {equal_energy:.2f} dB")
    assert ok


def test_criterion_7_complexity_counters(acceptance_report):
    rng = np.random.default_rng(7)
    fn = {}
    for d_f in (2, 3):
        inp, _ = detector_input(build_scheme("cb_ofdma", d_f, 12), rng, n_rx=2, inner=5)
        fn[d_f] = mpa_detect(inp).op_breakdown["fn"]
    m_p = 4
    scma_inp, _ = detector_input(build_scheme("scma", 6, 8), rng, n_rx=2, inner=1)
    per_fn = mpa_detect(scma_inp).op_count / 8
    nls = build_scheme("nls", 6, 32, spreading_length=4)
    inp, _ = detector_input(nls, rng, n_rx=2)
    chip = mmse_detect(inp, "chip").op_breakdown["inversion"]
    block = mmse_detect(inp, "block").op_breakdown["inversion"]
    ok = (fn[3] == m_p * fn[2] and per_fn == m_p**3 and chip == 32 * 2**3 and block == 8 * 8**3
          and block == 16 * chip)
    acceptance_report(7, ok, f"MPA fn ratio d_f 3/2 = {fn[3] / fn[2]:g} (m_p = 4), SCMA per-FN {per_fn:g} = 4^3; "
                             f"MMSE inversion block/chip = {block / chip:g} (L^2 = 16)")
    assert ok


def test_criterion_8_coding_suite(acceptance_report):
    rng = np.random.default_rng(8)
    code = default_code()
    payloads = rng.integers(0, 2, (100, code.payload_bits), dtype=np.uint8)
    words = np.stack([encode_transport(p, code) for p in payloads])
    llrs = 2 * ((1 - 2.0 * words) + rng.normal(0, 0.6, words.shape)) / 0.36
    res = ldpc_decode(llrs, code)
    round_trip = bool(np.array_equal(res.hard_bits[:, : code.payload_bits], payloads) and res.crc_ok.all())

    payload = rng.integers(0, 2, 64, dtype=np.uint8)
    word = crc_attach(payload)
    singles = 0
    for i in range(word.size):
        flipped = word.copy()
        flipped[i] ^= 1
        singles += not crc_check(flipped)
    doubles = 0
    for _ in range(10_000):
        i, j = rng.choice(word.size, 2, replace=False)
        flipped = word.copy()
        flipped[[i, j]] ^= 1
        doubles += not crc_check(flipped)
    msg = np.unpackbits(np.frombuffer(b"123456789", np.uint8))
    check = crc16(msg)
    ok = (round_trip and singles == word.size and doubles == 10_000 and check == 0x29B1
          and crc16_long_division(msg) == check)
    acceptance_report(8, ok, f"LDPC 100/100 payloads, single flips {singles}/{word.size}, double flips "
                             f"{doubles}/10000, check value {check:#06x}")
    assert ok


def test_criterion_9_determinism(acceptance_report, tmp_path):
    cfg_path = tmp_path / "det.cfg"
    cfg_path.write_text("scheme = scma\nn_ue = 6\nn_re = 96\ntbs_bits = 24\ndetector = epa\n"
                        "snr_db = -3, 0\nn_blocks = 40\nmaster_seed = 11\n")
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["run", "--config", str(cfg_path), "--out", str(a)]) == 0
    assert main(["run", "--config", str(cfg_path), "--out", str(b)]) == 0
    identical = a.read_bytes() == b.read_bytes()
    cfg = config("cb_mmse_hybrid").model_copy(update={"n_blocks": 40})
    straight = run_sweep(cfg)
    shuffled = run_sweep(cfg, trial_order=np.random.default_rng(9).permutation(40))
    ok = identical and straight == shuffled and read_csv(a) == read_csv(b)
    acceptance_report(9, ok, f"byte-identical CSV: {identical}; shuffled trial order leaves "
                             f"{len(straight)} records unchanged: {straight == shuffled}")
    assert ok
