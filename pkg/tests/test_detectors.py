import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nomarx.channel import ChannelRealization, apply_channel
from nomarx.detectors import (BRUTE_FORCE_LIMIT, ComplexityGuardError, DetectorInput, brute_force_oracle, detect,
                              epa_detect, ese_detect, mmse_detect, mpa_detect)
from nomarx.messages import V_MIN, ContractError
from nomarx.transmitter import ConfigurationError, build_scheme, layout_from_codebook, map_bits

from instances import block_gains, detector_input, manual_grid, random_tree_layout, transmit
from oracles import exact_bit_llrs, scalar_posterior_mean

ALL = ["mpa", "epa", "ese", "mmse", "brute"]


def oracle_posteriors(inp):
    """Exact posterior LLRs block by block from the enumeration oracle."""
    lay = inp.layout
    g, y = block_gains(inp)
    nb = lay.bits_per_block
    keep = ~inp.cancelled
    out = []
    for b in range(lay.n_blocks):
        priors = inp.prior_llrs[keep][:, b * nb:(b + 1) * nb]
        out.append(exact_bit_llrs(y[b], g[keep][:, b], lay.alphabets[keep], inp.grid.noise_var, priors))
    return np.concatenate(out, axis=1)


# ------------------------------------------------------------------ MPA

def test_mpa_single_layer_noiseless(rng):
    layout = build_scheme("cb_ofdma", 1, 1)
    grid, bits, _ = transmit(layout, rng, snr_db=10.0, noise_var=0.0)
    out = mpa_detect(DetectorInput(grid, layout))
    llr = out.llrs(0)
    np.testing.assert_array_equal(llr < 0, bits[0].astype(bool))
    assert np.abs(llr).min() >= 15


def test_mpa_two_layers_two_res_one_iteration(rng):
    # each RE is its own block: one FN per block, exact after a single round
    layout = build_scheme("cb_ofdma", 2, 2)
    for _ in range(5):
        inp, _ = detector_input(layout, rng, n_rx=2, snr_db=4.0, prior_scale=1.0)
        np.testing.assert_allclose(mpa_detect(inp).posterior_llrs, oracle_posteriors(inp), atol=1e-9)


def test_mpa_path_graph_needs_its_diameter(rng):
    # layer 0 spans both REs, layer 1 only the second: evidence from RE 0 reaches layer 1 in round 2
    qpsk = build_scheme("cb_ofdma", 1, 1).base_alphabet
    table = np.zeros((2, 4, 2), complex)
    table[0] = np.stack([qpsk, qpsk * 1j], axis=1)
    table[1, :, 1] = qpsk
    layout = layout_from_codebook("scma", 2, table)
    for _ in range(5):
        grid, bits, _ = transmit(layout, rng, n_rx=2, snr_db=4.0)
        inp = DetectorInput(grid, layout, rng.normal(0, 1, bits.shape), inner_iterations=2)
        out = mpa_detect(inp)
        np.testing.assert_allclose(out.posterior_llrs, oracle_posteriors(inp), atol=1e-9)
        # extra rounds on a tree are a fixed point
        more = mpa_detect(DetectorInput(grid, layout, inp.prior_llrs, inner_iterations=6))
        np.testing.assert_allclose(more.posterior_llrs, out.posterior_llrs, atol=1e-9)


@settings(max_examples=30)
@given(seed=st.integers(0, 2**32 - 1))
def test_mpa_exact_on_random_trees(seed):
    rng = np.random.default_rng(seed)
    layout = random_tree_layout(rng)
    inp, _ = detector_input(layout, rng, n_rx=int(rng.integers(1, 3)), snr_db=rng.uniform(-5, 15),
                            prior_scale=2.0, inner=2 * layout.n_layers + 1)
    np.testing.assert_allclose(mpa_detect(inp).posterior_llrs, oracle_posteriors(inp), atol=1e-6)
    np.testing.assert_allclose(brute_force_oracle(inp).posterior_llrs, oracle_posteriors(inp), atol=1e-6)


def test_mpa_scma_op_count(rng):
    layout = build_scheme("scma", 6, 8)
    inp, _ = detector_input(layout, rng, n_rx=2, inner=3)
    m_p = 4
    # 3 inner iterations x 8 FNs x m_p^3
    assert mpa_detect(inp).op_count == 3 * 8 * m_p**3


def test_mpa_fn_cost_ratio_is_m_p(rng):
    counts = {}
    for d_f in (2, 3):
        inp, _ = detector_input(build_scheme("cb_ofdma", d_f, 6), rng, inner=2)
        counts[d_f] = mpa_detect(inp).op_breakdown["fn"]
    assert counts[3] == 4 * counts[2]


def test_mpa_complexity_guard(rng):
    inp, _ = detector_input(build_scheme("cb_ofdma", 9, 2), rng)
    with pytest.raises(ComplexityGuardError, match="RE 0"):
        mpa_detect(inp)


def test_brute_force_bound(rng):
    inp, _ = detector_input(build_scheme("cb_ofdma", 11, 1), rng)
    assert 4**11 > BRUTE_FORCE_LIMIT
    with pytest.raises(ComplexityGuardError):
        brute_force_oracle(inp)


def test_single_layer_mpa_equals_brute(rng):
    inp, _ = detector_input(build_scheme("nls", 1, 8), rng, n_rx=2, prior_scale=1.0)
    np.testing.assert_allclose(mpa_detect(inp).extrinsic_llrs, brute_force_oracle(inp).extrinsic_llrs, atol=1e-12)


# ------------------------------------------------------------------ EPA

def test_epa_single_symbol_posterior_mean(rng):
    layout = build_scheme("cb_ofdma", 1, 20)
    inp, _ = detector_input(layout, rng, snr_db=3.0)
    out = epa_detect(inp)
    means = out.symbol_posteriors[0] @ layout.base_alphabet
    h = inp.grid.gains[0, :, 0]
    y = inp.grid.y[:, 0]
    expected = [scalar_posterior_mean(y[k], h[k], layout.base_alphabet, 1.0) for k in range(20)]
    np.testing.assert_allclose(means, expected, atol=1e-10)


@pytest.mark.parametrize("name", ALL)
def test_all_cancelled_is_empty(name, rng):
    layout = build_scheme("cb_ofdma", 3, 4)
    grid, _, _ = transmit(layout, rng)
    out = detect(name, DetectorInput(grid, layout, cancelled=np.ones(3, bool)))
    assert out.extrinsic_llrs.shape == (0, 8)
    assert out.op_count == 0


def test_epa_signs_agree_with_mpa_at_high_snr(rng):
    agree = 0
    qpsk = build_scheme("cb_ofdma", 1, 1).base_alphabet
    table = np.zeros((2, 4, 2), complex)
    table[0] = np.stack([qpsk, qpsk * 1j], axis=1)
    table[1, :, 1] = qpsk
    layout = layout_from_codebook("scma", 2, table)
    trials = 1000
    for _ in range(trials):
        inp, _ = detector_input(layout, rng, n_rx=1, snr_db=20.0, inner=3)
        a = np.sign(epa_detect(inp).extrinsic_llrs)
        b = np.sign(mpa_detect(inp).extrinsic_llrs)
        agree += np.array_equal(a, b)
    assert agree >= 0.99 * trials


def test_epa_op_count_affine_in_order(rng):
    ops = {}
    for order in (4, 16, 64):
        layout = build_scheme("scma", 6, 8, order=order)
        inp, _ = detector_input(layout, rng, n_rx=2, inner=3)
        ops[order] = epa_detect(inp).op_count
    assert (ops[16] - ops[4]) * 4 == ops[64] - ops[16]


def test_epa_known_interference_gives_conditional_mean(rng):
    # all but layer 0 have near-certain priors: EPA reduces to the scalar posterior of layer 0
    layout = build_scheme("cb_ofdma", 3, 6)
    grid, bits, tx = transmit(layout, rng, snr_db=4.0)
    priors = np.where(bits == 0, 50.0, -50.0)
    priors[0] = 0.0
    out = epa_detect(DetectorInput(grid, layout, priors, inner_iterations=3))
    g = grid.gains[:, :, 0]
    resid = grid.y[:, 0] - np.sum(g[1:] * tx[1:], axis=0)
    expected = [scalar_posterior_mean(resid[k], g[0, k], layout.base_alphabet, 1.0) for k in range(6)]
    np.testing.assert_allclose(out.symbol_posteriors[0] @ layout.base_alphabet, expected, atol=1e-9)


# ------------------------------------------------------------------ ESE

@pytest.mark.parametrize("kind", ["cb_ofdma", "nls"])
def test_ese_single_layer_is_exact(kind, rng):
    inp, _ = detector_input(build_scheme(kind, 1, 8), rng, n_rx=2, prior_scale=1.0)
    np.testing.assert_allclose(ese_detect(inp).posterior_llrs, oracle_posteriors(inp), atol=1e-9)


def test_ese_orthogonal_channels(rng):
    layout = build_scheme("cb_ofdma", 2, 5)
    h = np.zeros((2, 5, 2), complex)
    h[0, :, 0] = rng.standard_normal(5) + 1j * rng.standard_normal(5)
    h[1, :, 1] = rng.standard_normal(5) + 1j * rng.standard_normal(5)
    bits = rng.integers(0, 2, (2, 10))
    tx = np.stack([map_bits(j, bits[j], layout) for j in range(2)])
    grid = apply_channel(tx, ChannelRealization(h, 1), 5.0, rng)
    out = ese_detect(DetectorInput(grid, layout))
    a = np.sqrt(10 ** 0.5)
    for j in range(2):
        single = []
        for k in range(5):
            single.append(exact_bit_llrs(grid.y[k:k + 1, j:j + 1], a * h[j:j + 1, k:k + 1, j:j + 1],
                                         layout.alphabets[j:j + 1], 1.0))
        np.testing.assert_allclose(out.llrs(j), np.concatenate(single, axis=1)[0], atol=1e-9)


def test_ese_certain_priors_equal_hard_cancellation(rng):
    layout = build_scheme("cb_ofdma", 3, 8)
    grid, bits, tx = transmit(layout, rng, n_rx=2, snr_db=6.0)
    priors = np.where(bits == 0, 50.0, -50.0)
    priors[0] = 0.0
    soft = ese_detect(DetectorInput(grid, layout, priors))
    hard_grid = grid.subtract(1, tx[1]).subtract(2, tx[2])
    hard = ese_detect(DetectorInput(hard_grid, layout, cancelled=[False, True, True]))
    # moment matching floors variances at V_MIN, so the "known" layers keep a 1e-8 residual
    assert V_MIN == 1e-8
    np.testing.assert_allclose(soft.llrs(0), hard.llrs(0), rtol=1e-6, atol=1e-6)


# ------------------------------------------------------------------ MMSE

def test_mmse_scalar_wiener(rng):
    layout = build_scheme("cb_ofdma", 1, 10)
    inp, _ = detector_input(layout, rng, n_rx=1, snr_db=2.0)
    out = mmse_detect(inp, "chip")
    np.testing.assert_allclose(out.posterior_llrs, oracle_posteriors(inp), atol=1e-9)
    # posterior mean of the Wiener filter with unit prior variance
    h = inp.grid.gains[0, :, 0]
    w = h.conj() / (np.abs(h) ** 2 + 1.0)
    from nomarx.detectors import _lmmse_extrinsic
    ext = _lmmse_extrinsic(inp.grid.gains, inp.grid.y, np.zeros((1, 10)), np.ones((1, 10)), 1.0)
    # extrinsic = posterior / prior: with a unit zero-mean prior this undoes the shrinkage of w
    post_mean = w * inp.grid.y[:, 0]
    post_var = 1 - np.abs(h) ** 2 / (np.abs(h) ** 2 + 1)
    np.testing.assert_allclose(ext.variance[0], 1 / (1 / post_var - 1), rtol=1e-10)
    np.testing.assert_allclose(ext.mean[0], ext.variance[0] * post_mean / post_var, rtol=1e-10)


def test_mmse_block_equals_chip_for_unit_blocks(rng):
    inp, _ = detector_input(build_scheme("cb_ofdma", 4, 12), rng, n_rx=2, prior_scale=2.0)
    a, b = mmse_detect(inp, "chip"), mmse_detect(inp, "block")
    np.testing.assert_allclose(a.extrinsic_llrs, b.extrinsic_llrs, atol=1e-10)


def test_mmse_inversion_ratio_is_l_squared(rng):
    inp, _ = detector_input(build_scheme("nls", 6, 16, spreading_length=4), rng, n_rx=2)
    chip = mmse_detect(inp, "chip").op_breakdown["inversion"]
    block = mmse_detect(inp, "block").op_breakdown["inversion"]
    assert chip == 16 * 2**3
    assert block == 4 * 8**3
    assert block == 16 * chip


def test_mmse_block_rejects_generic_codebook(rng):
    inp, _ = detector_input(random_tree_layout(rng), rng)
    with pytest.raises(ConfigurationError):
        mmse_detect(inp, "block")


def test_mmse_singular_covariance_is_regularised(rng):
    layout = build_scheme("cb_ofdma", 3, 4)
    grid, _, _ = transmit(layout, rng, noise_var=0.0)
    inp = DetectorInput(grid, layout, np.full((3, 8), 50.0))
    for mode in ("chip", "block"):
        assert np.all(np.isfinite(mmse_detect(inp, mode).extrinsic_llrs))
    assert np.all(np.isfinite(epa_detect(inp).extrinsic_llrs))


# ------------------------------------------------------------------ shared properties

@pytest.mark.parametrize("name", ALL)
def test_extrinsic_plus_prior_is_posterior(name, rng):
    inp, _ = detector_input(build_scheme("scma", 4, 8), rng, n_rx=2, prior_scale=3.0, inner=2)
    out = detect(name, inp)
    np.testing.assert_array_equal(out.extrinsic_llrs + inp.prior_llrs, out.posterior_llrs)


@pytest.mark.parametrize("name", ALL)
def test_cancelled_layer_equals_zero_channel(name, rng):
    layout = build_scheme("scma", 4, 8)
    inp, _ = detector_input(layout, rng, n_rx=2, prior_scale=1.0, inner=3)
    grid = inp.grid
    cancelled = detect(name, DetectorInput(grid, layout, inp.prior_llrs, cancelled=[False, False, True, False],
                                           inner_iterations=3))
    h = grid.channel.h.copy()
    h[2] = 0
    zero = manual_grid(grid.y, h, grid.noise_var, grid.amplitudes)
    full = detect(name, DetectorInput(zero, layout, inp.prior_llrs, inner_iterations=3))
    for j in (0, 1, 3):
        np.testing.assert_allclose(cancelled.llrs(j), full.llrs(j), atol=1e-9)


@pytest.mark.parametrize("name", ALL)
def test_permutation_equivariance(name, rng):
    layout = build_scheme("scma", 4, 8)
    inp, _ = detector_input(layout, rng, n_rx=2, prior_scale=1.0, inner=2)
    perm = np.array([2, 0, 3, 1])
    playout = layout_from_codebook("scma", 8, layout.alphabets[perm])
    g = inp.grid
    pgrid = manual_grid(g.y, g.channel.h[perm], g.noise_var, g.amplitudes[perm])
    a = detect(name, inp)
    b = detect(name, DetectorInput(pgrid, playout, inp.prior_llrs[perm], inner_iterations=2))
    np.testing.assert_allclose(b.extrinsic_llrs, a.extrinsic_llrs[perm], atol=1e-9)


def test_contract_errors(rng):
    layout = build_scheme("cb_ofdma", 2, 4)
    grid, _, _ = transmit(layout, rng)
    with pytest.raises(ContractError):
        DetectorInput(grid, layout, np.zeros((2, 3)))
    with pytest.raises(ContractError):
        DetectorInput(grid, build_scheme("cb_ofdma", 3, 4))
    with pytest.raises(ConfigurationError):
        detect("zf", DetectorInput(grid, layout))
