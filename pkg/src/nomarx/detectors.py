"""Soft-in soft-out multi-user detectors: MPA, EPA, ESE, MMSE and an exact oracle.

All detectors take per-layer prior bit LLRs (decoder feedback) and return
extrinsic bit LLRs, i.e. posterior minus prior.  Operation counters follow
fixed definitions so that they can be compared across detectors:

* MPA: ``fn`` adds ``prod(m_p)`` over the colliding layers for every FN
  update (one per RE per inner iteration).
* EPA: per inner iteration ``inversion`` adds ``n_rx**3`` per RE, ``filter``
  adds ``2 * n_rx**2`` per edge and ``vn`` adds ``2 * M`` per edge.
* MMSE: ``inversion`` adds ``D**3`` per inverted ``D x D`` covariance
  (``D = n_rx`` chip-wise, ``D = n_rx * L`` block-wise), ``filter`` adds
  ``2 * D**2`` per layer per inversion, ``demap`` adds ``M`` per observation.
* ESE: ``filter`` adds ``n_rx * d_f`` per edge, ``demap`` adds ``M`` per edge.

``op_count`` is the sum of a detector's terms.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from .channel import ReceivedGrid
from .messages import (V_MIN, ContractError, GaussianMessage, DiscretePrior, gaussian_divide,
                       llrs_to_logprobs, logprobs_to_llrs, logsumexp, moment_match_arrays)
from .transmitter import ConfigurationError, SchemeLayout

PRIOR_LLR_CLIP = 50.0
NOISE_FLOOR = 1e-12
MPA_DF_CAP = 8
EPA_DAMPING = 0.5
DIAGONAL_LOAD = 1e-10
COND_LIMIT = 1e12
BRUTE_FORCE_LIMIT = 1 << 20

__all__ = [
    "ComplexityGuardError",
    "DetectorInput",
    "DetectorOutput",
    "mpa_detect",
    "epa_detect",
    "ese_detect",
    "mmse_detect",
    "brute_force_oracle",
    "DETECTORS",
    "detect",
]


class ComplexityGuardError(RuntimeError):
    """A detector refused an instance that exceeds its complexity budget."""


@dataclass(frozen=True, eq=False)
class DetectorInput:
    """One detector call.

    ``prior_llrs`` holds one row of coded-bit LLRs per layer (``None`` for
    uniform priors); rows of cancelled layers are ignored.
    """

    grid: ReceivedGrid
    layout: SchemeLayout
    prior_llrs: np.ndarray | None = None
    cancelled: np.ndarray | None = None
    inner_iterations: int = 1

    def __post_init__(self):
        lay = self.layout
        if self.grid.n_re != lay.n_re or self.grid.channel.n_layers != lay.n_layers:
            raise ContractError("received grid does not match the layout")
        cancelled = np.zeros(lay.n_layers, bool) if self.cancelled is None else np.asarray(self.cancelled, bool)
        object.__setattr__(self, "cancelled", cancelled)
        if self.prior_llrs is None:
            llrs = np.zeros((lay.n_layers, lay.coded_bits_per_layer))
        else:
            llrs = np.asarray(self.prior_llrs, float)
            if llrs.shape != (lay.n_layers, lay.coded_bits_per_layer):
                raise ContractError(f"prior LLRs have shape {llrs.shape}, expected "
                                    f"{(lay.n_layers, lay.coded_bits_per_layer)}")
            llrs = np.clip(llrs, -PRIOR_LLR_CLIP, PRIOR_LLR_CLIP)
        object.__setattr__(self, "prior_llrs", llrs)

    @property
    def active(self) -> np.ndarray:
        return np.flatnonzero(~self.cancelled)

    def prior(self, layer: int, block: int) -> DiscretePrior:
        nb = self.layout.bits_per_block
        logp = llrs_to_logprobs(self.prior_llrs[layer, block * nb:(block + 1) * nb])
        probs = np.exp(logp)
        return DiscretePrior(self.layout.alphabets[layer], probs / probs.sum())


@dataclass(frozen=True, eq=False)
class DetectorOutput:
    """Extrinsic LLRs for the non-cancelled layers listed in ``layers``."""

    layers: np.ndarray
    extrinsic_llrs: np.ndarray
    posterior_llrs: np.ndarray
    op_count: int
    op_breakdown: dict = field(default_factory=dict)
    symbol_posteriors: np.ndarray | None = None

    def llrs(self, layer: int) -> np.ndarray:
        pos = np.flatnonzero(self.layers == layer)
        if pos.size == 0:
            raise KeyError(f"layer {layer} was not detected")
        return self.extrinsic_llrs[pos[0]]


# ----------------------------------------------------------------- helpers

class _Problem:
    """Active-layer views of a detector input, reshaped per block."""

    def __init__(self, inp: DetectorInput):
        lay = inp.layout
        self.inp = inp
        self.layout = lay
        self.act = inp.active
        self.nb = lay.n_blocks
        self.bsz = lay.block_size
        self.y = inp.grid.y
        self.noise_var = float(inp.grid.noise_var)
        occ = lay.occupancy[self.act]
        self.occ = occ  # (Ja, B)
        self.occ_re = np.tile(occ, (1, self.nb))  # (Ja, K)
        self.alph = lay.alphabets[self.act]  # (Ja, M, B)
        self.gains = inp.grid.gains[self.act] * self.occ_re[..., None]  # (Ja, K, R)
        self.prior_llrs = inp.prior_llrs[self.act]
        nbits = lay.bits_per_block
        self.log_prior = llrs_to_logprobs(self.prior_llrs.reshape(len(self.act), self.nb, nbits))

    @property
    def n_active(self) -> int:
        return len(self.act)

    @property
    def n_edges(self) -> int:
        return int(self.occ_re.sum())

    def prior_moments(self):
        """Per-RE Gaussian projection of the priors, ``(Ja, K)``; zero off-footprint."""
        probs = np.exp(self.log_prior)  # (Ja, Nb, M)
        pts = np.moveaxis(self.alph, 1, 2)[:, None]  # (Ja, 1, B, M)
        mean, var = moment_match_arrays(probs[:, :, None, :], pts)
        shape = (self.n_active, self.nb * self.bsz)
        mean = mean.reshape(shape) * self.occ_re
        var = np.where(self.occ_re, var.reshape(shape), 0.0)
        return mean, var

    def demap(self, obs_mean, obs_var, alph=None, occ=None):
        """Posterior symbol log-probabilities from per-RE Gaussian observations.

        ``obs_*`` have shape ``(Ja, Nb, B)``; ``alph`` ``(Ja, M, B)``.
        """
        alph = self.alph if alph is None else alph
        occ = self.occ if occ is None else occ
        diff = alph[:, None, :, :] - obs_mean[:, :, None, :]  # (Ja, Nb, M, B)
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = -(diff.real**2 + diff.imag**2) / obs_var[:, :, None, :]
        terms = np.where(occ[:, None, None, :] & np.isfinite(obs_var)[:, :, None, :], terms, 0.0)
        logpost = self.log_prior + terms.sum(axis=-1)
        return logpost - logsumexp(logpost, axis=-1, keepdims=True)

    def output(self, logpost, ops: dict) -> DetectorOutput:
        post = logprobs_to_llrs(logpost).reshape(self.n_active, self.layout.coded_bits_per_layer)
        ext = post - self.prior_llrs
        # reported posterior is rebuilt from the extrinsic so that ext + prior reproduces it bit for bit
        return DetectorOutput(self.act.copy(), ext, ext + self.prior_llrs, int(sum(ops.values())), ops,
                              np.exp(logpost))


def _inverse(cov: np.ndarray) -> np.ndarray:
    """Batched inverse; ill-conditioned matrices get ``DIAGONAL_LOAD * trace/dim`` on the diagonal.

    Conditioning is judged by the Frobenius estimate ``|A|_F |A^-1|_F``,
    which bounds the 2-norm condition number from above.
    """
    dim = cov.shape[-1]
    try:
        inv = np.linalg.inv(cov)
        with np.errstate(over="ignore", invalid="ignore"):
            cond = np.linalg.norm(cov, axis=(-2, -1)) * np.linalg.norm(inv, axis=(-2, -1))
    except np.linalg.LinAlgError:
        inv, cond = None, np.linalg.cond(cov)
    bad = ~np.isfinite(cond) | (cond > COND_LIMIT)
    if not bad.any():
        return inv
    trace = np.real(np.trace(cov, axis1=-2, axis2=-1))
    load = np.where(bad, np.maximum(DIAGONAL_LOAD * trace / dim, 1e-300), 0.0)
    return np.linalg.inv(cov + load[:, None, None] * np.eye(dim))


def _lmmse_extrinsic(gains, y, mean, var, noise_var, previous: GaussianMessage | None = None):
    """Per-layer LMMSE posterior divided by its Gaussian prior.

    ``gains`` ``(Ja, N, D)``, ``y`` ``(N, D)``, ``mean``/``var`` ``(Ja, N)``.
    Entries with zero prior variance are off-footprint and come back uninformative.
    """
    dim = y.shape[-1]
    cov = np.einsum("jn,jnd,jne->nde", var, gains, gains.conj()) + noise_var * np.eye(dim)
    cinv = _inverse(cov)
    resid = y - np.einsum("jnd,jn->nd", gains, mean)
    cg = np.einsum("nde,jne->jnd", cinv, gains)
    a = np.real(np.einsum("jnd,jnd->jn", gains.conj(), cg))
    t = np.einsum("jnd,nd->jn", cg.conj(), resid)
    on = var > 0  # off-footprint entries carry no message
    # a noiseless grid can drive the posterior variance to zero; keep it at the moment-matching floor
    post_var = np.where(on, np.maximum(var - var**2 * a, V_MIN), np.inf)
    post = GaussianMessage(np.where(on, mean + var * t, 0.0), post_var)
    ext = gaussian_divide(post, GaussianMessage(mean, np.where(on, var, np.inf)), previous)
    return GaussianMessage(np.where(on, ext.mean, 0.0), np.where(on, ext.variance, np.inf))


# ---------------------------------------------------------------- detectors

def mmse_detect(inp: DetectorInput, mode: str = "chip") -> DetectorOutput:
    """Soft parallel interference cancellation followed by linear MMSE filtering."""
    pb = _Problem(inp)
    lay = pb.layout
    r = inp.grid.n_rx
    if pb.n_active == 0:
        return pb.output(np.zeros((0, pb.nb, lay.order)), {})
    if mode == "chip":
        mean, var = pb.prior_moments()
        ext = _lmmse_extrinsic(pb.gains, pb.y, mean, var, pb.noise_var)
        shape = (pb.n_active, pb.nb, pb.bsz)
        logpost = pb.demap(np.asarray(ext.mean).reshape(shape), np.asarray(ext.variance).reshape(shape))
        n_inv, dim = lay.n_re, r
        n_obs = pb.n_edges
    elif mode == "block":
        if not lay.is_spreading:
            raise ConfigurationError("block-wise MMSE needs a spreading layout")
        sig = lay.signatures[pb.act]  # (Ja, L)
        base = lay.base_alphabet
        dim = r * pb.bsz
        gains = pb.gains.reshape(pb.n_active, pb.nb, pb.bsz, r) * sig[:, None, :, None]
        gains = gains.reshape(pb.n_active, pb.nb, dim)
        y = pb.y.reshape(pb.nb, dim)
        probs = np.exp(pb.log_prior)
        mean, var = moment_match_arrays(probs, base)
        ext = _lmmse_extrinsic(gains, y, mean, var, pb.noise_var)
        alph = np.broadcast_to(base[None, :, None], (pb.n_active, base.size, 1))
        occ = np.ones((pb.n_active, 1), bool)
        logpost = pb.demap(np.asarray(ext.mean)[..., None], np.asarray(ext.variance)[..., None], alph, occ)
        n_inv = pb.nb
        n_obs = pb.n_active * pb.nb
    else:
        raise ConfigurationError(f"unknown MMSE mode {mode!r}")
    ops = {"inversion": n_inv * dim**3, "filter": pb.n_active * n_inv * 2 * dim**2, "demap": lay.order * n_obs}
    return pb.output(logpost, ops)


def epa_detect(inp: DetectorInput, damping: float = EPA_DAMPING) -> DetectorOutput:
    """Expectation propagation: LMMSE at the FNs, discrete moment matching at the VNs."""
    pb = _Problem(inp)
    lay = pb.layout
    r = inp.grid.n_rx
    if pb.n_active == 0:
        return pb.output(np.zeros((0, pb.nb, lay.order)), {})
    shape = (pb.n_active, pb.nb, pb.bsz)
    mean, var = pb.prior_moments()
    msg_vf = GaussianMessage(mean, np.where(pb.occ_re, var, np.inf))
    msg_fv = GaussianMessage.uninformative(mean.shape)
    pts = np.moveaxis(pb.alph, 1, 2)[:, None]  # (Ja, 1, B, M)
    logpost = pb.log_prior
    for _ in range(max(1, inp.inner_iterations)):
        vf_var = np.where(pb.occ_re, np.asarray(msg_vf.variance), 0.0)
        vf_mean = np.where(pb.occ_re, np.asarray(msg_vf.mean), 0.0)
        msg_fv = _lmmse_extrinsic(pb.gains, pb.y, vf_mean, vf_var, pb.noise_var, msg_fv)
        ext_mean = np.asarray(msg_fv.mean).reshape(shape)
        ext_var = np.asarray(msg_fv.variance).reshape(shape)
        logpost = pb.demap(ext_mean, ext_var)
        post_mean, post_var = moment_match_arrays(np.exp(logpost)[:, :, None, :], pts)
        post = GaussianMessage(post_mean.reshape(mean.shape), post_var.reshape(mean.shape))
        new = gaussian_divide(post, msg_fv, msg_vf)
        lam = damping * new.precision + (1 - damping) * msg_vf.precision
        eta = damping * new.weighted_mean + (1 - damping) * msg_vf.weighted_mean
        msg_vf = GaussianMessage.from_natural(lam, eta)
    iters = max(1, inp.inner_iterations)
    e = pb.n_edges
    ops = {"inversion": iters * lay.n_re * r**3, "filter": iters * e * 2 * r**2, "vn": iters * e * 2 * lay.order}
    return pb.output(logpost, ops)


def ese_detect(inp: DetectorInput) -> DetectorOutput:
    """Matched filter per layer with Gaussian interference-plus-noise (scalar ESE)."""
    pb = _Problem(inp)
    lay = pb.layout
    if pb.n_active == 0:
        return pb.output(np.zeros((0, pb.nb, lay.order)), {})
    mean, var = pb.prior_moments()
    g = pb.gains
    cross = np.einsum("jkr,ikr->jik", g.conj(), g)  # g_j^H g_i
    norm2 = np.real(np.einsum("jjk->jk", cross))
    z = np.einsum("jkr,kr->jk", g.conj(), pb.y)
    interference = np.einsum("jik,ik->jk", cross, mean) - norm2 * mean
    spread = np.einsum("jik,ik->jk", np.abs(cross) ** 2, var) - var * norm2**2
    noise = np.maximum(spread, 0.0) + max(pb.noise_var, NOISE_FLOOR) * norm2
    with np.errstate(divide="ignore", invalid="ignore"):
        obs_mean = np.where(norm2 > 0, (z - interference) / norm2, 0.0)
        obs_var = np.where(norm2 > 0, noise / norm2**2, np.inf)
    shape = (pb.n_active, pb.nb, pb.bsz)
    logpost = pb.demap(obs_mean.reshape(shape), obs_var.reshape(shape))
    d_f = pb.occ_re.sum(axis=0)
    ops = {"filter": int(np.sum(pb.occ_re * d_f)) * inp.grid.n_rx, "demap": lay.order * pb.n_edges}
    return pb.output(logpost, ops)


def mpa_detect(inp: DetectorInput, df_cap: int = MPA_DF_CAP) -> DetectorOutput:
    """Sum-product message passing over the RE/layer factor graph (log domain)."""
    pb = _Problem(inp)
    lay = pb.layout
    if pb.n_active == 0:
        return pb.output(np.zeros((0, pb.nb, lay.order)), {})
    sigma2 = max(pb.noise_var, NOISE_FLOOR)
    ja_at = [np.flatnonzero(pb.occ[:, l]) for l in range(pb.bsz)]
    for l, members in enumerate(ja_at):
        if len(members) > df_cap:
            raise ComplexityGuardError(f"RE {l} has d_f={len(members)} colliding layers, above the cap of {df_cap}")
    y = pb.y.reshape(pb.nb, pb.bsz, -1)
    gains = pb.gains.reshape(pb.n_active, pb.nb, pb.bsz, -1)
    # per RE position: symbol->point maps and message projectors, one per colliding layer
    index = {}
    project = {}
    tables = {}
    for l, members in enumerate(ja_at):
        if not len(members):
            continue
        pts = [lay.projections[pb.act[ja]][l] for ja in members]
        index[l] = [ix for _, ix in pts]
        project[l] = [_projector(len(p), ix) for p, ix in pts]
        tables[l] = _fn_loglik(y[:, l], [gains[ja, :, l] for ja in members], [p for p, _ in pts], sigma2)
    fn_cost = sum(pb.nb * int(np.prod(t.shape[1:])) for t in tables.values())
    # messages indexed (layer, RE position, block, symbol); unoccupied slots stay zero in fv
    fv = np.zeros((pb.n_active, pb.bsz, pb.nb, lay.order))
    vf = np.repeat(pb.log_prior[:, None], pb.bsz, axis=1)
    iters = max(1, inp.inner_iterations)
    for _ in range(iters):
        for l, table in tables.items():
            members = ja_at[l]
            incoming = []
            for ja, proj in zip(members, project[l]):
                incoming.append(proj(vf[ja, l]))
            for ja, ix, out in zip(members, index[l], _fn_combine(table, incoming)):
                out = out[:, ix]
                fv[ja, l] = out - out.max(axis=-1, keepdims=True)
        total = pb.log_prior + fv.sum(axis=1)
        vf = total[:, None] - fv
        vf -= vf.max(axis=-1, keepdims=True)
    logpost = pb.log_prior + fv.sum(axis=1)
    logpost = logpost - logsumexp(logpost, axis=-1, keepdims=True)
    return pb.output(logpost, {"fn": iters * fn_cost})


def _projector(m_p: int, index: np.ndarray):
    """Map block-symbol log-messages ``(Nb, M)`` onto the ``m_p`` distinct points of one RE."""
    if m_p == index.size:
        order = np.argsort(index)
        return lambda msg: msg[:, order]
    groups = [np.flatnonzero(index == p) for p in range(m_p)]
    return lambda msg: np.stack([logsumexp(msg[:, g], axis=-1) for g in groups], axis=-1)


def _fn_loglik(y, gains, points, sigma2):
    """Log-likelihood of every combination of projected points at one RE position.

    ``y`` ``(Nb, R)``; per colliding layer ``gains`` ``(Nb, R)`` and
    ``points`` ``(m_p,)``.  Returns ``(Nb, m_p1, ..., m_pd)``.
    """
    nb, n_rx = y.shape
    d = len(points)
    sizes = [len(p) for p in points]
    total = np.zeros((nb, *sizes, n_rx), complex)
    for j in range(d):
        pshape = [1] * (d + 2)
        pshape[1 + j] = sizes[j]
        total = total + gains[j].reshape([nb] + [1] * d + [n_rx]) * points[j].reshape(pshape)
    diff = y.reshape([nb] + [1] * d + [n_rx]) - total
    return -np.sum(diff.real**2 + diff.imag**2, axis=-1) / sigma2


# incoming log-messages are floored here so that dividing one back out stays finite
_LOG_FLOOR = -700.0


def _fn_combine(loglik, incoming):
    """FN-to-VN log-messages given the likelihood table and incoming projected messages.

    The joint ``loglik + sum(incoming)`` is exponentiated once; each outgoing
    message marginalizes it and then removes its own incoming message.
    """
    d = loglik.ndim - 1
    nb = loglik.shape[0]
    shaped = []
    joint = loglik
    for j, msg in enumerate(incoming):
        shape = [nb] + [1] * d
        shape[1 + j] = msg.shape[1]
        msg = np.maximum(msg, _LOG_FLOOR).reshape(shape)
        shaped.append(msg)
        joint = joint + msg
    peak = joint.reshape(nb, -1).max(axis=-1).reshape([nb] + [1] * d)
    weights = np.exp(joint - peak)
    outs = []
    for j in range(d):
        axes = tuple(1 + a for a in range(d) if a != j)
        marg = weights.sum(axis=axes) if axes else weights.reshape(nb, -1)
        if np.all(marg > 0):
            logmarg = np.log(marg) + peak.reshape(nb, 1)
        else:
            # some point lies beyond exp range of the peak: redo this marginal in the log domain
            logmarg = logsumexp(np.moveaxis(joint, 1 + j, -1).reshape(nb, -1, joint.shape[1 + j]), axis=1)
        outs.append(logmarg - shaped[j].reshape(nb, -1))
    return outs


def brute_force_oracle(inp: DetectorInput) -> DetectorOutput:
    """Exact bit posteriors by enumerating every joint symbol choice within each block."""
    pb = _Problem(inp)
    lay = pb.layout
    if pb.n_active == 0:
        return pb.output(np.zeros((0, pb.nb, lay.order)), {})
    m = lay.order
    combos = m ** pb.n_active
    if combos > BRUTE_FORCE_LIMIT:
        raise ComplexityGuardError(f"joint alphabet of {combos} exceeds the enumeration bound {BRUTE_FORCE_LIMIT}")
    sigma2 = max(pb.noise_var, NOISE_FLOOR)
    idx = np.array(list(itertools.product(range(m), repeat=pb.n_active)))  # (C, Ja)
    y = pb.y.reshape(pb.nb, pb.bsz, -1)
    gains = pb.gains.reshape(pb.n_active, pb.nb, pb.bsz, -1)
    logpost = np.empty((pb.n_active, pb.nb, m))
    for b in range(pb.nb):
        x = pb.alph[np.arange(pb.n_active), idx]  # (C, Ja, B)
        rx = np.einsum("jlr,cjl->clr", gains[:, b], x)
        diff = y[b][None] - rx
        score = -np.sum(diff.real**2 + diff.imag**2, axis=(1, 2)) / sigma2
        score = score + pb.log_prior[np.arange(pb.n_active), b, idx].sum(axis=1)
        for ja in range(pb.n_active):
            logpost[ja, b] = [logsumexp(score[idx[:, ja] == i]) for i in range(m)]
    logpost -= logsumexp(logpost, axis=-1, keepdims=True)
    return pb.output(logpost, {"enumeration": pb.nb * combos})


DETECTORS = {
    "mpa": mpa_detect,
    "epa": epa_detect,
    "ese": ese_detect,
    "mmse": mmse_detect,
    "brute": brute_force_oracle,
}


def detect(name: str, inp: DetectorInput, **params) -> DetectorOutput:
    try:
        fn = DETECTORS[name]
    except KeyError:
        raise ConfigurationError(f"unknown detector {name!r}") from None
    return fn(inp, **params)
