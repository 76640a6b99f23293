"""Gaussian and discrete message algebra shared by the detectors.

Symbol-block alphabets are indexed by their bit label read MSB first, so
alphabet entry ``i`` carries the bits of ``i``.  LLRs are positive when the
bit is more likely to be 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

V_MIN = 1e-8

__all__ = [
    "V_MIN",
    "ContractError",
    "GaussianMessage",
    "DiscretePrior",
    "bit_table",
    "logsumexp",
    "llrs_to_logprobs",
    "logprobs_to_llrs",
    "llr_to_prior",
    "moment_match",
    "moment_match_arrays",
    "gaussian_divide",
    "gaussian_multiply",
]


class ContractError(ValueError):
    """Raised when an operation is called with inputs violating its contract."""


@dataclass(frozen=True)
class GaussianMessage:
    """Complex Gaussian ``CN(mean, variance)``; ``variance = inf`` is uninformative.

    Fields may be numpy arrays of matching shape, in which case every
    operation below acts elementwise.
    """

    mean: complex | np.ndarray
    variance: float | np.ndarray

    @classmethod
    def uninformative(cls, shape=()) -> "GaussianMessage":
        if shape == ():
            return cls(0j, np.inf)
        return cls(np.zeros(shape, complex), np.full(shape, np.inf))

    @property
    def precision(self):
        with np.errstate(divide="ignore"):
            return 1.0 / np.asarray(self.variance, float)

    @property
    def weighted_mean(self):
        prec = self.precision
        return np.where(prec == 0, 0j, np.asarray(self.mean) * prec)

    @classmethod
    def from_natural(cls, precision, weighted_mean) -> "GaussianMessage":
        precision = np.asarray(precision, float)
        with np.errstate(divide="ignore", invalid="ignore"):
            var = 1.0 / precision
            mean = np.where(precision == 0, 0j, weighted_mean * var)
        if var.ndim == 0:
            return cls(complex(mean), float(var))
        return cls(mean, var)


@dataclass(frozen=True)
class DiscretePrior:
    """Probability vector over a symbol-block alphabet.

    ``alphabet`` has shape ``(M, B)``: one row per symbol block, one column per
    RE of the block (zero on unoccupied REs).
    """

    alphabet: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        alphabet = np.asarray(self.alphabet, complex)
        if alphabet.ndim == 1:
            alphabet = alphabet[:, None]
        probs = np.asarray(self.probs, float)
        m = alphabet.shape[0]
        if m < 2 or m & (m - 1):
            raise ContractError(f"alphabet size must be a power of two >= 2, got {m}")
        if probs.shape != (m,):
            raise ContractError(f"probs shape {probs.shape} does not match alphabet size {m}")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-12:
            raise ContractError("probs must be non-negative and sum to 1")
        object.__setattr__(self, "alphabet", alphabet)
        object.__setattr__(self, "probs", probs)

    @property
    def size(self) -> int:
        return self.alphabet.shape[0]

    @classmethod
    def uniform(cls, alphabet) -> "DiscretePrior":
        alphabet = np.asarray(alphabet, complex)
        return cls(alphabet, np.full(alphabet.shape[0], 1.0 / alphabet.shape[0]))


def logsumexp(a, axis=-1, keepdims: bool = False):
    """``log(sum(exp(a)))`` along ``axis``; rows that are all ``-inf`` give ``-inf``.

    A lean stand-in for :func:`scipy.special.logsumexp`, whose per-call
    overhead dominates the small reductions in the detectors' inner loops.
    """
    a = np.asarray(a, float)
    peak = np.max(a, axis=axis, keepdims=True)
    peak = np.where(np.isfinite(peak), peak, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - peak), axis=axis, keepdims=True)) + peak
    return out if keepdims else np.squeeze(out, axis=axis)


def bit_table(n_bits: int) -> np.ndarray:
    """``(2**n_bits, n_bits)`` array of the label bits of each index, MSB first."""
    idx = np.arange(1 << n_bits)
    shifts = np.arange(n_bits - 1, -1, -1)
    return (idx[:, None] >> shifts) & 1


def llrs_to_logprobs(llrs: np.ndarray) -> np.ndarray:
    """Map bit LLRs ``(..., n_bits)`` to normalized log-probabilities ``(..., 2**n_bits)``."""
    llrs = np.asarray(llrs, float)
    if np.isnan(llrs).any():
        raise ContractError("LLRs must not contain NaN")
    n_bits = llrs.shape[-1]
    signs = 1.0 - 2.0 * bit_table(n_bits)  # +1 for bit 0
    # log sigma(s * L) summed over bits; sigma(+inf) = 1 exactly
    with np.errstate(invalid="ignore"):
        per_bit = -np.logaddexp(0.0, -llrs[..., None, :] * signs)
    per_bit = np.where(np.isnan(per_bit), 0.0, per_bit)
    logp = per_bit.sum(axis=-1)
    return logp - logsumexp(logp, axis=-1, keepdims=True)


def logprobs_to_llrs(logp: np.ndarray) -> np.ndarray:
    """Marginal bit LLRs ``(..., n_bits)`` from symbol log-probabilities ``(..., M)``."""
    logp = np.asarray(logp, float)
    m = logp.shape[-1]
    n_bits = m.bit_length() - 1
    table = bit_table(n_bits).T.astype(bool)  # (n_bits, M)
    zero = np.where(~table, logp[..., None, :], -np.inf)
    one = np.where(table, logp[..., None, :], -np.inf)
    with np.errstate(invalid="ignore"):
        out = logsumexp(zero, axis=-1) - logsumexp(one, axis=-1)
    return out


def llr_to_prior(llrs, alphabet) -> DiscretePrior:
    """Symbol prior over ``alphabet`` implied by one block's bit LLRs."""
    llrs = np.asarray(llrs, float).ravel()
    alphabet = np.asarray(alphabet, complex)
    m = alphabet.shape[0]
    if llrs.size != m.bit_length() - 1 or 1 << llrs.size != m:
        raise ContractError(f"expected {m.bit_length() - 1} LLRs for an alphabet of size {m}, got {llrs.size}")
    probs = np.exp(llrs_to_logprobs(llrs))
    return DiscretePrior(alphabet, probs / probs.sum())


def moment_match_arrays(probs, points, v_min: float = V_MIN):
    """Mean and clipped variance of discrete distributions.

    ``probs`` and ``points`` broadcast against each other with the alphabet on
    the last axis.
    """
    probs = np.asarray(probs, float)
    points = np.asarray(points, complex)
    mean = np.sum(probs * points, axis=-1)
    second = np.sum(probs * (points.real**2 + points.imag**2), axis=-1)
    var = second - (mean.real**2 + mean.imag**2)
    return mean, np.maximum(var, v_min)


def moment_match(prior: DiscretePrior, re_index: int, v_min: float = V_MIN) -> GaussianMessage:
    """Project ``prior`` at one RE of the block onto a complex Gaussian."""
    mean, var = moment_match_arrays(prior.probs, prior.alphabet[:, re_index], v_min)
    return GaussianMessage(complex(mean), float(var))


def gaussian_divide(numerator: GaussianMessage, denominator: GaussianMessage,
                    previous: GaussianMessage | None = None) -> GaussianMessage:
    """Extrinsic Gaussian ``numerator / denominator``.

    Where the quotient has negative precision the update is skipped and the
    ``previous`` message is kept (uninformative if none was given).
    """
    prec = numerator.precision - denominator.precision
    wmean = numerator.weighted_mean - denominator.weighted_mean
    bad = ~(prec >= 0)
    if np.any(bad):
        if previous is None:
            previous = GaussianMessage.uninformative(np.shape(prec))
        prec = np.where(bad, previous.precision, prec)
        wmean = np.where(bad, previous.weighted_mean, wmean)
    return GaussianMessage.from_natural(prec, wmean)


def gaussian_multiply(a: GaussianMessage, b: GaussianMessage) -> GaussianMessage:
    return GaussianMessage.from_natural(a.precision + b.precision, a.weighted_mean + b.weighted_mean)
