"""Block-fading Rayleigh channel with AWGN and ideal CSI."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .transmitter import ConfigurationError, SchemeLayout

__all__ = ["ChannelRealization", "ReceivedGrid", "generate_channel", "apply_channel"]


@dataclass(frozen=True, eq=False)
class ChannelRealization:
    """``h[j, k, r]``: gain from layer ``j`` on RE ``k`` to rx antenna ``r``."""

    h: np.ndarray
    coherence_re: int

    @property
    def n_layers(self) -> int:
        return self.h.shape[0]

    @property
    def n_rx(self) -> int:
        return self.h.shape[2]


@dataclass(frozen=True, eq=False)
class ReceivedGrid:
    """Observations ``y[k, r]`` plus everything the receiver is allowed to know.

    ``amplitudes[j]`` is the square root of layer ``j``'s transmit power, so
    the effective channel of layer ``j`` is ``h[j] * amplitudes[j]``.
    """

    y: np.ndarray
    noise_var: float
    channel: ChannelRealization
    amplitudes: np.ndarray

    @property
    def gains(self) -> np.ndarray:
        """Effective channel ``(n_layers, n_re, n_rx)`` including transmit power."""
        return self.channel.h * self.amplitudes[:, None, None]

    @property
    def n_re(self) -> int:
        return self.y.shape[0]

    @property
    def n_rx(self) -> int:
        return self.y.shape[1]

    def subtract(self, layer: int, tx_row: np.ndarray) -> "ReceivedGrid":
        """Grid with one layer's reconstructed contribution removed."""
        contrib = self.gains[layer] * np.asarray(tx_row)[:, None]
        return replace(self, y=self.y - contrib)


def generate_channel(layout: SchemeLayout, n_rx: int, coherence_re: int,
                     rng: np.random.Generator) -> ChannelRealization:
    """i.i.d. CN(0, 1) coefficients, constant over runs of ``coherence_re`` REs."""
    if coherence_re < 1 or layout.n_re % coherence_re:
        raise ConfigurationError(f"coherence_re={coherence_re} must divide n_re={layout.n_re}")
    n_coh = layout.n_re // coherence_re
    shape = (layout.n_layers, n_coh, n_rx)
    draws = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)
    return ChannelRealization(np.repeat(draws, coherence_re, axis=1), coherence_re)


def apply_channel(tx: np.ndarray, ch: ChannelRealization, snr_db, rng: np.random.Generator,
                  noise_var: float = 1.0) -> ReceivedGrid:
    """Superpose all layers through the channel and add CN(0, noise_var) noise.

    ``snr_db`` (scalar or one value per layer) is the per-layer, per-antenna
    average received SNR on occupied REs: each layer is sent with power
    ``noise_var * 10**(snr_db/10)``.  ``noise_var = 0`` gives a noiseless grid
    with powers ``10**(snr_db/10)``.
    """
    tx = np.asarray(tx, complex)
    if tx.shape != ch.h.shape[:2]:
        raise ConfigurationError(f"tx grid {tx.shape} does not match channel {ch.h.shape[:2]}")
    snr = np.broadcast_to(np.asarray(snr_db, float), (ch.n_layers,))
    amplitudes = np.sqrt((noise_var if noise_var > 0 else 1.0) * 10.0 ** (snr / 10.0))
    signal = np.einsum("jkr,jk->kr", ch.h * amplitudes[:, None, None], tx)
    shape = signal.shape
    noise = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * np.sqrt(noise_var / 2)
    return ReceivedGrid(signal + noise, float(noise_var), ch, amplitudes)
