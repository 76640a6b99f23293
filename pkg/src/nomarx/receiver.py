"""Outer-loop (detector <-> decoder) receiver with four interference-cancellation strategies."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import ReceivedGrid
from .coding import CodeConfig, encode_transport, ldpc_decode
from .detectors import DetectorInput, detect
from .transmitter import ConfigurationError, SchemeLayout, map_bits

STRATEGIES = ("hard_sic", "enhanced_sic", "soft_pic", "hybrid_pic")
DEFAULT_INNER = {"epa": 3, "mpa": 5}

__all__ = [
    "STRATEGIES",
    "UserDecodeState",
    "OuterLoopConfig",
    "ReceiverResult",
    "OuterLoop",
    "run_receiver",
    "estimate_sinr",
]


@dataclass
class UserDecodeState:
    n_coded: int
    crc_passed: bool = False
    decoded_bits: np.ndarray | None = None
    feedback_llrs: np.ndarray | None = None
    est_sinr: float = 0.0
    hard_cancelled: bool = False
    hard_payload: np.ndarray | None = None
    codeword: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.feedback_llrs is None:
            self.feedback_llrs = np.zeros(self.n_coded)


@dataclass(frozen=True)
class OuterLoopConfig:
    """Receiver settings.  ``max_outer_iterations = 0`` is a single detect/decode pass."""

    strategy: str = "hybrid_pic"
    max_outer_iterations: int = 3
    detector: str = "epa"
    detector_params: dict = field(default_factory=dict)
    inner_iterations: int | None = None

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigurationError(f"unknown IC strategy {self.strategy!r}; choose from {STRATEGIES}")
        if self.max_outer_iterations < 0:
            raise ConfigurationError("max_outer_iterations must be >= 0")

    @property
    def inner(self) -> int:
        if self.inner_iterations is not None:
            return self.inner_iterations
        return DEFAULT_INNER.get(self.detector, 1)


@dataclass
class ReceiverResult:
    """Final per-UE states plus one snapshot per outer iteration actually run.

    ``bler_snapshots[t]`` is the fraction of UEs without a CRC pass after
    outer iteration ``t``; ``payload_snapshots[t]`` holds every UE's hard
    payload decision at that point and ``op_snapshots[t]`` the cumulative
    detector operation count.
    """

    states: list
    bler_snapshots: list
    payload_snapshots: list
    op_snapshots: list
    detector_calls: int = 0
    decoder_calls: int = 0
    orders: list = field(default_factory=list)

    @property
    def outer_iterations_used(self) -> int:
        return len(self.bler_snapshots) - 1


def estimate_sinr(grid: ReceivedGrid, layout: SchemeLayout, uelist, cancelled=None) -> np.ndarray:
    """Average post-matched-filter SINR of each UE in ``uelist`` under ideal CSI.

    Interference counts every other non-cancelled UE sharing the RE.
    """
    h = grid.channel.h
    power = grid.amplitudes**2
    n_layers = layout.n_layers
    cancelled = np.zeros(n_layers, bool) if cancelled is None else np.asarray(cancelled, bool)
    occ = np.stack([layout.re_mask(j) for j in range(n_layers)])  # (J, K)
    live = occ & ~cancelled[:, None]
    out = []
    for j in uelist:
        k = occ[j]
        hj = h[j, k]  # (K_j, R)
        norm2 = np.sum(np.abs(hj) ** 2, axis=-1)
        cross = np.einsum("kr,ikr->ik", hj.conj(), h[:, k])  # (J, K_j)
        weight = power[:, None] * live[:, k]
        weight[j] = 0.0
        interference = np.sum(weight * np.abs(cross) ** 2, axis=0) / norm2
        with np.errstate(divide="ignore"):  # noiseless and interference-free: infinite SINR
            out.append(float(np.mean(power[j] * norm2 / (interference + grid.noise_var))))
    return np.array(out)


class OuterLoop:
    """State machine for one received grid; each ``*_pass`` method is one outer iteration."""

    def __init__(self, grid: ReceivedGrid, layout: SchemeLayout, cfg: OuterLoopConfig, code: CodeConfig):
        if code.coded_bits != layout.coded_bits_per_layer:
            raise ConfigurationError(f"code length {code.coded_bits} != {layout.coded_bits_per_layer} "
                                     "coded bits per layer")
        self.grid = grid
        self.working = grid
        self.layout = layout
        self.cfg = cfg
        self.code = code
        self.states = [UserDecodeState(code.coded_bits) for _ in range(layout.n_layers)]
        self.ops = 0
        self.detector_calls = 0
        self.decoder_calls = 0
        self.orders: list[list[int]] = []

    # ------------------------------------------------------------ plumbing
    @property
    def cancelled(self) -> np.ndarray:
        return np.array([s.hard_cancelled for s in self.states])

    def _detect(self, prior_llrs=None):
        inp = DetectorInput(self.working, self.layout, prior_llrs, self.cancelled, self.cfg.inner)
        out = detect(self.cfg.detector, inp, **self.cfg.detector_params)
        self.ops += out.op_count
        self.detector_calls += 1
        return out

    def _decode(self, users, llrs):
        result = ldpc_decode(np.atleast_2d(llrs), self.code)
        self.decoder_calls += len(users)
        for row, j in enumerate(users):
            st = self.states[j]
            st.hard_payload = result.hard_bits[row, : self.code.payload_bits].copy()
            st.feedback_llrs = result.extrinsic_llrs[row].copy()
            if result.crc_ok[row] and not st.crc_passed:
                st.crc_passed = True
                st.decoded_bits = st.hard_payload.copy()
                st.codeword = encode_transport(st.decoded_bits, self.code)
        return result

    def _cancel(self, j: int) -> None:
        st = self.states[j]
        assert st.crc_passed, "hard cancellation requires a CRC pass"
        self.working = self.working.subtract(j, map_bits(j, st.codeword, self.layout))
        st.hard_cancelled = True

    def _refresh_sinr(self, users) -> None:
        if users:
            for j, s in zip(users, estimate_sinr(self.working, self.layout, users, self.cancelled)):
                self.states[j].est_sinr = float(s)

    @staticmethod
    def _ordered(states, users):
        return sorted(users, key=lambda j: (-states[j].est_sinr, j))

    # -------------------------------------------------------------- passes
    def hard_sic_pass(self) -> None:
        """Decode undecoded UEs one at a time in descending SINR, cancelling each CRC pass."""
        pending = [j for j, s in enumerate(self.states) if not s.crc_passed]
        self._refresh_sinr(pending)
        order = self._ordered(self.states, pending)
        self.orders.append(order)
        for j in order:
            out = self._detect()
            self._decode([j], out.llrs(j))
            if self.states[j].crc_passed:
                self._cancel(j)

    def enhanced_sic_pass(self) -> None:
        """Like :meth:`hard_sic_pass` but re-ranks the remaining UEs after every CRC pass."""
        pending = [j for j, s in enumerate(self.states) if not s.crc_passed]
        self._refresh_sinr(pending)
        remaining = self._ordered(self.states, pending)
        order = []
        while remaining:
            j = remaining.pop(0)
            order.append(j)
            out = self._detect()
            self._decode([j], out.llrs(j))
            if self.states[j].crc_passed:
                self._cancel(j)
                self._refresh_sinr(remaining)
                remaining = self._ordered(self.states, remaining)
        self.orders.append(order)

    def soft_pic_pass(self) -> None:
        """Detect all UEs with decoder feedback as priors, then decode all in parallel."""
        priors = np.stack([s.feedback_llrs for s in self.states])
        out = self._detect(priors)
        users = list(out.layers)
        self.orders.append(users)
        self._decode(users, out.extrinsic_llrs)

    def hybrid_pic_pass(self) -> None:
        """Soft PIC over the UEs still on air; CRC-passed UEs are hard cancelled."""
        users = [j for j, s in enumerate(self.states) if not s.hard_cancelled]
        self.orders.append(users)
        if not users:
            return
        priors = np.stack([s.feedback_llrs for s in self.states])
        out = self._detect(priors)
        self._decode(users, out.extrinsic_llrs)
        for j in users:
            if self.states[j].crc_passed:
                self._cancel(j)

    # ---------------------------------------------------------------- loop
    def run(self) -> ReceiverResult:
        step = getattr(self, f"{self.cfg.strategy}_pass")
        bler, payloads, ops = [], [], []
        serial = self.cfg.strategy in ("hard_sic", "enhanced_sic")
        for _ in range(self.cfg.max_outer_iterations + 1):
            passed_before = sum(s.crc_passed for s in self.states)
            step()
            bler.append(float(np.mean([not s.crc_passed for s in self.states])))
            payloads.append(np.stack([self._payload(s) for s in self.states]))
            ops.append(self.ops)
            if all(s.crc_passed for s in self.states):
                break
            # SIC ignores soft feedback: a pass that decodes nobody new would repeat exactly
            if serial and sum(s.crc_passed for s in self.states) == passed_before:
                break
        return ReceiverResult(self.states, bler, payloads, ops, self.detector_calls, self.decoder_calls, self.orders)

    def _payload(self, st: UserDecodeState) -> np.ndarray:
        if st.crc_passed:
            return st.decoded_bits
        if st.hard_payload is not None:
            return st.hard_payload
        return np.zeros(self.code.payload_bits, np.uint8)


def run_receiver(grid: ReceivedGrid, layout: SchemeLayout, cfg: OuterLoopConfig, code: CodeConfig) -> ReceiverResult:
    return OuterLoop(grid, layout, cfg, code).run()
