"""CRC-16 attachment and a column-weight-3 LDPC code with a sum-product decoder."""

from __future__ import annotations

import binascii
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numba
import numpy as np
import scipy.sparse as sp

from .messages import ContractError

CRC_POLY = 0x1021
CRC_INIT = 0xFFFF
CRC_WIDTH = 16
LDPC_SEED = 20180416
LLR_MAX = 1e3

__all__ = [
    "CodeConfig",
    "DecodeResult",
    "crc16",
    "crc_attach",
    "crc_check",
    "make_ldpc",
    "default_code",
    "ldpc_encode",
    "ldpc_decode",
    "encode_transport",
    "syndrome",
    "read_alist",
    "write_alist",
]


# --------------------------------------------------------------------- CRC

def crc16(bits) -> int:
    """CRC-16/CCITT-FALSE of a bit vector (MSB-first, any length)."""
    bits = np.asarray(bits, dtype=np.uint8).ravel()
    n_bytes = bits.size // 8
    reg = binascii.crc_hqx(np.packbits(bits[: n_bytes * 8]).tobytes(), CRC_INIT)
    for b in bits[n_bytes * 8:]:
        feedback = ((reg >> 15) & 1) ^ int(b)
        reg = (reg << 1) & 0xFFFF
        if feedback:
            reg ^= CRC_POLY
    return reg


def _int_to_bits(value: int, width: int) -> np.ndarray:
    return np.array([(value >> s) & 1 for s in range(width - 1, -1, -1)], dtype=np.uint8)


def crc_attach(payload) -> np.ndarray:
    payload = np.asarray(payload, dtype=np.uint8).ravel()
    if payload.size == 0:
        raise ContractError("payload must be nonempty")
    return np.concatenate([payload, _int_to_bits(crc16(payload), CRC_WIDTH)])


def crc_check(bits) -> bool:
    """True when the trailing 16 bits are the CRC of the leading ones."""
    bits = np.asarray(bits, dtype=np.uint8).ravel()
    if bits.size <= CRC_WIDTH:
        return False
    word = int("".join(map(str, bits[-CRC_WIDTH:])), 2)
    return crc16(bits[:-CRC_WIDTH]) == word


# -------------------------------------------------------------------- LDPC

@dataclass(frozen=True, eq=False)
class CodeConfig:
    """A systematic binary LDPC code.

    ``tb_bits`` is the transport block length (payload plus CRC); positions
    ``tb_bits..info_bits`` are zero padding known to the decoder.
    """

    info_bits: int
    coded_bits: int
    parity_check: sp.csr_matrix
    bp_iterations: int = 25
    crc_width: int = CRC_WIDTH
    tb_bits: int | None = None
    parity_generator: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if not 0 < self.info_bits < self.coded_bits:
            raise ContractError("code rate must lie in (0, 1)")
        if self.parity_check.shape != (self.coded_bits - self.info_bits, self.coded_bits):
            raise ContractError(f"parity check shape {self.parity_check.shape} inconsistent with "
                                f"({self.coded_bits - self.info_bits}, {self.coded_bits})")
        tb = self.info_bits if self.tb_bits is None else self.tb_bits
        if not self.crc_width < tb <= self.info_bits:
            raise ContractError(f"transport block of {tb} bits does not fit {self.info_bits} info bits")
        object.__setattr__(self, "tb_bits", tb)
        if self.parity_generator is None:
            object.__setattr__(self, "parity_generator", _parity_generator(self.parity_check))
        _graph(self)  # warm the edge-structure cache

    @property
    def rate(self) -> float:
        return self.info_bits / self.coded_bits

    @property
    def payload_bits(self) -> int:
        return self.tb_bits - self.crc_width

    def with_transport_block(self, tb_bits: int) -> "CodeConfig":
        return CodeConfig(self.info_bits, self.coded_bits, self.parity_check, self.bp_iterations,
                          self.crc_width, tb_bits, self.parity_generator)

    @classmethod
    def from_parity_check(cls, h, bp_iterations: int = 25, tb_bits: int | None = None) -> "CodeConfig":
        """Build a systematic code from an arbitrary full-rank parity-check matrix.

        Columns are permuted when needed so that the last ``m`` columns are
        invertible; the returned code's ``parity_check`` reflects that order.
        """
        h = sp.csr_matrix(h, dtype=np.uint8)
        m, n = h.shape
        order, generator = _systematic_form(h.toarray())
        h = sp.csr_matrix(h.toarray()[:, order])
        return cls(n - m, n, h, bp_iterations, CRC_WIDTH, tb_bits, generator)


@dataclass(frozen=True)
class DecodeResult:
    posterior_llrs: np.ndarray
    extrinsic_llrs: np.ndarray
    hard_bits: np.ndarray
    syndrome_ok: bool | np.ndarray
    crc_ok: bool | np.ndarray
    iterations: int | np.ndarray


def _gf2_reduce(a: np.ndarray):
    """Reduce ``a`` in place over GF(2), choosing pivots from the rightmost columns.

    Returns the pivot column of each row (in row order); shorter than the row
    count when ``a`` is rank deficient.
    """
    m, n = a.shape
    pivots = []
    row = 0
    for col in range(n - 1, -1, -1):
        if row == m:
            break
        hits = np.flatnonzero(a[row:, col]) + row
        if hits.size == 0:
            continue
        r = hits[0]
        if r != row:
            a[[row, r]] = a[[r, row]]
        others = np.flatnonzero(a[:, col])
        others = others[others != row]
        a[others] ^= a[row]
        pivots.append(col)
        row += 1
    return pivots


def _systematic_form(h: np.ndarray):
    """Column order ``info + parity`` and the generator mapping info bits to parity bits.

    Generator row ``t`` produces the bit at column ``order[k + t]``.
    """
    a = (h.astype(np.uint8) & 1).copy()
    m, n = a.shape
    pivots = _gf2_reduce(a)
    if len(pivots) < m:
        raise ContractError(f"parity-check matrix has GF(2) rank {len(pivots)} < {m}")
    rows = np.argsort(pivots)
    pivot_set = set(pivots)
    info_cols = [c for c in range(n) if c not in pivot_set]
    order = np.array(info_cols + sorted(pivots))
    return order, a[rows][:, info_cols].copy()


def _parity_generator(h: sp.csr_matrix) -> np.ndarray:
    order, generator = _systematic_form(h.toarray())
    if not np.array_equal(order, np.arange(h.shape[1])):
        raise ContractError("parity part of H is singular; build the code with CodeConfig.from_parity_check")
    return generator


def _place_edges(n: int, m: int, column_weight: int, rng: np.random.Generator) -> np.ndarray:
    """Column-by-column edge placement balancing row degrees, avoiding 4-cycles where possible."""
    h = np.zeros((m, n), dtype=np.uint8)
    degree = np.zeros(m, dtype=int)
    shares = np.zeros((m, m), dtype=bool)  # rows already sharing a column
    for c in range(n):
        chosen: list[int] = []
        for _ in range(column_weight):
            free = np.ones(m, dtype=bool)
            free[chosen] = False
            lowest = degree[free].min()
            candidates = free & (degree == lowest)
            if chosen:
                clean = candidates & ~shares[chosen].any(axis=0)
                if clean.any():
                    candidates = clean
            idx = np.flatnonzero(candidates)
            r = int(idx[rng.integers(idx.size)])
            chosen.append(r)
            degree[r] += 1
        for r in chosen:
            h[r, c] = 1
            shares[r, chosen] = True
        shares[chosen, chosen] = False
    return h


@lru_cache(maxsize=32)
def make_ldpc(coded_bits: int, info_bits: int, seed: int = LDPC_SEED, column_weight: int = 3,
              bp_iterations: int = 25) -> CodeConfig:
    """Deterministic pseudorandom LDPC code with the given column weight.

    Row degrees differ by at most one, so ``(1024, 512)`` is (3,6)-regular.
    Columns are reordered so the last ``m`` are invertible; the seed is only
    advanced if the placement is rank deficient.
    """
    m = coded_bits - info_bits
    if m <= 0 or info_bits <= 0:
        raise ContractError("need 0 < info_bits < coded_bits")
    if m < column_weight:
        raise ContractError(f"{m} parity checks cannot host column weight {column_weight}")
    for attempt in range(64):
        rng = np.random.default_rng(seed + attempt)
        h = _place_edges(coded_bits, m, column_weight, rng)
        try:
            order, generator = _systematic_form(h)
        except ContractError:
            continue
        # permute columns so the parity positions come last
        return CodeConfig(info_bits, coded_bits, sp.csr_matrix(h[:, order]), bp_iterations,
                          parity_generator=generator)
    raise ContractError(f"could not construct a full-rank ({coded_bits}, {info_bits}) code")


def default_code() -> CodeConfig:
    """(3,6)-regular rate-1/2 code, n = 1024, carrying 480 payload + 16 CRC bits."""
    return make_ldpc(1024, 512).with_transport_block(496)


def syndrome(bits, cfg: CodeConfig) -> np.ndarray:
    bits = np.asarray(bits, dtype=np.int64)
    return (cfg.parity_check @ bits.T).T % 2


def ldpc_encode(info, cfg: CodeConfig) -> np.ndarray:
    info = np.asarray(info, dtype=np.uint8).ravel()
    if info.size != cfg.info_bits:
        raise ContractError(f"expected {cfg.info_bits} info bits, got {info.size}")
    parity = (cfg.parity_generator.astype(np.int64) @ info) % 2
    return np.concatenate([info, parity.astype(np.uint8)])


def encode_transport(payload, cfg: CodeConfig) -> np.ndarray:
    """CRC-attach, zero-pad to ``info_bits`` and encode one transport block."""
    payload = np.asarray(payload, dtype=np.uint8).ravel()
    if payload.size != cfg.payload_bits:
        raise ContractError(f"expected {cfg.payload_bits} payload bits, got {payload.size}")
    info = np.zeros(cfg.info_bits, dtype=np.uint8)
    info[: cfg.tb_bits] = crc_attach(payload)
    return ldpc_encode(info, cfg)


# ----------------------------------------------------------------- decoder

@dataclass(frozen=True)
class _Graph:
    check_ptr: np.ndarray
    edge_var: np.ndarray


_graphs: dict[int, _Graph] = {}


def _graph(cfg: CodeConfig) -> _Graph:
    key = id(cfg.parity_check)
    g = _graphs.get(key)
    if g is None:
        h = cfg.parity_check.tocsr()
        h.sort_indices()
        g = _Graph(h.indptr.astype(np.int64), h.indices.astype(np.int64))
        _graphs[key] = g
    return g


@numba.njit(cache=True)
def _phi(x):
    if x < 1e-10:
        x = 1e-10
    elif x > 50.0:
        x = 50.0
    # -log(tanh(x/2)) written with one exp and one log
    e = np.exp(-x)
    return np.log((1.0 + e) / (1.0 - e))


@numba.njit(cache=True)
def _spa_decode(llrs, check_ptr, edge_var, max_iter, extrinsic, hard, iters, ok):
    n_words, n = llrs.shape
    m = check_ptr.size - 1
    n_edges = edge_var.size
    c2v = np.zeros(n_edges)
    v2c = np.zeros(n_edges)
    phis = np.zeros(n_edges)
    ch = np.zeros(n)
    ext = np.zeros(n)
    for w in range(n_words):
        for v in range(n):
            x = llrs[w, v]
            ch[v] = min(max(x, -1e3), 1e3)
            ext[v] = 0.0
        c2v[:] = 0.0
        it = 0
        converged = False
        while it < max_iter:
            it += 1
            for c in range(m):
                total = 0.0
                sign = 1.0
                for e in range(check_ptr[c], check_ptr[c + 1]):
                    x = ch[edge_var[e]] + ext[edge_var[e]] - c2v[e]
                    v2c[e] = x
                    p = _phi(abs(x))
                    phis[e] = p
                    total += p
                    if x < 0:
                        sign = -sign
                for e in range(check_ptr[c], check_ptr[c + 1]):
                    mag = _phi(total - phis[e])
                    s = sign
                    if v2c[e] < 0:
                        s = -s
                    c2v[e] = s * mag
            ext[:] = 0.0
            for e in range(n_edges):
                ext[edge_var[e]] += c2v[e]
            for v in range(n):
                hard[w, v] = 1 if llrs[w, v] + ext[v] < 0 else 0
            converged = True
            for c in range(m):
                parity = 0
                for e in range(check_ptr[c], check_ptr[c + 1]):
                    parity ^= hard[w, edge_var[e]]
                if parity:
                    converged = False
                    break
            if converged:
                break
        for v in range(n):
            extrinsic[w, v] = ext[v]
        iters[w] = it
        ok[w] = converged


def ldpc_decode(channel_llrs, cfg: CodeConfig) -> DecodeResult:
    """Flooding sum-product decoding with early exit on a zero syndrome.

    Accepts one LLR vector or a 2-D batch (one codeword per row); each row is
    decoded independently and the result mirrors the input rank.
    """
    llrs = np.asarray(channel_llrs, dtype=float)
    single = llrs.ndim == 1
    llrs = np.atleast_2d(llrs).copy()
    if llrs.shape[1] != cfg.coded_bits:
        raise ContractError(f"expected {cfg.coded_bits} LLRs per codeword, got {llrs.shape[1]}")
    if np.isnan(llrs).any():
        raise ContractError("channel LLRs contain NaN")
    llrs[:, cfg.tb_bits: cfg.info_bits] = np.inf
    g = _graph(cfg)
    n_words = llrs.shape[0]
    extrinsic = np.zeros_like(llrs)
    hard = np.zeros(llrs.shape, dtype=np.uint8)
    iters = np.zeros(n_words, dtype=np.int64)
    ok = np.zeros(n_words, dtype=np.bool_)
    _spa_decode(llrs, g.check_ptr, g.edge_var, cfg.bp_iterations, extrinsic, hard, iters, ok)
    posterior = llrs + extrinsic
    crc_ok = np.array([crc_check(row[: cfg.tb_bits]) for row in hard])
    if single:
        return DecodeResult(posterior[0], extrinsic[0], hard[0], bool(ok[0]), bool(crc_ok[0]), int(iters[0]))
    return DecodeResult(posterior, extrinsic, hard, ok, crc_ok, iters)


# -------------------------------------------------------------------- alist

def write_alist(h, path) -> None:
    """Write a parity-check matrix in MacKay's alist format."""
    h = sp.csc_matrix(h)
    m, n = h.shape
    hr = sp.csr_matrix(h)
    col_deg = np.diff(h.indptr)
    row_deg = np.diff(hr.indptr)
    lines = [f"{n} {m}", f"{col_deg.max()} {row_deg.max()}",
             " ".join(map(str, col_deg)), " ".join(map(str, row_deg))]
    for c in range(n):
        rows = list(np.sort(h.indices[h.indptr[c]: h.indptr[c + 1]]) + 1)
        lines.append(" ".join(map(str, rows + [0] * (col_deg.max() - len(rows)))))
    for r in range(m):
        cols = list(np.sort(hr.indices[hr.indptr[r]: hr.indptr[r + 1]]) + 1)
        lines.append(" ".join(map(str, cols + [0] * (row_deg.max() - len(cols)))))
    Path(path).write_text("\n".join(lines) + "\n")


def read_alist(path) -> sp.csr_matrix:
    tokens = Path(path).read_text().split()
    vals = list(map(int, tokens))
    n, m, max_col, _max_row = vals[:4]
    pos = 4 + n + m
    rows, cols = [], []
    for c in range(n):
        for r in vals[pos: pos + max_col]:
            if r:
                rows.append(r - 1)
                cols.append(c)
        pos += max_col
    data = np.ones(len(rows), dtype=np.uint8)
    return sp.csr_matrix((data, (rows, cols)), shape=(m, n))
