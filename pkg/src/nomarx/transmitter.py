"""NoMA transmit schemes: CB-OFDMA, non-sparse linear spreading, SCMA.

Every scheme is expressed as a :class:`SchemeLayout`: the RE grid is cut into
consecutive blocks of ``block_size`` REs, each layer occupies a fixed subset
of a block's REs, and one symbol drawn from the layer's alphabet is sent per
block.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .messages import ContractError, bit_table

NLS_SEED = 20180521

# 4 REs x 6 layers: RE row weight 3, layer column weight 2
SCMA_INDICATOR = np.array([
    [1, 1, 1, 0, 0, 0],
    [1, 0, 0, 1, 1, 0],
    [0, 1, 0, 1, 0, 1],
    [0, 0, 1, 0, 1, 1],
], dtype=bool)

__all__ = [
    "ConfigurationError",
    "SchemeLayout",
    "gray_qam",
    "build_scheme",
    "map_bits",
    "hard_demap",
    "write_codebook",
    "read_codebook",
    "layout_from_codebook",
]


class ConfigurationError(ValueError):
    """An unsupported or inconsistent configuration."""


def _gray_pam(n_bits: int) -> np.ndarray:
    """Gray-labeled PAM levels indexed by label; label 0 sits on the largest level."""
    size = 1 << n_bits
    pos = np.arange(size)
    levels = np.empty(size)
    levels[pos ^ (pos >> 1)] = (size - 1) - 2.0 * pos
    return levels


def gray_qam(order: int) -> np.ndarray:
    """Unit-energy Gray-labeled square QAM; the first half of the label bits drive I."""
    n_bits = int(np.log2(order))
    if 1 << n_bits != order or n_bits % 2:
        raise ConfigurationError(f"square QAM needs an even power of two, got {order}")
    half = n_bits // 2
    pam = _gray_pam(half)
    idx = np.arange(order)
    points = pam[idx >> half] + 1j * pam[idx & ((1 << half) - 1)]
    return points / np.sqrt(np.mean(np.abs(points) ** 2))


@dataclass(frozen=True, eq=False)
class SchemeLayout:
    """Per-layer RE footprints and symbol-block alphabets.

    ``alphabets[j, i, l]`` is the value layer ``j`` puts on local RE ``l`` of a
    block when sending symbol ``i`` (zero where ``occupancy[j, l]`` is False).
    When the alphabets factor as ``base_alphabet[i] * signatures[j, l]`` the
    layout is a spreading layout and block-wise MMSE applies.
    """

    kind: str
    n_layers: int
    n_re: int
    block_size: int
    occupancy: np.ndarray
    alphabets: np.ndarray
    base_alphabet: np.ndarray | None = None
    signatures: np.ndarray | None = None
    projections: tuple = field(init=False, repr=False)

    def __post_init__(self):
        occ = np.asarray(self.occupancy, dtype=bool)
        alph = np.asarray(self.alphabets, dtype=complex)
        j, m, b = alph.shape
        if occ.shape != (j, b) or j != self.n_layers or b != self.block_size:
            raise ConfigurationError("occupancy/alphabet shapes disagree with the layout dimensions")
        if m < 2 or m & (m - 1):
            raise ConfigurationError(f"alphabet size must be a power of two >= 2, got {m}")
        if self.n_re % self.block_size:
            raise ConfigurationError(f"n_re={self.n_re} is not a multiple of block_size={self.block_size}")
        if np.any(np.abs(alph) * ~occ[:, None, :] > 0):
            raise ConfigurationError("alphabets must vanish on unoccupied REs")
        energy = np.array([np.mean(np.abs(alph[jj][:, occ[jj]]) ** 2) for jj in range(j)])
        if np.any(np.abs(energy - 1.0) > 1e-9):
            raise ConfigurationError(f"average energy per occupied RE must be 1, got {energy}")
        object.__setattr__(self, "occupancy", occ)
        object.__setattr__(self, "alphabets", alph)
        projections = []
        for jj in range(j):
            row = []
            for ll in range(b):
                if not occ[jj, ll]:
                    row.append(None)
                    continue
                points, index = _distinct(alph[jj, :, ll])
                row.append((points, index))
            projections.append(tuple(row))
        object.__setattr__(self, "projections", tuple(projections))

    @property
    def n_blocks(self) -> int:
        return self.n_re // self.block_size

    @property
    def order(self) -> int:
        return self.alphabets.shape[1]

    @property
    def bits_per_block(self) -> int:
        return self.order.bit_length() - 1

    @property
    def coded_bits_per_layer(self) -> int:
        return self.n_blocks * self.bits_per_block

    @property
    def is_spreading(self) -> bool:
        return self.signatures is not None

    @property
    def d_f(self) -> np.ndarray:
        """Number of layers colliding on each RE of the grid."""
        return np.tile(self.occupancy.sum(axis=0), self.n_blocks)

    @property
    def m_p(self) -> np.ndarray:
        """Largest per-layer projected alphabet size on each RE of the grid."""
        per_local = np.array([
            max((len(self.projections[j][l][0]) for j in range(self.n_layers) if self.occupancy[j, l]), default=0)
            for l in range(self.block_size)
        ])
        return np.tile(per_local, self.n_blocks)

    def footprint(self, layer: int) -> list[np.ndarray]:
        """Occupied RE indices of ``layer``, one array per block."""
        local = np.flatnonzero(self.occupancy[layer])
        return [b * self.block_size + local for b in range(self.n_blocks)]

    def re_mask(self, layer: int) -> np.ndarray:
        return np.tile(self.occupancy[layer], self.n_blocks)


def _distinct(values: np.ndarray, decimals: int = 12):
    """Distinct points of ``values`` and the index of each value among them."""
    keys = np.round(values.real, decimals) + 1j * np.round(values.imag, decimals)
    points, index = np.unique(keys, return_inverse=True)
    return values[np.unique(index, return_index=True)[1]], index.ravel()


def _spreading_layout(kind, n_re, base, signatures) -> SchemeLayout:
    signatures = np.asarray(signatures, complex)
    alph = base[None, :, None] * signatures[:, None, :]
    occ = signatures != 0
    return SchemeLayout(kind, signatures.shape[0], n_re, signatures.shape[1], occ, alph,
                        base_alphabet=base, signatures=signatures)


def nls_signatures(n_layers: int, length: int, seed: int = NLS_SEED) -> np.ndarray:
    """Unit-modulus chips from {+-1 +-j}/sqrt(2), distinct across layers."""
    rng = np.random.default_rng(seed)
    chips = np.exp(1j * np.pi * (0.25 + 0.5 * np.arange(4)))  # in rotation order
    seen: set = set()
    rows = []
    while len(rows) < n_layers:
        pick = tuple(rng.integers(4, size=length))
        # signatures equal up to a common phase are indistinguishable
        canon = tuple((np.array(pick) - pick[0]) % 4)
        if canon in seen and len(seen) < 4 ** (length - 1):
            continue
        seen.add(canon)
        rows.append(chips[list(pick)])
    return np.array(rows)


def scma_signatures(n_layers: int) -> np.ndarray:
    """Default sparse signatures: layer ``k`` rotated by ``k*pi/12`` on its two REs."""
    if n_layers > SCMA_INDICATOR.shape[1]:
        raise ConfigurationError(f"default SCMA layout hosts at most {SCMA_INDICATOR.shape[1]} layers, got {n_layers}")
    rot = np.exp(1j * np.pi * np.arange(n_layers) / 12)
    return SCMA_INDICATOR[:, :n_layers].T * rot[:, None]


def build_scheme(kind: str, n_layers: int, n_re: int, **params) -> SchemeLayout:
    """Construct a layout.

    Parameters accepted in ``params``: ``order`` (constellation size, default
    4), ``spreading_length`` for NLS (default 4), ``codebook_file`` to load
    SCMA codebooks or NLS signatures from disk.
    """
    order = int(params.get("order", 4))
    if n_layers < 1:
        raise ConfigurationError("need at least one layer")
    codebook_file = params.get("codebook_file")
    if codebook_file:
        return _layout_from_file(kind, n_layers, n_re, codebook_file, order)
    if kind == "cb_ofdma":
        return _spreading_layout(kind, n_re, gray_qam(order), np.ones((n_layers, 1), complex))
    if kind == "nls":
        length = int(params.get("spreading_length", 4))
        if n_re % length:
            raise ConfigurationError(f"n_re={n_re} is not a multiple of the spreading length {length}")
        return _spreading_layout(kind, n_re, gray_qam(order), nls_signatures(n_layers, length))
    if kind == "scma":
        if n_re % 4:
            raise ConfigurationError(f"n_re={n_re} is not a multiple of the SCMA block size 4")
        return _spreading_layout(kind, n_re, gray_qam(order), scma_signatures(n_layers))
    raise ConfigurationError(f"unknown scheme kind {kind!r}")


def _layout_from_file(kind, n_layers, n_re, path, order) -> SchemeLayout:
    table = read_codebook(path)
    if table.shape[0] < n_layers:
        raise ConfigurationError(f"{path} defines {table.shape[0]} layers, {n_layers} requested")
    table = table[:n_layers]
    if table.shape[1] == 1:
        signatures = table[:, 0, :]
        if n_re % signatures.shape[1]:
            raise ConfigurationError(f"n_re={n_re} is not a multiple of the signature length")
        return _spreading_layout(kind, n_re, gray_qam(order), signatures)
    return layout_from_codebook(kind, n_re, table)


def layout_from_codebook(kind: str, n_re: int, table: np.ndarray) -> SchemeLayout:
    """Layout from a full codebook array ``(n_layers, M, block_size)``."""
    table = np.asarray(table, complex)
    occ = np.any(table != 0, axis=1)
    return SchemeLayout(kind, table.shape[0], n_re, table.shape[2], occ, table)


def map_bits(layer: int, coded_bits, layout: SchemeLayout) -> np.ndarray:
    """Map one layer's coded bits onto the RE grid (zero on unoccupied REs)."""
    bits = np.asarray(coded_bits, dtype=np.int64).ravel()
    if bits.size != layout.coded_bits_per_layer:
        raise ContractError(f"expected {layout.coded_bits_per_layer} coded bits, got {bits.size}")
    groups = bits.reshape(layout.n_blocks, layout.bits_per_block)
    weights = 1 << np.arange(layout.bits_per_block - 1, -1, -1)
    symbols = groups @ weights
    return layout.alphabets[layer, symbols, :].reshape(-1)


def hard_demap(row, layer: int, layout: SchemeLayout) -> np.ndarray:
    """Nearest-symbol inverse of :func:`map_bits`."""
    blocks = np.asarray(row, complex).reshape(layout.n_blocks, 1, layout.block_size)
    dist = np.sum(np.abs(blocks - layout.alphabets[layer][None]) ** 2, axis=-1)
    return bit_table(layout.bits_per_block)[np.argmin(dist, axis=1)].reshape(-1).astype(np.uint8)


# ---------------------------------------------------------------- file I/O

def write_codebook(path, table) -> None:
    """Write ``(n_layers, M, L)`` complex values as text.

    Header ``M L n_layers``, then one ``re im`` line per value in layer,
    symbol, RE order.  Signature sets are written with ``M = 1``.
    """
    table = np.asarray(table, complex)
    n_layers, m, length = table.shape
    lines = [f"{m} {length} {n_layers}"]
    lines += [f"{float(v.real)!r} {float(v.imag)!r}" for v in table.reshape(-1)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_codebook(path) -> np.ndarray:
    text = Path(path).read_text().split("\n")
    rows = [ln.split() for ln in text if ln.strip() and not ln.lstrip().startswith("#")]
    try:
        m, length, n_layers = map(int, rows[0])
        values = np.array([float(a) + 1j * float(b) for a, b in rows[1:]])
    except (ValueError, IndexError) as exc:
        raise ConfigurationError(f"{path}: malformed codebook file ({exc})") from None
    if values.size != m * length * n_layers:
        raise ConfigurationError(f"{path}: expected {m * length * n_layers} values, found {values.size}")
    table = values.reshape(n_layers, m, length)
    for j in range(n_layers):
        occ = np.any(table[j] != 0, axis=0)
        energy = np.mean(np.abs(table[j][:, occ]) ** 2)
        if abs(energy - 1.0) > 1e-9:
            raise ConfigurationError(f"{path}: layer {j} has energy {energy:.12g} per occupied RE, expected 1")
    return table
