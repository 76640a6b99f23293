"""Named desk-scale experiments.

Each preset is a list of :class:`ExperimentConfig` sweeps plus comment lines
for the CSV header.  The sizes are chosen so that a preset finishes in
minutes on one core at 2000 blocks per point while keeping the overload
(6 UEs on 2 receive antennas) that makes the trends visible.

Configs that appear in several presets are identical on purpose, so one
sweep can serve all of them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .harness import SNR_COMMENT, ExperimentConfig
from .transmitter import ConfigurationError

__all__ = ["Preset", "PRESETS", "get_preset"]

OUTER = (0, 1, 2, 3)

# CB-OFDMA: 96 REs of QPSK, 192 coded bits per UE, 24-bit payload (rate 0.21 with CRC)
_CB = dict(scheme="cb_ofdma", n_ue=6, n_re=96, tbs_bits=24, n_rx=2, coherence_re=12,
           outer_iterations=OUTER, n_blocks=2000, master_seed=1)
_CB_SNR = (-2.0, 0.0, 2.0, 4.0)
_ESE_SNR = (0.0, 3.0, 6.0, 9.0, 12.0)

# scheme comparison: 192 REs, so SCMA and NLS carry 96 coded bits per UE
_WIDE = dict(n_ue=6, n_re=192, tbs_bits=24, n_rx=2, coherence_re=12, detector="epa", ic="hybrid_pic",
             outer_iterations=OUTER, n_blocks=2000, master_seed=1)
_SCMA_SNR = (-5.0, -4.0, -3.0, -2.0)
_NLS_SNR = (-10.0, -9.0, -8.0, -7.0, -6.0)

CODEBOOK_NOTE = ("SCMA uses the built-in rotated-QPSK M=4 codebook and runs at its 6-layer capacity; "
                 "NLS uses the built-in unit-modulus signatures; load others with codebook_file")


@dataclass(frozen=True)
class Preset:
    name: str
    description: str
    configs: tuple
    notes: tuple = field(default=())

    @property
    def comments(self) -> list[str]:
        return [f"preset {self.name}: {self.description}", SNR_COMMENT, *self.notes]


def _cb(name, **kw) -> ExperimentConfig:
    return ExperimentConfig(name=name, **{**_CB, "snr_db": _CB_SNR, **kw})


def _wide(name, scheme, snr, **kw) -> ExperimentConfig:
    return ExperimentConfig(name=name, scheme=scheme, snr_db=snr, **{**_WIDE, **kw})


_PRESETS = [
    Preset("fig3_cbofdma_6ue", "BLER vs SNR for OL 0..3, CB-OFDMA, 6 UEs, MMSE + hybrid PIC",
           (_cb("cb_mmse_hybrid", detector="mmse", ic="hybrid_pic"),)),
    Preset("fig4_ic_comparison", "IC strategies at OL 0..3, CB-OFDMA, 6 UEs, MMSE detector",
           tuple(_cb(f"cb_mmse_{ic}", detector="mmse", ic=ic)
                 for ic in ("hybrid_pic", "soft_pic", "hard_sic", "enhanced_sic"))),
    Preset("fig5_detector_comparison", "MU detectors under hybrid PIC, CB-OFDMA, 6 UEs",
           (_cb("cb_mmse_hybrid", detector="mmse", ic="hybrid_pic"),
            _cb("cb_epa_hybrid", detector="epa", ic="hybrid_pic"),
            _cb("cb_ese_hybrid", detector="ese", ic="hybrid_pic", snr_db=_ESE_SNR),
            _cb("cb_mpa_hybrid", detector="mpa", ic="hybrid_pic"))),
    Preset("fig6_scheme_comparison", "SCMA vs CB-OFDMA vs NLS, 6 UEs, EPA + hybrid PIC",
           (_wide("scma_epa_hybrid", "scma", _SCMA_SNR),
            _wide("wide_cb_epa_hybrid", "cb_ofdma", _SCMA_SNR),
            _wide("nls_epa_hybrid", "nls", _NLS_SNR)),
           (CODEBOOK_NOTE,)),
    Preset("scma_epa_vs_mpa", "EPA vs MPA on the default SCMA layout, 6 UEs, hybrid PIC",
           (_wide("scma_epa_hybrid", "scma", _SCMA_SNR),
            _wide("scma_mpa_hybrid", "scma", _SCMA_SNR, detector="mpa")),
           (CODEBOOK_NOTE,)),
]

PRESETS: dict[str, Preset] = {p.name: p for p in _PRESETS}


def get_preset(name: str) -> Preset:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigurationError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}") from None
