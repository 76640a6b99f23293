"""Link-level simulator for iterative multi-user NoMA receivers.

The pipeline runs CRC + LDPC coding, then a NoMA layout (CB-OFDMA, NLS or
SCMA), then a block Rayleigh channel, then a multi-user detector (MPA, EPA,
ESE or MMSE) inside an outer loop with hard/soft interference cancellation.
"""

from .channel import ChannelRealization, ReceivedGrid, apply_channel, generate_channel
from .coding import CodeConfig, DecodeResult, crc16, crc_attach, crc_check, ldpc_decode, ldpc_encode, make_ldpc
from .detectors import ComplexityGuardError, DetectorInput, DetectorOutput, detect
from .harness import BlerRecord, ExperimentConfig, emit_csv, load_config, run_sweep
from .messages import ContractError, DiscretePrior, GaussianMessage
from .receiver import OuterLoopConfig, ReceiverResult, run_receiver
from .transmitter import ConfigurationError, SchemeLayout, build_scheme, map_bits

__version__ = "0.1.0"

__all__ = [
    "BlerRecord",
    "ChannelRealization",
    "CodeConfig",
    "ComplexityGuardError",
    "ConfigurationError",
    "ContractError",
    "DecodeResult",
    "DetectorInput",
    "DetectorOutput",
    "DiscretePrior",
    "ExperimentConfig",
    "GaussianMessage",
    "OuterLoopConfig",
    "ReceivedGrid",
    "ReceiverResult",
    "SchemeLayout",
    "apply_channel",
    "build_scheme",
    "crc16",
    "crc_attach",
    "crc_check",
    "detect",
    "emit_csv",
    "generate_channel",
    "ldpc_decode",
    "ldpc_encode",
    "load_config",
    "make_ldpc",
    "map_bits",
    "run_receiver",
    "run_sweep",
]
