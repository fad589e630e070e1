from .masking import MaskError, MaskRecord, mask_cipher, unmask
from .messages import (
    KINDS,
    VERSION,
    FrameError,
    ProtocolAbort,
    ProtocolError,
    ProtocolMessage,
    VersionError,
    deserialize,
    serialize,
)
from .party import Party, PartyState, RoundMetrics, SessionConfig, run_parallel, run_round
from .scanner import scan_transcript
from .transport import LoopbackTransport, TcpTransport, Transport, tcp_pair
