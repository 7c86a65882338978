"""Message-space policies for inter-agent signalling.

Three variants are supported:

* ``emergent:<k>`` -- agents pick one of ``k`` abstract symbols per step as
  the secondary half of their joint action; symbol meanings are whatever
  training makes of them.
* ``predefined`` -- a fixed 3-code vocabulary reporting CPU usage relative
  to the slice's share (0 above, 1 below, 2 exact); agents learn only the
  allocation half of the action.
* ``silent`` -- no messages at all; the action space collapses to the six
  CPU levels and observations carry no peer blocks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

N_CPU_LEVELS = 6

# Emitted at reset before any real message exists; reuses symbol 0 so the
# observation layout is identical on every step.
NO_MESSAGE = 0

# Dead band around "exact share usage" for the predefined codes (GHz).
SHARE_TOLERANCE_GHZ = 1e-6


@dataclass(frozen=True)
class MessagePolicy:
    """Which message vocabulary the agents use.

    ``kind`` is one of ``"emergent"``, ``"predefined"``, ``"silent"``.
    ``alphabet_size`` is the number of distinct symbols (0 when silent,
    always 3 for predefined).
    """

    kind: str
    alphabet_size: int

    def __post_init__(self):
        if self.kind not in ("emergent", "predefined", "silent"):
            raise ValueError(f"unknown message policy kind: {self.kind!r}")
        if self.kind == "emergent" and self.alphabet_size < 2:
            raise ValueError("emergent alphabet needs at least 2 symbols")
        if self.kind == "predefined" and self.alphabet_size != 3:
            raise ValueError("predefined protocol uses exactly 3 codes")
        if self.kind == "silent" and self.alphabet_size != 0:
            raise ValueError("silent policy has no alphabet")

    @property
    def silent(self) -> bool:
        return self.kind == "silent"

    @property
    def name(self) -> str:
        if self.kind == "emergent":
            return f"emergent:{self.alphabet_size}"
        return self.kind

    @staticmethod
    def emergent(alphabet_size: int) -> "MessagePolicy":
        return MessagePolicy("emergent", alphabet_size)

    @staticmethod
    def predefined() -> "MessagePolicy":
        return MessagePolicy("predefined", 3)

    @staticmethod
    def silent_policy() -> "MessagePolicy":
        return MessagePolicy("silent", 0)

    @staticmethod
    def parse(text: str) -> "MessagePolicy":
        """Parse ``emergent:<k>`` / ``predefined`` / ``silent``."""
        text = text.strip()
        if text == "predefined":
            return MessagePolicy.predefined()
        if text == "silent":
            return MessagePolicy.silent_policy()
        if text.startswith("emergent:"):
            try:
                k = int(text.split(":", 1)[1])
            except ValueError as exc:
                raise ValueError(f"bad alphabet size in {text!r}") from exc
            return MessagePolicy.emergent(k)
        raise ValueError(f"unknown comm policy: {text!r}")


def predefined_message(granted_ghz: float, share_ghz: float) -> int:
    """Fixed-vocabulary code for CPU usage relative to the default share.

    0 = above share, 1 = below share, 2 = exact (within tolerance).
    """
    if granted_ghz > share_ghz + SHARE_TOLERANCE_GHZ:
        return 0
    if granted_ghz < share_ghz - SHARE_TOLERANCE_GHZ:
        return 1
    return 2


def encode_inbound(symbols, alphabet_size: int) -> np.ndarray:
    """One-hot encode per-peer symbols and concatenate in peer order.

    ``symbols`` is an iterable of symbol indices, one per peer.  Returns an
    empty vector when ``alphabet_size`` is 0 (silent policy).
    """
    symbols = list(symbols)
    if alphabet_size == 0:
        return np.zeros(0)
    out = np.zeros(len(symbols) * alphabet_size)
    for block, sym in enumerate(symbols):
        sym = int(sym)
        if not 0 <= sym < alphabet_size:
            raise ValueError(f"symbol {sym} outside alphabet of size {alphabet_size}")
        out[block * alphabet_size + sym] = 1.0
    return out


def action_space_size(policy: MessagePolicy) -> int:
    """Joint (cpu level, message) action count for a policy."""
    if policy.silent:
        return N_CPU_LEVELS
    return N_CPU_LEVELS * policy.alphabet_size


def encode_action(cpu_level_idx: int, msg_symbol: int, n_msg: int) -> int:
    """Pack a (cpu level, message) pair into a joint action index."""
    if n_msg < 1:
        raise ValueError("n_msg must be >= 1")
    if not 0 <= msg_symbol < n_msg:
        raise ValueError(f"message symbol {msg_symbol} out of range")
    if not 0 <= cpu_level_idx < N_CPU_LEVELS:
        raise ValueError(f"cpu level index {cpu_level_idx} out of range")
    return cpu_level_idx * n_msg + msg_symbol


def decode_action(index: int, n_msg: int) -> tuple[int, int]:
    """Unpack a joint action index into (cpu_level_idx, msg_symbol)."""
    if n_msg < 1:
        raise ValueError("n_msg must be >= 1")
    if not 0 <= index < N_CPU_LEVELS * n_msg:
        raise ValueError(f"action index {index} out of range for n_msg={n_msg}")
    return index // n_msg, index % n_msg


def observation_dim(policy: MessagePolicy, n_peers: int = 2) -> int:
    """Observation length: served + gap, plus one one-hot block per peer."""
    return 2 + n_peers * policy.alphabet_size
