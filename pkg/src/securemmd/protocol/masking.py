"""Decrypt-with-mask: hide a peer-keyed value behind a uniform ring element."""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .. import he
from ..he import Ciphertext, PublicKey


class MaskError(RuntimeError):
    pass


def draw_mask(pk: PublicKey, rng: random.Random) -> int:
    return rng.randrange(pk.n)


def mask_cipher(pk_peer: PublicKey, c: Ciphertext, rng: random.Random) -> tuple[Ciphertext, int]:
    """``c + Enc(r)`` for a fresh uniform ``r``; the caller keeps ``r``."""
    r = draw_mask(pk_peer, rng)
    return he.add_cipher(pk_peer, c, he.encrypt(pk_peer, r, rng)), r


def unmask(value: int, r: int, n: int) -> int:
    return (value - r) % n


@dataclass
class MaskRecord:
    """One-time masks keyed by request id, tagged with the round that made them."""

    round: int = 0
    masks: dict[str, list[int]] = field(default_factory=dict)

    def put(self, request_id: str, values: list[int]) -> None:
        if request_id in self.masks:
            raise MaskError(f"mask {request_id!r} already issued this round")
        self.masks[request_id] = list(values)

    def take(self, request_id: str) -> list[int]:
        try:
            return self.masks.pop(request_id)
        except KeyError:
            raise MaskError(f"mask {request_id!r} unknown or already consumed") from None

    def clear(self) -> None:
        self.masks.clear()

    def __len__(self):
        return len(self.masks)
