"""Structural privacy scan of a recorded transcript.

Each message kind has a whitelist of payload fields and the type each
field may hold.  Opaque fields must contain only integers that look like
ciphertexts (in ``(0, n^2)``) or masked ring elements (far from both ends
of ``[0, n)``, where every honestly encoded small real would sit).  Plain
floats are legal only for the loss partial and config echoes.
"""

from __future__ import annotations

from dataclasses import dataclass

from .messages import HEADER, decode_body

# field -> "cipher" | "masked" | "meta" | "loss" | "config"
WHITELIST: dict[str, dict[str, str]] = {
    "Hello": {"role": "meta", "config": "config"},
    "PubKey": {"n": "meta", "g": "meta"},
    "EncMonomials": {"key_id": "meta", "layers": "cipher"},
    "EncScalar": {"G": "cipher", "yg": "cipher", "h": "cipher", "M": "cipher", "shape": "meta"},
    "MaskedGradRequest": {"items": "cipher"},
    "DecryptedMaskedGrad": {"items": "masked"},
    "LossReport": {"partial": "loss"},
    "Abort": {"reason": "meta"},
    "Done": {"rounds": "meta"},
}

# integer sub-fields inside opaque containers that are structural, not data
_STRUCTURAL = {"layer", "rows", "shape"}


@dataclass
class Violation:
    frame: int
    kind: str
    path: str
    detail: str


def _leaves(obj, path=""):
    if isinstance(obj, dict):
        for k, v in obj.items():
            yield from _leaves(v, f"{path}.{k}" if path else k)
    elif isinstance(obj, list):
        for i, v in enumerate(obj):
            yield from _leaves(v, f"{path}[{i}]")
    else:
        yield path, obj


def _structural(path: str) -> bool:
    parts = path.replace("[", ".").split(".")
    return any(p in _STRUCTURAL for p in parts)


def scan_transcript(frames, int_bits: int = 128) -> list[Violation]:
    """Return every whitelist violation in ``frames``.

    ``frames`` is the recorder list of a transport (``(direction, bytes)``
    pairs) or plain frame bytes.  Moduli are learned from ``PubKey``
    frames; opaque values are checked against the largest known modulus.
    """
    out: list[Violation] = []
    moduli: list[int] = []
    for i, item in enumerate(frames):
        raw = item[1] if isinstance(item, tuple) else item
        msg = decode_body(raw[HEADER.size:])
        allowed = WHITELIST[msg.kind]
        if msg.kind == "PubKey" and isinstance(msg.payload.get("n"), int):
            moduli.append(msg.payload["n"])
        for key, value in msg.payload.items():
            cls = allowed.get(key)
            if cls is None:
                out.append(Violation(i, msg.kind, key, "field not whitelisted"))
                continue
            if cls == "loss":
                if not isinstance(value, float):
                    out.append(Violation(i, msg.kind, key, "loss field must be a single scalar"))
                continue
            for path, leaf in _leaves(value, key):
                if cls in ("meta", "config"):
                    continue
                if _structural(path):
                    continue
                if isinstance(leaf, bool) or not isinstance(leaf, int):
                    out.append(Violation(i, msg.kind, path, f"plaintext {type(leaf).__name__} in opaque field"))
                    continue
                if not moduli:
                    out.append(Violation(i, msg.kind, path, "opaque value before any public key"))
                    continue
                n = max(moduli)
                if cls == "cipher":
                    if not 0 < leaf < n * n or leaf < (1 << (2 * int_bits)):
                        out.append(Violation(i, msg.kind, path, "value is not a plausible ciphertext"))
                elif cls == "masked":
                    # an unmasked encoding is within 2^(b+1) of 0 or of the modulus
                    lo = 1 << (int_bits + 1)
                    if leaf < lo or any(m - lo < leaf < m for m in moduli):
                        out.append(Violation(i, msg.kind, path, "masked value looks unmasked"))
    return out
