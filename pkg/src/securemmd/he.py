"""Paillier additively homomorphic encryption and the fixed-point codec.

Ciphertexts live in Z*_{n^2}; plaintexts are residues mod n.  Reals are
mapped into the plaintext ring by scaling with ``2**frac_bits`` and
rounding, with negatives stored in the upper half of the ring so that
homomorphic addition works without any rebiasing.

Every randomised operation takes an explicit :class:`random.Random`
handle so full protocol runs can be replayed from a seed.
"""

from __future__ import annotations

import hashlib
import math
import random
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import gmpy2
import numpy as np

DEFAULT_KEY_BITS = 2048
TEST_KEY_BITS = 512
_PRIME_ATTEMPTS = 10_000


class HEError(Exception):
    """Base class for encryption and encoding failures."""


class KeyMismatchError(HEError):
    """Ciphertexts or keys bound to different public keys were combined."""


class MalformedCiphertextError(HEError, ValueError):
    pass


class PlaintextRangeError(HEError, ValueError):
    pass


class FixedPointOverflowError(HEError, OverflowError):
    """A value does not fit the configured fixed-point magnitude budget."""


class KeyGenerationError(HEError):
    pass


def _key_id(n: int) -> str:
    return hashlib.sha256(format(n, "x").encode()).hexdigest()[:16]


@dataclass(frozen=True)
class PublicKey:
    n: int
    g: int = 0
    nsquare: int = field(init=False, repr=False, compare=False)
    key_id: str = field(init=False, compare=False)

    def __post_init__(self):
        if self.n < 15:
            raise ValueError(f"modulus too small: {self.n}")
        if self.g == 0:
            object.__setattr__(self, "g", self.n + 1)
        object.__setattr__(self, "nsquare", self.n * self.n)
        object.__setattr__(self, "key_id", _key_id(self.n))

    @property
    def bits(self) -> int:
        return self.n.bit_length()

    def to_dict(self) -> dict:
        return {"n": format(self.n, "x"), "g": format(self.g, "x")}

    @classmethod
    def from_dict(cls, d: dict) -> "PublicKey":
        return cls(int(d["n"], 16), int(d["g"], 16))


@dataclass(frozen=True)
class SecretKey:
    public_key: PublicKey
    lam: int
    mu: int

    def __repr__(self):
        return f"SecretKey(key_id={self.public_key.key_id!r})"


@dataclass(frozen=True)
class KeyPair:
    public: PublicKey
    secret: SecretKey

    @property
    def key_id(self) -> str:
        return self.public.key_id


@dataclass(frozen=True, slots=True)
class Ciphertext:
    value: int
    key_id: str

    def to_hex(self) -> str:
        return format(int(self.value), "x")


def keypair_from_primes(p: int, q: int) -> KeyPair:
    """Build a key pair from explicit primes (tests use tiny ones)."""
    if p == q:
        raise KeyGenerationError("p and q must be distinct")
    n = p * q
    if math.gcd(n, (p - 1) * (q - 1)) != 1:
        raise KeyGenerationError(f"gcd(n, phi(n)) != 1 for p={p}, q={q}")
    lam = math.lcm(p - 1, q - 1)
    pk = PublicKey(n)
    # with g = n+1, L(g^lam mod n^2) = lam mod n
    mu = int(gmpy2.invert(lam % n, n))
    return KeyPair(pk, SecretKey(pk, lam, mu))


def _random_prime(bits: int, rng: random.Random) -> int:
    for _ in range(_PRIME_ATTEMPTS):
        # top two bits set so that p*q has exactly 2*bits bits
        cand = rng.getrandbits(bits) | (3 << (bits - 2)) | 1
        if gmpy2.is_prime(cand, 40):
            return cand
    raise KeyGenerationError(f"no {bits}-bit prime found after {_PRIME_ATTEMPTS} draws")


def keygen(bits: int = DEFAULT_KEY_BITS, seed: int | None = None) -> KeyPair:
    """Generate a Paillier key pair whose modulus has exactly ``bits`` bits.

    Deterministic for a given ``seed``.
    """
    if bits < 16 or bits % 2:
        raise KeyGenerationError(f"key size must be an even number >= 16, got {bits}")
    rng = random.Random(seed)
    half = bits // 2
    for _ in range(100):
        p = _random_prime(half, rng)
        q = _random_prime(half, rng)
        if p == q:
            continue
        try:
            kp = keypair_from_primes(p, q)
        except KeyGenerationError:
            continue
        if kp.public.n.bit_length() == bits:
            return kp
    raise KeyGenerationError("prime generation failed after bounded retries")


def _check_key(pk: PublicKey, *cts: Ciphertext) -> None:
    for c in cts:
        if c.key_id != pk.key_id:
            raise KeyMismatchError(f"ciphertext bound to key {c.key_id}, expected {pk.key_id}")


def _obfuscator(pk: PublicKey, rng: random.Random | None) -> int:
    rng = rng or random.SystemRandom()
    while True:
        r = rng.randrange(1, pk.n)
        if math.gcd(r, pk.n) == 1:
            return int(gmpy2.powmod(r, pk.n, pk.nsquare))


def encrypt(pk: PublicKey, m: int, rng: random.Random | None = None, r: int | None = None) -> Ciphertext:
    """Encrypt a ring element ``0 <= m < n``.

    ``r`` pins the randomness (test oracles only); otherwise it is drawn
    from ``rng``, or from the OS entropy pool when no handle is given.
    """
    m = int(m)
    if not 0 <= m < pk.n:
        raise PlaintextRangeError(f"plaintext {m} outside [0, n)")
    if r is not None:
        rn = int(gmpy2.powmod(r, pk.n, pk.nsquare))
    else:
        rn = _obfuscator(pk, rng)
    # g^m = 1 + m*n mod n^2 when g = n+1
    if pk.g == pk.n + 1:
        gm = (1 + m * pk.n) % pk.nsquare
    else:
        gm = int(gmpy2.powmod(pk.g, m, pk.nsquare))
    return Ciphertext(gm * rn % pk.nsquare, pk.key_id)


def decrypt(sk: SecretKey, c: Ciphertext) -> int:
    pk = sk.public_key
    _check_key(pk, c)
    if not 0 < c.value < pk.nsquare:
        raise MalformedCiphertextError("ciphertext value not in (0, n^2)")
    u = gmpy2.powmod(c.value, sk.lam, pk.nsquare)
    return int((u - 1) // pk.n * sk.mu % pk.n)


def add_cipher(pk: PublicKey, c1: Ciphertext, c2: Ciphertext) -> Ciphertext:
    _check_key(pk, c1, c2)
    return Ciphertext(c1.value * c2.value % pk.nsquare, pk.key_id)


def mul_plain(pk: PublicKey, c: Ciphertext, s: int) -> Ciphertext:
    """Ciphertext of ``s * m mod n``.

    Upper-half scalars (encoded negatives) are applied as a small power of
    the inverse ciphertext, which decrypts identically and is much cheaper.
    """
    _check_key(pk, c)
    s = int(s)
    if not 0 <= s < pk.n:
        raise PlaintextRangeError(f"scalar {s} outside [0, n)")
    if s > pk.n // 2:
        inv = gmpy2.invert(c.value, pk.nsquare)
        return Ciphertext(int(gmpy2.powmod(inv, pk.n - s, pk.nsquare)), pk.key_id)
    return Ciphertext(int(gmpy2.powmod(c.value, s, pk.nsquare)), pk.key_id)


def zero_cipher(pk: PublicKey) -> Ciphertext:
    """The deterministic encryption of 0 (value 1); an accumulator seed.

    Not semantically secure on its own; only used where the result is
    combined with fresh ciphertexts or masked before leaving the party.
    """
    return Ciphertext(1, pk.key_id)


def sum_ciphers(pk: PublicKey, cts: Iterable[Ciphertext]) -> Ciphertext:
    acc = gmpy2.mpz(1)
    nsq = pk.nsquare
    for c in cts:
        _check_key(pk, c)
        acc = acc * c.value % nsq
    return Ciphertext(int(acc), pk.key_id)


def dot_plain(pk: PublicKey, cts: Sequence[Ciphertext], scalars: Sequence[int]) -> Ciphertext:
    """Ciphertext of ``sum_t s_t * m_t``; zero scalars are skipped."""
    nsq, n, half = pk.nsquare, pk.n, pk.n // 2
    pos = gmpy2.mpz(1)
    neg = gmpy2.mpz(1)
    for c, s in zip(cts, scalars):
        s = int(s)
        if s == 0:
            continue
        _check_key(pk, c)
        if s > half:
            neg = neg * gmpy2.powmod(c.value, n - s, nsq) % nsq
        else:
            pos = pos * gmpy2.powmod(c.value, s, nsq) % nsq
    if neg != 1:
        pos = pos * gmpy2.invert(neg, nsq) % nsq
    return Ciphertext(int(pos), pk.key_id)


def rerandomize(pk: PublicKey, c: Ciphertext, rng: random.Random | None = None) -> Ciphertext:
    _check_key(pk, c)
    return Ciphertext(c.value * _obfuscator(pk, rng) % pk.nsquare, pk.key_id)


# ---------------------------------------------------------------------------
# fixed point
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FixedPointParams:
    """Scale/width contract for mapping reals into Z_n.

    ``frac_bits`` is the binary precision ``f``; ``int_bits`` is the total
    magnitude budget ``b`` an encoded integer may reach (at any scale).
    """

    frac_bits: int = 40
    int_bits: int = 128
    modulus: int | None = None

    def __post_init__(self):
        if self.frac_bits < 0 or self.int_bits <= 0:
            raise ValueError("frac_bits must be >= 0 and int_bits > 0")
        if self.modulus is not None and not (1 << self.int_bits) < self.modulus // 2:
            raise FixedPointOverflowError(
                f"2^{self.int_bits} does not fit below n/2 for a {self.modulus.bit_length()}-bit modulus"
            )

    def with_modulus(self, n: int) -> "FixedPointParams":
        return FixedPointParams(self.frac_bits, self.int_bits, n)

    @property
    def max_abs(self) -> float:
        """Largest magnitude encodable at scale 1."""
        return 2.0 ** (self.int_bits - self.frac_bits - 1)

    def _n(self) -> int:
        if self.modulus is None:
            raise ValueError("FixedPointParams has no modulus; use with_modulus(pk.n)")
        return self.modulus


def _round_half_away(a: float) -> int:
    q = math.floor(a)
    return q + 1 if a - q >= 0.5 else q


def encode_fixed(x: float, params: FixedPointParams, scale: int = 1) -> int:
    """Encode a real at ``scale`` fixed-point factors (round half away from zero)."""
    x = float(x)
    if not math.isfinite(x):
        raise FixedPointOverflowError(f"cannot encode non-finite value {x}")
    bits = params.frac_bits * scale
    if abs(x) >= 2.0 ** (params.int_bits - bits - 1):
        raise FixedPointOverflowError(f"|{x}| exceeds fixed-point range at scale {scale}")
    v = _round_half_away(math.ldexp(abs(x), bits))
    n = params._n()
    return n - v if x < 0 and v else v


def encode_array(xs, params: FixedPointParams, scale: int = 1) -> list[int]:
    """Vectorised :func:`encode_fixed`; returns a flat list of ring elements."""
    arr = np.asarray(xs, dtype=np.float64).ravel()
    if not np.all(np.isfinite(arr)):
        raise FixedPointOverflowError("cannot encode non-finite values")
    bits = params.frac_bits * scale
    if arr.size and np.max(np.abs(arr)) >= 2.0 ** (params.int_bits - bits - 1):
        raise FixedPointOverflowError(f"value exceeds fixed-point range at scale {scale}")
    a = np.ldexp(np.abs(arr), bits)
    q = np.floor(a)
    q = q + (a - q >= 0.5)
    n = params._n()
    out = []
    for v, neg in zip(q.tolist(), (arr < 0).tolist()):
        v = int(v)
        out.append(n - v if neg and v else v)
    return out


def signed_residue(m: int, n: int) -> int:
    m = int(m) % n
    return m - n if m > n // 2 else m


def decode_fixed(m: int, params: FixedPointParams, scale: int = 1) -> float:
    """Decode a ring element carrying ``scale`` fixed-point factors of ``2**f``.

    Residues above n/2 are negative.  Magnitudes beyond ``2**int_bits``
    mean the precision budget was blown and raise instead of returning junk.
    """
    v = signed_residue(m, params._n())
    if abs(v) > (1 << params.int_bits):
        raise FixedPointOverflowError(
            f"decoded magnitude 2^{abs(v).bit_length()} exceeds budget 2^{params.int_bits}"
        )
    return v / (1 << (params.frac_bits * scale))


def decode_array(ms: Iterable[int], params: FixedPointParams, scale: int = 1) -> np.ndarray:
    return np.array([decode_fixed(m, params, scale) for m in ms], dtype=np.float64)


# ---------------------------------------------------------------------------
# tensors of ciphertexts
# ---------------------------------------------------------------------------


@dataclass
class CipherTensor:
    """A flat list of ciphertexts with a logical shape and fixed-point scale."""

    values: list[Ciphertext]
    shape: tuple[int, ...]
    scale: int
    key_id: str

    def __post_init__(self):
        self.shape = tuple(int(s) for s in self.shape)
        if math.prod(self.shape) != len(self.values):
            raise ValueError(f"shape {self.shape} does not match {len(self.values)} ciphertexts")

    def __len__(self):
        return len(self.values)


def encrypt_array(pk: PublicKey, xs, params: FixedPointParams, rng: random.Random | None,
                  scale: int = 1) -> CipherTensor:
    arr = np.asarray(xs, dtype=np.float64)
    enc = encode_array(arr, params.with_modulus(pk.n), scale)
    return CipherTensor([encrypt(pk, m, rng) for m in enc], arr.shape, scale, pk.key_id)


def decrypt_array(sk: SecretKey, ct: CipherTensor, params: FixedPointParams) -> np.ndarray:
    p = params.with_modulus(sk.public_key.n)
    out = [decode_fixed(decrypt(sk, c), p, ct.scale) for c in ct.values]
    return np.array(out, dtype=np.float64).reshape(ct.shape)
