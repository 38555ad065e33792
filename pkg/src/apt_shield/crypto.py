"""Schnorr-group arithmetic, additive Schnorr multisignatures and a small
DH-based hybrid encryption scheme.

Everything here works over a prime-order subgroup of ``Z_p^*``.  Values are
plain Python integers; all dataclasses are frozen so they can be shared
between threads.
"""

from __future__ import annotations

import functools
import hashlib
import hmac
import random
import secrets
import struct
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence, Union

HashFn = Callable[[bytes], Union[bytes, int]]

# lambda -> bit length of p
_MODULUS_BITS = {16: 64, 160: 1024, 224: 2048, 256: 2048}
TEST_LAMBDAS = frozenset({16})
SECURITY_LEVELS = frozenset(_MODULUS_BITS)

_SMALL_PRIMES = [
    3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71,
    73, 79, 83, 89, 97, 101, 103, 107, 109, 113, 127, 131, 137, 139, 149, 151,
    157, 163, 167, 173, 179, 181, 191, 193, 197, 199, 211, 223, 227, 229, 233,
]


class CryptoError(Exception):
    pass


class InvalidParams(CryptoError):
    pass


class DecryptionError(CryptoError):
    """Authenticated decryption failed; callers treat it as the bottom result."""


# ---------------------------------------------------------------------------
# encoding helpers


def int_to_bytes(n: int) -> bytes:
    """Minimal big-endian encoding; 0 encodes to the empty string."""
    if n < 0:
        raise ValueError("negative integers have no canonical encoding")
    return n.to_bytes((n.bit_length() + 7) // 8, "big")


def encode_fields(*fields: bytes) -> bytes:
    """Concatenate byte strings, each prefixed with a 4-byte big-endian length."""
    out = bytearray()
    for f in fields:
        out += struct.pack(">I", len(f))
        out += f
    return bytes(out)


def decode_fields(data: bytes) -> list[bytes]:
    fields = []
    i = 0
    while i < len(data):
        if i + 4 > len(data):
            raise ValueError("truncated length prefix")
        (n,) = struct.unpack(">I", data[i:i + 4])
        i += 4
        if i + n > len(data):
            raise ValueError("truncated field")
        fields.append(data[i:i + n])
        i += n
    return fields


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def _as_bytes(value: Union[str, bytes]) -> bytes:
    return value.encode("utf-8") if isinstance(value, str) else bytes(value)


# ---------------------------------------------------------------------------
# primes and parameters


def is_probable_prime(n: int, rounds: int = 32, rng: Optional[random.Random] = None) -> bool:
    """Miller-Rabin; 32 random bases bound the error by 4**-32 = 2**-64."""
    if n < 2:
        return False
    if n in (2, 3):
        return True
    if n % 2 == 0:
        return False
    for sp in _SMALL_PRIMES:
        if n == sp:
            return True
        if n % sp == 0:
            return False
    rng = rng or secrets.SystemRandom()
    d, s = n - 1, 0
    while d % 2 == 0:
        d //= 2
        s += 1
    for _ in range(rounds):
        a = rng.randrange(2, n - 1)
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(s - 1):
            x = pow(x, 2, n)
            if x == n - 1:
                break
        else:
            return False
    return True


@functools.lru_cache(maxsize=8192)
def _subgroup_check(p: int, q: int, y: int) -> bool:
    # public keys are checked on every verification, so results are memoised
    return pow(y, q, p) == 1


@dataclass(frozen=True)
class GroupParams:
    p: int
    q: int
    g: int
    lam: int
    insecure: bool = False

    def validate(self) -> None:
        """Raise :class:`InvalidParams` unless (p, q, g) is a Schnorr group."""
        p, q, g = self.p, self.q, self.g
        if self.lam in TEST_LAMBDAS and not self.insecure:
            raise InvalidParams(f"lambda={self.lam} is a test size; pass insecure=True")
        if not (is_probable_prime(p) and is_probable_prime(q)):
            raise InvalidParams("p and q must be prime")
        if (p - 1) % q != 0:
            raise InvalidParams("q must divide p - 1")
        if not 1 < g < p:
            raise InvalidParams("g must lie in (1, p)")
        if pow(g, q, p) != 1:
            raise InvalidParams("g does not generate the order-q subgroup")

    def in_subgroup(self, y: int) -> bool:
        return isinstance(y, int) and 0 < y < self.p and _subgroup_check(self.p, self.q, y)

    def element_bytes(self, y: int) -> bytes:
        return int_to_bytes(y)

    def to_dict(self) -> dict:
        return {"p": format(self.p, "x"), "q": format(self.q, "x"), "g": format(self.g, "x"),
                "lambda": self.lam, "insecure": self.insecure}

    @classmethod
    def from_dict(cls, d: dict) -> "GroupParams":
        return cls(int(d["p"], 16), int(d["q"], 16), int(d["g"], 16), int(d["lambda"]),
                   bool(d.get("insecure", False)))


#: The textbook toy group used throughout the tests (2 has order 11 mod 23).
TOY_PARAMS = GroupParams(p=23, q=11, g=2, lam=16, insecure=True)


def setup(lam: int, rng: Optional[random.Random] = None, *, insecure: bool = False,
          pbits: Optional[int] = None, max_iterations: int = 200_000) -> GroupParams:
    """Generate a random Schnorr group with a ``lam``-bit subgroup order.

    ``pbits`` overrides the default modulus size for the given ``lam``.
    """
    if lam not in _MODULUS_BITS:
        raise InvalidParams(f"unsupported lambda {lam}; choose from {sorted(_MODULUS_BITS)}")
    if lam in TEST_LAMBDAS and not insecure:
        raise InvalidParams(f"lambda={lam} is a test size; pass insecure=True")
    rng = rng or secrets.SystemRandom()
    pbits = pbits or _MODULUS_BITS[lam]
    if pbits <= lam + 1:
        raise InvalidParams("modulus must be larger than the subgroup order")

    iterations = 0

    def budget():
        nonlocal iterations
        iterations += 1
        if iterations > max_iterations:
            raise InvalidParams("prime search exceeded its iteration budget")

    while True:
        budget()
        q = rng.getrandbits(lam) | (1 << (lam - 1)) | 1
        if is_probable_prime(q, rng=rng):
            break
    kbits = pbits - lam
    while True:
        budget()
        k = rng.getrandbits(kbits) | (1 << (kbits - 1))
        k -= k % 2  # p = kq + 1 must be odd
        p = k * q + 1
        if p.bit_length() == pbits and is_probable_prime(p, rng=rng):
            break
    while True:
        budget()
        h = rng.randrange(2, p - 1)
        g = pow(h, (p - 1) // q, p)
        if g != 1:
            break
    params = GroupParams(p, q, g, lam, insecure=lam in TEST_LAMBDAS)
    params.validate()
    return params


# ---------------------------------------------------------------------------
# keys and multisignatures


@dataclass(frozen=True)
class SignerKeypair:
    x: int
    y: int

    def __repr__(self) -> str:  # keep secrets out of logs
        return f"SignerKeypair(y={self.y})"


@dataclass(frozen=True)
class NonceCommitment:
    r: int
    R: int

    def __repr__(self) -> str:
        return f"NonceCommitment(R={self.R})"


@dataclass(frozen=True)
class MultiSignature:
    R: int
    S: int

    def to_dict(self) -> dict:
        return {"R": format(self.R, "x"), "S": format(self.S, "x")}

    @classmethod
    def from_dict(cls, d: dict) -> "MultiSignature":
        return cls(int(d["R"], 16), int(d["S"], 16))


def _random_scalar(params: GroupParams, rng) -> int:
    rng = rng or secrets.SystemRandom()
    return rng.randrange(1, params.q)


def keygen(params: GroupParams, rng=None, *, x: Optional[int] = None) -> SignerKeypair:
    if x is None:
        x = _random_scalar(params, rng)
    if not 1 <= x < params.q:
        raise ValueError("secret scalar must lie in [1, q-1]")
    return SignerKeypair(x, pow(params.g, x, params.p))


def aggregate_pubkey(params: GroupParams, ys: Sequence[int]) -> int:
    return _product(params, ys, "public keys")


def commit_nonce(params: GroupParams, rng=None, *, r: Optional[int] = None) -> NonceCommitment:
    if r is None:
        r = _random_scalar(params, rng)
    if not 1 <= r < params.q:
        raise ValueError("nonce must lie in [1, q-1]")
    return NonceCommitment(r, pow(params.g, r, params.p))


def aggregate_R(params: GroupParams, Rs: Sequence[int]) -> int:
    return _product(params, Rs, "nonce commitments")


def _product(params: GroupParams, elements: Iterable[int], what: str) -> int:
    elements = list(elements)
    if not elements:
        raise ValueError(f"cannot aggregate an empty list of {what}")
    acc = 1
    for e in elements:
        if not params.in_subgroup(e):
            raise ValueError(f"{e} is not an element of the order-q subgroup")
        acc = acc * e % params.p
    return acc


def challenge(params: GroupParams, T: Union[str, bytes], Y: int, R: int, PS: bytes,
              hash_fn: HashFn = sha256) -> int:
    """Hash ``len|T|len|Y|len|R|len|PS`` to a scalar mod q."""
    data = encode_fields(_as_bytes(T), int_to_bytes(Y), int_to_bytes(R), bytes(PS))
    digest = hash_fn(data)
    if isinstance(digest, int):
        return digest % params.q
    return int.from_bytes(digest, "big") % params.q


def partial_sign(params: GroupParams, r: int, c: int, x: int) -> int:
    return (r + c * x) % params.q


def aggregate_sig(params: GroupParams, ss: Sequence[int]) -> int:
    # responses are exponents, so they add mod q
    return sum(ss) % params.q


def verify(params: GroupParams, Y: int, T: Union[str, bytes], PS: bytes, sig: MultiSignature,
           hash_fn: HashFn = sha256) -> bool:
    """Check ``g^S == R * Y^c (mod p)``.  Malformed input yields False."""
    try:
        R, S = sig.R, sig.S
        if not (isinstance(S, int) and 0 <= S < params.q):
            return False
        # R needs no separate membership test: once Y is in the subgroup,
        # the equation below forces R = g^S * Y^-c into it as well
        if not (isinstance(R, int) and 0 < R < params.p and params.in_subgroup(Y)):
            return False
        c = challenge(params, T, Y, R, PS, hash_fn)
        return pow(params.g, S, params.p) == R * pow(Y, c, params.p) % params.p
    except Exception:
        return False


def multisign(params: GroupParams, signers: Sequence[SignerKeypair], T: Union[str, bytes],
              PS: bytes, rng=None, hash_fn: HashFn = sha256) -> MultiSignature:
    """Run the whole cosigning round for ``signers`` over ``(T, PS)``."""
    if not signers:
        raise ValueError("at least one cosigner is required")
    Y = aggregate_pubkey(params, [s.y for s in signers])
    nonces = [commit_nonce(params, rng) for _ in signers]
    R = aggregate_R(params, [n.R for n in nonces])
    c = challenge(params, T, Y, R, PS, hash_fn)
    S = aggregate_sig(params, [partial_sign(params, n.r, c, s.x) for n, s in zip(nonces, signers)])
    return MultiSignature(R, S)


def sign(params: GroupParams, x: int, message: bytes, rng=None, *,
         context: bytes = b"single", y: Optional[int] = None) -> MultiSignature:
    """Single-signer Schnorr signature (the n=1 multisignature).

    ``y`` may carry the already known public key to save an exponentiation.
    """
    if y is None:
        y = pow(params.g, x, params.p)
    nonce = commit_nonce(params, rng)
    c = challenge(params, context, y, nonce.R, message)
    return MultiSignature(nonce.R, partial_sign(params, nonce.r, c, x))


def verify_single(params: GroupParams, y: int, message: bytes, sig: MultiSignature, *,
                  context: bytes = b"single") -> bool:
    return verify(params, y, context, message, sig)


# ---------------------------------------------------------------------------
# hybrid encryption


@dataclass(frozen=True)
class CiphertextEnvelope:
    ephemeral: int
    body: bytes
    tag: bytes

    def to_bytes(self) -> bytes:
        return encode_fields(int_to_bytes(self.ephemeral), self.body, self.tag)

    @classmethod
    def from_bytes(cls, data: bytes) -> "CiphertextEnvelope":
        try:
            eph, body, tag = decode_fields(data)
        except ValueError as exc:
            raise DecryptionError(f"malformed envelope: {exc}") from None
        return cls(int.from_bytes(eph, "big"), body, tag)

    def to_dict(self) -> dict:
        return {"ephemeral": format(self.ephemeral, "x"), "body": self.body.hex(),
                "tag": self.tag.hex()}

    @classmethod
    def from_dict(cls, d: dict) -> "CiphertextEnvelope":
        return cls(int(d["ephemeral"], 16), bytes.fromhex(d["body"]), bytes.fromhex(d["tag"]))


def _keystream(shared: int, n: int) -> bytes:
    return hashlib.shake_256(b"keystream" + int_to_bytes(shared)).digest(n)


def _tag(shared: int, body: bytes) -> bytes:
    return sha256(encode_fields(int_to_bytes(shared), body))


def encrypt(params: GroupParams, recipient_pub: int, m: bytes, rng=None) -> CiphertextEnvelope:
    if not params.in_subgroup(recipient_pub):
        raise ValueError("recipient key is not a subgroup element")
    k = _random_scalar(params, rng)
    shared = pow(recipient_pub, k, params.p)
    body = bytes(a ^ b for a, b in zip(m, _keystream(shared, len(m))))
    return CiphertextEnvelope(pow(params.g, k, params.p), body, _tag(shared, body))


def decrypt(params: GroupParams, sk: int, env: CiphertextEnvelope) -> bytes:
    if not params.in_subgroup(env.ephemeral):
        raise DecryptionError("ephemeral value is not a subgroup element")
    return decrypt_with_shared(env, pow(env.ephemeral, sk % params.q, params.p))


def decrypt_with_shared(env: CiphertextEnvelope, shared: int) -> bytes:
    """Finish decryption given ``ephemeral^sk`` computed elsewhere.

    Lets a group of key holders decrypt jointly: each contributes
    ``ephemeral^x_i`` and the product is the shared value.
    """
    if not hmac.compare_digest(_tag(shared, env.body), env.tag):
        raise DecryptionError("integrity tag mismatch")
    return bytes(a ^ b for a, b in zip(env.body, _keystream(shared, len(env.body))))
