"""Domain-separated hash suite shared by every module.

All digests are SHA3-256; field-element and bit derivation squeeze a
SHAKE256 stream.  Each use gets a single-byte domain tag:

    0x00  identity -> field-vector target
    0x01  message binding digest
    0x02  challenge field vector
    0x03  challenge bit vector
    0x04  commitment, first branch
    0x05  commitment, second branch
    0x06  merkle leaf
    0x07  merkle node
    0x08  aggregate batch digest (prefixes the input of tag 0x01)

Field elements come from rejection sampling: one stream byte b per
candidate, accepted iff b < q * floor(256 / q), output b mod q.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .gf import encode_vector

TAG_IDENTITY = 0x00
TAG_BIND = 0x01
TAG_CHALLENGE_FIELD = 0x02
TAG_CHALLENGE_BITS = 0x03
TAG_COMMIT_0 = 0x04
TAG_COMMIT_1 = 0x05
TAG_MERKLE_LEAF = 0x06
TAG_MERKLE_NODE = 0x07
TAG_BATCH = 0x08


def digest32(tag: int, data: bytes) -> bytes:
    """Fixed 32-byte digest with the given domain tag."""
    return hashlib.sha3_256(bytes([tag]) + data).digest()


class XofStream:
    """Incremental reader over a SHAKE256 output stream.

    hashlib SHAKE outputs are prefix-consistent, so re-digesting with a
    doubled length extends the stream without replaying consumed bytes.
    """

    def __init__(self, tag: int, data: bytes):
        self._xof = hashlib.shake_256(bytes([tag]) + data)
        self._buf = b""
        self._pos = 0
        self._len = 0

    def read(self, n: int) -> bytes:
        while self._pos + n > self._len:
            self._len = max(64, 2 * (self._pos + n))
            self._buf = self._xof.digest(self._len)
        out = self._buf[self._pos : self._pos + n]
        self._pos += n
        return out


def xof_field_elements(tag: int, data: bytes, count: int, q: int) -> np.ndarray:
    """Derive count uniform elements of [0, q) by byte-wise rejection sampling."""
    if q > 256:
        raise ValueError("byte-wise sampling requires q <= 256")
    limit = q * (256 // q)
    stream = XofStream(tag, data)
    out = np.empty(count, dtype=np.int64)
    filled = 0
    while filled < count:
        chunk = stream.read(max(32, count - filled))
        for b in chunk:
            if b < limit:
                out[filled] = b % q
                filled += 1
                if filled == count:
                    break
    return out


def xof_bits(tag: int, data: bytes, count: int) -> np.ndarray:
    """Derive count bits: squeeze ceil(count/8) bytes, bit j = (byte[j//8] >> (j%8)) & 1."""
    raw = XofStream(tag, data).read((count + 7) // 8)
    return np.array([(raw[j >> 3] >> (j & 7)) & 1 for j in range(count)], dtype=np.int64)


def identity_target(identity: bytes, m: int, q: int) -> np.ndarray:
    """Public identity hash: arbitrary bytes -> target vector in F_q^m."""
    return xof_field_elements(TAG_IDENTITY, identity, m, q)


def commit(tag: int, commit_len: int, *vectors: np.ndarray) -> bytes:
    """Commitment digest over the canonical serialization of a vector tuple."""
    payload = b"".join(encode_vector(v) for v in vectors)
    return digest32(tag, payload)[:commit_len]
