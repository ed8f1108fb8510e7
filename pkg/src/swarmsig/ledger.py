"""Encrypted transactions, merkle roots, and hash-chained blocks.

Fog owners build partial blocks (encrypted transactions, merkle root,
owner signature over the header); cloud servers complete them into
versioned, hash-chained full blocks.  Block signing is pluggable: any
object with public_bytes()/sign() can own blocks, and the default signer
is the identity-based scheme so the chain stays post-quantum end to end.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from . import hashing, ibs
from .ibs import IbsSignature, MasterPublicKey, UserSecretKey, WireFormatError

BLOCK_MAGIC = b"PQB1"
GENESIS_PREV = bytes(32)
NONCE_LEN = 12


class DecryptionError(Exception):
    """Authentication failed: wrong key or tampered ciphertext."""


def _lp(data: bytes) -> bytes:
    return len(data).to_bytes(4, "little") + data


def _read_lp(data: bytes, offset: int) -> tuple[bytes, int]:
    if offset + 4 > len(data):
        raise WireFormatError("truncated length prefix")
    n = int.from_bytes(data[offset : offset + 4], "little")
    offset += 4
    if offset + n > len(data):
        raise WireFormatError("truncated field")
    return data[offset : offset + n], offset + n


# -- authenticated envelope -------------------------------------------------
#
# "Sealed to recipient" primitive shared by transaction encryption and the
# consensus vote envelopes: AES-256-GCM under a per-recipient key.

@dataclass(frozen=True)
class EnvelopeKey:
    key_id: bytes
    key: bytes  # 32 bytes

    @classmethod
    def generate(cls, key_id: bytes, rng: np.random.Generator) -> "EnvelopeKey":
        return cls(key_id, rng.bytes(32))


def seal(key: EnvelopeKey, payload: bytes, rng: np.random.Generator) -> bytes:
    nonce = rng.bytes(NONCE_LEN)
    return nonce + AESGCM(key.key).encrypt(nonce, payload, key.key_id)


def open_sealed(key: EnvelopeKey, blob: bytes) -> bytes:
    if len(blob) < NONCE_LEN + 16:
        raise DecryptionError("sealed blob too short")
    try:
        return AESGCM(key.key).decrypt(blob[:NONCE_LEN], blob[NONCE_LEN:], key.key_id)
    except InvalidTag as exc:
        raise DecryptionError("authentication failed") from exc


# -- transactions -----------------------------------------------------------

@dataclass(frozen=True)
class Transaction:
    sensed_data: bytes
    device_id: bytes
    ts: int  # milliseconds

    def __post_init__(self):
        if self.ts <= 0:
            raise ValueError("transaction timestamp must be positive")

    def serialize(self) -> bytes:
        return _lp(self.sensed_data) + _lp(self.device_id) + struct.pack("<q", self.ts)

    @classmethod
    def deserialize(cls, data: bytes) -> "Transaction":
        sensed, off = _read_lp(data, 0)
        dev, off = _read_lp(data, off)
        if off + 8 != len(data):
            raise WireFormatError("bad transaction encoding")
        return cls(sensed, dev, struct.unpack("<q", data[off : off + 8])[0])


@dataclass(frozen=True)
class EncryptedTransaction:
    ciphertext: bytes
    nonce: bytes
    owner_key_id: bytes

    def serialize(self) -> bytes:
        return _lp(self.ciphertext) + _lp(self.nonce) + _lp(self.owner_key_id)

    @classmethod
    def deserialize(cls, data: bytes, offset: int = 0) -> tuple["EncryptedTransaction", int]:
        ct, offset = _read_lp(data, offset)
        nonce, offset = _read_lp(data, offset)
        kid, offset = _read_lp(data, offset)
        return cls(ct, nonce, kid), offset


def encrypt_tx(tx: Transaction, owner_key: EnvelopeKey,
               rng: np.random.Generator) -> EncryptedTransaction:
    nonce = rng.bytes(NONCE_LEN)
    ct = AESGCM(owner_key.key).encrypt(nonce, tx.serialize(), owner_key.key_id)
    return EncryptedTransaction(ct, nonce, owner_key.key_id)


def decrypt_tx(etx: EncryptedTransaction, owner_key: EnvelopeKey) -> Transaction:
    try:
        raw = AESGCM(owner_key.key).decrypt(etx.nonce, etx.ciphertext, owner_key.key_id)
    except InvalidTag as exc:
        raise DecryptionError("transaction authentication failed") from exc
    return Transaction.deserialize(raw)


# -- merkle root ------------------------------------------------------------

def merkle_root(leaves: list[bytes]) -> bytes:
    """Tagged binary merkle root; odd levels duplicate their last node."""
    if not leaves:
        raise ValueError("merkle root of an empty sequence")
    level = [hashing.digest32(hashing.TAG_MERKLE_LEAF, leaf) for leaf in leaves]
    while len(level) > 1:
        if len(level) % 2 == 1:
            level.append(level[-1])
        level = [
            hashing.digest32(hashing.TAG_MERKLE_NODE, level[i] + level[i + 1])
            for i in range(0, len(level), 2)
        ]
    return level[0]


# -- block signers ----------------------------------------------------------

SIGNER_SCHEME_IBS = b"PQIBS"


class PqBlockSigner:
    """Default block signer: the identity-based scheme under an owner identity."""

    def __init__(self, mpk: MasterPublicKey, usk: UserSecretKey,
                 rng: np.random.Generator):
        self.mpk = mpk
        self.usk = usk
        self.owner_id = usk.identity
        self._rng = rng

    def public_bytes(self) -> bytes:
        return (_lp(SIGNER_SCHEME_IBS) + _lp(self.usk.identity)
                + _lp(self.mpk.fingerprint))

    def sign(self, digest: bytes) -> bytes:
        return ibs.sign(self.mpk, self.usk, digest, self._rng).serialize_payload()


class PqBlockVerifier:
    """Counterpart of PqBlockSigner, bound to the system public key."""

    def __init__(self, mpk: MasterPublicKey):
        self.mpk = mpk

    def verify(self, public_bytes: bytes, digest: bytes, sig_blk: bytes) -> bool:
        try:
            scheme, off = _read_lp(public_bytes, 0)
            owner_id, off = _read_lp(public_bytes, off)
            fp, off = _read_lp(public_bytes, off)
            if scheme != SIGNER_SCHEME_IBS or off != len(public_bytes):
                return False
            if fp != self.mpk.fingerprint:
                return False
            sig, end = IbsSignature.parse_payload(self.mpk.params, sig_blk)
            if end != len(sig_blk):
                return False
        except WireFormatError:
            return False
        return bool(ibs.verify(self.mpk, owner_id, digest, sig))


# -- blocks -----------------------------------------------------------------

@dataclass
class PartialBlock:
    etx: list  # EncryptedTransaction
    mtr: bytes
    ts_blk: int
    app_type: str
    owner_id: bytes
    owner_pub: bytes
    sig_blk: bytes

    def header_digest(self) -> bytes:
        body = (struct.pack("<q", self.ts_blk) + _lp(self.mtr)
                + _lp(self.app_type.encode()) + _lp(self.owner_id)
                + _lp(self.owner_pub))
        return hashing.digest32(hashing.TAG_BIND, body)

    def serialize(self) -> bytes:
        out = bytearray()
        out += _lp(struct.pack("<q", self.ts_blk))
        out += _lp(self.mtr)
        out += _lp(self.app_type.encode())
        out += _lp(self.owner_id)
        out += _lp(self.owner_pub)
        out += _lp(self.sig_blk)
        out += len(self.etx).to_bytes(4, "little")
        for e in self.etx:
            out += e.serialize()
        return bytes(out)

    @classmethod
    def deserialize(cls, data: bytes, offset: int = 0) -> tuple["PartialBlock", int]:
        ts_raw, offset = _read_lp(data, offset)
        if len(ts_raw) != 8:
            raise WireFormatError("bad block timestamp")
        mtr, offset = _read_lp(data, offset)
        app_type, offset = _read_lp(data, offset)
        owner_id, offset = _read_lp(data, offset)
        owner_pub, offset = _read_lp(data, offset)
        sig_blk, offset = _read_lp(data, offset)
        if offset + 4 > len(data):
            raise WireFormatError("truncated transaction count")
        count = int.from_bytes(data[offset : offset + 4], "little")
        offset += 4
        etx = []
        for _ in range(count):
            e, offset = EncryptedTransaction.deserialize(data, offset)
            etx.append(e)
        return cls(etx, mtr, struct.unpack("<q", ts_raw)[0],
                   app_type.decode(), owner_id, owner_pub, sig_blk), offset


@dataclass
class FullBlock:
    version: int
    prev_hash: bytes
    cur_hash: bytes
    partial: PartialBlock

    def serialize(self) -> bytes:
        return (BLOCK_MAGIC + self.version.to_bytes(4, "little")
                + self.prev_hash + self.cur_hash + self.partial.serialize())

    @classmethod
    def deserialize(cls, data: bytes, offset: int = 0) -> tuple["FullBlock", int]:
        if data[offset : offset + 4] != BLOCK_MAGIC:
            raise WireFormatError("bad block magic")
        offset += 4
        if offset + 4 + 64 > len(data):
            raise WireFormatError("truncated block header")
        version = int.from_bytes(data[offset : offset + 4], "little")
        prev = data[offset + 4 : offset + 36]
        cur = data[offset + 36 : offset + 68]
        partial, offset = PartialBlock.deserialize(data, offset + 68)
        return cls(version, prev, cur, partial), offset


def block_hash(version: int, prev_hash: bytes, partial: PartialBlock) -> bytes:
    return hashing.digest32(
        hashing.TAG_BIND,
        version.to_bytes(4, "little") + prev_hash + partial.serialize(),
    )


def build_partial_block(etx: list, signer, app_type: str, ts_blk: int) -> PartialBlock:
    """Assemble and owner-sign a partial block over nonempty transactions.

    The owner signature covers the header digest only (timestamp, merkle
    root, app type, owner identity, owner public material) -- it cannot
    cover itself.
    """
    if not etx:
        raise ValueError("partial block needs at least one transaction")
    par = PartialBlock(
        etx=list(etx),
        mtr=merkle_root([e.serialize() for e in etx]),
        ts_blk=ts_blk,
        app_type=app_type,
        owner_id=signer.owner_id,
        owner_pub=signer.public_bytes(),
        sig_blk=b"",
    )
    par.sig_blk = signer.sign(par.header_digest())
    return par


def verify_partial(par: PartialBlock, verifier) -> ibs.VerifyResult:
    if merkle_root([e.serialize() for e in par.etx]) != par.mtr:
        return ibs.VerifyResult(False, "mtr")
    if not verifier.verify(par.owner_pub, par.header_digest(), par.sig_blk):
        return ibs.VerifyResult(False, "sig")
    return ibs.VerifyResult(True)


def complete_block(par: PartialBlock, prev_hash: bytes, version: int,
                   verifier=None) -> FullBlock:
    """Wrap a partial block into a hash-chained full block."""
    if verifier is not None:
        res = verify_partial(par, verifier)
        if not res:
            raise ValueError(f"invalid partial block: {res.reason}")
    return FullBlock(version, prev_hash, block_hash(version, prev_hash, par), par)


def verify_block(blk: FullBlock, expected_prev: bytes, verifier) -> ibs.VerifyResult:
    """Full check in order: merkle root, owner signature, block hash, chain link."""
    par_res = verify_partial(blk.partial, verifier)
    if not par_res:
        return par_res
    if block_hash(blk.version, blk.prev_hash, blk.partial) != blk.cur_hash:
        return ibs.VerifyResult(False, "hash")
    if blk.prev_hash != expected_prev:
        return ibs.VerifyResult(False, "chain")
    return ibs.VerifyResult(True)


def make_genesis(signer, ts: int = 1) -> FullBlock:
    """Version-1 genesis over a single placeholder transaction."""
    placeholder = EncryptedTransaction(b"genesis", bytes(NONCE_LEN), b"genesis")
    par = build_partial_block([placeholder], signer, "GENESIS", ts)
    return complete_block(par, GENESIS_PREV, 1)


class Ledger:
    """Append-only block store keyed by height."""

    def __init__(self, genesis: FullBlock):
        self.blocks = [genesis]
        self._seen = {genesis.cur_hash}

    @property
    def height(self) -> int:
        return len(self.blocks) - 1

    @property
    def tip_hash(self) -> bytes:
        return self.blocks[-1].cur_hash

    def append(self, blk: FullBlock) -> None:
        if blk.cur_hash in self._seen:
            raise ValueError("block already committed")
        if blk.prev_hash != self.tip_hash:
            raise ValueError("block does not extend the tip")
        self.blocks.append(blk)
        self._seen.add(blk.cur_hash)

    def audit(self, verifier) -> ibs.VerifyResult:
        """Re-verify every block and every chain link."""
        expected_prev = GENESIS_PREV
        for blk in self.blocks:
            res = verify_block(blk, expected_prev, verifier)
            if not res:
                return res
            expected_prev = blk.cur_hash
        return ibs.VerifyResult(True)

    def save(self, blocks_path, index_path) -> None:
        offset = 0
        with open(blocks_path, "wb") as bf, open(index_path, "w") as xf:
            for height, blk in enumerate(self.blocks):
                raw = blk.serialize()
                bf.write(raw)
                xf.write(f"{height} {offset} {blk.cur_hash.hex()}\n")
                offset += len(raw)

    @classmethod
    def load(cls, blocks_path) -> "Ledger":
        with open(blocks_path, "rb") as bf:
            data = bf.read()
        blocks = []
        offset = 0
        while offset < len(data):
            blk, offset = FullBlock.deserialize(data, offset)
            blocks.append(blk)
        if not blocks:
            raise WireFormatError("empty ledger file")
        ledger = cls(blocks[0])
        for blk in blocks[1:]:
            ledger.append(blk)
        return ledger
