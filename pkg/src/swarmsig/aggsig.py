"""Multi-signer layer: per-device keys, local sign/verify, aggregation.

Devices sign individually; an aggregator re-verifies, canonically orders
the batch, and signs its digest.  The aggregate travels with the member
signatures, so a downstream verifier can either trust the aggregator
(one verification) or audit every member (deep mode).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import hashing, ibs
from .ibs import (
    IbsSignature,
    MasterPublicKey,
    MasterSecretKey,
    ParamSet,
    UserSecretKey,
    VerifyResult,
    WireFormatError,
)


@dataclass
class SignedMessage:
    signer_id: bytes
    msg: bytes
    sig: IbsSignature

    def serialize_body(self) -> bytes:
        return (len(self.signer_id).to_bytes(4, "little") + self.signer_id
                + len(self.msg).to_bytes(4, "little") + self.msg
                + self.sig.serialize_payload())

    @classmethod
    def parse_body(cls, params: ParamSet, data: bytes) -> "SignedMessage":
        if len(data) < 4:
            raise WireFormatError("truncated signed message")
        id_len = int.from_bytes(data[:4], "little")
        off = 4 + id_len
        if off + 4 > len(data):
            raise WireFormatError("truncated signed message")
        signer_id = data[4:off]
        msg_len = int.from_bytes(data[off : off + 4], "little")
        off += 4
        if off + msg_len > len(data):
            raise WireFormatError("truncated signed message")
        msg = data[off : off + msg_len]
        sig, end = IbsSignature.parse_payload(params, data, off + msg_len)
        if end != len(data):
            raise WireFormatError("trailing bytes in signed message")
        return cls(signer_id, msg, sig)


@dataclass
class AggregateSignature:
    batch_digest: bytes
    agg_sig: IbsSignature
    agg_id: bytes
    batch: list  # SignedMessage, canonical (signer_id, msg) order


@dataclass
class Keyring:
    signers: dict  # identity -> UserSecretKey
    aggregator: UserSecretKey


def keygen_all(msk: MasterSecretKey, signer_ids: list[bytes], agg_id: bytes) -> Keyring:
    """Extract one secret key per signer plus the aggregator's."""
    all_ids = list(signer_ids) + [agg_id]
    if len(set(all_ids)) != len(all_ids):
        raise ValueError("identities must be pairwise distinct")
    signers = {sid: ibs.extract(msk, sid) for sid in signer_ids}
    return Keyring(signers, ibs.extract(msk, agg_id))


def ls_sign(mpk: MasterPublicKey, usk: UserSecretKey, msg: bytes,
            rng: np.random.Generator) -> IbsSignature:
    """Local signing; the transcript seed already binds the shared public key and msg."""
    return ibs.sign(mpk, usk, msg, rng)


def ls_ver(mpk: MasterPublicKey, signer_id: bytes, msg: bytes,
           sig: IbsSignature) -> VerifyResult:
    return ibs.verify(mpk, signer_id, msg, sig)


def canonical_batch(batch: list[SignedMessage]) -> list[SignedMessage]:
    return sorted(batch, key=lambda sm: (sm.signer_id, sm.msg))


def batch_digest(batch: list[SignedMessage]) -> bytes:
    """Digest over the canonically ordered batch; arrival order never matters."""
    ordered = canonical_batch(batch)
    payload = bytearray(len(ordered).to_bytes(4, "little"))
    for sm in ordered:
        body = sm.serialize_body()
        payload += len(body).to_bytes(4, "little") + body
    return hashing.digest32(hashing.TAG_BIND, bytes([hashing.TAG_BATCH]) + bytes(payload))


def la_sign(mpk: MasterPublicKey, agg_usk: UserSecretKey, batch: list[SignedMessage],
            rng: np.random.Generator) -> AggregateSignature:
    """Aggregate a batch of locally verified messages under the aggregator key.

    Callers are responsible for having run ls_ver on every member; only
    structural completeness is re-checked here.
    """
    if not batch:
        raise ValueError("cannot aggregate an empty batch")
    for sm in batch:
        if not isinstance(sm.signer_id, bytes) or not isinstance(sm.msg, bytes):
            raise ValueError("batch member is structurally incomplete")
    ordered = canonical_batch(batch)
    digest = batch_digest(ordered)
    agg_sig = ibs.sign(mpk, agg_usk, digest, rng)
    return AggregateSignature(digest, agg_sig, agg_usk.identity, ordered)


def la_ver(mpk: MasterPublicKey, agg: AggregateSignature, deep: bool = False) -> VerifyResult:
    """Check an aggregate: digest recomputation plus the aggregator's signature.

    deep=True additionally re-verifies every member signature (audit
    mode); the default trusts the aggregator's earlier member checks.
    """
    recomputed = batch_digest(agg.batch)
    if recomputed != agg.batch_digest:
        return VerifyResult(False, "batch-digest")
    res = ibs.verify(mpk, agg.agg_id, agg.batch_digest, agg.agg_sig)
    if not res:
        return VerifyResult(False, f"aggregator-{res.reason}")
    if deep:
        for sm in agg.batch:
            member = ls_ver(mpk, sm.signer_id, sm.msg, sm.sig)
            if not member:
                return VerifyResult(False, f"member-{member.reason}")
    return VerifyResult(True)


# wire format: count, then each signed message length-prefixed, then the
# aggregator id length-prefixed, then the aggregator signature payload.

def serialize_aggregate(agg: AggregateSignature) -> bytes:
    out = bytearray(len(agg.batch).to_bytes(4, "little"))
    for sm in agg.batch:
        body = sm.serialize_body()
        out += len(body).to_bytes(4, "little") + body
    out += len(agg.agg_id).to_bytes(4, "little") + agg.agg_id
    out += agg.agg_sig.serialize_payload()
    return bytes(out)


def deserialize_aggregate(params: ParamSet, data: bytes) -> AggregateSignature:
    if len(data) < 4:
        raise WireFormatError("truncated aggregate")
    count = int.from_bytes(data[:4], "little")
    off = 4
    batch = []
    for _ in range(count):
        if off + 4 > len(data):
            raise WireFormatError("truncated aggregate member")
        body_len = int.from_bytes(data[off : off + 4], "little")
        off += 4
        if off + body_len > len(data):
            raise WireFormatError("truncated aggregate member")
        batch.append(SignedMessage.parse_body(params, data[off : off + body_len]))
        off += body_len
    if off + 4 > len(data):
        raise WireFormatError("truncated aggregator id")
    id_len = int.from_bytes(data[off : off + 4], "little")
    off += 4
    agg_id = data[off : off + id_len]
    agg_sig, end = IbsSignature.parse_payload(params, data, off + id_len)
    if end != len(data):
        raise WireFormatError("trailing bytes after aggregate")
    return AggregateSignature(batch_digest(batch), agg_sig, agg_id, batch)
