"""Identity-based signatures from a trapdoor quadratic map.

The key authority publishes a quadratic map P and keeps its (S, F, T)
factorization secret.  A user's secret key is a preimage of their hashed
identity under P.  Signing runs a commit/challenge/response identification
argument for knowledge of that preimage, collapsed to a non-interactive
transcript by deriving both challenge vectors from hashes of the running
transcript.  One round convinces the verifier with error 1/2 + 1/(2q),
so the round count grows with the target security level.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property

import numpy as np

from . import hashing
from .gf import PrimeField, decode_vector, encode_rows, encode_vector
from .mq import (
    AffineMap,
    QuadraticMap,
    UovCentralMap,
    compose_public,
    invert_public,
)

MAGIC = b"PQM1"
COMMIT_LEN = 32


class ExtractionError(Exception):
    """Raised when no preimage could be found for an identity."""


class WireFormatError(Exception):
    """Raised when serialized key or signature material cannot be parsed."""


def rounds_for_security(zeta: int, q: int) -> int:
    """Rounds needed so the per-round cheating chance compounds below 2^-zeta.

    Equals ceil(zeta / -log2(1/2 + 1/(2q))), evaluated exactly: the result
    is the least r with ((q+1)/(2q))^r <= 2^-zeta, checked in integer
    arithmetic so the ceiling can never be off by one.
    """
    if zeta < 1 or q < 2:
        raise ValueError("need zeta >= 1 and q >= 2")
    err = Fraction(q + 1, 2 * q)
    bound = Fraction(1, 2**zeta)
    lo, hi = 1, 1
    while err**hi > bound:
        lo, hi = hi, hi * 2
    while lo < hi:
        mid = (lo + hi) // 2
        if err**mid <= bound:
            hi = mid
        else:
            lo = mid + 1
    return lo


@dataclass(frozen=True)
class ParamSet:
    """Scheme parameters: field modulus, oil/vinegar split, round count.

    reduced_rounds marks profiles whose round count was cut below the
    security-derived value for fast tests; they are not standard.
    """

    q: int
    o: int
    v: int
    zeta: int
    psi: int
    commit_len: int = COMMIT_LEN
    reduced_rounds: bool = False

    def __post_init__(self):
        derived = rounds_for_security(self.zeta, self.q)
        if self.reduced_rounds:
            if self.psi > derived:
                raise ValueError("reduced profile cannot exceed the derived round count")
        elif self.psi != derived:
            raise ValueError(f"psi {self.psi} does not match derived count {derived}")

    @property
    def n(self) -> int:
        return self.o + self.v

    @property
    def m(self) -> int:
        return self.o

    @cached_property
    def field(self) -> PrimeField:
        return PrimeField(self.q)

    @classmethod
    def for_security(cls, zeta: int, q: int, o: int, v: int) -> "ParamSet":
        return cls(q=q, o=o, v=v, zeta=zeta, psi=rounds_for_security(zeta, q))

    def header(self) -> bytes:
        return struct.pack("<4I", self.q, self.o, self.v, self.psi)


# fast test profile: ten rounds only, explicitly flagged as non-standard
DESK = ParamSet(q=31, o=4, v=8, zeta=128, psi=10, reduced_rounds=True)
# full-round profile at the 128-bit target
PAPER128 = ParamSet.for_security(zeta=128, q=31, o=48, v=96)

PROFILES = {"desk": DESK, "paper128": PAPER128}


def _check_header(params: ParamSet, data: bytes) -> int:
    if data[:4] != MAGIC:
        raise WireFormatError("bad magic bytes")
    if len(data) < 20:
        raise WireFormatError("truncated header")
    q, o, v, psi = struct.unpack("<4I", data[4:20])
    if (q, o, v, psi) != (params.q, params.o, params.v, params.psi):
        raise WireFormatError(f"profile mismatch: file has q={q} o={o} v={v} psi={psi}")
    return 20


@dataclass
class MasterPublicKey:
    p: QuadraticMap
    params: ParamSet

    @cached_property
    def p_bytes(self) -> bytes:
        return self.p.serialize()

    @cached_property
    def fingerprint(self) -> bytes:
        return hashing.digest32(hashing.TAG_BIND, self.p_bytes)

    def serialize(self) -> bytes:
        return MAGIC + self.params.header() + self.p_bytes

    @classmethod
    def deserialize(cls, params: ParamSet, data: bytes) -> "MasterPublicKey":
        off = _check_header(params, data)
        try:
            p, end = QuadraticMap.deserialize(data, off)
        except ValueError as exc:
            raise WireFormatError(str(exc)) from exc
        if end != len(data) or p.n != params.n or p.m != params.m:
            raise WireFormatError("public map does not match profile dimensions")
        return cls(p, params)


@dataclass
class MasterSecretKey:
    s: AffineMap
    f: UovCentralMap
    t: AffineMap
    params: ParamSet

    @cached_property
    def digest(self) -> bytes:
        body = self.s.serialize() + self.f.serialize() + self.t.serialize()
        return hashing.digest32(hashing.TAG_BIND, body)

    def serialize(self) -> bytes:
        return (MAGIC + self.params.header() + self.s.serialize()
                + self.f.serialize() + self.t.serialize())

    @classmethod
    def deserialize(cls, params: ParamSet, data: bytes) -> "MasterSecretKey":
        off = _check_header(params, data)
        try:
            s, off = AffineMap.deserialize(params.field, data, off)
            f, off = UovCentralMap.deserialize_central(data, off)
            t, off = AffineMap.deserialize(params.field, data, off)
        except ValueError as exc:
            raise WireFormatError(str(exc)) from exc
        if off != len(data):
            raise WireFormatError("trailing bytes after secret key")
        return cls(s, f, t, params)


@dataclass
class UserSecretKey:
    identity: bytes
    u: np.ndarray  # preimage of the hashed identity under P

    def serialize(self, params: ParamSet) -> bytes:
        return (MAGIC + params.header()
                + len(self.identity).to_bytes(4, "little") + self.identity
                + encode_vector(self.u))

    @classmethod
    def deserialize(cls, params: ParamSet, data: bytes) -> "UserSecretKey":
        off = _check_header(params, data)
        if off + 4 > len(data):
            raise WireFormatError("truncated identity length")
        id_len = int.from_bytes(data[off : off + 4], "little")
        off += 4
        if off + id_len > len(data):
            raise WireFormatError("truncated identity")
        identity = data[off : off + id_len]
        try:
            u, off = decode_vector(data, off + id_len)
        except ValueError as exc:
            raise WireFormatError(str(exc)) from exc
        if off != len(data) or len(u) != params.n:
            raise WireFormatError("secret key vector has wrong length")
        return cls(identity, u)


@dataclass
class IbsSignature:
    """Transcript (commitments, first responses, revealed round vectors).

    comm holds the 2*psi commitment digests interleaved per round; res1_g
    and res1_h stack the psi first-response pairs; res2 stacks the psi
    revealed vectors selected by the bit challenge.
    """

    comm: list  # 2*psi digests, round order (branch0, branch1, branch0, ...)
    res1_g: np.ndarray  # (psi, n)
    res1_h: np.ndarray  # (psi, m)
    res2: np.ndarray    # (psi, n)

    def comm_bytes(self) -> bytes:
        return b"".join(self.comm)

    def res1_bytes(self) -> bytes:
        return encode_rows(self.res1_g, self.res1_h)

    def res2_bytes(self) -> bytes:
        return encode_rows(self.res2)

    def element_count(self) -> int:
        """Field elements carried in the responses (the size law's psi*(m+2n))."""
        return self.res1_g.size + self.res1_h.size + self.res2.size

    def serialize_payload(self) -> bytes:
        return self.comm_bytes() + self.res1_bytes() + self.res2_bytes()

    def serialize(self, params: ParamSet) -> bytes:
        return MAGIC + params.header() + self.serialize_payload()

    @classmethod
    def parse_payload(cls, params: ParamSet, data: bytes, offset: int = 0) -> tuple["IbsSignature", int]:
        psi, n, m, clen = params.psi, params.n, params.m, params.commit_len
        comm = []
        for _ in range(2 * psi):
            if offset + clen > len(data):
                raise WireFormatError("truncated commitments")
            comm.append(data[offset : offset + clen])
            offset += clen
        try:
            g_rows, h_rows, f_rows = [], [], []
            for _ in range(psi):
                g, offset = decode_vector(data, offset)
                h, offset = decode_vector(data, offset)
                g_rows.append(g)
                h_rows.append(h)
            for _ in range(psi):
                f, offset = decode_vector(data, offset)
                f_rows.append(f)
        except ValueError as exc:
            raise WireFormatError(str(exc)) from exc
        if any(len(g) != n for g in g_rows) or any(len(h) != m for h in h_rows) \
                or any(len(f) != n for f in f_rows):
            raise WireFormatError("response vector lengths do not match profile")
        return cls(comm, np.stack(g_rows), np.stack(h_rows), np.stack(f_rows)), offset

    @classmethod
    def deserialize(cls, params: ParamSet, data: bytes) -> "IbsSignature":
        off = _check_header(params, data)
        sig, end = cls.parse_payload(params, data, off)
        if end != len(data):
            raise WireFormatError("trailing bytes after signature")
        return sig


@dataclass
class VerifyResult:
    accepted: bool
    reason: str = "ok"

    def __bool__(self) -> bool:
        return self.accepted


REJECT_MALFORMED = "malformed"
REJECT_ROUND = "round-check"


def setup(params: ParamSet, rng: np.random.Generator) -> tuple[MasterPublicKey, MasterSecretKey]:
    """Sample the secret (S, F, T) triple and publish its composition."""
    fq = params.field
    s = AffineMap.random(fq, params.m, rng)
    t = AffineMap.random(fq, params.n, rng)
    f = UovCentralMap.random(fq, params.o, params.v, rng)
    p = compose_public(s, f, t)
    return MasterPublicKey(p, params), MasterSecretKey(s, f, t, params)


def identity_target(params: ParamSet, identity: bytes) -> np.ndarray:
    """The public target vector an identity's key must map to under P."""
    return hashing.identity_target(identity, params.m, params.q)


def extract(msk: MasterSecretKey, identity: bytes, counter_cap: int = 16) -> UserSecretKey:
    """Issue the secret key for an identity: a preimage of its target.

    Deterministic for a fixed master key: inversion randomness is seeded
    from (master key digest, identity, retry counter).
    """
    params = msk.params
    target = identity_target(params, identity)
    for counter in range(counter_cap):
        seed = hashing.digest32(
            hashing.TAG_BIND, msk.digest + identity + counter.to_bytes(4, "little")
        )
        rng = np.random.default_rng(np.random.SeedSequence(int.from_bytes(seed, "little")))
        u = invert_public(msk.s, msk.f, msk.t, target, rng)
        if u is not None:
            return UserSecretKey(identity, u)
    raise ExtractionError(f"no preimage found for identity {identity!r}")


def sign(mpk: MasterPublicKey, usk: UserSecretKey, msg: bytes,
         rng: np.random.Generator) -> IbsSignature:
    """Produce a transcript proving knowledge of the identity's preimage.

    Per round: split the secret key u into random shares f0 + f1, commit
    to (f0, g0, h0) and to (f1, G(g0, f1) + h0); a hash of the
    commitments yields the field challenges delta, answered by
    g1 = delta*f0 - g0 and h1 = delta*P(f0) - h0; a second hash selects
    which share of u each round reveals.
    """
    params = mpk.params
    p = mpk.p
    q, n, m, psi = params.q, params.n, params.m, params.psi

    a = hashing.digest32(hashing.TAG_BIND, mpk.p_bytes + msg)

    f0 = rng.integers(0, q, size=(psi, n), dtype=np.int64)
    g0 = rng.integers(0, q, size=(psi, n), dtype=np.int64)
    h0 = rng.integers(0, q, size=(psi, m), dtype=np.int64)
    f1 = (usk.u[None, :] - f0) % q

    # batch all public-map evaluations for the round loop
    ev = p.evaluate_many(np.vstack([(g0 + f1) % q, g0, f1, f0]))
    e_sum, e_g0, e_f1, e_f0 = np.split(ev, 4)
    polar_g0_f1 = (e_sum - e_g0 - e_f1 + p.const) % q

    comm = []
    for j in range(psi):
        comm.append(hashing.commit(hashing.TAG_COMMIT_0, params.commit_len,
                                   f0[j], g0[j], h0[j]))
        comm.append(hashing.commit(hashing.TAG_COMMIT_1, params.commit_len,
                                   f1[j], (polar_g0_f1[j] + h0[j]) % q))
    comm_bytes = b"".join(comm)

    delta = hashing.xof_field_elements(hashing.TAG_CHALLENGE_FIELD,
                                       a + comm_bytes, psi, q)
    g1 = (delta[:, None] * f0 - g0) % q
    h1 = (delta[:, None] * e_f0 - h0) % q

    sig = IbsSignature(comm, g1, h1, np.zeros((psi, n), dtype=np.int64))
    bits = hashing.xof_bits(hashing.TAG_CHALLENGE_BITS,
                            a + comm_bytes + sig.res1_bytes(), psi)
    sig.res2 = np.where(bits[:, None] == 0, f0, f1)
    return sig


def verify(mpk: MasterPublicKey, identity: bytes, msg: bytes,
           sig: IbsSignature) -> VerifyResult:
    """Recompute both challenges from the transcript and check every round.

    Rounds revealing f0 must reopen the first commitment from the
    responses alone; rounds revealing f1 must reopen the second via the
    identity's public target.  Any structural defect rejects rather than
    raising: verification is total.
    """
    params = mpk.params
    p = mpk.p
    q, n, m, psi, clen = params.q, params.n, params.m, params.psi, params.commit_len

    if (len(sig.comm) != 2 * psi
            or any(len(c) != clen for c in sig.comm)
            or sig.res1_g.shape != (psi, n)
            or sig.res1_h.shape != (psi, m)
            or sig.res2.shape != (psi, n)):
        return VerifyResult(False, REJECT_MALFORMED)
    if (int(sig.res1_g.min(initial=0)) < 0 or int(sig.res1_g.max(initial=0)) >= q
            or int(sig.res1_h.min(initial=0)) < 0 or int(sig.res1_h.max(initial=0)) >= q
            or int(sig.res2.min(initial=0)) < 0 or int(sig.res2.max(initial=0)) >= q):
        return VerifyResult(False, REJECT_MALFORMED)

    s_id = identity_target(params, identity)
    a = hashing.digest32(hashing.TAG_BIND, mpk.p_bytes + msg)
    comm_bytes = sig.comm_bytes()
    delta = hashing.xof_field_elements(hashing.TAG_CHALLENGE_FIELD,
                                       a + comm_bytes, psi, q)
    bits = hashing.xof_bits(hashing.TAG_CHALLENGE_BITS,
                            a + comm_bytes + sig.res1_bytes(), psi)

    f = sig.res2
    g1, h1 = sig.res1_g, sig.res1_h
    e_f = p.evaluate_many(f)
    ones = np.flatnonzero(bits == 1)
    if len(ones):
        ev = p.evaluate_many(np.vstack([(g1[ones] + f[ones]) % q, g1[ones]]))
        e_gf, e_g1 = np.split(ev, 2)
        polar_g1_f = (e_gf - e_g1 - e_f[ones] + p.const) % q
    pos_of = {int(j): k for k, j in enumerate(ones)}

    for j in range(psi):
        d = int(delta[j])
        if bits[j] == 0:
            expected = hashing.commit(
                hashing.TAG_COMMIT_0, clen,
                f[j], (d * f[j] - g1[j]) % q, (d * e_f[j] - h1[j]) % q,
            )
            if expected != sig.comm[2 * j]:
                return VerifyResult(False, REJECT_ROUND)
        else:
            w = (d * (s_id - e_f[j] + p.const) - polar_g1_f[pos_of[j]] - h1[j]) % q
            expected = hashing.commit(hashing.TAG_COMMIT_1, clen, f[j], w)
            if expected != sig.comm[2 * j + 1]:
                return VerifyResult(False, REJECT_ROUND)
    return VerifyResult(True)
