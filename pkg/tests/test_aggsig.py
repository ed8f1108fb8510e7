import time

import numpy as np
import pytest

from swarmsig import aggsig, ibs
from swarmsig.aggsig import SignedMessage
from swarmsig.ibs import DESK, IbsSignature


@pytest.fixture(scope="module")
def keyring(desk_keys):
    _, msk = desk_keys
    ids = [f"member-{i}".encode() for i in range(10)]
    return ids, aggsig.keygen_all(msk, ids, b"aggregator")


def make_batch(desk_keys, keyring, count, rng):
    mpk, _ = desk_keys
    ids, ring = keyring
    batch = []
    for i in range(count):
        sid = ids[i % len(ids)]
        msg = f"reading {i}: ".encode() + rng.bytes(24)
        sig = aggsig.ls_sign(mpk, ring.signers[sid], msg, rng)
        batch.append(SignedMessage(sid, msg, sig))
    return batch


def test_keygen_all_counts_and_key_equations(desk_keys):
    mpk, msk = desk_keys
    ring = aggsig.keygen_all(msk, [b"only-one"], b"the-agg")
    assert len(ring.signers) == 1
    for usk in list(ring.signers.values()) + [ring.aggregator]:
        target = ibs.identity_target(DESK, usk.identity)
        assert np.array_equal(mpk.p.evaluate(usk.u), target)


def test_keygen_all_ten_distinct_keys(keyring):
    ids, ring = keyring
    assert len(ring.signers) == 10
    blobs = {usk.u.tobytes() for usk in ring.signers.values()}
    blobs.add(ring.aggregator.u.tobytes())
    assert len(blobs) == 11


def test_keygen_all_empty_signers(desk_keys):
    _, msk = desk_keys
    ring = aggsig.keygen_all(msk, [], b"lonely-agg")
    assert ring.signers == {}
    assert ring.aggregator.identity == b"lonely-agg"


def test_keygen_all_duplicate_ids_rejected(desk_keys):
    _, msk = desk_keys
    with pytest.raises(ValueError):
        aggsig.keygen_all(msk, [b"x", b"x"], b"agg")
    with pytest.raises(ValueError):
        aggsig.keygen_all(msk, [b"x"], b"x")


def test_ls_round_trip_and_size_law(desk_keys, keyring, rng):
    mpk, _ = desk_keys
    ids, ring = keyring
    sig = aggsig.ls_sign(mpk, ring.signers[ids[0]], b"local msg", rng)
    assert aggsig.ls_ver(mpk, ids[0], b"local msg", sig)
    assert not aggsig.ls_ver(mpk, ids[1], b"local msg", sig)
    assert sig.element_count() == DESK.psi * (DESK.m + 2 * DESK.n)


def test_ls_ver_truncated_reject(desk_keys, keyring, rng):
    mpk, _ = desk_keys
    ids, ring = keyring
    sig = aggsig.ls_sign(mpk, ring.signers[ids[0]], b"m", rng)
    truncated = IbsSignature(sig.comm, sig.res1_g, sig.res1_h, sig.res2[:-1])
    res = aggsig.ls_ver(mpk, ids[0], b"m", truncated)
    assert not res and res.reason == "malformed"


@pytest.mark.parametrize("size", [1, 2, 3, 10, 100])
def test_aggregate_completeness(desk_keys, keyring, size):
    mpk, _ = desk_keys
    _, ring = keyring
    rng = np.random.default_rng(size)
    batch = make_batch(desk_keys, keyring, size, rng)
    agg = aggsig.la_sign(mpk, ring.aggregator, batch, rng)
    assert aggsig.la_ver(mpk, agg)
    assert aggsig.la_ver(mpk, agg, deep=True)


def test_empty_batch_is_usage_error(desk_keys, keyring, rng):
    mpk, _ = desk_keys
    _, ring = keyring
    with pytest.raises(ValueError):
        aggsig.la_sign(mpk, ring.aggregator, [], rng)


def test_batch_digest_order_independent(desk_keys, keyring, rng):
    batch = make_batch(desk_keys, keyring, 6, rng)
    base = aggsig.batch_digest(batch)
    perm = [batch[i] for i in rng.permutation(6)]
    assert aggsig.batch_digest(perm) == base
    assert aggsig.batch_digest(batch[::-1]) == base


def test_la_sign_arrival_order_irrelevant(desk_keys, keyring, rng):
    mpk, _ = desk_keys
    _, ring = keyring
    batch = make_batch(desk_keys, keyring, 4, rng)
    a1 = aggsig.la_sign(mpk, ring.aggregator, batch, np.random.default_rng(1))
    a2 = aggsig.la_sign(mpk, ring.aggregator, batch[::-1], np.random.default_rng(1))
    assert a1.batch_digest == a2.batch_digest


def test_aggregate_binding_exhaustive_at_size_three(desk_keys, keyring):
    mpk, _ = desk_keys
    _, ring = keyring
    rng = np.random.default_rng(33)
    batch = make_batch(desk_keys, keyring, 3, rng)
    agg = aggsig.la_sign(mpk, ring.aggregator, batch, rng)
    assert aggsig.la_ver(mpk, agg)

    def clone():
        fresh = [SignedMessage(sm.signer_id, sm.msg, sm.sig) for sm in agg.batch]
        return aggsig.AggregateSignature(agg.batch_digest, agg.agg_sig,
                                         agg.agg_id, fresh)

    for k in range(3):
        mutated = clone()
        mutated.batch[k].signer_id += b"x"
        assert not aggsig.la_ver(mpk, mutated)
        mutated = clone()
        mutated.batch[k].msg = mutated.batch[k].msg[:-1] + b"\x00"
        assert not aggsig.la_ver(mpk, mutated)
        mutated = clone()
        sig = mutated.batch[k].sig
        comm = list(sig.comm)
        comm[0] = bytes([comm[0][0] ^ 1]) + comm[0][1:]
        mutated.batch[k].sig = IbsSignature(comm, sig.res1_g, sig.res1_h, sig.res2)
        assert not aggsig.la_ver(mpk, mutated, deep=True)

    mutated = clone()
    mutated.agg_id = b"someone-else"
    assert not aggsig.la_ver(mpk, mutated)

    mutated = clone()
    comm = list(agg.agg_sig.comm)
    comm[0] = bytes([comm[0][0] ^ 1]) + comm[0][1:]
    mutated.agg_sig = IbsSignature(comm, agg.agg_sig.res1_g,
                                   agg.agg_sig.res1_h, agg.agg_sig.res2)
    assert not aggsig.la_ver(mpk, mutated)


def test_non_aggregator_signature_rejected(desk_keys, keyring):
    # an aggregate signed under a non-aggregator identity must not pass
    mpk, _ = desk_keys
    ids, ring = keyring
    rng = np.random.default_rng(44)
    batch = make_batch(desk_keys, keyring, 2, rng)
    digest = aggsig.batch_digest(batch)
    rogue_sig = ibs.sign(mpk, ring.signers[ids[0]], digest, rng)
    forged = aggsig.AggregateSignature(digest, rogue_sig, ring.aggregator.identity,
                                       aggsig.canonical_batch(batch))
    assert not aggsig.la_ver(mpk, forged)


def test_shallow_verify_runs_exactly_one_signature_check(desk_keys, keyring,
                                                         monkeypatch):
    mpk, _ = desk_keys
    _, ring = keyring
    rng = np.random.default_rng(55)
    batch = make_batch(desk_keys, keyring, 10, rng)
    agg = aggsig.la_sign(mpk, ring.aggregator, batch, rng)

    calls = {"n": 0}
    real_verify = ibs.verify

    def counting_verify(*args, **kwargs):
        calls["n"] += 1
        return real_verify(*args, **kwargs)

    monkeypatch.setattr(ibs, "verify", counting_verify)
    assert aggsig.la_ver(mpk, agg, deep=False)
    assert calls["n"] == 1
    calls["n"] = 0
    assert aggsig.la_ver(mpk, agg, deep=True)
    assert calls["n"] == 1 + len(batch)


def test_deep_verify_costs_more_wall_time(desk_keys, keyring):
    mpk, _ = desk_keys
    _, ring = keyring
    rng = np.random.default_rng(66)
    batch = make_batch(desk_keys, keyring, 10, rng)
    agg = aggsig.la_sign(mpk, ring.aggregator, batch, rng)

    def timed(deep):
        samples = []
        for _ in range(7):
            t0 = time.perf_counter()
            assert aggsig.la_ver(mpk, agg, deep=deep)
            samples.append(time.perf_counter() - t0)
        return sorted(samples)[len(samples) // 2]

    assert timed(True) > timed(False)


def test_aggregate_wire_roundtrip(desk_keys, keyring):
    mpk, _ = desk_keys
    _, ring = keyring
    rng = np.random.default_rng(77)
    batch = make_batch(desk_keys, keyring, 5, rng)
    agg = aggsig.la_sign(mpk, ring.aggregator, batch, rng)
    blob = aggsig.serialize_aggregate(agg)
    out = aggsig.deserialize_aggregate(DESK, blob)
    assert out.agg_id == agg.agg_id
    assert out.batch_digest == agg.batch_digest
    assert aggsig.la_ver(mpk, out, deep=True)
    with pytest.raises(ibs.WireFormatError):
        aggsig.deserialize_aggregate(DESK, blob[:-3])
