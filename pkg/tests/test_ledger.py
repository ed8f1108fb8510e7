import hashlib

import numpy as np
import pytest

from swarmsig import ibs, ledger
from swarmsig.ledger import (
    DecryptionError,
    EncryptedTransaction,
    EnvelopeKey,
    FullBlock,
    Ledger,
    PqBlockSigner,
    PqBlockVerifier,
    Transaction,
    build_partial_block,
    complete_block,
    decrypt_tx,
    encrypt_tx,
    make_genesis,
    merkle_root,
    verify_block,
    verify_partial,
)


@pytest.fixture(scope="module")
def block_env(desk_keys):
    mpk, msk = desk_keys
    rng = np.random.default_rng(2024)
    usk = ibs.extract(msk, b"fog-owner")
    signer = PqBlockSigner(mpk, usk, rng)
    verifier = PqBlockVerifier(mpk)
    owner = EnvelopeKey(b"fog-owner-key", rng.bytes(32))
    return signer, verifier, owner, rng


def make_etx(owner, rng, count, start_ts=1000):
    return [
        encrypt_tx(Transaction(rng.bytes(20), f"dev-{i}".encode(), start_ts + i),
                   owner, rng)
        for i in range(count)
    ]


# -- transaction encryption ---------------------------------------------------

def test_encrypt_roundtrip(block_env):
    _, _, owner, rng = block_env
    tx = Transaction(b"temperature=21.5", b"dev-1", 777)
    assert decrypt_tx(encrypt_tx(tx, owner, rng), owner) == tx


def test_encrypt_roundtrip_empty_payload(block_env):
    _, _, owner, rng = block_env
    tx = Transaction(b"", b"dev-1", 1)
    assert decrypt_tx(encrypt_tx(tx, owner, rng), owner) == tx


def test_tampered_ciphertext_fails_authentication(block_env):
    _, _, owner, rng = block_env
    etx = encrypt_tx(Transaction(b"secret", b"dev-2", 5), owner, rng)
    for _ in range(100):
        pos = int(rng.integers(0, len(etx.ciphertext)))
        bit = 1 << int(rng.integers(0, 8))
        bad = bytearray(etx.ciphertext)
        bad[pos] ^= bit
        with pytest.raises(DecryptionError):
            decrypt_tx(EncryptedTransaction(bytes(bad), etx.nonce, etx.owner_key_id),
                       owner)


def test_only_owner_key_decrypts(block_env):
    _, _, owner, rng = block_env
    etx = encrypt_tx(Transaction(b"private", b"dev-3", 9), owner, rng)
    for i in range(10):
        other = EnvelopeKey(owner.key_id, rng.bytes(32))
        with pytest.raises(DecryptionError):
            decrypt_tx(etx, other)


def test_transaction_timestamp_must_be_positive():
    with pytest.raises(ValueError):
        Transaction(b"x", b"d", 0)


# -- merkle root ---------------------------------------------------------------

def test_merkle_single_leaf_is_leaf_hash():
    assert merkle_root([b"only"]) == hashlib.sha3_256(b"\x06only").digest()


def test_merkle_two_leaves_by_definition():
    la = hashlib.sha3_256(b"\x06a").digest()
    lb = hashlib.sha3_256(b"\x06b").digest()
    assert merkle_root([b"a", b"b"]) == hashlib.sha3_256(b"\x07" + la + lb).digest()


def test_merkle_odd_level_duplicates_last():
    la = hashlib.sha3_256(b"\x06a").digest()
    lb = hashlib.sha3_256(b"\x06b").digest()
    lc = hashlib.sha3_256(b"\x06c").digest()
    n1 = hashlib.sha3_256(b"\x07" + la + lb).digest()
    n2 = hashlib.sha3_256(b"\x07" + lc + lc).digest()
    assert merkle_root([b"a", b"b", b"c"]) == hashlib.sha3_256(b"\x07" + n1 + n2).digest()


def test_merkle_empty_is_usage_error():
    with pytest.raises(ValueError):
        merkle_root([])


def test_merkle_any_leaf_mutation_changes_root(rng):
    leaves = [rng.bytes(16) for _ in range(8)]
    base = merkle_root(leaves)
    for i in range(8):
        mutated = list(leaves)
        mutated[i] = bytes([mutated[i][0] ^ 1]) + mutated[i][1:]
        assert merkle_root(mutated) != base


def test_merkle_second_preimage_sampling(rng):
    seen = set()
    for _ in range(10_000):
        a = [bytes(rng.bytes(8)) for _ in range(4)]
        b = [bytes(rng.bytes(8)) for _ in range(4)]
        if a == b:
            continue
        ra, rb = merkle_root(a), merkle_root(b)
        assert ra != rb
        seen.add(ra)


# -- partial and full blocks ----------------------------------------------------

def test_build_and_verify_partial(block_env):
    signer, verifier, owner, rng = block_env
    par = build_partial_block(make_etx(owner, rng, 5), signer, "sensor", 5000)
    assert verify_partial(par, verifier)
    assert par.owner_id == b"fog-owner"


def test_partial_block_needs_transactions(block_env):
    signer, _, _, _ = block_env
    with pytest.raises(ValueError):
        build_partial_block([], signer, "sensor", 5000)


def test_partial_block_capacity_slicing(block_env):
    # callers slice to the configured capacity; 30 fits in one block
    signer, verifier, owner, rng = block_env
    par = build_partial_block(make_etx(owner, rng, 30), signer, "sensor", 1)
    assert len(par.etx) == 30
    assert verify_partial(par, verifier)


def test_mutated_app_type_rejected(block_env):
    signer, verifier, owner, rng = block_env
    par = build_partial_block(make_etx(owner, rng, 3), signer, "sensor", 5000)
    par.app_type = "tampered"
    res = verify_partial(par, verifier)
    assert not res and res.reason == "sig"


def test_mutated_etx_rejected_as_mtr(block_env):
    signer, verifier, owner, rng = block_env
    par = build_partial_block(make_etx(owner, rng, 3), signer, "sensor", 5000)
    bad = bytearray(par.etx[0].ciphertext)
    bad[0] ^= 1
    par.etx[0] = EncryptedTransaction(bytes(bad), par.etx[0].nonce,
                                      par.etx[0].owner_key_id)
    res = verify_partial(par, verifier)
    assert not res and res.reason == "mtr"


def test_chain_of_two_blocks(block_env):
    signer, verifier, owner, rng = block_env
    genesis = make_genesis(signer)
    assert genesis.prev_hash == bytes(32)
    assert genesis.version == 1
    assert genesis.partial.app_type == "GENESIS"
    assert len(genesis.partial.etx) == 1

    par = build_partial_block(make_etx(owner, rng, 2), signer, "sensor", 10)
    blk = complete_block(par, genesis.cur_hash, 1, verifier)
    assert blk.prev_hash == genesis.cur_hash
    assert verify_block(blk, genesis.cur_hash, verifier)


def test_complete_block_rejects_invalid_partial(block_env):
    signer, verifier, owner, rng = block_env
    par = build_partial_block(make_etx(owner, rng, 2), signer, "sensor", 10)
    par.app_type = "evil"
    with pytest.raises(ValueError):
        complete_block(par, bytes(32), 1, verifier)


def test_verify_block_reports_first_failure(block_env):
    signer, verifier, owner, rng = block_env
    genesis = make_genesis(signer)
    par = build_partial_block(make_etx(owner, rng, 2), signer, "sensor", 10)
    blk = complete_block(par, genesis.cur_hash, 1)
    assert verify_block(blk, genesis.cur_hash, verifier)
    wrong_prev = verify_block(blk, bytes(32), verifier)
    assert not wrong_prev and wrong_prev.reason == "chain"
    stale_hash = FullBlock(blk.version, blk.prev_hash, bytes(32), blk.partial)
    res = verify_block(stale_hash, genesis.cur_hash, verifier)
    assert not res and res.reason == "hash"


def test_ledger_audit_and_persistence(block_env, tmp_path):
    signer, verifier, owner, rng = block_env
    genesis = make_genesis(signer)
    led = Ledger(genesis)
    for i in range(4):
        par = build_partial_block(make_etx(owner, rng, 3), signer, "sensor", 100 + i)
        led.append(complete_block(par, led.tip_hash, 1))
    assert led.height == 4
    assert led.audit(verifier)
    for i in range(1, len(led.blocks)):
        assert led.blocks[i].prev_hash == led.blocks[i - 1].cur_hash
        recomputed = ledger.block_hash(led.blocks[i].version,
                                       led.blocks[i].prev_hash, led.blocks[i].partial)
        assert recomputed == led.blocks[i].cur_hash

    led.save(tmp_path / "chain.bin", tmp_path / "chain.idx")
    reloaded = Ledger.load(tmp_path / "chain.bin")
    assert reloaded.height == led.height
    assert reloaded.tip_hash == led.tip_hash
    assert reloaded.audit(verifier)
    index_lines = (tmp_path / "chain.idx").read_text().splitlines()
    assert len(index_lines) == 5
    assert index_lines[0].split()[2] == genesis.cur_hash.hex()


def test_ledger_rejects_double_commit(block_env):
    signer, verifier, owner, rng = block_env
    genesis = make_genesis(signer)
    led = Ledger(genesis)
    par = build_partial_block(make_etx(owner, rng, 1), signer, "sensor", 50)
    blk = complete_block(par, led.tip_hash, 1)
    led.append(blk)
    with pytest.raises(ValueError):
        led.append(blk)


def test_block_file_roundtrip(block_env):
    signer, verifier, owner, rng = block_env
    par = build_partial_block(make_etx(owner, rng, 2), signer, "sensor", 60)
    blk = complete_block(par, bytes(32), 1)
    raw = blk.serialize()
    assert raw[:4] == b"PQB1"
    out, end = FullBlock.deserialize(raw)
    assert end == len(raw)
    assert out.cur_hash == blk.cur_hash
    assert verify_partial(out.partial, verifier)
