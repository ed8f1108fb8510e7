import numpy as np
import pytest

from swarmsig import consensus, ibs, ledger
from swarmsig.consensus import (
    FaultConfig,
    FaultScript,
    commit_reached,
    propose,
    select_leader,
    tally_votes,
    validate_and_vote,
)
from swarmsig.ledger import (
    EnvelopeKey,
    PqBlockSigner,
    PqBlockVerifier,
    Transaction,
    build_partial_block,
    complete_block,
    encrypt_tx,
    make_genesis,
    open_sealed,
)

DELTA_T = 2000


@pytest.fixture(scope="module")
def env(desk_keys):
    mpk, msk = desk_keys
    rng = np.random.default_rng(314)
    signer = PqBlockSigner(mpk, ibs.extract(msk, b"cs-owner"), rng)
    verifier = PqBlockVerifier(mpk)
    owner = EnvelopeKey(b"cs-owner-key", rng.bytes(32))
    genesis = make_genesis(signer)
    return signer, verifier, owner, genesis


def fresh_cluster(env, count=5, n_f=1, seed=1):
    signer, verifier, owner, genesis = env
    rng = np.random.default_rng(seed)
    return consensus.build_cluster(count, genesis, verifier,
                                   FaultConfig(n_f, DELTA_T), rng)


def fresh_block(env, cluster, ts=1000, tx=2):
    signer, verifier, owner, genesis = env
    rng = np.random.default_rng(ts)
    etx = [encrypt_tx(Transaction(rng.bytes(8), b"d", ts + i), owner, rng)
           for i in range(tx)]
    par = build_partial_block(etx, signer, "consensus-test", ts)
    return complete_block(par, cluster.nodes[0].ledger.tip_hash, 1)


def test_select_leader_round_robin(env):
    cluster = fresh_cluster(env)
    assert select_leader(0, cluster.nodes) == 0
    assert select_leader(5, cluster.nodes) == 0
    assert select_leader(7, cluster.nodes) == 2
    counts = {}
    for r in range(10):
        lid = select_leader(r, cluster.nodes)
        counts[lid] = counts.get(lid, 0) + 1
    assert counts == {i: 2 for i in range(5)}
    with pytest.raises(ValueError):
        select_leader(0, [])


def test_propose_seals_to_each_recipient(env):
    cluster = fresh_cluster(env)
    block = fresh_block(env, cluster)
    rng = np.random.default_rng(8)
    reqs = propose(cluster.nodes[0], cluster.nodes, block, 1000, rng)
    assert sorted(reqs) == [0, 1, 2, 3, 4]
    for nid, req in reqs.items():
        assert req.ts_l == 1000
        # only the addressee's key opens the envelope
        open_sealed(cluster.by_id[nid].env_key, req.sealed_req)
        for other in cluster.nodes:
            if other.node_id != nid:
                with pytest.raises(ledger.DecryptionError):
                    open_sealed(other.env_key, req.sealed_req)


def test_validate_fresh_request_votes(env):
    cluster = fresh_cluster(env)
    block = fresh_block(env, cluster)
    rng = np.random.default_rng(9)
    reqs = propose(cluster.nodes[0], cluster.nodes, block, 1000, rng)
    vote, reason = validate_and_vote(cluster.nodes[1], reqs[1], 1000,
                                     cluster.nodes[0].env_key,
                                     cluster.fault_cfg, rng)
    assert vote is not None and reason == "ok"
    assert vote.responder == 1


def test_validate_stale_request_silences(env):
    cluster = fresh_cluster(env)
    block = fresh_block(env, cluster)
    rng = np.random.default_rng(10)
    reqs = propose(cluster.nodes[0], cluster.nodes, block, 1000, rng)
    vote, reason = validate_and_vote(cluster.nodes[1], reqs[1], 1000 + DELTA_T,
                                     cluster.nodes[0].env_key,
                                     cluster.fault_cfg, rng)
    assert vote is None and reason == "stale"


def test_validate_flipped_mtr_silences_with_reason(env):
    cluster = fresh_cluster(env)
    block = fresh_block(env, cluster)
    rng = np.random.default_rng(11)
    reqs = propose(cluster.nodes[0], cluster.nodes, block, 1000, rng)
    par = block.partial
    bad_par = type(par)(**vars(par))
    bad_par.mtr = bytes(b ^ 1 for b in par.mtr)
    bad_block = ledger.FullBlock(block.version, block.prev_hash,
                                 block.cur_hash, bad_par)
    bad_req = consensus.VoteRequest(bad_block, reqs[1].sealed_req, reqs[1].ts_l)
    vote, reason = validate_and_vote(cluster.nodes[1], bad_req, 1000,
                                     cluster.nodes[0].env_key,
                                     cluster.fault_cfg, rng)
    assert vote is None and reason == "mtr"


def test_validate_wrong_recipient_key_silences(env):
    cluster = fresh_cluster(env)
    block = fresh_block(env, cluster)
    rng = np.random.default_rng(12)
    reqs = propose(cluster.nodes[0], cluster.nodes, block, 1000, rng)
    # node 2 handed node 1's envelope cannot open it
    vote, reason = validate_and_vote(cluster.nodes[2], reqs[1], 1000,
                                     cluster.nodes[0].env_key,
                                     cluster.fault_cfg, rng)
    assert vote is None and reason == "seal"


def test_commit_threshold_predicate_exhaustive():
    # commit iff votes strictly exceed 2*n_f + 1
    assert commit_reached(4, 1) and commit_reached(5, 1)
    assert not commit_reached(3, 1)
    for v_c in range(6):
        assert commit_reached(v_c, 1) == (v_c in (4, 5))
    for n_f in (0, 1):
        for v_c in range(8):
            assert commit_reached(v_c, n_f) == (v_c > 2 * n_f + 1)


def test_tally_counts_only_valid_votes(env):
    cluster = fresh_cluster(env)
    block = fresh_block(env, cluster)
    rng = np.random.default_rng(13)
    leader = cluster.nodes[0]
    reqs = propose(leader, cluster.nodes, block, 1000, rng)
    votes = []
    for node in cluster.nodes:
        vote, _ = validate_and_vote(node, reqs[node.node_id], 1000,
                                    leader.env_key, cluster.fault_cfg, rng)
        votes.append(vote)
    assert tally_votes(leader, block, votes, 1000, cluster.fault_cfg) == 5
    assert tally_votes(leader, block, votes[:3], 1000, cluster.fault_cfg) == 3
    # a vote sealed to the wrong key does not count
    forged = consensus.VoteResponse(
        consensus.seal(cluster.nodes[1].env_key, b"VRES" + block.cur_hash
                       + (1000).to_bytes(8, "little", signed=True), rng),
        1000, 1)
    assert tally_votes(leader, block, votes[:3] + [forged], 1000,
                       cluster.fault_cfg) == 3


def test_round_all_honest_commits(env):
    cluster = fresh_cluster(env)
    block = fresh_block(env, cluster)
    out = cluster.run_round(block, 0, 1000)
    assert out.committed and out.votes == 5
    tips = {n.ledger.tip_hash for n in cluster.nodes}
    assert tips == {block.cur_hash}
    assert all(n.ledger.height == 1 for n in cluster.nodes)


def test_round_one_silent_node_still_commits(env):
    cluster = fresh_cluster(env)
    block = fresh_block(env, cluster)
    script = FaultScript()
    script.add(0, 1, "drop")
    out = cluster.run_round(block, 0, 1000, script)
    assert out.committed and out.votes == 4


def test_round_two_silent_nodes_abort(env):
    cluster = fresh_cluster(env)
    block = fresh_block(env, cluster)
    script = FaultScript()
    script.add(0, 1, "drop")
    script.add(0, 2, "drop")
    out = cluster.run_round(block, 0, 1000, script)
    assert not out.committed and out.votes == 3
    assert all(n.ledger.height == 0 for n in cluster.nodes)


def test_round_delay_beyond_window_withholds_vote(env):
    cluster = fresh_cluster(env)
    block = fresh_block(env, cluster)
    script = FaultScript()
    script.add(0, 3, "delay_ms", DELTA_T + 1)
    out = cluster.run_round(block, 0, 1000, script)
    assert out.committed and out.votes == 4
    assert any(r.event == "silence" and r.reason == "stale" for r in out.trace)


def test_round_corrupt_sig_withholds_vote(env):
    cluster = fresh_cluster(env)
    block = fresh_block(env, cluster)
    script = FaultScript()
    script.add(0, 4, "corrupt_sig")
    out = cluster.run_round(block, 0, 1000, script)
    assert out.committed and out.votes == 4
    assert any(r.event == "silence" and r.reason == "sig" for r in out.trace)


def test_faulty_leader_aborts_by_timeout(env):
    cluster = fresh_cluster(env)
    block = fresh_block(env, cluster)
    script = FaultScript()
    script.add(0, 0, "drop")  # round 0's leader is node 0
    out = cluster.run_round(block, 0, 1000, script)
    assert not out.committed and out.reason == "leader-timeout"


def test_threshold_exactness_over_cluster_sizes(env):
    # for clusters of 4..7 and n_f in {0,1}, silence k voters and check
    # commit <=> (size - k) > 2*n_f + 1; the leader stays honest
    for size in range(4, 8):
        for n_f in (0, 1):
            for k in range(size):
                cluster = fresh_cluster(env, count=size, n_f=n_f, seed=size * 10 + k)
                block = fresh_block(env, cluster)
                script = FaultScript()
                for silent in range(1, k + 1):  # node 0 leads round 0
                    script.add(0, silent, "drop")
                out = cluster.run_round(block, 0, 1000, script)
                expect = (size - k) > 2 * n_f + 1
                assert out.committed == expect, (size, n_f, k)
                assert out.votes == (size - k if not any(
                    f.action == "drop" for f in script.faults_for(0, 0)) else 0)


def test_ledgers_byte_identical_after_rounds(env):
    cluster = fresh_cluster(env)
    for r in range(3):
        block = fresh_block(env, cluster, ts=2000 + r)
        out = cluster.run_round(block, r, 2000 + r)
        assert out.committed
    blobs = {
        b"".join(blk.serialize() for blk in node.ledger.blocks)
        for node in cluster.nodes
    }
    assert len(blobs) == 1


def test_no_double_commit_per_ledger(env):
    cluster = fresh_cluster(env)
    block = fresh_block(env, cluster)
    assert cluster.run_round(block, 0, 1000).committed
    for node in cluster.nodes:
        hashes = [b.cur_hash for b in node.ledger.blocks]
        assert len(hashes) == len(set(hashes))
        with pytest.raises(ValueError):
            node.ledger.append(block)


def test_fault_script_parsing():
    script = FaultScript.parse(
        "# comment line\n"
        "0 1 drop\n"
        "2 3 delay_ms 5000\n"
        "4 0 corrupt_mtr  # trailing comment\n"
    )
    assert [f.action for f in script.faults_for(0, 1)] == ["drop"]
    assert script.faults_for(2, 3)[0].param == 5000
    assert script.faults_for(4, 0)[0].action == "corrupt_mtr"
    assert script.faults_for(9, 9) == []
    with pytest.raises(ValueError):
        FaultScript.parse("0 1 explode")
    with pytest.raises(ValueError):
        FaultScript.parse("not enough")


def test_trace_records_are_structured_lines(env):
    cluster = fresh_cluster(env)
    block = fresh_block(env, cluster)
    out = cluster.run_round(block, 0, 1000)
    import json
    for rec in out.trace:
        parsed = json.loads(rec.line())
        assert set(parsed) == {"time", "node", "event", "reason"}
