"""Leader-driven voting rounds committing full blocks across cloud peers.

A round-robin leader broadcasts the candidate block with a vote request
sealed per recipient; every peer (the leader included) validates
freshness, the sealed request, and the block itself, answering with a
sealed affirmative vote or staying silent.  The leader commits when the
valid-vote count strictly exceeds 2*n_f + 1, after which every node
appends the block.

Transport is an in-process deterministic event loop: delivery order is
seeded, and a fault script can drop, delay, or corrupt the message to
any node in any round.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .ledger import (
    DecryptionError,
    EnvelopeKey,
    FullBlock,
    Ledger,
    open_sealed,
    seal,
    verify_block,
)

VREQ = b"VREQ"
VRES = b"VRES"


@dataclass(frozen=True)
class FaultConfig:
    n_f: int
    delta_t: int  # freshness window, ms

    def __post_init__(self):
        if self.n_f < 0 or self.delta_t <= 0:
            raise ValueError("need n_f >= 0 and delta_t > 0")


@dataclass
class VoteRequest:
    block: FullBlock
    sealed_req: bytes
    ts_l: int


@dataclass
class VoteResponse:
    sealed_res: bytes
    ts_cs: int
    responder: int


@dataclass
class ConsensusNode:
    node_id: int
    env_key: EnvelopeKey
    ledger: Ledger
    block_verifier: object


@dataclass
class Fault:
    action: str  # drop | delay_ms | corrupt_mtr | corrupt_sig
    param: int = 0


class FaultScript:
    """Line-oriented fault script: "round node action [param]" per line."""

    ACTIONS = ("drop", "delay_ms", "corrupt_mtr", "corrupt_sig")

    def __init__(self, entries=None):
        self.entries: dict[tuple[int, int], list[Fault]] = {}
        for (rnd, node), faults in (entries or {}).items():
            self.entries[(rnd, node)] = list(faults)

    @classmethod
    def parse(cls, text: str) -> "FaultScript":
        script = cls()
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) not in (3, 4):
                raise ValueError(f"fault script line {lineno}: expected 'round node action [param]'")
            rnd, node, action = int(parts[0]), int(parts[1]), parts[2]
            if action not in cls.ACTIONS:
                raise ValueError(f"fault script line {lineno}: unknown action {action!r}")
            param = int(parts[3]) if len(parts) == 4 else 0
            script.add(rnd, node, action, param)
        return script

    def add(self, rnd: int, node: int, action: str, param: int = 0) -> None:
        self.entries.setdefault((rnd, node), []).append(Fault(action, param))

    def faults_for(self, rnd: int, node: int) -> list[Fault]:
        return self.entries.get((rnd, node), [])


@dataclass
class TraceRecord:
    time: int
    node: int
    event: str
    reason: str = ""

    def line(self) -> str:
        return json.dumps(
            {"time": self.time, "node": self.node, "event": self.event,
             "reason": self.reason},
            sort_keys=True,
        )


@dataclass
class RoundOutcome:
    committed: bool
    votes: int
    reason: str
    trace: list = field(default_factory=list)


def select_leader(round_no: int, nodes: list[ConsensusNode]) -> int:
    """Round-robin leader selection over the node list order."""
    if not nodes:
        raise ValueError("cannot select a leader from an empty cluster")
    return nodes[round_no % len(nodes)].node_id


def _req_payload(block_hash: bytes, ts_l: int) -> bytes:
    return VREQ + block_hash + struct.pack("<q", ts_l)


def _res_payload(block_hash: bytes, ts_cs: int) -> bytes:
    return VRES + block_hash + struct.pack("<q", ts_cs)


def propose(leader: ConsensusNode, nodes: list[ConsensusNode], block: FullBlock,
            ts_l: int, rng: np.random.Generator) -> dict[int, VoteRequest]:
    """One vote request per node (the leader votes too), each sealed to its key."""
    payload = _req_payload(block.cur_hash, ts_l)
    return {
        node.node_id: VoteRequest(block, seal(node.env_key, payload, rng), ts_l)
        for node in nodes
    }


def validate_and_vote(node: ConsensusNode, req: VoteRequest, now: int,
                      leader_key: EnvelopeKey, fault: FaultConfig,
                      rng: np.random.Generator):
    """Run the full request check; return a sealed vote or (None, reason).

    Order: timestamp freshness, sealed-request decryption, embedded
    timestamp cross-check, then block verification (merkle root, owner
    signature, block hash, chain link).  Any failure withholds the vote.
    """
    if abs(now - req.ts_l) >= fault.delta_t:
        return None, "stale"
    try:
        payload = open_sealed(node.env_key, req.sealed_req)
    except DecryptionError:
        return None, "seal"
    if len(payload) != len(VREQ) + 40 or payload[:4] != VREQ:
        return None, "seal"
    embedded_hash = payload[4:36]
    embedded_ts = struct.unpack("<q", payload[36:])[0]
    if embedded_ts != req.ts_l or embedded_hash != req.block.cur_hash:
        return None, "ts-mismatch"
    res = verify_block(req.block, node.ledger.tip_hash, node.block_verifier)
    if not res:
        return None, res.reason
    sealed = seal(leader_key, _res_payload(req.block.cur_hash, now), rng)
    return VoteResponse(sealed, now, node.node_id), "ok"


def tally_votes(leader: ConsensusNode, block: FullBlock,
                responses: list[VoteResponse], now: int,
                fault: FaultConfig) -> int:
    """Count responses that decrypt under the leader key, are fresh, and vote yes."""
    v_c = 0
    for res in responses:
        if abs(now - res.ts_cs) >= fault.delta_t:
            continue
        try:
            payload = open_sealed(leader.env_key, res.sealed_res)
        except DecryptionError:
            continue
        if (len(payload) == len(VRES) + 40 and payload[:4] == VRES
                and payload[4:36] == block.cur_hash):
            v_c += 1
    return v_c


def commit_reached(v_c: int, n_f: int) -> bool:
    return v_c > 2 * n_f + 1


class Cluster:
    """Peer set of consensus nodes sharing a genesis block."""

    def __init__(self, nodes: list[ConsensusNode], fault_cfg: FaultConfig,
                 rng: np.random.Generator):
        if not nodes:
            raise ValueError("cluster needs at least one node")
        self.nodes = nodes
        self.by_id = {n.node_id: n for n in nodes}
        self.fault_cfg = fault_cfg
        self.rng = rng

    def run_round(self, block: FullBlock, round_no: int, now: int,
                  script: FaultScript | None = None) -> RoundOutcome:
        """Drive one full voting round; on commit, every node appends the block."""
        script = script or FaultScript()
        trace = []
        leader_id = select_leader(round_no, self.nodes)
        leader = self.by_id[leader_id]

        if any(f.action == "drop" for f in script.faults_for(round_no, leader_id)):
            trace.append(TraceRecord(now, leader_id, "abort", "leader-timeout"))
            return RoundOutcome(False, 0, "leader-timeout", trace)

        trace.append(TraceRecord(now, leader_id, "propose", f"round={round_no}"))
        requests = propose(leader, self.nodes, block, now, self.rng)

        responses = []
        for node in self.nodes:
            req = requests[node.node_id]
            arrival = now
            for flt in script.faults_for(round_no, node.node_id):
                if flt.action == "drop":
                    req = None
                elif flt.action == "delay_ms":
                    arrival += flt.param
                elif flt.action in ("corrupt_mtr", "corrupt_sig") and req is not None:
                    par = req.block.partial
                    corrupted = type(par)(**vars(par))
                    if flt.action == "corrupt_mtr":
                        corrupted.mtr = bytes(b ^ 0x01 for b in par.mtr)
                    else:
                        corrupted.sig_blk = bytes(b ^ 0x01 for b in par.sig_blk)
                    req = VoteRequest(
                        FullBlock(req.block.version, req.block.prev_hash,
                                  req.block.cur_hash, corrupted),
                        req.sealed_req, req.ts_l)
            if req is None:
                trace.append(TraceRecord(now, node.node_id, "silence", "dropped"))
                continue
            vote, reason = validate_and_vote(node, req, arrival, leader.env_key,
                                             self.fault_cfg, self.rng)
            if vote is None:
                trace.append(TraceRecord(arrival, node.node_id, "silence", reason))
            else:
                trace.append(TraceRecord(arrival, node.node_id, "vote", "ok"))
                responses.append(vote)

        # seeded delivery order back to the leader
        order = self.rng.permutation(len(responses))
        responses = [responses[i] for i in order]

        v_c = tally_votes(leader, block, responses, now, self.fault_cfg)
        if not commit_reached(v_c, self.fault_cfg.n_f):
            trace.append(TraceRecord(now, leader_id, "abort", f"votes={v_c}"))
            return RoundOutcome(False, v_c, "below-threshold", trace)

        for node in self.nodes:
            node.ledger.append(block)
        trace.append(TraceRecord(now, leader_id, "commit", f"votes={v_c}"))
        return RoundOutcome(True, v_c, "committed", trace)


def build_cluster(count: int, genesis: FullBlock, block_verifier,
                  fault_cfg: FaultConfig, rng: np.random.Generator) -> Cluster:
    """Provision envelope keys and per-node ledgers around a shared genesis."""
    nodes = [
        ConsensusNode(
            node_id=i,
            env_key=EnvelopeKey.generate(f"cs-{i}".encode(), rng),
            ledger=Ledger(genesis),
            block_verifier=block_verifier,
        )
        for i in range(count)
    ]
    return Cluster(nodes, fault_cfg, rng)
