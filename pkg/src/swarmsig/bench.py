"""Benchmark sweeps over packet size, batch size, node count, and tx count.

Each sweep point runs its pipeline stage with two discarded warm-up
repetitions followed by at least five measured ones, and emits one CSV
row per (point, stage) with mean/p50/p95 wall times.

Absolute timings are hardware-dependent and are never asserted anywhere;
only trends and ratios are meaningful.  The packet sweep in particular
exercises hashing-dominated cost (message bytes enter the binding digest
only), so flat-ish curves are expected at desk scale.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import aggsig, consensus, ibs, ledger
from .consensus import FaultConfig
from .ibs import PROFILES
from .ledger import PqBlockSigner, PqBlockVerifier, Transaction, encrypt_tx

PACKET_GRID = [100, 500, 1000, 2000, 5000, 10000]
BATCH_GRID = [1, 5, 10, 20, 50, 100]
NODES_GRID = [5, 10, 15, 20, 25]
TX_GRID = [30, 40, 50, 60, 70, 80]

PRESET_VALUES = {
    "packet": PACKET_GRID,
    "batch": BATCH_GRID,
    "nodes": NODES_GRID,
    "tx": TX_GRID,
}

CSV_HEADER = "sweep,value,stage,mean_ms,p50_ms,p95_ms,reps,profile,seed"

WARMUP = 2
MIN_REPS = 5


@dataclass
class BenchPlan:
    sweep: str
    values: list
    reps: int = MIN_REPS
    profile: str = "desk"
    seed: int = 1

    def __post_init__(self):
        if self.sweep not in PRESET_VALUES:
            raise ValueError(f"unknown sweep '{self.sweep}'")
        if self.reps < MIN_REPS:
            raise ValueError(f"need at least {MIN_REPS} measured repetitions")
        if not self.values:
            self.values = list(PRESET_VALUES[self.sweep])


@dataclass
class BenchRecord:
    sweep: str
    value: int
    stage: str
    mean_ms: float
    p50_ms: float
    p95_ms: float
    reps: int
    profile: str
    seed: int

    def csv_row(self) -> str:
        return (f"{self.sweep},{self.value},{self.stage},{self.mean_ms:.4f},"
                f"{self.p50_ms:.4f},{self.p95_ms:.4f},{self.reps},"
                f"{self.profile},{self.seed}")


def _measure(fn, reps: int) -> np.ndarray:
    for _ in range(WARMUP):
        fn()
    out = np.empty(reps)
    for i in range(reps):
        t0 = time.perf_counter()
        fn()
        out[i] = (time.perf_counter() - t0) * 1000.0
    return out


class _Fixture:
    """Shared key material for a bench run."""

    def __init__(self, profile: str, seed: int):
        self.params = PROFILES[profile]
        self.rng = np.random.default_rng(seed)
        self.mpk, self.msk = ibs.setup(self.params, self.rng)
        self.signer_usk = ibs.extract(self.msk, b"bench-signer")
        self.agg_usk = ibs.extract(self.msk, b"bench-agg")


def _rows_for(plan: BenchPlan, value: int, samples: dict) -> list:
    rows = []
    for stage, arr in samples.items():
        rows.append(BenchRecord(
            plan.sweep, value, stage,
            float(arr.mean()), float(np.percentile(arr, 50)),
            float(np.percentile(arr, 95)),
            plan.reps, plan.profile, plan.seed))
    return rows


def _bench_packet(plan: BenchPlan, fx: _Fixture) -> list:
    rows = []
    for size in plan.values:
        msg = fx.rng.bytes(size)
        sig = ibs.sign(fx.mpk, fx.signer_usk, msg, fx.rng)
        samples = {
            "sign": _measure(lambda: ibs.sign(fx.mpk, fx.signer_usk, msg, fx.rng),
                             plan.reps),
            "verify": _measure(lambda: ibs.verify(fx.mpk, b"bench-signer", msg, sig),
                               plan.reps),
        }
        rows += _rows_for(plan, size, samples)
    return rows


def _make_batch(fx: _Fixture, count: int) -> list:
    batch = []
    for i in range(count):
        msg = f"bench message {i}".encode() + fx.rng.bytes(64)
        sig = aggsig.ls_sign(fx.mpk, fx.signer_usk, msg, fx.rng)
        batch.append(aggsig.SignedMessage(b"bench-signer", msg, sig))
    return batch


def _bench_batch(plan: BenchPlan, fx: _Fixture) -> list:
    rows = []
    for count in plan.values:
        batch = _make_batch(fx, count)
        agg = aggsig.la_sign(fx.mpk, fx.agg_usk, batch, fx.rng)

        def agg_sign_total():
            fresh = _make_batch(fx, count)
            aggsig.la_sign(fx.mpk, fx.agg_usk, fresh, fx.rng)

        def ls_ver_sum():
            for sm in batch:
                aggsig.ls_ver(fx.mpk, sm.signer_id, sm.msg, sm.sig)

        samples = {
            "agg_sign_total": _measure(agg_sign_total, plan.reps),
            "la_sign": _measure(
                lambda: aggsig.la_sign(fx.mpk, fx.agg_usk, batch, fx.rng), plan.reps),
            "agg_verify": _measure(
                lambda: aggsig.la_ver(fx.mpk, agg, deep=False), plan.reps),
            "ls_ver_sum": _measure(ls_ver_sum, plan.reps),
        }
        rows += _rows_for(plan, count, samples)
    return rows


def _bench_nodes(plan: BenchPlan, fx: _Fixture, blocks: int = 5,
                 tx_per_block: int = 30) -> list:
    rows = []
    owner = ledger.EnvelopeKey(b"bench-owner", fx.rng.bytes(32))
    etx = [
        encrypt_tx(Transaction(fx.rng.bytes(64), b"bench-dev", i + 1), owner, fx.rng)
        for i in range(tx_per_block)
    ]
    verifier = PqBlockVerifier(fx.mpk)
    signer = PqBlockSigner(fx.mpk, fx.agg_usk, fx.rng)
    for count in plan.values:
        def pipeline():
            genesis = ledger.make_genesis(signer)
            cluster = consensus.build_cluster(count, genesis, verifier,
                                              FaultConfig(1, 2000), fx.rng)
            for b in range(blocks):
                par = ledger.build_partial_block(etx, signer, "bench", b + 1)
                blk = ledger.complete_block(par, cluster.nodes[0].ledger.tip_hash, 1)
                cluster.run_round(blk, b, b + 1)

        samples = {"block_pipeline": _measure(pipeline, plan.reps)}
        rows += _rows_for(plan, count, samples)
    return rows


def _bench_tx(plan: BenchPlan, fx: _Fixture, nodes: int = 5) -> list:
    rows = []
    owner = ledger.EnvelopeKey(b"bench-owner", fx.rng.bytes(32))
    verifier = PqBlockVerifier(fx.mpk)
    signer = PqBlockSigner(fx.mpk, fx.agg_usk, fx.rng)
    for count in plan.values:
        def pipeline():
            batch = _make_batch(fx, count)
            for sm in batch:
                aggsig.ls_ver(fx.mpk, sm.signer_id, sm.msg, sm.sig)
            agg = aggsig.la_sign(fx.mpk, fx.agg_usk, batch, fx.rng)
            aggsig.la_ver(fx.mpk, agg, deep=False)
            etx = [
                encrypt_tx(Transaction(sm.msg, sm.signer_id, i + 1), owner, fx.rng)
                for i, sm in enumerate(batch)
            ]
            genesis = ledger.make_genesis(signer)
            cluster = consensus.build_cluster(nodes, genesis, verifier,
                                              FaultConfig(1, 2000), fx.rng)
            for b, start in enumerate(range(0, len(etx), 30)):
                par = ledger.build_partial_block(etx[start : start + 30], signer,
                                                 "bench", b + 1)
                blk = ledger.complete_block(par, cluster.nodes[0].ledger.tip_hash, 1)
                cluster.run_round(blk, b, b + 1)

        samples = {"total_pipeline": _measure(pipeline, plan.reps)}
        rows += _rows_for(plan, count, samples)
    return rows


_RUNNERS = {
    "packet": _bench_packet,
    "batch": _bench_batch,
    "nodes": _bench_nodes,
    "tx": _bench_tx,
}


def run_plan(plan: BenchPlan) -> list:
    fx = _Fixture(plan.profile, plan.seed)
    return _RUNNERS[plan.sweep](plan, fx)


def write_csv(records: list, path) -> None:
    with open(path, "w") as fh:
        fh.write(CSV_HEADER + "\n")
        for rec in records:
            fh.write(rec.csv_row() + "\n")
