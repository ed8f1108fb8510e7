"""Deterministic device -> fog -> cloud pipeline simulation.

Devices roam inside their fog's coverage disc on a shared logical clock,
signing synthetic sensor payloads every cadence tick.  Fogs freshness-check
and verify each message, aggregate verified batches, encrypt transactions,
and build owner-signed partial blocks.  A cloud cluster verifies the
aggregates, completes the blocks, and commits them through voting rounds.

Everything is driven by seeded generators: the trace of a run is a pure
function of (config, seed, fault script).  Wall-clock timings appear only
in the per-stage metrics, never in the trace.
"""

from __future__ import annotations

import contextlib
import json
import math
import struct
import time
from dataclasses import dataclass, fields as dc_fields, field as dc_field

import numpy as np

from . import aggsig, consensus, hashing, ibs, ledger
from .aggsig import AggregateSignature, SignedMessage
from .consensus import Cluster, FaultConfig, FaultScript
from .ibs import MasterPublicKey, MasterSecretKey, PROFILES, UserSecretKey
from .ledger import (
    EnvelopeKey,
    PqBlockSigner,
    PqBlockVerifier,
    Transaction,
    build_partial_block,
    complete_block,
    encrypt_tx,
    verify_partial,
)


class ConfigError(Exception):
    """Invalid simulation configuration; carries the offending keys."""

    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("; ".join(problems))


@dataclass
class SimConfig:
    device_count: int = 50
    fog_count: int = 10
    cs_count: int = 5
    area_width: float = 1000.0
    area_height: float = 1000.0
    tx_range: float = 100.0
    delta_t: int = 2000          # freshness window, ms
    block_capacity: int = 30
    sim_duration: int = 100      # logical seconds
    packet_min: int = 100
    packet_max: int = 10000
    seed: int = 1
    cadence_ms: int = 5000       # one message per device per tick
    n_f: int = 1                 # assumed faulty cloud nodes
    dynamic_adds: int = 0        # devices added mid-run
    profile: str = "desk"
    app_type: str = "sensor-data"

    def validate(self) -> None:
        problems = []
        for key in ("device_count", "fog_count", "cs_count", "block_capacity"):
            if getattr(self, key) < (0 if key == "device_count" else 1):
                problems.append(f"{key} must be >= 1" if key != "device_count"
                                else "device_count must be >= 0")
        if self.sim_duration <= 0:
            problems.append("sim_duration must be > 0")
        if self.cadence_ms <= 0:
            problems.append("cadence_ms must be > 0")
        if self.delta_t <= 0:
            problems.append("delta_t must be > 0")
        if not (0 < self.packet_min <= self.packet_max):
            problems.append("packet range must satisfy 0 < packet_min <= packet_max")
        if self.tx_range <= 0 or self.area_width <= 0 or self.area_height <= 0:
            problems.append("arena and tx_range must be positive")
        if self.profile not in PROFILES:
            problems.append(f"profile must be one of {sorted(PROFILES)}")
        if self.n_f < 0 or self.cs_count < 3 * self.n_f + 2:
            problems.append("cs_count must be >= 3*n_f + 2")
        if self.dynamic_adds < 0:
            problems.append("dynamic_adds must be >= 0")
        if problems:
            raise ConfigError(problems)

    @property
    def duration_ms(self) -> int:
        return self.sim_duration * 1000


def parse_config(text: str) -> SimConfig:
    """Parse "key = value" lines into a SimConfig; '#' starts a comment."""
    types = {f.name: f.type for f in dc_fields(SimConfig)}
    casts = {"int": int, "float": float, "str": str}
    cfg = SimConfig()
    problems = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            problems.append(f"line {lineno}: expected 'key = value'")
            continue
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in types:
            problems.append(f"unknown key '{key}'")
            continue
        try:
            setattr(cfg, key, casts[types[key]](value))
        except (ValueError, KeyError):
            problems.append(f"bad value for '{key}': {value!r}")
    if problems:
        raise ConfigError(problems)
    cfg.validate()
    return cfg


def config_text(cfg: SimConfig) -> str:
    return "".join(f"{f.name} = {getattr(cfg, f.name)}\n" for f in dc_fields(SimConfig))


# -- actors -------------------------------------------------------------------

@dataclass
class DeviceRecord:
    identity: bytes
    usk: UserSecretKey
    position: np.ndarray
    group: int  # fog index
    speed: float
    waypoint: np.ndarray


@dataclass
class FogRecord:
    agg_id: bytes
    agg_usk: UserSecretKey
    owner_key: EnvelopeKey
    position: np.ndarray
    group_members: list
    buffer: list = dc_field(default_factory=list)  # (SignedMessage, Transaction)


@dataclass
class CollectionMessage:
    device_id: bytes
    agg_id: bytes
    rts_start: int
    rts_end: int
    data: bytes
    cts: int
    sig: ibs.IbsSignature

    def signed_body(self) -> bytes:
        return (len(self.device_id).to_bytes(4, "little") + self.device_id
                + len(self.agg_id).to_bytes(4, "little") + self.agg_id
                + struct.pack("<qq", self.rts_start, self.rts_end)
                + len(self.data).to_bytes(4, "little") + self.data
                + struct.pack("<q", self.cts))


@dataclass
class FogPayload:
    """What a fog emits to the cloud layer after a flush."""

    aggregate: AggregateSignature
    blocks: list  # PartialBlock
    owner_id: bytes
    owner_pub: bytes


class StageTimer:
    """Wall-clock accumulator per pipeline stage (metrics only, never traced)."""

    STAGES = ("sign", "verify", "agg_sign", "agg_verify", "block_build",
              "consensus_round")

    def __init__(self):
        self.samples = {s: [] for s in self.STAGES}

    def record(self, stage: str, elapsed_ms: float) -> None:
        self.samples.setdefault(stage, []).append(elapsed_ms)

    def timed(self, stage: str):
        return _Timed(self, stage)

    def summary_rows(self):
        rows = []
        for stage in sorted(self.samples):
            vals = self.samples[stage]
            if not vals:
                rows.append((stage, 0, 0.0, 0.0, 0.0, 0.0))
                continue
            arr = np.array(vals)
            rows.append((stage, len(vals), float(arr.sum()), float(arr.mean()),
                         float(np.percentile(arr, 50)), float(np.percentile(arr, 95))))
        return rows

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("stage,count,total_ms,mean_ms,p50_ms,p95_ms\n")
            for stage, count, total, mean, p50, p95 in self.summary_rows():
                fh.write(f"{stage},{count},{total:.3f},{mean:.3f},{p50:.3f},{p95:.3f}\n")


class _Timed:
    def __init__(self, timer, stage):
        self.timer, self.stage = timer, stage

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.timer.record(self.stage, (time.perf_counter() - self.t0) * 1000.0)
        return False


def timed(metrics: StageTimer | None, stage: str):
    """Timing context for a stage; a no-op when metrics are not collected."""
    return metrics.timed(stage) if metrics else contextlib.nullcontext()


@dataclass
class SimResult:
    config: SimConfig
    trace: list                 # event dicts, nondecreasing time
    metrics: StageTimer
    mpk: MasterPublicKey
    devices: list
    fogs: list
    cluster: Cluster
    accepted: list              # (device_id, data, cts) at fog accept time
    committed_blocks: int = 0
    quarantined: int = 0
    drops: dict = dc_field(default_factory=dict)

    @property
    def committed_tx(self) -> int:
        total = 0
        for blk in self.cluster.nodes[0].ledger.blocks[1:]:
            total += len(blk.partial.etx)
        return total

    def committed_transactions(self) -> list:
        """Decrypt every committed transaction with its owning fog's key."""
        keys = {f.owner_key.key_id: f.owner_key for f in self.fogs}
        out = []
        for blk in self.cluster.nodes[0].ledger.blocks[1:]:
            for etx in blk.partial.etx:
                out.append(ledger.decrypt_tx(etx, keys[etx.owner_key_id]))
        return out

    def trace_lines(self) -> str:
        return "".join(json.dumps(ev, sort_keys=True) + "\n" for ev in self.trace)

    def summary(self) -> str:
        drops = sum(self.drops.values())
        return (f"committed_blocks={self.committed_blocks} "
                f"committed_tx={self.committed_tx} drops={drops} "
                f"quarantined={self.quarantined}")


# -- registration and placement ----------------------------------------------

def _sample_in_disc(rng: np.random.Generator, center: np.ndarray, radius: float,
                    width: float, height: float) -> np.ndarray:
    r = radius * math.sqrt(rng.uniform())
    theta = rng.uniform(0, 2 * math.pi)
    p = center + np.array([r * math.cos(theta), r * math.sin(theta)])
    return np.clip(p, [0.0, 0.0], [width, height])


def register_all(msk: MasterSecretKey, cfg: SimConfig,
                 rng: np.random.Generator) -> tuple[list, list]:
    """Key and place every fog and device; devices join their nearest fog.

    Fog owner keys for transaction encryption are derived from the master
    key digest so reruns with the same seed provision identical material.
    """
    fog_positions = [
        np.array([rng.uniform(0, cfg.area_width), rng.uniform(0, cfg.area_height)])
        for _ in range(cfg.fog_count)
    ]
    fogs = []
    for j, pos in enumerate(fog_positions):
        agg_id = f"FOG-{j:02d}".encode()
        owner_secret = hashing.digest32(
            hashing.TAG_BIND, msk.digest + b"owner-key" + agg_id)
        fogs.append(FogRecord(
            agg_id=agg_id,
            agg_usk=None,
            owner_key=EnvelopeKey(agg_id, owner_secret),
            position=pos,
            group_members=[],
        ))

    devices = []
    assignments: dict[int, list[bytes]] = {j: [] for j in range(cfg.fog_count)}
    for i in range(cfg.device_count):
        identity = f"DR-{i:04d}".encode()
        placed = False
        for _ in range(200):
            anchor = fogs[int(rng.integers(cfg.fog_count))].position
            pos = _sample_in_disc(rng, anchor, cfg.tx_range,
                                  cfg.area_width, cfg.area_height)
            dists = [float(np.linalg.norm(pos - f.position)) for f in fogs]
            nearest = int(np.argmin(dists))
            if dists[nearest] <= cfg.tx_range:
                placed = True
                break
        if not placed:
            raise ConfigError([f"device {identity.decode()} found no fog within range"])
        speed = float(rng.uniform(5.0, 15.0))
        waypoint = _sample_in_disc(rng, fogs[nearest].position, cfg.tx_range,
                                   cfg.area_width, cfg.area_height)
        devices.append(DeviceRecord(identity, None, pos, nearest, speed, waypoint))
        assignments[nearest].append(identity)

    # one keyring per fog group: member devices plus the fog's aggregator key
    usk_by_id = {}
    for j, fog in enumerate(fogs):
        ring = aggsig.keygen_all(msk, assignments[j], fog.agg_id)
        fog.agg_usk = ring.aggregator
        fog.group_members = list(assignments[j])
        usk_by_id.update(ring.signers)
    for dev in devices:
        dev.usk = usk_by_id[dev.identity]
    return devices, fogs


# -- pipeline stages -----------------------------------------------------------

def collect(mpk: MasterPublicKey, device: DeviceRecord, fog: FogRecord,
            now: int, payload_size: int, cadence_ms: int,
            rng: np.random.Generator,
            metrics: StageTimer | None = None) -> CollectionMessage:
    """Synthesize one sensing window's payload and sign it."""
    data = rng.bytes(payload_size)
    msg = CollectionMessage(
        device_id=device.identity,
        agg_id=fog.agg_id,
        rts_start=max(1, now - cadence_ms),
        rts_end=now,
        data=data,
        cts=now,
        sig=None,
    )
    with timed(metrics, "sign"):
        msg.sig = aggsig.ls_sign(mpk, device.usk, msg.signed_body(), rng)
    return msg


def fog_ingest(mpk: MasterPublicKey, fog: FogRecord, msg: CollectionMessage,
               arrival_ts: int, delta_t: int,
               metrics: StageTimer | None = None) -> tuple[bool, str]:
    """Freshness gate, signature check, and routing check, in that order."""
    if abs(msg.cts - arrival_ts) >= delta_t:
        return False, "stale"
    with timed(metrics, "verify"):
        ok = aggsig.ls_ver(mpk, msg.device_id, msg.signed_body(), msg.sig)
    if not ok:
        return False, "badsig"
    if msg.agg_id != fog.agg_id:
        return False, "misroute"
    fog.buffer.append((
        SignedMessage(msg.device_id, msg.signed_body(), msg.sig),
        Transaction(msg.data, msg.device_id, msg.cts),
    ))
    return True, "ok"


def fog_flush(mpk: MasterPublicKey, fog: FogRecord, cfg: SimConfig, now: int,
              rng: np.random.Generator,
              metrics: StageTimer | None = None) -> FogPayload | None:
    """Aggregate-sign the buffer, encrypt it, and cut owner-signed partial blocks."""
    if not fog.buffer:
        return None
    batch = [sm for sm, _ in fog.buffer]
    with timed(metrics, "agg_sign"):
        aggregate = aggsig.la_sign(mpk, fog.agg_usk, batch, rng)

    etx = [encrypt_tx(tx, fog.owner_key, rng) for _, tx in fog.buffer]
    signer = PqBlockSigner(mpk, fog.agg_usk, rng)
    blocks = []
    for start in range(0, len(etx), cfg.block_capacity):
        chunk = etx[start : start + cfg.block_capacity]
        with timed(metrics, "block_build"):
            blocks.append(build_partial_block(chunk, signer, cfg.app_type, now))
    fog.buffer = []
    return FogPayload(aggregate, blocks, fog.agg_id, signer.public_bytes())


def cloud_ingest_and_commit(cluster: Cluster, verifier: PqBlockVerifier,
                            mpk: MasterPublicKey, payload: FogPayload,
                            round_start: int, now: int,
                            script: FaultScript | None = None,
                            metrics: StageTimer | None = None,
                            trace: list | None = None):
    """Validate a fog payload and drive one voting round per block.

    Returns (rounds run, blocks committed); invalid payloads or blocks
    are quarantined without touching any ledger.
    """
    with timed(metrics, "agg_verify"):
        agg_ok = aggsig.la_ver(mpk, payload.aggregate, deep=False)
    if not agg_ok:
        if trace is not None:
            trace.append({"time": now, "actor": "cloud", "event": "quarantine",
                          "reason": f"aggregate-{agg_ok.reason}"})
        return 0, 0, 1

    rounds = committed = quarantined = 0
    for par in payload.blocks:
        if not verify_partial(par, verifier):
            quarantined += 1
            if trace is not None:
                trace.append({"time": now, "actor": "cloud", "event": "quarantine",
                              "reason": "partial-block"})
            continue
        tip = cluster.nodes[0].ledger.tip_hash
        block = complete_block(par, tip, version=1)
        with timed(metrics, "consensus_round"):
            outcome = cluster.run_round(block, round_start + rounds, now, script)
        rounds += 1
        if outcome.committed:
            committed += 1
        if trace is not None:
            for rec in outcome.trace:
                trace.append({"time": rec.time, "actor": f"cs-{rec.node}",
                              "event": rec.event, "reason": rec.reason})
    return rounds, committed, quarantined


def add_node_dynamic(msk: MasterSecretKey, fog: FogRecord, cfg: SimConfig,
                     identity: bytes, now: int,
                     rng: np.random.Generator) -> DeviceRecord:
    """Register a fresh device into an existing fog group mid-run."""
    usk = ibs.extract(msk, identity)
    pos = _sample_in_disc(rng, fog.position, cfg.tx_range,
                          cfg.area_width, cfg.area_height)
    waypoint = _sample_in_disc(rng, fog.position, cfg.tx_range,
                               cfg.area_width, cfg.area_height)
    fog.group_members.append(identity)
    return DeviceRecord(identity, usk, pos, -1, float(rng.uniform(5.0, 15.0)),
                        waypoint)


def _move(device: DeviceRecord, fog: FogRecord, cfg: SimConfig, dt_ms: int,
          rng: np.random.Generator) -> None:
    step = device.speed * dt_ms / 1000.0
    delta = device.waypoint - device.position
    dist = float(np.linalg.norm(delta))
    if dist <= step:
        device.position = device.waypoint
        device.waypoint = _sample_in_disc(rng, fog.position, cfg.tx_range,
                                          cfg.area_width, cfg.area_height)
    else:
        device.position = device.position + delta * (step / dist)


# -- full run -------------------------------------------------------------------

def run(cfg: SimConfig, fault_script: FaultScript | None = None) -> SimResult:
    """Drive the whole pipeline on a logical clock; deterministic given seed."""
    cfg.validate()
    seeds = np.random.SeedSequence(cfg.seed).spawn(6)
    rng_setup, rng_payload, rng_crypto, rng_consensus, rng_mobility, rng_dyn = (
        np.random.default_rng(s) for s in seeds)

    params = PROFILES[cfg.profile]
    mpk, msk = ibs.setup(params, rng_setup)
    devices, fogs = register_all(msk, cfg, rng_setup)

    verifier = PqBlockVerifier(mpk)
    kgc_signer = PqBlockSigner(mpk, ibs.extract(msk, b"KGC"), rng_setup)
    genesis = ledger.make_genesis(kgc_signer)
    cluster = consensus.build_cluster(
        cfg.cs_count, genesis, verifier,
        FaultConfig(cfg.n_f, cfg.delta_t), rng_consensus)

    metrics = StageTimer()
    trace: list[dict] = []
    accepted: list[tuple] = []
    drops: dict[str, int] = {}
    committed_blocks = quarantined = 0
    round_no = 0

    trace.append({"time": 0, "actor": "kgc", "event": "setup",
                  "devices": len(devices), "fogs": len(fogs),
                  "servers": cfg.cs_count})
    for dev in devices:
        trace.append({"time": 0, "actor": dev.identity.decode(),
                      "event": "register", "fog": fogs[dev.group].agg_id.decode()})

    def deliver(fog: FogRecord, now: int) -> None:
        nonlocal committed_blocks, quarantined, round_no
        payload = fog_flush(mpk, fog, cfg, now, rng_crypto, metrics)
        if payload is None:
            return
        trace.append({"time": now, "actor": fog.agg_id.decode(), "event": "flush",
                      "batch": len(payload.aggregate.batch),
                      "blocks": len(payload.blocks)})
        rounds, committed, quar = cloud_ingest_and_commit(
            cluster, verifier, mpk, payload, round_no, now,
            fault_script, metrics, trace)
        round_no += rounds
        committed_blocks += committed
        quarantined += quar

    dynamic_pending = cfg.dynamic_adds
    dynamic_at = cfg.duration_ms // 2

    now = 0
    tick = 0
    while now + cfg.cadence_ms <= cfg.duration_ms:
        now += cfg.cadence_ms
        tick += 1

        if dynamic_pending and now >= dynamic_at:
            for k in range(dynamic_pending):
                fog = fogs[k % len(fogs)]
                identity = f"DR-DYN-{k:02d}".encode()
                dev = add_node_dynamic(msk, fog, cfg, identity, now, rng_dyn)
                dev.group = fogs.index(fog)
                devices.append(dev)
                trace.append({"time": now, "actor": identity.decode(),
                              "event": "dynamic_add", "fog": fog.agg_id.decode()})
            dynamic_pending = 0

        for dev in devices:
            fog = fogs[dev.group]
            _move(dev, fog, cfg, cfg.cadence_ms, rng_mobility)
            size = int(rng_payload.integers(cfg.packet_min, cfg.packet_max + 1))
            msg = collect(mpk, dev, fog, now, size, cfg.cadence_ms,
                          rng_crypto, metrics)
            trace.append({"time": now, "actor": dev.identity.decode(),
                          "event": "send", "size": size})
            ok, reason = fog_ingest(mpk, fog, msg, now, cfg.delta_t, metrics)
            if ok:
                accepted.append((msg.device_id, msg.data, msg.cts))
                trace.append({"time": now, "actor": fog.agg_id.decode(),
                              "event": "accept", "device": dev.identity.decode()})
            else:
                drops[reason] = drops.get(reason, 0) + 1
                trace.append({"time": now, "actor": fog.agg_id.decode(),
                              "event": "drop", "reason": reason,
                              "device": dev.identity.decode()})

        for fog in fogs:
            if len(fog.buffer) >= cfg.block_capacity:
                deliver(fog, now)

    final_ts = max(now, 1)
    for fog in fogs:
        deliver(fog, final_ts)

    return SimResult(cfg, trace, metrics, mpk, devices, fogs, cluster,
                     accepted, committed_blocks, quarantined, drops)
