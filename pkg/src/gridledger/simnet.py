"""Deterministic discrete-event simulation of the whole network.

One seeded RNG stream drives every random choice (node keys, payload bytes,
envelope entropy, validator sampling, fault targets), each draw leaving a
labeled line in the trace, so a (seed, config, scenario) triple always
reproduces byte-identical outputs.

Time is discrete ticks (1 tick = 1 simulated second by default; the
10-minute block interval is 600 ticks). Data-path messages (upload request,
grant, envelope, share envelope) travel with a configurable delay, default
one tick. The seal/validate/vote/commit round runs atomically at each
interval-boundary tick, with its proposal/vote/commit-notice messages traced
at that tick; a block sealed at tick T is therefore decided at tick T.
Pending records live in one shared queue drained by whichever recorder is on
duty when the interval closes, so an upload is never stranded by a mid-flight
duty rotation.

Scenario files are line-oriented text; ``#`` starts a comment::

    node <id> assessment <n>
    authorize <id>
    upload <id> <class> <size> at <tick>
    share <from> <to> <upload-ref> at <tick>
    fault <kind> <target> at <tick> [key=value ...]
    run until <tick>

``<upload-ref>`` is the 0-based ordinal of an ``upload`` directive in file
order (payload digests are seed-derived, so a scenario cannot name them).
Fault kinds: ``forge-record`` (the target fabricates an upload at the
activation tick; params ``class=``, ``size=``), ``tamper-chain-copy``
(params ``block=``), ``tamper-in-flight``, ``crash-node``,
``byzantine-validator``, ``fail-storage-unit`` (params ``recover=<tick>``).
If no ``node`` directives appear, ``node_count`` nodes with assessment 0 are
created.
"""

from __future__ import annotations

import heapq
import random
import struct
from dataclasses import dataclass, field, replace

from . import chain as chain_mod
from . import credit as credit_mod
from . import record_protocol as record_mod
from . import share_protocol as share_mod
from .chain import Block, Chain, Record, RecordKind, RecordMetadata
from .credit import CreditEvent, CreditLedger, CreditReason, NodeProfile, RoleAssignment
from .crypto import Keypair, digest, generate_keypair
from .datastore import DataStore, RepairReport, ReplicaStatus, StorageError
from .record_protocol import PermissionList, UploadError, UploadRejected
from .share_protocol import ShareRejected, ShareTransaction

_U64 = struct.Struct(">Q")

FAULT_KINDS = (
    "forge-record",
    "tamper-chain-copy",
    "tamper-in-flight",
    "crash-node",
    "byzantine-validator",
    "fail-storage-unit",
)


@dataclass
class SimConfig:
    seed: int = 0
    node_count: int = 6
    r_max: int = credit_mod.DEFAULT_RECORDER_CAPACITY
    s_max: int = credit_mod.DEFAULT_SUPERVISOR_CAPACITY
    block_interval_ticks: int = 600
    epoch_length_blocks: int = 10
    replication_factor: int = 3
    tick_length_seconds: int = 1
    message_delay_ticks: int = 1
    storage_unit_count: int = 5
    network_id: str = "grid"
    initial_credit: int = 0


class ScenarioError(Exception):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class UploadPlan:
    ordinal: int
    node_id: int
    data_class: str
    size: int
    tick: int
    line: int


@dataclass(frozen=True)
class SharePlan:
    sender: int
    receiver: int
    upload_ref: int
    tick: int
    line: int


@dataclass
class FaultSpec:
    kind: str
    target: int | str
    tick: int
    params: dict[str, str] = field(default_factory=dict)
    line: int = 0


@dataclass
class Scenario:
    nodes: list[tuple[int, int]] = field(default_factory=list)
    authorized: list[tuple[int, int]] = field(default_factory=list)  # (node_id, line)
    uploads: list[UploadPlan] = field(default_factory=list)
    shares: list[SharePlan] = field(default_factory=list)
    faults: list[FaultSpec] = field(default_factory=list)
    run_until: int | None = None


def _int_field(token: str, line: int, what: str) -> int:
    try:
        return int(token)
    except ValueError:
        raise ScenarioError(line, f"{what} must be an integer, got {token!r}") from None


def parse_scenario(text: str) -> Scenario:
    scenario = Scenario()
    seen_nodes: set[int] = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        directive = tokens[0]
        if directive == "node":
            if len(tokens) != 4 or tokens[2] != "assessment":
                raise ScenarioError(lineno, "expected: node <id> assessment <n>")
            nid = _int_field(tokens[1], lineno, "node id")
            score = _int_field(tokens[3], lineno, "assessment")
            if nid < 0:
                raise ScenarioError(lineno, "node id must be non-negative")
            if nid in seen_nodes:
                raise ScenarioError(lineno, f"duplicate node id {nid}")
            seen_nodes.add(nid)
            scenario.nodes.append((nid, score))
        elif directive == "authorize":
            if len(tokens) != 2:
                raise ScenarioError(lineno, "expected: authorize <id>")
            scenario.authorized.append((_int_field(tokens[1], lineno, "node id"), lineno))
        elif directive == "upload":
            if len(tokens) != 6 or tokens[4] != "at":
                raise ScenarioError(lineno, "expected: upload <id> <class> <size> at <tick>")
            if not 1 <= len(tokens[2].encode("utf-8")) <= 64:
                raise ScenarioError(lineno, "data class must be 1..64 bytes")
            size = _int_field(tokens[3], lineno, "size")
            tick = _int_field(tokens[5], lineno, "tick")
            if size < 0 or tick < 0:
                raise ScenarioError(lineno, "size and tick must be non-negative")
            scenario.uploads.append(
                UploadPlan(
                    ordinal=len(scenario.uploads),
                    node_id=_int_field(tokens[1], lineno, "node id"),
                    data_class=tokens[2],
                    size=size,
                    tick=tick,
                    line=lineno,
                )
            )
        elif directive == "share":
            if len(tokens) != 6 or tokens[4] != "at":
                raise ScenarioError(lineno, "expected: share <from> <to> <upload-ref> at <tick>")
            scenario.shares.append(
                SharePlan(
                    sender=_int_field(tokens[1], lineno, "sender id"),
                    receiver=_int_field(tokens[2], lineno, "receiver id"),
                    upload_ref=_int_field(tokens[3], lineno, "upload ref"),
                    tick=_int_field(tokens[5], lineno, "tick"),
                    line=lineno,
                )
            )
        elif directive == "fault":
            if len(tokens) < 5 or tokens[3] != "at":
                raise ScenarioError(lineno, "expected: fault <kind> <target> at <tick> [k=v ...]")
            kind = tokens[1]
            if kind not in FAULT_KINDS:
                raise ScenarioError(lineno, f"unknown fault kind {kind!r}")
            params: dict[str, str] = {}
            for token in tokens[5:]:
                if "=" not in token:
                    raise ScenarioError(lineno, f"fault parameter {token!r} is not key=value")
                key, value = token.split("=", 1)
                params[key] = value
            for key in ("size", "block", "recover"):
                if key in params:
                    _int_field(params[key], lineno, key)
            if "class" in params and not 1 <= len(params["class"].encode("utf-8")) <= 64:
                raise ScenarioError(lineno, "class parameter must be 1..64 bytes")
            target: int | str
            if kind == "fail-storage-unit":
                target = tokens[2] if tokens[2].startswith("u") else f"u{tokens[2]}"
            else:
                target = _int_field(tokens[2], lineno, "target node")
            scenario.faults.append(
                FaultSpec(
                    kind=kind,
                    target=target,
                    tick=_int_field(tokens[4], lineno, "tick"),
                    params=params,
                    line=lineno,
                )
            )
        elif directive == "run":
            if len(tokens) != 3 or tokens[1] != "until":
                raise ScenarioError(lineno, "expected: run until <tick>")
            scenario.run_until = _int_field(tokens[2], lineno, "tick")
        else:
            raise ScenarioError(lineno, f"unknown directive {directive!r}")
    for ref in scenario.shares:
        if not 0 <= ref.upload_ref < len(scenario.uploads):
            raise ScenarioError(ref.line, f"upload ref {ref.upload_ref} out of range")
    return scenario


# --- runtime pieces -------------------------------------------------------

@dataclass
class _Node:
    node_id: int
    keypair: Keypair
    assessment: int
    crashed: bool = False
    byzantine: bool = False
    tamper_armed: list[int] = field(default_factory=list)  # fault indices
    local_chain: list[Block] = field(default_factory=list)


@dataclass
class _UploadFlow:
    uploader_id: int
    payload: bytes
    metadata: RecordMetadata
    ordinal: int | None
    forged: bool
    share_tx: bool


@dataclass
class _Msg:
    kind: str
    src: int
    dst: int
    obj: object
    data: bytes
    tampered_by: int | None = None


@dataclass(frozen=True)
class TapEntry:
    tick: int
    kind: str
    src: int
    dst: int
    data: bytes


@dataclass(frozen=True)
class QuarantineEntry:
    tick: int
    proposer_id: int
    index: int
    record: Record


@dataclass(frozen=True)
class RejectionEntry:
    tick: int
    proposer_id: int
    flagged_digests: tuple[bytes, ...]


@dataclass(frozen=True)
class ShareDelivery:
    tick: int
    sender: int
    receiver: int
    payload_digest: bytes
    payload: bytes


@dataclass(frozen=True)
class EpochChange:
    epoch: int
    tick: int
    changed: int
    recorders: tuple[int, ...]
    supervisors: tuple[int, ...]


@dataclass
class FaultOutcome:
    spec: FaultSpec
    outcome: str


@dataclass
class SimReport:
    """Everything a finished run produced; render methods are the four
    byte-stable artifacts the CLI writes."""

    config: SimConfig
    until_tick: int
    chain: Chain
    credits: dict[int, int]
    events: tuple[CreditEvent, ...]
    assignment: RoleAssignment
    assessments: dict[int, int]
    node_status: dict[int, str]
    node_chain_status: dict[int, str]
    quarantine: tuple[QuarantineEntry, ...]
    rejections: tuple[RejectionEntry, ...]
    store_audit: tuple[ReplicaStatus, ...]
    repair_reports: tuple[RepairReport, ...]
    fault_outcomes: tuple[FaultOutcome, ...]
    epoch_changes: tuple[EpochChange, ...]
    deliveries: tuple[ShareDelivery, ...]
    share_failures: tuple[tuple[int, int, int, str], ...]
    upload_failures: tuple[tuple[int, int, str], ...]
    blocks_committed: int
    blocks_rejected: int
    records_committed: int
    records_quarantined: int
    rounds_skipped: int
    message_counts: dict[str, int]
    trace_lines: tuple[str, ...]
    tap: tuple[TapEntry, ...]
    upload_digests: dict[int, bytes]
    upload_payloads: dict[int, bytes]
    pending_left: tuple[Record, ...]

    def chain_export_text(self) -> str:
        return chain_mod.export_chain(self.chain)

    def credit_log_text(self) -> str:
        return "".join(
            f"{e.tick}\t{e.node_id}\t{e.delta:+d}\t{e.reason.value}\n" for e in self.events
        )

    def trace_text(self) -> str:
        return "".join(line + "\n" for line in self.trace_lines)

    def metrics_text(self) -> str:
        cfg = self.config
        out = ["[summary]"]
        seconds = self.until_tick * cfg.tick_length_seconds
        out.append(f"run_until_tick={self.until_tick} ({seconds}s simulated)")
        out.append(f"blocks_committed={self.blocks_committed}")
        out.append(f"blocks_rejected={self.blocks_rejected}")
        out.append(f"records_committed={self.records_committed}")
        out.append(f"records_quarantined={self.records_quarantined}")
        out.append(f"rounds_skipped={self.rounds_skipped}")
        out.append(f"share_deliveries={len(self.deliveries)}")
        out.append(f"share_failures={len(self.share_failures)}")
        out.append(f"upload_failures={len(self.upload_failures)}")
        out.append(f"pending_left={len(self.pending_left)}")
        for kind in sorted(self.message_counts):
            out.append(f"messages.{kind}={self.message_counts[kind]}")
        out.append("")
        out.append("[roles]")
        for nid in sorted(self.credits):
            role = self.assignment.role_of(nid).value
            out.append(
                f"{nid}\t{role}\t{self.credits[nid]}\t{self.assessments[nid]}"
            )
        out.append("")
        out.append("[epochs]")
        for change in self.epoch_changes:
            recorders = ",".join(str(n) for n in change.recorders)
            supervisors = ",".join(str(n) for n in change.supervisors)
            out.append(
                f"{change.epoch}\t{change.tick}\tchanged={change.changed}"
                f"\trecorders={recorders}\tsupervisors={supervisors}"
            )
        out.append("")
        out.append("[datastore]")
        for status in self.store_audit:
            flag = "under-replicated" if status.under_replicated else "ok"
            out.append(
                f"{status.payload_digest.hex()}\t{status.expected}\t{status.live}"
                f"\t{','.join(status.units)}\t{flag}"
            )
        out.append("")
        out.append("[faults]")
        for fo in self.fault_outcomes:
            out.append(f"{fo.spec.kind}\t{fo.spec.target}\t{fo.spec.tick}\t{fo.outcome}")
        out.append("")
        out.append("[nodes]")
        for nid in sorted(self.node_status):
            out.append(f"{nid}\t{self.node_status[nid]}\t{self.node_chain_status[nid]}")
        return "\n".join(out) + "\n"


class Sim:
    def __init__(self, config: SimConfig, scenario: Scenario | str):
        if isinstance(scenario, str):
            scenario = parse_scenario(scenario)
        if config.block_interval_ticks < 1 or config.epoch_length_blocks < 1:
            raise ValueError("block interval and epoch length must be >= 1")
        if config.message_delay_ticks < 0:
            raise ValueError("message delay cannot be negative")
        if config.storage_unit_count < config.replication_factor:
            raise ValueError("fewer storage units than the replication factor")
        self.config = config
        self.scenario = scenario
        self.rng = random.Random(config.seed)
        self.tick = 0

        node_decls = scenario.nodes or [(i, 0) for i in range(config.node_count)]
        seed64 = config.seed & (2**64 - 1)
        self.nodes: dict[int, _Node] = {}
        profiles = []
        for nid, assessment in node_decls:
            keypair = generate_keypair(
                digest(b"gridledger/node/" + _U64.pack(seed64) + _U64.pack(nid))
            )
            self.nodes[nid] = _Node(node_id=nid, keypair=keypair, assessment=assessment)
            profiles.append(
                NodeProfile(node_id=nid, public_key=keypair.public_key, assessment=assessment)
            )
        self.ledger = CreditLedger(self.nodes.keys(), config.initial_credit)
        self.assignment = credit_mod.initialize_roles(profiles, config.r_max, config.s_max)
        if not self.assignment.supervisors or len(self.assignment.candidates) < 2:
            raise ValueError(
                "configuration leaves no supervisor or fewer than two candidates; "
                "block validation needs 1 supervisor + 2 candidates"
            )

        for nid, line in scenario.authorized:
            self._require_node(nid, line)
        self.permissions = PermissionList(
            frozenset(self.nodes[nid].keypair.public_key for nid, _ in scenario.authorized)
        )

        genesis_block = chain_mod.genesis(config.network_id)
        self.chain = Chain((genesis_block,))
        for node in self.nodes.values():
            node.local_chain.append(genesis_block)

        self.store = DataStore(
            [(f"u{i}", f"region-{i}") for i in range(config.storage_unit_count)],
            config.replication_factor,
        )

        self.pending: list[Record] = []
        self.forged_digests: set[bytes] = set()
        self._forge_outcome_by_digest: dict[bytes, FaultOutcome] = {}
        self.upload_digests: dict[int, bytes] = {}
        self.upload_payloads: dict[int, bytes] = {}
        self.trace_lines: list[str] = []
        self.tap: list[TapEntry] = []
        self.quarantine: list[QuarantineEntry] = []
        self.rejections: list[RejectionEntry] = []
        self.deliveries: list[ShareDelivery] = []
        self.share_failures: list[tuple[int, int, int, str]] = []
        self.upload_failures: list[tuple[int, int, str]] = []
        self.fault_outcomes: list[FaultOutcome] = []
        self.epoch_changes: list[EpochChange] = []
        self.repair_reports: list[RepairReport] = []
        self.message_counts: dict[str, int] = {}
        self.blocks_committed = 0
        self.blocks_rejected = 0
        self.records_committed = 0
        self.records_quarantined = 0
        self.rounds_skipped = 0

        self._events: list[tuple[int, int, str, object]] = []
        self._seq = 0

        for plan in scenario.uploads:
            self._require_node(plan.node_id, plan.line)
            self._schedule(plan.tick, "upload", plan)
        for plan in scenario.shares:
            self._require_node(plan.sender, plan.line)
            self._require_node(plan.receiver, plan.line)
            self._schedule(plan.tick, "share", plan)
        for spec in scenario.faults:
            self.inject_fault(spec)

    # --- plumbing ---------------------------------------------------------

    def _require_node(self, nid: int, line: int) -> None:
        if nid not in self.nodes:
            raise ScenarioError(line, f"unknown node {nid}")

    def _schedule(self, tick: int, kind: str, payload: object) -> None:
        heapq.heappush(self._events, (tick, self._seq, kind, payload))
        self._seq += 1

    def _trace(self, kind: str, src: int | None, dst: int | None, detail: str) -> None:
        s = "-" if src is None else str(src)
        d = "-" if dst is None else str(dst)
        self.trace_lines.append(f"{self.tick}\t{kind}\t{s}\t{d}\t{detail}")

    def _trace_rng(self, label: str, note: str) -> None:
        self._trace("rng", None, None, f"label={label};{note}")

    def _rng_bytes(self, label: str, n: int) -> bytes:
        data = self.rng.randbytes(n)
        self._trace_rng(label, f"n={n};digest={digest(data)[:8].hex()}")
        return data

    def _send(self, kind: str, src: int, dst: int, obj: object, data: bytes, delay: int | None = None) -> None:
        delay = self.config.message_delay_ticks if delay is None else delay
        self.tap.append(TapEntry(tick=self.tick, kind=kind, src=src, dst=dst, data=data))
        self.message_counts[kind] = self.message_counts.get(kind, 0) + 1
        self._schedule(self.tick + delay, "msg", _Msg(kind=kind, src=src, dst=dst, obj=obj, data=data))

    def _note_sync_message(self, kind: str, src: int, dst: int, data: bytes, detail: str) -> None:
        # consensus-phase messages are same-tick; trace and tap them directly
        self.tap.append(TapEntry(tick=self.tick, kind=kind, src=src, dst=dst, data=data))
        self.message_counts[kind] = self.message_counts.get(kind, 0) + 1
        self._trace(kind, src, dst, detail)

    def inject_fault(self, spec: FaultSpec) -> None:
        """Arm a fault; its perturbation fires at the activation tick."""
        if spec.kind not in FAULT_KINDS:
            raise ValueError(f"unknown fault kind {spec.kind!r}")
        if spec.kind == "fail-storage-unit":
            if str(spec.target) not in self.store.units:
                raise ScenarioError(spec.line, f"unknown storage unit {spec.target}")
        else:
            self._require_node(int(spec.target), spec.line)
        if spec.tick < self.tick:
            raise ValueError("fault activation tick is in the past")
        outcome = FaultOutcome(spec=spec, outcome="armed")
        self.fault_outcomes.append(outcome)
        self._schedule(spec.tick, "fault", (spec, outcome))

    # --- main loop ----------------------------------------------------------

    def step(self) -> "Sim":
        """Process one tick: due events first, then any interval boundary."""
        t = self.tick
        while self._events and self._events[0][0] <= t:
            _, _, kind, payload = heapq.heappop(self._events)
            if kind == "msg":
                self._deliver(payload)
            elif kind == "upload":
                self._on_upload_plan(payload)
            elif kind == "share":
                self._on_share_plan(payload)
            elif kind == "fault":
                spec, outcome = payload
                self._on_fault(spec, outcome)
            elif kind == "recover-unit":
                unit_id, outcome = payload
                self._on_recover_unit(unit_id, outcome)
        interval = self.config.block_interval_ticks
        if t > 0 and t % interval == 0:
            self._consensus_round(t // interval - 1)
        self.tick += 1
        return self

    def run(self, until_tick: int | None = None) -> SimReport:
        if until_tick is None:
            until_tick = self.scenario.run_until
        if until_tick is None:
            raise ValueError("no horizon: scenario has no 'run until' and none was given")
        while self.tick <= until_tick:
            self.step()
        return self._build_report(until_tick)

    # --- scheduled actions ---------------------------------------------------

    def _on_upload_plan(self, plan: UploadPlan) -> None:
        if self.nodes[plan.node_id].crashed:
            self._trace("upload-skip", plan.node_id, None, "uploader crashed")
            return
        payload = self._rng_bytes("payload", plan.size)
        self.upload_digests[plan.ordinal] = digest(payload)
        self.upload_payloads[plan.ordinal] = payload
        flow = _UploadFlow(
            uploader_id=plan.node_id,
            payload=payload,
            metadata=RecordMetadata(
                kind=RecordKind.GRID_DATA, data_class=plan.data_class, created_tick=self.tick
            ),
            ordinal=plan.ordinal,
            forged=False,
            share_tx=False,
        )
        self._start_upload(flow)

    def _on_share_plan(self, plan: SharePlan) -> None:
        sender = self.nodes[plan.sender]
        if sender.crashed:
            self._trace("share-skip", plan.sender, plan.receiver, "sender crashed")
            return
        payload_digest = self.upload_digests.get(plan.upload_ref)
        if payload_digest is None:
            self.share_failures.append(
                (self.tick, plan.sender, plan.receiver, share_mod.ShareError.DIGEST_NOT_ON_CHAIN.value)
            )
            self._trace("share-reject", plan.sender, plan.receiver, "reason=digest-not-on-chain")
            return
        receiver_key = self.nodes[plan.receiver].keypair.public_key
        self._trace_rng("seal-share", f"to={plan.receiver}")
        try:
            envelope = share_mod.initiate_share(
                sender.keypair, receiver_key, payload_digest, self.chain, self.store, self.rng
            )
        except ShareRejected as exc:
            self.share_failures.append((self.tick, plan.sender, plan.receiver, exc.reason.value))
            self._trace("share-reject", plan.sender, plan.receiver, f"reason={exc.reason.value}")
            return
        self._send("share-envelope", plan.sender, plan.receiver, envelope, envelope.to_bytes())

    def _start_upload(self, flow: _UploadFlow) -> None:
        duty = credit_mod.duty_recorder(self.assignment, self.tick // self.config.block_interval_ticks)
        uploader_key = self.nodes[flow.uploader_id].keypair.public_key
        self._send("upload-request", flow.uploader_id, duty, flow, uploader_key)

    # --- faults ---------------------------------------------------------------

    def _on_fault(self, spec: FaultSpec, outcome: FaultOutcome) -> None:
        kind = spec.kind
        if kind == "crash-node":
            self.nodes[int(spec.target)].crashed = True
            outcome.outcome = f"crashed@{self.tick}"
            self._trace("fault", None, None, f"crash-node target={spec.target}")
        elif kind == "byzantine-validator":
            self.nodes[int(spec.target)].byzantine = True
            outcome.outcome = f"byzantine@{self.tick}"
            self._trace("fault", None, None, f"byzantine-validator target={spec.target}")
        elif kind == "tamper-in-flight":
            idx = self.fault_outcomes.index(outcome)
            self.nodes[int(spec.target)].tamper_armed.append(idx)
            outcome.outcome = f"armed@{self.tick}"
            self._trace("fault", None, None, f"tamper-in-flight target={spec.target}")
        elif kind == "forge-record":
            self._on_forge_record(spec, outcome)
        elif kind == "tamper-chain-copy":
            self._on_tamper_chain_copy(spec, outcome)
        elif kind == "fail-storage-unit":
            unit_id = str(spec.target)
            self.store.fail_unit(unit_id)
            outcome.outcome = f"failed@{self.tick}"
            self._trace("fault", None, None, f"fail-storage-unit target={unit_id}")
            if "recover" in spec.params:
                self._schedule(int(spec.params["recover"]), "recover-unit", (unit_id, outcome))

    def _on_forge_record(self, spec: FaultSpec, outcome: FaultOutcome) -> None:
        node_id = int(spec.target)
        if self.nodes[node_id].crashed:
            outcome.outcome = "skipped: forger crashed"
            return
        size = int(spec.params.get("size", "32"))
        data_class = spec.params.get("class", "grid")
        payload = self._rng_bytes("forged-payload", size)
        self.forged_digests.add(digest(payload))
        self._forge_outcome_by_digest[digest(payload)] = outcome
        outcome.outcome = f"submitted@{self.tick}"
        self._trace("fault", None, None, f"forge-record target={node_id}")
        self._start_upload(
            _UploadFlow(
                uploader_id=node_id,
                payload=payload,
                metadata=RecordMetadata(
                    kind=RecordKind.GRID_DATA, data_class=data_class, created_tick=self.tick
                ),
                ordinal=None,
                forged=True,
                share_tx=False,
            )
        )

    def _on_tamper_chain_copy(self, spec: FaultSpec, outcome: FaultOutcome) -> None:
        node = self.nodes[int(spec.target)]
        local = node.local_chain
        if "block" in spec.params:
            index = int(spec.params["block"])
            if not 0 <= index < len(local):
                outcome.outcome = f"skipped: block {index} out of range"
                return
        else:
            index = self.rng.randrange(len(local))
            self._trace_rng("tamper-target", f"block={index}")
        block = local[index]
        if block.records:
            rec_index = self.rng.randrange(len(block.records))
            byte_index = self.rng.randrange(len(block.records[rec_index].payload_digest))
            self._trace_rng("tamper-byte", f"record={rec_index};byte={byte_index}")
            record = block.records[rec_index]
            mutated_digest = bytearray(record.payload_digest)
            mutated_digest[byte_index] ^= 0x01
            mutated_record = replace(record, payload_digest=bytes(mutated_digest))
            records = list(block.records)
            records[rec_index] = mutated_record
            local[index] = Block(header=block.header, records=tuple(records))
        else:
            byte_index = self.rng.randrange(len(block.header.merkle_root))
            self._trace_rng("tamper-byte", f"header-root;byte={byte_index}")
            mutated_root = bytearray(block.header.merkle_root)
            mutated_root[byte_index] ^= 0x01
            local[index] = Block(
                header=replace(block.header, merkle_root=bytes(mutated_root)),
                records=block.records,
            )
        outcome.outcome = f"tampered block {index}@{self.tick}"
        self._trace("fault", None, None, f"tamper-chain-copy target={spec.target};block={index}")

    def _on_recover_unit(self, unit_id: str, outcome: FaultOutcome) -> None:
        report = self.store.recover_unit(unit_id)
        self.repair_reports.append(report)
        outcome.outcome += (
            f"; recovered@{self.tick}: restored={len(report.restored)}"
            f" unrecoverable={len(report.unrecoverable)}"
        )
        self._trace(
            "recover-unit", None, None,
            f"unit={unit_id};restored={len(report.restored)};unrecoverable={len(report.unrecoverable)}",
        )

    # --- message delivery -------------------------------------------------------

    def _tamper_message(self, msg: _Msg, fault_index: int) -> _Msg:
        envelope = msg.obj.payload_envelope
        if not envelope.ciphertext:
            return msg
        pos = self.rng.randrange(len(envelope.ciphertext))
        self._trace_rng("tamper-in-flight", f"byte={pos}")
        mutated = bytearray(envelope.ciphertext)
        mutated[pos] ^= 0x01
        new_env = replace(envelope, ciphertext=bytes(mutated))
        new_obj = replace(msg.obj, payload_envelope=new_env)
        self.fault_outcomes[fault_index].outcome = f"applied@{self.tick}"
        self._trace("tamper", msg.src, msg.dst, f"kind={msg.kind};byte={pos}")
        return _Msg(
            kind=msg.kind, src=msg.src, dst=msg.dst, obj=new_obj,
            data=msg.data, tampered_by=fault_index,
        )

    def _deliver(self, msg: _Msg) -> None:
        node = self.nodes[msg.dst]
        if node.crashed:
            self._trace(msg.kind, msg.src, msg.dst, "dropped=crashed")
            return
        if node.tamper_armed and msg.kind in ("upload-envelope", "share-envelope"):
            msg = self._tamper_message(msg, node.tamper_armed.pop(0))
        if msg.kind == "upload-request":
            self._on_upload_request(msg)
        elif msg.kind == "upload-grant":
            self._on_upload_grant(msg)
        elif msg.kind == "upload-envelope":
            self._on_upload_envelope(msg)
        elif msg.kind == "share-envelope":
            self._on_share_envelope(msg)

    def _on_upload_request(self, msg: _Msg) -> None:
        flow: _UploadFlow = msg.obj
        granted = record_mod.request_upload(
            self.nodes[flow.uploader_id].keypair.public_key, self.permissions
        )
        self._trace("upload-request", msg.src, msg.dst, f"granted={granted}")
        recorder_key = self.nodes[msg.dst].keypair.public_key
        flag = b"\x01" if granted else b"\x00"
        self._send("upload-grant", msg.dst, msg.src, (flow, granted, recorder_key), flag + recorder_key)

    def _on_upload_grant(self, msg: _Msg) -> None:
        flow, granted, recorder_key = msg.obj
        if not granted:
            self.upload_failures.append((self.tick, flow.uploader_id, "permission-denied"))
            self._trace("upload-grant", msg.src, msg.dst, "denied")
            return
        self._trace("upload-grant", msg.src, msg.dst, "granted")
        self._trace_rng("seal-upload", f"uploader={flow.uploader_id}")
        envelope = record_mod.prepare_upload(
            self.nodes[flow.uploader_id].keypair, recorder_key, flow.payload, flow.metadata, self.rng
        )
        self._send("upload-envelope", msg.dst, msg.src, (flow, envelope), envelope.to_bytes())

    def _on_upload_envelope(self, msg: _Msg) -> None:
        flow, envelope = msg.obj
        recorder = self.nodes[msg.dst]
        self._trace_rng("seal-at-rest", f"owner={flow.uploader_id}")
        try:
            accepted = record_mod.receive_upload(recorder.keypair, envelope, self.permissions, self.rng)
        except UploadRejected as exc:
            self.upload_failures.append((self.tick, flow.uploader_id, exc.reason.value))
            self._trace("upload-envelope", msg.src, msg.dst, f"rejected={exc.reason.value}")
            if exc.reason is not UploadError.PERMISSION_DENIED:
                credit_mod.apply_record_outcome(self.ledger, flow.uploader_id, False, self.tick)
            if msg.tampered_by is not None:
                self.fault_outcomes[msg.tampered_by].outcome += f"; rejected={exc.reason.value}"
            return
        self.pending.append(accepted.record)
        try:
            self.store.put(accepted.stored)
        except StorageError as exc:
            self._trace("datastore", None, msg.dst, f"put-failed: {exc}")
        self._trace(
            "upload-envelope", msg.src, msg.dst,
            f"accepted digest={accepted.record.payload_digest[:8].hex()}",
        )

    def _on_share_envelope(self, msg: _Msg) -> None:
        envelope = msg.obj
        receiver = self.nodes[msg.dst]
        try:
            payload = share_mod.receive_share(receiver.keypair, envelope)
        except ShareRejected as exc:
            self.share_failures.append((self.tick, msg.src, msg.dst, exc.reason.value))
            self._trace("share-envelope", msg.src, msg.dst, f"rejected={exc.reason.value}")
            if msg.tampered_by is not None:
                self.fault_outcomes[msg.tampered_by].outcome += f"; rejected={exc.reason.value}"
            return
        self.deliveries.append(
            ShareDelivery(
                tick=self.tick, sender=msg.src, receiver=msg.dst,
                payload_digest=envelope.claimed_digest, payload=payload,
            )
        )
        self._trace(
            "share-envelope", msg.src, msg.dst,
            f"delivered digest={envelope.claimed_digest[:8].hex()}",
        )
        tx = ShareTransaction(
            sender_public_key=envelope.sender_public_key,
            receiver_public_key=envelope.receiver_public_key,
            payload_digest=envelope.claimed_digest,
            tick=self.tick,
        )
        tx_payload, tx_metadata = share_mod.record_share(tx)
        self._start_upload(
            _UploadFlow(
                uploader_id=msg.src,
                payload=tx_payload,
                metadata=tx_metadata,
                ordinal=None,
                forged=False,
                share_tx=True,
            )
        )

    # --- consensus ---------------------------------------------------------------

    def _predicate(self, record: Record) -> bool:
        return record.payload_digest not in self.forged_digests

    def _consensus_round(self, round_index: int) -> None:
        duty = credit_mod.duty_recorder(self.assignment, round_index)
        if self.nodes[duty].crashed:
            self.rounds_skipped += 1
            self._trace("round", None, None, f"r={round_index} skipped: duty recorder {duty} crashed")
            self._after_round(round_index)
            return
        try:
            supervisor_id, pool = record_mod.choose_validators(
                self.assignment, round_index, alive=lambda nid: not self.nodes[nid].crashed
            )
        except record_mod.ProtocolError as exc:
            self.rounds_skipped += 1
            self._trace("round", None, None, f"r={round_index} skipped: {exc}")
            self._after_round(round_index)
            return
        self._trace_rng("validator-select", f"r={round_index}")
        proposal = record_mod.seal_block(
            self.nodes[duty].keypair, duty, self.pending, self.chain.tip_digest,
            self.tick, supervisor_id, pool, self.rng,
        )
        block_data = chain_mod.block_bytes(proposal.block)
        for vid in proposal.validator_ids:
            self._note_sync_message(
                "proposal", duty, vid,
                block_data, f"r={round_index};records={len(proposal.block.records)}",
            )
        votes = []
        block_digest_value = chain_mod.block_digest(proposal.block)
        for vid in proposal.validator_ids:
            validator = self.nodes[vid]
            vote = record_mod.validate_proposal(
                validator.keypair, vid, proposal, self.chain.tip_digest, self._predicate
            )
            if validator.byzantine:
                inverted_ok = not vote.ok
                inverted_bad = () if inverted_ok else tuple(range(len(proposal.block.records)))
                vote = record_mod.sign_vote(
                    validator.keypair, vid, block_digest_value, inverted_ok, inverted_bad
                )
                self._trace("byzantine", vid, duty, f"inverted verdict to ok={inverted_ok}")
            verdict = "ok" if vote.ok else "erroneous" + str(list(vote.bad_indices))
            self._note_sync_message(
                "vote", vid, duty,
                record_mod.vote_signing_bytes(block_digest_value, vote.ok, vote.bad_indices),
                f"verdict={verdict}",
            )
            votes.append(vote)
        public_keys = {nid: node.keypair.public_key for nid, node in self.nodes.items()}
        uploader_ids = {node.keypair.public_key: nid for nid, node in self.nodes.items()}
        result = record_mod.commit(
            proposal, votes, self.chain, self.ledger, public_keys, uploader_ids
        )
        if result.committed:
            self.chain = result.chain
            self.blocks_committed += 1
            self.records_committed += len(proposal.block.records)
            self.pending = []
            for nid, node in self.nodes.items():
                if node.crashed:
                    continue
                node.local_chain.append(proposal.block)
                self._note_sync_message("commit-notice", duty, nid, block_digest_value, "committed")
            for record in proposal.block.records:
                if record.payload_digest in self.forged_digests:
                    self._mark_forge_outcome(record.payload_digest, f"committed-undetected@{self.tick}")
            self._trace(
                "round", None, None,
                f"r={round_index} committed block={len(self.chain) - 1} records={len(proposal.block.records)}",
            )
        else:
            self.blocks_rejected += 1
            self.records_quarantined += len(result.quarantined)
            flagged = []
            for index, record in result.quarantined:
                self.quarantine.append(
                    QuarantineEntry(tick=self.tick, proposer_id=duty, index=index, record=record)
                )
                flagged.append(record.payload_digest)
                if record.payload_digest in self.forged_digests:
                    self._mark_forge_outcome(record.payload_digest, f"quarantined@{self.tick}")
            self.rejections.append(
                RejectionEntry(tick=self.tick, proposer_id=duty, flagged_digests=tuple(flagged))
            )
            self.pending = list(result.survivors)
            self._trace(
                "round", None, None,
                f"r={round_index} rejected quarantined={len(result.quarantined)}"
                f" survivors={len(result.survivors)}",
            )
        self._after_round(round_index)

    def _mark_forge_outcome(self, payload_digest: bytes, text: str) -> None:
        outcome = self._forge_outcome_by_digest.get(payload_digest)
        if outcome is not None:
            outcome.outcome = text

    def _after_round(self, round_index: int) -> None:
        completed = round_index + 1
        if completed % self.config.epoch_length_blocks != 0:
            return
        old = self.assignment
        new = credit_mod.reelect(self.ledger, old, self.config.r_max, self.config.s_max)
        changed = sum(1 for nid in new.all_nodes() if new.role_of(nid) != old.role_of(nid))
        self.assignment = new
        self.epoch_changes.append(
            EpochChange(
                epoch=new.epoch, tick=self.tick, changed=changed,
                recorders=new.recorders, supervisors=new.supervisors,
            )
        )
        self._trace("reelect", None, None, f"epoch={new.epoch};changed={changed}")

    # --- reporting ---------------------------------------------------------------

    def _build_report(self, until_tick: int) -> SimReport:
        node_status = {}
        node_chain_status = {}
        for nid in sorted(self.nodes):
            node = self.nodes[nid]
            flags = []
            if node.crashed:
                flags.append("crashed")
            if node.byzantine:
                flags.append("byzantine")
            node_status[nid] = ",".join(flags) if flags else "ok"
            violation = chain_mod.verify_chain(Chain(tuple(node.local_chain)))
            if violation is None:
                node_chain_status[nid] = "ok"
            else:
                node_chain_status[nid] = f"violation@{violation.index}:{violation.reason}"
        for fo in self.fault_outcomes:
            if fo.spec.kind == "tamper-chain-copy" and fo.outcome.startswith("tampered"):
                fo.outcome += f"; local-verify={node_chain_status[int(fo.spec.target)]}"
            elif fo.spec.kind == "byzantine-validator":
                dissents = sum(
                    1
                    for e in self.ledger.events
                    if e.node_id == int(fo.spec.target)
                    and e.reason is CreditReason.VALIDATOR_DISSENTED
                )
                fo.outcome += f"; dissents={dissents}"
        return SimReport(
            config=self.config,
            until_tick=until_tick,
            chain=self.chain,
            credits=self.ledger.credits(),
            events=tuple(self.ledger.events),
            assignment=self.assignment,
            assessments={nid: node.assessment for nid, node in self.nodes.items()},
            node_status=node_status,
            node_chain_status=node_chain_status,
            quarantine=tuple(self.quarantine),
            rejections=tuple(self.rejections),
            store_audit=tuple(self.store.audit()),
            repair_reports=tuple(self.repair_reports),
            fault_outcomes=tuple(self.fault_outcomes),
            epoch_changes=tuple(self.epoch_changes),
            deliveries=tuple(self.deliveries),
            share_failures=tuple(self.share_failures),
            upload_failures=tuple(self.upload_failures),
            blocks_committed=self.blocks_committed,
            blocks_rejected=self.blocks_rejected,
            records_committed=self.records_committed,
            records_quarantined=self.records_quarantined,
            rounds_skipped=self.rounds_skipped,
            message_counts=dict(self.message_counts),
            trace_lines=tuple(self.trace_lines),
            tap=tuple(self.tap),
            upload_digests=dict(self.upload_digests),
            upload_payloads=dict(self.upload_payloads),
            pending_left=tuple(self.pending),
        )


# --- module-level operations ------------------------------------------------

def new_sim(config: SimConfig, scenario: Scenario | str) -> Sim:
    return Sim(config, scenario)


def step(sim: Sim) -> Sim:
    return sim.step()


def run(sim: Sim, until_tick: int | None = None) -> SimReport:
    return sim.run(until_tick)


def inject_fault(sim: Sim, spec: FaultSpec) -> Sim:
    sim.inject_fault(spec)
    return sim


def metrics(report: SimReport) -> dict:
    """Headline numbers: block/record outcomes, credit distribution, role
    churn, and per-kind fault detection counts."""
    detection: dict[str, dict[str, int]] = {}
    for fo in report.fault_outcomes:
        entry = detection.setdefault(fo.spec.kind, {"injected": 0, "detected": 0})
        entry["injected"] += 1
        detected = (
            "quarantined" in fo.outcome
            or "rejected=" in fo.outcome
            or "local-verify=violation" in fo.outcome
            or "dissents=" in fo.outcome and not fo.outcome.endswith("dissents=0")
            or fo.spec.kind == "crash-node" and report.rounds_skipped > 0
            or fo.spec.kind == "fail-storage-unit"
        )
        if detected:
            entry["detected"] += 1
    return {
        "blocks_committed": report.blocks_committed,
        "blocks_rejected": report.blocks_rejected,
        "records_committed": report.records_committed,
        "records_quarantined": report.records_quarantined,
        "rounds_skipped": report.rounds_skipped,
        "credits": dict(sorted(report.credits.items())),
        "role_churn": [c.changed for c in report.epoch_changes],
        "detection": detection,
    }
