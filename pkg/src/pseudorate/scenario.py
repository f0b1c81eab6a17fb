"""Scenario configs, the end-to-end driver, and transcripts.

A scenario is a JSON file (format in docs/FORMATS.md) declaring groups,
pricing, revenue shares, agents and a step script. The driver instantiates
fresh services, wires them over the chosen transport, runs the script
sequentially on a logical clock, and returns a transcript listing every
wire message, every action outcome, and the final ledgers, spend registry
size and aggregate scores. Given a seed, a transcript is byte-identical
across runs and across transports.
"""

from __future__ import annotations

import json
import os
import random
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

from .agent import Ticket, TicketDenied, TrustedAgent
from .charging import (
    PHASE_ACQUISITION,
    ChargingProvider,
    PricingPolicy,
    RevenueShares,
)
from .clock import SimClock
from .crypto import Credential, CredentialChain, key_id_of
from .encoding import decode, encode
from .errors import TicketError
from .privacy_ca import GroupConfig, PrivacyCa
from .reputation import Ack, RatingPayload, Reject, ReputationSystem
from .tpm import TpmError, TpmInstance
from .wire import (
    CpClient,
    InprocTransport,
    PcaClient,
    Router,
    RsClient,
    ServiceFault,
    SocketServer,
    SocketTransport,
    decode_request,
    decode_response,
)

CHARGING_MODES = ("none", "acquisition", "ex_post", "both")
ACTIONS = ("register", "acquire", "redeem", "blacklist", "tamper", "advance", "resolve", "score")
TAMPER_MODES = ("bitflip", "replay", "crossover", "aik-sign")
TRANSPORTS = ("inproc", "socket")


class ScenarioError(TicketError):
    code = "scenario-error"


@dataclass(frozen=True)
class AgentSpec:
    name: str
    account: str
    balance: int = 0


@dataclass
class ScenarioConfig:
    seed: int
    rs_id: str
    groups: dict[int, GroupConfig]
    policy: PricingPolicy
    shares: RevenueShares | None
    charging: str
    agents: list[AgentSpec]
    script: list[dict]
    credit_limit: int | None = None
    scale: tuple[int, int] = (1, 5)

    @classmethod
    def from_dict(cls, raw: dict) -> "ScenarioConfig":
        try:
            return _parse_config(raw)
        except ScenarioError:
            raise
        except Exception as exc:
            raise ScenarioError(f"bad scenario config: {exc}") from exc

    @classmethod
    def from_json_file(cls, path: Path | str) -> "ScenarioConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ScenarioError(f"cannot read scenario file: {exc}") from exc
        return cls.from_dict(raw)


def _parse_config(raw: dict) -> ScenarioConfig:
    if not isinstance(raw, dict):
        raise ScenarioError("scenario must be a JSON object")
    unknown = set(raw) - {
        "seed",
        "rs_id",
        "groups",
        "policy",
        "shares",
        "charging",
        "credit_limit",
        "scale",
        "agents",
        "script",
    }
    if unknown:
        raise ScenarioError(f"unknown scenario fields: {sorted(unknown)}")

    seed = int(raw.get("seed", 0))
    rs_id = str(raw.get("rs_id", "rs-main"))

    groups: dict[int, GroupConfig] = {}
    for key, entry in raw["groups"].items():
        groups[int(key)] = GroupConfig(
            impact=Fraction(entry["impact"]),
            price_class=str(entry.get("price_class", "standard")),
        )
    if sorted(groups) != list(range(1, len(groups) + 1)):
        raise ScenarioError("group ids must be dense 1..G")

    policy = PricingPolicy.from_record(raw.get("policy", {"kind": "free"}))
    shares = RevenueShares.from_record(raw["shares"]) if raw.get("shares") else None

    charging = str(raw.get("charging", "none"))
    if charging not in CHARGING_MODES:
        raise ScenarioError(f"charging mode must be one of {CHARGING_MODES}")
    if charging != "none" and policy.kind in ("flat", "increasing"):
        missing = [g for g in groups if g not in policy.per_group]
        if missing:
            raise ScenarioError(f"policy has no price for groups {missing}")

    credit_limit = raw.get("credit_limit")
    if credit_limit is not None:
        credit_limit = int(credit_limit)

    scale_raw = raw.get("scale", [1, 5])
    scale = (int(scale_raw[0]), int(scale_raw[1]))
    if scale[0] > scale[1]:
        raise ScenarioError("rating scale is empty")

    agents = []
    names = set()
    for entry in raw.get("agents", []):
        spec = AgentSpec(
            name=str(entry["name"]),
            account=str(entry.get("account", f"acct-{entry['name']}")),
            balance=int(entry.get("balance", 0)),
        )
        if spec.name in names:
            raise ScenarioError(f"duplicate agent {spec.name!r}")
        names.add(spec.name)
        agents.append(spec)

    script = list(raw.get("script", []))
    for i, step in enumerate(script):
        if not isinstance(step, dict) or "action" not in step:
            raise ScenarioError(f"step {i}: missing action")
        action = step["action"]
        if action not in ACTIONS:
            raise ScenarioError(f"step {i}: unknown action {action!r}")
        if action in ("register", "acquire", "redeem", "blacklist", "tamper", "resolve"):
            if step.get("agent") not in names:
                raise ScenarioError(f"step {i}: unknown agent {step.get('agent')!r}")
        if action == "acquire" and int(step.get("group", 1)) not in groups:
            raise ScenarioError(f"step {i}: unknown group {step.get('group')!r}")
        if action == "redeem" and ("subject" not in step or "score" not in step):
            raise ScenarioError(f"step {i}: redeem needs subject and score")
        if action == "score" and "subject" not in step:
            raise ScenarioError(f"step {i}: score needs a subject")
        if action == "tamper" and step.get("mode") not in TAMPER_MODES:
            raise ScenarioError(f"step {i}: tamper mode must be one of {TAMPER_MODES}")

    return ScenarioConfig(
        seed=seed,
        rs_id=rs_id,
        groups=groups,
        policy=policy,
        shares=shares,
        charging=charging,
        agents=agents,
        script=script,
        credit_limit=credit_limit,
        scale=scale,
    )


# ---------------------------------------------------------------------------
# Transcript
# ---------------------------------------------------------------------------

@dataclass
class Transcript:
    seed: int
    events: list[dict] = field(default_factory=list)
    final: dict = field(default_factory=dict)
    groups: dict[str, bytes] = field(default_factory=dict)

    def to_bytes(self) -> bytes:
        return encode(
            {
                "version": 1,
                "seed": self.seed,
                "events": self.events,
                "final": self.final,
                "groups": self.groups,
            }
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "Transcript":
        raw = decode(data)
        if not isinstance(raw, dict) or raw.get("version") != 1:
            raise ScenarioError("not a transcript")
        return cls(seed=raw["seed"], events=raw["events"], final=raw["final"], groups=raw["groups"])

    def chain_bundles(self) -> list[dict]:
        """Every chain the scenario submitted, paired with the group keys —
        ready for offline verification."""
        bundles = []
        for event in self.events:
            detail = event.get("detail", {})
            if isinstance(detail, dict) and "chain" in detail:
                bundle = {"chain": detail["chain"], "groups": self.groups}
                if "payload" in detail:
                    bundle["payload"] = detail["payload"]
                bundles.append(bundle)
        return bundles

    def summary_lines(self) -> list[str]:
        lines = []
        for event in self.events:
            if event["kind"] == "msg":
                lines.append(f"  [{event['seq']:04d}] msg {event['endpoint']} -> {event['status']}")
            else:
                who = f" agent={event['agent']}" if event.get("agent") else ""
                lines.append(
                    f"  [{event['seq']:04d}] {event['action']}{who} -> {event['outcome']}"
                )
        final = self.final
        lines.append(f"final: ratings={final['ratings']} spent={final['spent']}")
        for account, balance in final["balances"].items():
            lines.append(f"final: balance {account} = {balance}")
        for party, amount in final["revenue"].items():
            lines.append(f"final: revenue {party} = {amount}")
        for subject, score in final["scores"].items():
            lines.append(f"final: score {subject} = {score}")
        return lines


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------

class _Stack:
    """Services plus the transports/clients for one scenario run."""

    def __init__(self, config: ScenarioConfig, transport: str, state_dir: Path | None):
        if transport not in TRANSPORTS:
            raise ScenarioError(f"transport must be one of {TRANSPORTS}")
        master = random.Random(config.seed)
        self.pca_rng = random.Random(master.getrandbits(64))
        self.driver_rng = random.Random(master.getrandbits(64))
        self.agent_rngs = {
            spec.name: random.Random(master.getrandbits(64)) for spec in config.agents
        }
        self.clock = SimClock()
        self.authority_token = "authority-" + self.driver_rng.randbytes(8).hex()

        logs = {}
        if state_dir is not None:
            state_dir = Path(state_dir)
            state_dir.mkdir(parents=True, exist_ok=True)
            logs = {
                "ledger_log": state_dir / "cp-ledger.log",
                "issuance_log": state_dir / "pca-issuance.log",
                "rating_log": state_dir / "rs-ratings.log",
                "spent_snapshot": state_dir / "rs-spent.snap",
            }
        self.state_dir = state_dir

        self.cp = ChargingProvider(
            self.clock,
            policy=config.policy,
            shares=config.shares,
            credit_limit=config.credit_limit,
            ledger_log=logs.get("ledger_log"),
        )
        for spec in config.agents:
            self.cp.open_account(spec.account, spec.balance)

        pricing = config.policy if config.charging != "none" else None
        phases = (PHASE_ACQUISITION,) if config.charging in ("acquisition", "both") else ()
        self.pca = PrivacyCa(
            config.groups,
            clock=self.clock,
            rng=self.pca_rng,
            charging=self.cp if pricing else None,
            pricing=pricing,
            charge_phases=phases,
            authority_tokens={self.authority_token},
            issuance_log=logs.get("issuance_log"),
        )
        expost = self.pca.charge_for_ticket if config.charging in ("ex_post", "both") else None
        self.rs = ReputationSystem(
            config.rs_id,
            clock=self.clock,
            scale=config.scale,
            expost_charge=expost,
            rating_log=logs.get("rating_log"),
            spent_snapshot=logs.get("spent_snapshot"),
        )

        self.tap: list = []
        self._servers: list[SocketServer] = []
        self._transports = []
        routers = {
            "pca": Router(pca=self.pca),
            "rs": Router(rs=self.rs),
            "cp": Router(cp=self.cp),
        }
        if transport == "inproc":
            mk = {name: InprocTransport(router, tap=self.tap) for name, router in routers.items()}
        else:
            base = int(os.environ.get("PSEUDORATE_PORT_BASE", "0"))
            mk = {}
            for offset, (name, router) in enumerate(routers.items()):
                server = SocketServer(router, port=base + offset if base else 0)
                self._servers.append(server)
                client_transport = SocketTransport(server.host, server.port, tap=self.tap)
                self._transports.append(client_transport)
                mk[name] = client_transport
        self._by_service = mk

        self.pca_client = PcaClient(mk["pca"])
        self.rs_client = RsClient(mk["rs"])
        self.cp_client = CpClient(mk["cp"])

        self.agents: dict[str, TrustedAgent] = {}
        self.accounts: dict[str, str] = {}
        for spec in config.agents:
            tpm = TpmInstance(rng=self.agent_rngs[spec.name])
            self.agents[spec.name] = TrustedAgent(
                tpm,
                PcaClient(mk["pca"]),
                RsClient(mk["rs"]),
                user_account=spec.account,
                rs_id=config.rs_id,
                rng=self.agent_rngs[spec.name],
            )
            self.accounts[spec.name] = spec.account

    def close(self) -> None:
        for transport in self._transports:
            transport.close()
        for server in self._servers:
            server.close()


def run_scenario(
    config: ScenarioConfig,
    *,
    transport: str = "inproc",
    state_dir: Path | str | None = None,
) -> Transcript:
    stack = _Stack(config, transport, Path(state_dir) if state_dir else None)
    try:
        return _drive(config, stack)
    finally:
        stack.close()


def _drive(config: ScenarioConfig, stack: _Stack) -> Transcript:
    transcript = Transcript(seed=config.seed)
    transcript.groups = {str(g): pub for g, (pub, _) in stack.pca.group_registry().items()}
    seq = 0
    tap_read = 0
    pending: list[dict] = []

    def drain_messages() -> None:
        nonlocal seq, tap_read
        entries = stack.tap[tap_read:]
        tap_read = len(stack.tap)
        for direction, frame in entries:
            if direction == "send":
                endpoint, _, _ = decode_request(frame)
                seq += 1
                pending.append({"kind": "msg", "seq": seq, "endpoint": endpoint, "status": "?"})
            else:
                _, _, status, _ = decode_response(frame)
                if pending:
                    pending[-1]["status"] = status
        transcript.events.extend(pending)
        pending.clear()

    def record(action: str, agent: str | None, outcome: str, detail: dict | None = None) -> None:
        nonlocal seq
        drain_messages()
        seq += 1
        event = {"kind": "action", "seq": seq, "action": action, "outcome": outcome}
        if agent:
            event["agent"] = agent
        event["detail"] = detail or {}
        transcript.events.append(event)

    # the group registry push and policy fetch are part of every run
    stack.rs_client.configure_groups(stack.pca.group_registry())
    policy_record = stack.cp_client.get_policy()
    record("setup", None, "ok", {"policy": policy_record, "group_count": len(config.groups)})

    for step in config.script:
        stack.clock.advance(1)
        action = step["action"]
        agent_name = step.get("agent")
        agent = stack.agents.get(agent_name) if agent_name else None

        try:
            if action == "register":
                platform_id = agent.register()
                record(action, agent_name, "registered", {"platform_id": platform_id})

            elif action == "acquire":
                group = int(step.get("group", 1))
                count = int(step.get("count", 1))
                for _ in range(count):
                    ticket = agent.acquire_ticket(group)
                    record(
                        action,
                        agent_name,
                        "ticket",
                        {"group": group, "aik_digest": key_id_of(ticket.credential.entity)},
                    )

            elif action == "redeem":
                ticket = _pick_ticket(agent, step)
                payload = agent.make_payload(
                    str(step["subject"]), int(step["score"]), str(step.get("comment", ""))
                )
                chain = agent.build_chain(ticket, payload)
                result = agent.submit_chain(ticket, payload, chain)
                record(
                    action,
                    agent_name,
                    _outcome_of(result),
                    {"chain": chain.to_bytes(), "payload": payload.to_record()},
                )

            elif action == "blacklist":
                flag = bool(step.get("flag", True))
                stack.pca_client.blacklist(agent.platform_id, flag)
                record(action, agent_name, f"flag={int(flag)}", {})

            elif action == "tamper":
                outcome, detail = _run_tamper(stack, agent, step)
                record(action, agent_name, outcome, detail)

            elif action == "advance":
                stack.clock.advance(int(step.get("seconds", 1)))
                record(action, None, f"now={stack.clock.now()}", {})

            elif action == "resolve":
                index = int(step.get("index", 0))
                ticket = agent.tickets[index]
                digest = key_id_of(ticket.credential.entity)
                body = stack.pca_client.resolve_identity(digest, stack.authority_token)
                record(action, agent_name, "resolved", {"platform_id": body["platform_id"]})

            elif action == "score":
                subject = str(step["subject"])
                count, score = stack.rs_client.score(subject)
                record(action, None, "scored", {"subject": subject, "count": count, "score": score})

        except TicketDenied as exc:
            record(action, agent_name, f"denied:{exc.reason}", {})
        except (ServiceFault, TicketError) as exc:
            record(action, agent_name, f"error:{exc.code}", {})

    drain_messages()
    transcript.final = _final_state(config, stack)
    drain_messages()
    if stack.state_dir is not None:
        stack.rs.save_spent_snapshot()
    return transcript


def _pick_ticket(agent: TrustedAgent, step: dict) -> Ticket:
    if "ticket" in step:
        return agent.tickets[int(step["ticket"])]
    fresh = agent.fresh_tickets(int(step["group"]) if "group" in step else None)
    if not fresh:
        raise ScenarioError(f"agent has no fresh ticket for step {step!r}")
    return fresh[0]


def _outcome_of(result: Ack | Reject) -> str:
    if isinstance(result, Ack):
        return "ack"
    return f"reject:{result.reason}"


def _run_tamper(stack: _Stack, agent: TrustedAgent, step: dict) -> tuple[str, dict]:
    """Adversarial moves. Every mode submits (or attempts) something
    dishonest and reports how the system answered."""
    mode = step["mode"]
    subject = str(step.get("subject", "tamper-subject"))
    score = int(step.get("score", 1))

    if mode == "aik-sign":
        # misuse the identity key as a payload signer; must fail locally
        fresh = agent.fresh_tickets()
        if not fresh:
            raise ScenarioError("aik-sign tamper needs a fresh ticket")
        try:
            agent.tpm.sign_with_key(fresh[0].aik_handle, b"direct-misuse")
            return "signed", {}
        except TpmError as exc:
            return f"tpm-error:{exc.code}", {}

    if mode == "replay":
        fresh = agent.fresh_tickets()
        if not fresh:
            raise ScenarioError("replay tamper needs a fresh ticket")
        ticket = fresh[0]
        payload = agent.make_payload(subject, score)
        chain = agent.build_chain(ticket, payload)
        first = agent.submit_chain(ticket, payload, chain)
        second = agent.submit_chain(ticket, payload, chain)
        return (
            f"first={_outcome_of(first)} second={_outcome_of(second)}",
            {"chain": chain.to_bytes(), "payload": payload.to_record()},
        )

    if mode == "bitflip":
        fresh = agent.fresh_tickets()
        if not fresh:
            raise ScenarioError("bitflip tamper needs a fresh ticket")
        ticket = fresh[0]
        payload = agent.make_payload(subject, score)
        chain = agent.build_chain(ticket, payload)
        sig = bytearray(chain.rating_cred.signature)
        sig[stack.driver_rng.randrange(len(sig))] ^= 1 << stack.driver_rng.randrange(8)
        mutated = CredentialChain(
            rating_cred=Credential(
                entity=chain.rating_cred.entity,
                issuer_public=chain.rating_cred.issuer_public,
                signature=bytes(sig),
                meta=chain.rating_cred.meta,
            ),
            csk_cred=chain.csk_cred,
            aik_cred=chain.aik_cred,
        )
        result = agent.submit_chain(ticket, payload, mutated)
        return _outcome_of(result), {"chain": mutated.to_bytes(), "payload": payload.to_record()}

    if mode == "crossover":
        other_name = step.get("other")
        other = stack.agents.get(str(other_name))
        if other is None:
            raise ScenarioError("crossover tamper needs 'other' agent")
        mine = agent.fresh_tickets()
        theirs = other.fresh_tickets()
        if not mine or not theirs:
            raise ScenarioError("crossover tamper needs fresh tickets on both agents")
        payload = agent.make_payload(subject, score)
        my_chain = agent.build_chain(mine[0], payload)
        other_chain = other.build_chain(theirs[0], payload)
        # rating signed under the other platform's key, multiplexed onto my ticket
        frankenstein = CredentialChain(
            rating_cred=other_chain.rating_cred,
            csk_cred=my_chain.csk_cred,
            aik_cred=my_chain.aik_cred,
        )
        result = agent.submit_chain(mine[0], payload, frankenstein)
        return _outcome_of(result), {"chain": frankenstein.to_bytes(), "payload": payload.to_record()}

    raise ScenarioError(f"unknown tamper mode {mode!r}")


def _final_state(config: ScenarioConfig, stack: _Stack) -> dict:
    balances = {spec.account: stack.cp_client.balance(spec.account) for spec in config.agents}
    scores = {}
    for subject in stack.rs.subjects():
        count, score = stack.rs_client.score(subject)
        scores[subject] = score
    return {
        "balances": balances,
        "revenue": stack.cp.revenue_totals,
        "spent": stack.rs.spent_count,
        "ratings": len(stack.rs.records),
        "scores": scores,
    }
