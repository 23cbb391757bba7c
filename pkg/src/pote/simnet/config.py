"""Scenario documents: the complete, validated input of one simulation run.

Scenarios are YAML mappings. Every field is required except ``adversary``,
and unknown keys are rejected so a typo cannot silently fall back to a
default.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any

import yaml

from pote.chain import ProgramDescriptor
from pote.validation import StateMode

PRNG_ALGORITHMS = ("philox",)
PROTOCOL_MODES = ("pote", "slotted")
ADVERSARY_MODES = (
    "tamper_after_attest",
    "keep_quote_alter_block",
    "replay_old_quote",
    "rogue_proposer",
)
# All three rewrite the one block the elected proposer broadcasts.
_EXCLUSIVE_MODES = {"tamper_after_attest", "keep_quote_alter_block", "replay_old_quote"}


class ConfigInvalid(ValueError):
    pass


def _fraction(value: Any, name: str) -> Fraction:
    if isinstance(value, bool) or not isinstance(value, (int, float, str)):
        raise ConfigInvalid(f"{name} must be a number")
    try:
        # str() first so 0.35 means exactly 35/100, not its binary approximation
        return Fraction(str(value))
    except ValueError as exc:
        raise ConfigInvalid(f"{name} must be a number") from exc


def _int(value: Any, name: str, minimum: int = 0) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigInvalid(f"{name} must be an integer")
    if value < minimum:
        raise ConfigInvalid(f"{name} must be >= {minimum}")
    return value


def _section(doc: Any, name: str, keys: tuple[str, ...], optional: tuple[str, ...] = ()) -> dict:
    if not isinstance(doc, dict):
        raise ConfigInvalid(f"{name} must be a mapping")
    unknown = set(doc) - set(keys) - set(optional)
    if unknown:
        raise ConfigInvalid(f"{name}: unknown keys {sorted(unknown)}")
    missing = [k for k in keys if k not in doc]
    if missing:
        raise ConfigInvalid(f"{name}: missing required keys {missing}")
    return doc


@dataclass(frozen=True)
class Partition:
    """Messages from ``src`` to ``dst`` are lost while ``start_ms <= t < end_ms``."""

    src: frozenset[int]
    dst: frozenset[int]
    start_ms: int
    end_ms: int

    def blocks(self, sender: int, recipient: int, t: int) -> bool:
        return self.start_ms <= t < self.end_ms and sender in self.src and recipient in self.dst

    def to_dict(self) -> dict:
        return {
            "from": sorted(self.src),
            "to": sorted(self.dst),
            "start_ms": self.start_ms,
            "end_ms": self.end_ms,
        }


@dataclass(frozen=True)
class DelayModel:
    base_latency_ms: int
    jitter_ms: int
    drop_probability: Fraction
    partitions: tuple[Partition, ...]
    attestation_issue_ms: int
    quote_verify_ms: int
    exec_ms_per_100tx: Fraction
    # Time for a broadcast to leave the sender, per recipient copy.
    fanout_ms_per_peer: Fraction

    KEYS = (
        "base_latency_ms",
        "jitter_ms",
        "drop_probability",
        "partitions",
        "attestation_issue_ms",
        "quote_verify_ms",
        "exec_ms_per_100tx",
        "fanout_ms_per_peer",
    )

    def exec_ms(self, tx_count: int) -> int:
        return _round_half_up(self.exec_ms_per_100tx * tx_count / 100)

    def fanout_ms(self, recipients: int) -> int:
        return _round_half_up(self.fanout_ms_per_peer * recipients)

    def to_dict(self) -> dict:
        return {
            "base_latency_ms": self.base_latency_ms,
            "jitter_ms": self.jitter_ms,
            "drop_probability": _plain(self.drop_probability),
            "partitions": [p.to_dict() for p in self.partitions],
            "attestation_issue_ms": self.attestation_issue_ms,
            "quote_verify_ms": self.quote_verify_ms,
            "exec_ms_per_100tx": _plain(self.exec_ms_per_100tx),
            "fanout_ms_per_peer": _plain(self.fanout_ms_per_peer),
        }


def _round_half_up(x: Fraction) -> int:
    return int(x + Fraction(1, 2)) if x >= 0 else -int(-x + Fraction(1, 2))


def _plain(x: Fraction) -> int | float:
    return int(x) if x.denominator == 1 else float(x)


@dataclass(frozen=True)
class Workload:
    tx_per_block: int
    accounts: int
    initial_balance: int
    # Every n-th transaction is made unexecutable (0 disables).
    invalid_every: int

    KEYS = ("tx_per_block", "accounts", "initial_balance", "invalid_every")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class Protocol:
    mode: str
    slot_ms: int
    round_timeout_ms: int
    state_mode: StateMode

    KEYS = ("mode", "slot_ms", "round_timeout_ms", "state_mode")

    def __post_init__(self) -> None:
        try:
            object.__setattr__(self, "state_mode", StateMode(self.state_mode))
        except ValueError as exc:
            raise ConfigInvalid("protocol.state_mode must be reexecute or adopt") from exc

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "slot_ms": self.slot_ms,
            "round_timeout_ms": self.round_timeout_ms,
            "state_mode": self.state_mode.value,
        }


@dataclass(frozen=True)
class AdversarySpec:
    modes: tuple[str, ...] = ()
    compromised_vendors: tuple[int, ...] = ()
    start_height: int = 1
    end_height: int = 2**63 - 1

    KEYS = ("modes", "compromised_vendors", "start_height", "end_height")

    @property
    def f(self) -> int:
        return len(self.compromised_vendors)

    def active(self, height: int) -> bool:
        return self.start_height <= height <= self.end_height

    def has(self, mode: str, height: int) -> bool:
        return mode in self.modes and self.active(height)

    def to_dict(self) -> dict:
        return {
            "modes": list(self.modes),
            "compromised_vendors": list(self.compromised_vendors),
            "start_height": self.start_height,
            "end_height": self.end_height,
        }


NO_ADVERSARY = AdversarySpec()


@dataclass(frozen=True)
class Scenario:
    seed: int
    rounds: int
    validators: int
    k: int
    chain_id: int
    prng: str
    program: ProgramDescriptor
    vendors: tuple[str, ...]
    enclaves_per_vendor: tuple[int, ...]
    workload: Workload
    delay: DelayModel
    protocol: Protocol
    adversary: AdversarySpec = field(default=NO_ADVERSARY)

    KEYS = (
        "seed",
        "rounds",
        "validators",
        "k",
        "chain_id",
        "prng",
        "program",
        "vendors",
        "enclaves_per_vendor",
        "workload",
        "delay",
        "protocol",
    )

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if not self.vendors:
            raise ConfigInvalid("at least one vendor is required")
        if len(set(self.vendors)) != len(self.vendors):
            raise ConfigInvalid("vendor names must be distinct")
        if len(self.vendors) > 255:
            raise ConfigInvalid("at most 255 vendors")
        if len(self.enclaves_per_vendor) != len(self.vendors):
            raise ConfigInvalid("enclaves_per_vendor must list one count per vendor")
        if any(n < 1 for n in self.enclaves_per_vendor):
            raise ConfigInvalid("every active vendor needs at least 1 enclave")
        if sum(self.enclaves_per_vendor) != self.validators:
            raise ConfigInvalid(
                f"enclaves_per_vendor sums to {sum(self.enclaves_per_vendor)}, "
                f"expected validators={self.validators}"
            )
        if not 1 <= self.k <= len(self.vendors):
            raise ConfigInvalid(
                f"k={self.k} exceeds active vendor count {len(self.vendors)}"
                if self.k > len(self.vendors)
                else "k must be >= 1"
            )
        if self.prng not in PRNG_ALGORITHMS:
            raise ConfigInvalid(f"prng must be one of {PRNG_ALGORITHMS}")
        if self.protocol.mode not in PROTOCOL_MODES:
            raise ConfigInvalid(f"protocol.mode must be one of {PROTOCOL_MODES}")
        if not 0 <= self.delay.drop_probability <= 1:
            raise ConfigInvalid("drop_probability must lie in [0, 1]")
        for p in self.delay.partitions:
            if not (p.src | p.dst) <= set(range(self.validators)):
                raise ConfigInvalid("partition names a validator index out of range")
            if p.end_ms < p.start_ms:
                raise ConfigInvalid("partition end_ms precedes start_ms")
        adv = self.adversary
        bad = set(adv.modes) - set(ADVERSARY_MODES)
        if bad:
            raise ConfigInvalid(f"unknown adversary modes {sorted(bad)}")
        if len(set(adv.modes) & _EXCLUSIVE_MODES) > 1:
            raise ConfigInvalid(
                f"adversary modes {sorted(set(adv.modes) & _EXCLUSIVE_MODES)} are contradictory"
            )
        if "rogue_proposer" in adv.modes and self.validators < 2:
            raise ConfigInvalid("rogue_proposer needs at least 2 validators")
        for v in adv.compromised_vendors:
            if not 1 <= v <= len(self.vendors):
                raise ConfigInvalid(f"compromised vendor id {v} is not registered")
        if len(set(adv.compromised_vendors)) != len(adv.compromised_vendors):
            raise ConfigInvalid("compromised_vendors lists a vendor twice")

    @classmethod
    def from_dict(cls, doc: Any) -> "Scenario":
        doc = _section(doc, "scenario", cls.KEYS, ("adversary",))
        prog = _section(doc["program"], "program", ("name", "version", "rule_flags"))
        wl = _section(doc["workload"], "workload", Workload.KEYS)
        dl = _section(doc["delay"], "delay", DelayModel.KEYS)
        pr = _section(doc["protocol"], "protocol", Protocol.KEYS)

        partitions = []
        if not isinstance(dl["partitions"], list):
            raise ConfigInvalid("delay.partitions must be a list")
        for i, p in enumerate(dl["partitions"]):
            p = _section(p, f"delay.partitions[{i}]", ("from", "to", "start_ms", "end_ms"))
            partitions.append(
                Partition(
                    frozenset(_int(x, "partition member") for x in p["from"]),
                    frozenset(_int(x, "partition member") for x in p["to"]),
                    _int(p["start_ms"], "start_ms"),
                    _int(p["end_ms"], "end_ms"),
                )
            )
        delay = DelayModel(
            base_latency_ms=_int(dl["base_latency_ms"], "base_latency_ms"),
            jitter_ms=_int(dl["jitter_ms"], "jitter_ms"),
            drop_probability=_fraction(dl["drop_probability"], "drop_probability"),
            partitions=tuple(partitions),
            attestation_issue_ms=_int(dl["attestation_issue_ms"], "attestation_issue_ms"),
            quote_verify_ms=_int(dl["quote_verify_ms"], "quote_verify_ms"),
            exec_ms_per_100tx=_fraction(dl["exec_ms_per_100tx"], "exec_ms_per_100tx"),
            fanout_ms_per_peer=_fraction(dl["fanout_ms_per_peer"], "fanout_ms_per_peer"),
        )
        if delay.exec_ms_per_100tx < 0 or delay.fanout_ms_per_peer < 0:
            raise ConfigInvalid("delays must be non-negative")

        adversary = NO_ADVERSARY
        if doc.get("adversary") not in (None, "none"):
            ad = _section(doc["adversary"], "adversary", AdversarySpec.KEYS)
            adversary = AdversarySpec(
                modes=tuple(str(m) for m in (ad["modes"] or ())),
                compromised_vendors=tuple(_int(v, "compromised vendor", 1) for v in (ad["compromised_vendors"] or ())),
                start_height=_int(ad["start_height"], "start_height", 1),
                end_height=_int(ad["end_height"], "end_height", 1),
            )

        if not isinstance(doc["vendors"], list) or not isinstance(doc["enclaves_per_vendor"], list):
            raise ConfigInvalid("vendors and enclaves_per_vendor must be lists")
        name = prog["name"]
        if not isinstance(name, str) or not name.isascii():
            raise ConfigInvalid("program.name must be an ASCII string")
        return cls(
            seed=_int(doc["seed"], "seed"),
            rounds=_int(doc["rounds"], "rounds", 1),
            validators=_int(doc["validators"], "validators", 1),
            k=_int(doc["k"], "k", 1),
            chain_id=_int(doc["chain_id"], "chain_id"),
            prng=str(doc["prng"]),
            program=ProgramDescriptor(name, _int(prog["version"], "version"), _int(prog["rule_flags"], "rule_flags")),
            vendors=tuple(str(v) for v in doc["vendors"]),
            enclaves_per_vendor=tuple(_int(n, "enclaves_per_vendor entry") for n in doc["enclaves_per_vendor"]),
            workload=Workload(
                tx_per_block=_int(wl["tx_per_block"], "tx_per_block"),
                accounts=_int(wl["accounts"], "accounts", 2),
                initial_balance=_int(wl["initial_balance"], "initial_balance"),
                invalid_every=_int(wl["invalid_every"], "invalid_every"),
            ),
            delay=delay,
            protocol=Protocol(
                mode=str(pr["mode"]),
                slot_ms=_int(pr["slot_ms"], "slot_ms", 1),
                round_timeout_ms=_int(pr["round_timeout_ms"], "round_timeout_ms", 1),
                state_mode=pr["state_mode"],
            ),
            adversary=adversary,
        )

    def to_dict(self) -> dict:
        doc = {
            "seed": self.seed,
            "rounds": self.rounds,
            "validators": self.validators,
            "k": self.k,
            "chain_id": self.chain_id,
            "prng": self.prng,
            "program": {
                "name": self.program.name,
                "version": self.program.version,
                "rule_flags": self.program.rule_flags,
            },
            "vendors": list(self.vendors),
            "enclaves_per_vendor": list(self.enclaves_per_vendor),
            "workload": self.workload.to_dict(),
            "delay": self.delay.to_dict(),
            "protocol": self.protocol.to_dict(),
        }
        if self.adversary != NO_ADVERSARY:
            doc["adversary"] = self.adversary.to_dict()
        return doc

    def replace(self, **changes: Any) -> "Scenario":
        return dataclasses.replace(self, **changes)

    def with_validators(self, count: int) -> "Scenario":
        """Same scenario with ``count`` validators spread round-robin over the vendors."""
        n = len(self.vendors)
        per = tuple(count // n + (1 if i < count % n else 0) for i in range(n))
        return self.replace(validators=count, enclaves_per_vendor=per)


def load_scenario(path: str | Path) -> Scenario:
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigInvalid(f"{path}: not a valid YAML document ({exc})") from exc
    return Scenario.from_dict(doc)


def parse_scenario(text: str) -> Scenario:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigInvalid(f"not a valid YAML document ({exc})") from exc
    return Scenario.from_dict(doc)
