"""Software model of heterogeneous TEE vendor attestation authorities.

A :class:`VendorRegistry` holds the trust anchors: one attestation key per
vendor, the canonical program measurement and the diversity threshold.
Authorities are in-process signers. Honest authorities only attest the
canonical measurement; compromised ones sign whatever they are asked to.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from pote import codec, counters, crypto
from pote.codec import DIGEST_SIZE, MAX_QUOTE_BYTES, Reader, Writer

MAX_VENDORS = 255


class RegistryFull(Exception):
    pass


class UnknownVendor(KeyError):
    pass


class MeasurementRejected(Exception):
    """An honest authority was asked to attest code other than the canonical program."""


class VendorStatus(str, Enum):
    ACTIVE = "active"
    REVOKED = "revoked"
    COMPROMISED = "compromised"


class VerifyOutcome(str, Enum):
    OK = "ok"
    UNKNOWN_VENDOR = "unknown_vendor"
    REVOKED_VENDOR = "revoked_vendor"
    BAD_SIGNATURE = "bad_signature"
    WRONG_MEASUREMENT = "wrong_measurement"


@dataclass
class VendorEntry:
    vendor_id: int
    public_key: bytes
    status: VendorStatus = VendorStatus.ACTIVE
    name: str = ""


@dataclass
class VendorRegistry:
    canonical_measurement: bytes
    diversity_threshold_k: int = 3
    chain_id: int = 1
    vendors: list[VendorEntry] = field(default_factory=list)
    status_history: list[tuple[int, VendorStatus, VendorStatus]] = field(default_factory=list)
    version: int = 0

    def __post_init__(self) -> None:
        codec.check_digest(self.canonical_measurement, "canonical_measurement")
        if self.canonical_measurement == codec.ZERO_DIGEST:
            raise ValueError("canonical_measurement must be nonzero")
        if self.diversity_threshold_k < 1:
            raise ValueError("diversity threshold must be positive")

    def entry(self, vendor_id: int) -> VendorEntry | None:
        for e in self.vendors:
            if e.vendor_id == vendor_id:
                return e
        return None

    def active_vendor_ids(self) -> list[int]:
        return [e.vendor_id for e in self.vendors if e.status is VendorStatus.ACTIVE]

    def check(self) -> None:
        """Raise ValueError if the registry violates its invariants."""
        ids = [e.vendor_id for e in self.vendors]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate vendor ids")
        active = len(self.active_vendor_ids())
        if self.diversity_threshold_k > active:
            raise ValueError(
                f"k={self.diversity_threshold_k} exceeds active vendor count {active}"
            )

    def to_dict(self) -> dict:
        return {
            "chain_id": self.chain_id,
            "hash_algorithm": int(codec.hash_algorithm()),
            "canonical_measurement": self.canonical_measurement.hex(),
            "diversity_threshold_k": self.diversity_threshold_k,
            "vendors": [
                {
                    "vendor_id": e.vendor_id,
                    "name": e.name,
                    "public_key": e.public_key.hex(),
                    "status": e.status.value,
                }
                for e in self.vendors
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "VendorRegistry":
        reg = cls(
            canonical_measurement=bytes.fromhex(doc["canonical_measurement"]),
            diversity_threshold_k=int(doc["diversity_threshold_k"]),
            chain_id=int(doc["chain_id"]),
        )
        for v in doc["vendors"]:
            reg.vendors.append(
                VendorEntry(
                    vendor_id=int(v["vendor_id"]),
                    public_key=bytes.fromhex(v["public_key"]),
                    status=VendorStatus(v["status"]),
                    name=v.get("name", ""),
                )
            )
        return reg


def register_vendor(registry: VendorRegistry, public_key: bytes, name: str = "") -> int:
    """Append a vendor; ids are assigned sequentially from 1 (0 is reserved)."""
    if len(registry.vendors) >= MAX_VENDORS:
        raise RegistryFull(f"registry already holds {MAX_VENDORS} vendors")
    if len(public_key) != crypto.PUBLIC_KEY_SIZE:
        raise ValueError("vendor public key must be 32 bytes")
    vendor_id = len(registry.vendors) + 1
    registry.vendors.append(VendorEntry(vendor_id, bytes(public_key), VendorStatus.ACTIVE, name))
    registry.version += 1
    return vendor_id


def set_vendor_status(
    registry: VendorRegistry, vendor_id: int, status: VendorStatus | str
) -> VendorRegistry:
    entry = registry.entry(vendor_id)
    if entry is None:
        raise UnknownVendor(vendor_id)
    status = VendorStatus(status)
    registry.status_history.append((vendor_id, entry.status, status))
    entry.status = status
    registry.version += 1
    return registry


@dataclass(frozen=True)
class QuoteUserData:
    pk_block: bytes
    commitment: bytes
    height: int
    chain_id: int
    nonce: bytes

    def write_to(self, w: Writer) -> None:
        w.fixed(self.pk_block, crypto.PUBLIC_KEY_SIZE)
        w.fixed(self.commitment, DIGEST_SIZE)
        w.u64(self.height)
        w.u64(self.chain_id)
        w.fixed(self.nonce, DIGEST_SIZE)

    @classmethod
    def read_from(cls, r: Reader) -> "QuoteUserData":
        return cls(
            pk_block=r.fixed(crypto.PUBLIC_KEY_SIZE),
            commitment=r.fixed(DIGEST_SIZE),
            height=r.u64(),
            chain_id=r.u64(),
            nonce=r.fixed(DIGEST_SIZE),
        )


@dataclass(frozen=True)
class AttestationQuote:
    vendor_id: int
    measurement: bytes
    user_data: QuoteUserData
    vendor_signature: bytes = b""

    def signed_payload(self) -> bytes:
        w = Writer()
        w.fixed(self.measurement, DIGEST_SIZE)
        self.user_data.write_to(w)
        w.u8(self.vendor_id)
        return w.getvalue()

    def write_to(self, w: Writer) -> None:
        w.u8(self.vendor_id)
        w.fixed(self.measurement, DIGEST_SIZE)
        self.user_data.write_to(w)
        w.var(self.vendor_signature, crypto.SIGNATURE_SIZE)

    @classmethod
    def read_from(cls, r: Reader) -> "AttestationQuote":
        vendor_id = r.u8()
        measurement = r.fixed(DIGEST_SIZE)
        user_data = QuoteUserData.read_from(r)
        sig = r.var(crypto.SIGNATURE_SIZE)
        return cls(vendor_id, measurement, user_data, sig)

    def to_bytes(self) -> bytes:
        return codec.encode(self)

    @classmethod
    def from_bytes(cls, data: bytes) -> "AttestationQuote":
        return codec.decode(data, cls)


@dataclass
class VendorAuthority:
    """A vendor's attestation service: its signing key plus honesty flag."""

    vendor_id: int
    keypair: crypto.KeyPair
    canonical_measurement: bytes
    compromised: bool = False

    @property
    def public_key(self) -> bytes:
        return self.keypair.public_key


@dataclass(frozen=True)
class EnclaveIdentity:
    vendor_id: int
    enclave_index: int
    block_keypair: crypto.KeyPair = field(repr=False)

    @property
    def public_key(self) -> bytes:
        return self.block_keypair.public_key


def issue_quote(
    authority: VendorAuthority,
    measurement: bytes,
    user_data: QuoteUserData,
    *,
    claim: bytes | None = None,
) -> AttestationQuote:
    """Sign ``measurement`` and ``user_data`` with the vendor key.

    ``measurement`` is what the hardware measured. A compromised authority
    will instead state ``claim`` when one is given, forging the evidence.
    """
    if not authority.compromised and measurement != authority.canonical_measurement:
        raise MeasurementRejected(
            f"vendor {authority.vendor_id} refuses to attest measurement {measurement.hex()[:16]}"
        )
    stated = claim if (authority.compromised and claim is not None) else measurement
    counters.count("quote_issue")
    unsigned = AttestationQuote(authority.vendor_id, bytes(stated), user_data)
    quote = AttestationQuote(
        authority.vendor_id,
        bytes(stated),
        user_data,
        crypto.sign(authority.keypair, unsigned.signed_payload()),
    )
    if len(quote.to_bytes()) > MAX_QUOTE_BYTES:
        raise codec.VariableFieldTooLong("issued quote exceeds 8192 bytes")
    return quote


_verify_cache: dict[tuple, bool] = {}


def verify_quote(registry: VendorRegistry, quote: AttestationQuote) -> VerifyOutcome:
    """Check vendor status, vendor signature and measurement, in that order."""
    counters.count("quote_verify")
    entry = registry.entry(quote.vendor_id)
    if entry is None:
        return VerifyOutcome.UNKNOWN_VENDOR
    if entry.status is not VendorStatus.ACTIVE:
        return VerifyOutcome.REVOKED_VENDOR
    # Pure in (key, quote); memoized because simulations re-verify the same
    # quote at every node. The op is still charged on a hit.
    key = (entry.public_key, quote)
    ok_sig = _verify_cache.get(key)
    if ok_sig is None:
        ok_sig = crypto.verify(entry.public_key, quote.signed_payload(), quote.vendor_signature)
        if len(_verify_cache) > 200_000:
            _verify_cache.clear()
        _verify_cache[key] = ok_sig
    else:
        counters.count("verify")
    if not ok_sig:
        return VerifyOutcome.BAD_SIGNATURE
    if quote.measurement != registry.canonical_measurement:
        return VerifyOutcome.WRONG_MEASUREMENT
    return VerifyOutcome.OK
