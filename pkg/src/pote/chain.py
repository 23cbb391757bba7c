"""The canonical program (a flat account ledger), blocks and hash-chaining."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Iterator, Mapping, NamedTuple, Sequence

from pote import codec, crypto
from pote.attestation import (
    AttestationQuote,
    EnclaveIdentity,
    QuoteUserData,
    VendorAuthority,
    VendorRegistry,
    issue_quote,
)
from pote.codec import (
    DIGEST_SIZE,
    MAX_ENCLAVE_SIGNATURE_BYTES,
    MAX_QUOTE_BYTES,
    ZERO_DIGEST,
    Reader,
    Writer,
)

ACCOUNT_ID_SIZE = 32
U64_MAX = 2**64 - 1


@dataclass(frozen=True)
class Transaction:
    sender: bytes
    recipient: bytes
    amount: int
    tx_nonce: int

    ENCODED_SIZE = 80

    def write_to(self, w: Writer) -> None:
        w.fixed(self.sender, ACCOUNT_ID_SIZE)
        w.fixed(self.recipient, ACCOUNT_ID_SIZE)
        w.u64(self.amount)
        w.u64(self.tx_nonce)

    @classmethod
    def read_from(cls, r: Reader) -> "Transaction":
        return cls(r.fixed(ACCOUNT_ID_SIZE), r.fixed(ACCOUNT_ID_SIZE), r.u64(), r.u64())


def encode_transactions(txs: Sequence[Transaction]) -> bytes:
    w = Writer()
    w.u32(len(txs))
    for tx in txs:
        tx.write_to(w)
    return w.getvalue()


def _read_transactions(r: Reader) -> tuple[Transaction, ...]:
    n = r.u32()
    if n * Transaction.ENCODED_SIZE > r.remaining:
        raise codec.MalformedEncoding(f"tx_count {n} overruns buffer")
    return tuple(Transaction.read_from(r) for _ in range(n))


class Account(NamedTuple):
    balance: int
    next_nonce: int


class ChainState:
    """Immutable snapshot of the ledger: account id -> (balance, next_nonce)."""

    __slots__ = ("_accounts", "_commitment", "__weakref__")

    def __init__(self, accounts: Mapping[bytes, Account | tuple[int, int]] | None = None):
        items = {}
        for acct, value in (accounts or {}).items():
            if len(acct) != ACCOUNT_ID_SIZE:
                raise ValueError("account ids are 32 bytes")
            items[bytes(acct)] = Account(*value)
        self._accounts = items
        self._commitment: bytes | None = None

    def __getitem__(self, acct: bytes) -> Account:
        return self._accounts[acct]

    def get(self, acct: bytes) -> Account | None:
        return self._accounts.get(acct)

    def __contains__(self, acct: object) -> bool:
        return acct in self._accounts

    def __iter__(self) -> Iterator[bytes]:
        return iter(self._accounts)

    def __len__(self) -> int:
        return len(self._accounts)

    def items(self):
        return self._accounts.items()

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ChainState):
            return NotImplemented
        return self._accounts == other._accounts

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        return f"ChainState({len(self._accounts)} accounts, total={self.total_balance()})"

    def total_balance(self) -> int:
        return sum(a.balance for a in self._accounts.values())

    def write_to(self, w: Writer) -> None:
        w.u32(len(self._accounts))
        for acct in sorted(self._accounts):
            a = self._accounts[acct]
            w.fixed(acct, ACCOUNT_ID_SIZE)
            w.u64(a.balance)
            w.u64(a.next_nonce)

    @classmethod
    def read_from(cls, r: Reader) -> "ChainState":
        n = r.u32()
        if n * (ACCOUNT_ID_SIZE + 16) > r.remaining:
            raise codec.MalformedEncoding(f"account count {n} overruns buffer")
        accounts: dict[bytes, Account] = {}
        prev = None
        for _ in range(n):
            acct = r.fixed(ACCOUNT_ID_SIZE)
            if prev is not None and acct <= prev:
                raise codec.MalformedEncoding("accounts not in strictly ascending order")
            prev = acct
            accounts[acct] = Account(r.u64(), r.u64())
        return cls(accounts)

    def commitment(self) -> bytes:
        if self._commitment is None:
            self._commitment = codec.hash(codec.encode(self))
        return self._commitment


def state_commitment(state: ChainState) -> bytes:
    return state.commitment()


class BatchResult(NamedTuple):
    state: ChainState
    skipped: tuple[bool, ...]

    def skip_bitmap(self) -> list[int]:
        return [int(s) for s in self.skipped]


def execute_batch(state: ChainState, txs: Iterable[Transaction]) -> BatchResult:
    """Apply ``txs`` in order, skipping (not failing on) invalid ones."""
    accounts = dict(state.items())
    skipped = []
    for tx in txs:
        src = accounts.get(tx.sender)
        if src is None or tx.tx_nonce != src.next_nonce or src.balance < tx.amount:
            skipped.append(True)
            continue
        if tx.recipient != tx.sender:
            dst = accounts.get(tx.recipient, Account(0, 0))
            if dst.balance + tx.amount > U64_MAX:
                skipped.append(True)
                continue
            accounts[tx.sender] = Account(src.balance - tx.amount, src.next_nonce + 1)
            accounts[tx.recipient] = Account(dst.balance + tx.amount, dst.next_nonce)
        else:
            accounts[tx.sender] = Account(src.balance, src.next_nonce + 1)
        skipped.append(False)
    return BatchResult(ChainState(accounts), tuple(skipped))


def apply_batch(state: ChainState, txs: Iterable[Transaction]) -> ChainState:
    return execute_batch(state, txs).state


@dataclass(frozen=True)
class ProgramDescriptor:
    name: str
    version: int
    rule_flags: int = 0

    def write_to(self, w: Writer) -> None:
        w.var(self.name.encode("ascii"))
        w.u32(self.version)
        w.u64(self.rule_flags)

    @classmethod
    def read_from(cls, r: Reader) -> "ProgramDescriptor":
        raw = r.var()
        try:
            name = raw.decode("ascii")
        except UnicodeDecodeError as exc:
            raise codec.MalformedEncoding("program name is not ASCII") from exc
        return cls(name, r.u32(), r.u64())


def measure_program(descriptor: ProgramDescriptor) -> bytes:
    return codec.hash(codec.encode(descriptor))


@dataclass(frozen=True)
class BlockHeader:
    parent_hash: bytes
    state_root: bytes
    tx_root: bytes
    timestamp_ms: int
    height: int
    chain_id: int
    proposer_pubkey: bytes
    tee_vendor_id: int
    attestation_quote: bytes = b""
    enclave_signature: bytes = b""

    def write_to(self, w: Writer) -> None:
        w.fixed(self.parent_hash, DIGEST_SIZE)
        w.fixed(self.state_root, DIGEST_SIZE)
        w.fixed(self.tx_root, DIGEST_SIZE)
        w.u64(self.timestamp_ms)
        w.u64(self.height)
        w.u64(self.chain_id)
        w.fixed(self.proposer_pubkey, crypto.PUBLIC_KEY_SIZE)
        w.u8(self.tee_vendor_id)
        w.var(self.attestation_quote, MAX_QUOTE_BYTES)
        w.var(self.enclave_signature, MAX_ENCLAVE_SIGNATURE_BYTES)

    @classmethod
    def read_from(cls, r: Reader) -> "BlockHeader":
        return cls(
            parent_hash=r.fixed(DIGEST_SIZE),
            state_root=r.fixed(DIGEST_SIZE),
            tx_root=r.fixed(DIGEST_SIZE),
            timestamp_ms=r.u64(),
            height=r.u64(),
            chain_id=r.u64(),
            proposer_pubkey=r.fixed(crypto.PUBLIC_KEY_SIZE),
            tee_vendor_id=r.u8(),
            attestation_quote=r.var(MAX_QUOTE_BYTES),
            enclave_signature=r.var(MAX_ENCLAVE_SIGNATURE_BYTES),
        )


@dataclass(frozen=True)
class BlockBody:
    transactions: tuple[Transaction, ...]
    post_state_commitment: bytes

    @cached_property
    def tx_bytes(self) -> bytes:
        return encode_transactions(self.transactions)

    def write_to(self, w: Writer) -> None:
        w.raw(self.tx_bytes)
        w.fixed(self.post_state_commitment, DIGEST_SIZE)

    @classmethod
    def read_from(cls, r: Reader) -> "BlockBody":
        txs = _read_transactions(r)
        return cls(txs, r.fixed(DIGEST_SIZE))


@dataclass(frozen=True)
class Block:
    header: BlockHeader
    body: BlockBody

    def write_to(self, w: Writer) -> None:
        self.header.write_to(w)
        self.body.write_to(w)

    @classmethod
    def read_from(cls, r: Reader) -> "Block":
        return cls(BlockHeader.read_from(r), BlockBody.read_from(r))

    @cached_property
    def encoded(self) -> bytes:
        return codec.encode(self)

    @cached_property
    def commitment_bytes(self) -> bytes:
        """Encoding with quote and signature blanked: the committed range."""
        return codec.encode(self.blanked(quote=True, signature=True))

    @cached_property
    def signing_bytes(self) -> bytes:
        """Encoding with only the signature blanked: what the enclave signs."""
        return codec.encode(self.blanked(quote=False, signature=True))

    def blanked(self, *, quote: bool, signature: bool) -> "Block":
        changes = {}
        if quote:
            changes["attestation_quote"] = b""
        if signature:
            changes["enclave_signature"] = b""
        if not changes:
            return self
        return Block(dataclasses.replace(self.header, **changes), self.body)

    def commitment(self) -> bytes:
        return codec.hash(self.commitment_bytes)

    def quote(self) -> AttestationQuote:
        return AttestationQuote.from_bytes(self.header.attestation_quote)

    @property
    def height(self) -> int:
        return self.header.height

    @property
    def is_sealed(self) -> bool:
        return bool(self.header.attestation_quote) and bool(self.header.enclave_signature)

    def to_bytes(self) -> bytes:
        return self.encoded

    @classmethod
    def from_bytes(cls, data: bytes) -> "Block":
        return codec.decode(data, cls)


def block_hash(block: Block) -> bytes:
    return codec.hash(block.encoded)


def transactions_root(txs: Sequence[Transaction]) -> bytes:
    return codec.hash(encode_transactions(txs))


def genesis_block(chain_id: int, state: ChainState) -> Block:
    root = state.commitment()
    header = BlockHeader(
        parent_hash=ZERO_DIGEST,
        state_root=root,
        tx_root=transactions_root(()),
        timestamp_ms=0,
        height=0,
        chain_id=chain_id,
        proposer_pubkey=bytes(crypto.PUBLIC_KEY_SIZE),
        tee_vendor_id=0,
    )
    return Block(header, BlockBody((), root))


def build_block(
    parent: Block,
    state: ChainState,
    txs: Sequence[Transaction],
    timestamp_ms: int,
    proposer: EnclaveIdentity,
    registry: VendorRegistry,
    *,
    executed: BatchResult | None = None,
) -> Block:
    """Assemble an unsealed block extending ``parent``.

    ``executed`` may carry a precomputed ``execute_batch(state, txs)``.
    """
    txs = tuple(txs)
    result = executed if executed is not None else execute_batch(state, txs)
    post = result.state.commitment()
    header = BlockHeader(
        parent_hash=block_hash(parent),
        state_root=post,
        tx_root=transactions_root(txs),
        timestamp_ms=timestamp_ms,
        height=parent.height + 1,
        chain_id=registry.chain_id,
        proposer_pubkey=proposer.public_key,
        tee_vendor_id=proposer.vendor_id,
    )
    return Block(header, BlockBody(txs, post))


def attach_quote(block: Block, quote: AttestationQuote, proposer: EnclaveIdentity) -> Block:
    """Embed ``quote`` and sign the quote-embedded block with the enclave key."""
    quoted = Block(
        dataclasses.replace(block.header, attestation_quote=quote.to_bytes(), enclave_signature=b""),
        block.body,
    )
    sig = crypto.sign(proposer.block_keypair, quoted.signing_bytes)
    return Block(dataclasses.replace(quoted.header, enclave_signature=sig), block.body)


def seal_block(
    block: Block,
    proposer: EnclaveIdentity,
    authority: VendorAuthority,
    nonce: bytes,
    *,
    measurement: bytes | None = None,
    claim: bytes | None = None,
    user_data: QuoteUserData | None = None,
) -> Block:
    """Obtain the proposer's vendor quote over the block commitment and sign.

    ``measurement`` defaults to the canonical program; ``claim`` is only
    honoured by compromised authorities. ``user_data`` overrides the round
    metadata the enclave was fed (used to model replayed inputs).

    Raises MeasurementRejected if an honest authority is asked to attest a
    measurement other than the canonical one.
    """
    if user_data is None:
        user_data = QuoteUserData(
            pk_block=proposer.public_key,
            commitment=block.commitment(),
            height=block.height,
            chain_id=block.header.chain_id,
            nonce=codec.check_digest(nonce, "nonce"),
        )
    measured = authority.canonical_measurement if measurement is None else measurement
    quote = issue_quote(authority, measured, user_data, claim=claim)
    return attach_quote(block, quote, proposer)
