import dataclasses

import pytest

from fixtures import default_txs, make_world
from pote import codec
from pote.attestation import QuoteUserData, set_vendor_status
from pote.chain import Block, apply_batch, attach_quote, block_hash, seal_block
from pote.simnet.adversary import forge_state, keep_quote_alter_block, tamper_after_attest
from pote.validation import (
    AlreadyFinalized,
    CommitmentMismatch,
    FinalityCertificate,
    FinalityTracker,
    InvalidQuote,
    LocalChain,
    NotFinalized,
    Reason,
    StateMode,
    finalize,
    produce_reattestation,
    reexecution_matches,
    record_attestation,
    validate_block,
    verify_certificate,
)


@pytest.fixture
def world():
    return make_world()


def verdict(world, block, ctx=None):
    return validate_block(block, world.registry, ctx or world.context())


def test_honest_block_accepted(world):
    v = verdict(world, world.sealed())
    assert v.accepted and str(v) == "accept"


def test_bytes_input_and_malformed(world):
    raw = world.sealed().to_bytes()
    assert verdict(world, raw).accepted
    assert str(verdict(world, raw[:-1])) == "reject(malformed)"


def test_unsealed_block_is_malformed(world):
    assert verdict(world, world.unsealed()).reason is Reason.MALFORMED


def test_bad_parent(world):
    block = world.sealed()
    ctx = dataclasses.replace(world.context(), expected_parent_hash=b"\x01" * 32)
    assert verdict(world, block, ctx).reason is Reason.BAD_PARENT


def test_wrong_proposer(world):
    ctx = world.context()
    rogue = world.others(ctx)[0]
    block = world.unsealed(ctx=ctx)
    block = Block(dataclasses.replace(block.header, proposer_pubkey=rogue.public_key, tee_vendor_id=rogue.vendor_id), block.body)
    sealed = seal_block(block, rogue, world.authority(rogue.vendor_id), ctx.expected_nonce)
    assert verdict(world, sealed).reason is Reason.WRONG_PROPOSER


def test_revoked_vendor_fails_attestation(world):
    block = world.sealed()
    set_vendor_status(world.registry, block.header.tee_vendor_id, "revoked")
    assert verdict(world, block).reason is Reason.ATTESTATION_INVALID


def test_quote_from_other_enclave_fails_attestation(world):
    ctx = world.context()
    prop = world.proposer(ctx)
    block = world.unsealed(ctx=ctx)
    ud = QuoteUserData(b"\x09" * 32, block.commitment(), 1, 1, ctx.expected_nonce)
    sealed = seal_block(block, prop, world.authority(prop.vendor_id), ctx.expected_nonce, user_data=ud)
    assert verdict(world, sealed).reason is Reason.ATTESTATION_INVALID


def test_tampered_body_is_commitment_mismatch(world):
    assert verdict(world, tamper_after_attest(world.sealed())).reason is Reason.COMMITMENT_MISMATCH


def test_state_root_must_match_body(world):
    ctx = world.context()
    block = world.unsealed(ctx=ctx)
    block = Block(dataclasses.replace(block.header, state_root=b"\x05" * 32), block.body)
    prop = world.proposer(ctx)
    sealed = seal_block(block, prop, world.authority(prop.vendor_id), ctx.expected_nonce)
    assert verdict(world, sealed).reason is Reason.COMMITMENT_MISMATCH


def test_altered_block_with_fresh_quote_is_signature_invalid(world):
    block = world.sealed()
    altered = keep_quote_alter_block(block, world.authority(block.header.tee_vendor_id))
    assert verdict(world, altered).reason is Reason.SIGNATURE_INVALID


def test_stale_nonce_is_freshness_violation(world):
    block = world.sealed()
    ctx = dataclasses.replace(world.context(), expected_nonce=bytes(32))
    assert verdict(world, block, ctx).reason is Reason.FRESHNESS_VIOLATION


def test_first_failing_check_wins(world):
    # Wrong parent and tampered body: the earlier check is reported.
    block = tamper_after_attest(world.sealed())
    ctx = dataclasses.replace(world.context(), expected_parent_hash=b"\x01" * 32)
    assert verdict(world, block, ctx).reason is Reason.BAD_PARENT


def test_reexecution_detects_forged_state(world):
    block = world.sealed()
    assert reexecution_matches(block, world.chain.state)
    forged = forge_state(apply_batch(world.chain.state, default_txs()))
    bad = Block(block.header, dataclasses.replace(block.body, post_state_commitment=forged.commitment()))
    assert not reexecution_matches(bad, world.chain.state)


def _attest_all(world, block, ctx, tracker):
    for e in world.others(ctx):
        att = produce_reattestation(block, e, world.authority(e.vendor_id), ctx)
        record_attestation(tracker, att, world.registry)


def test_tracker_needs_k_distinct_vendors(world):
    ctx = world.context()
    block = world.sealed(ctx=ctx)
    tracker = FinalityTracker.for_block(block, ctx, 3)
    assert tracker.distinct_vendors == 1
    same_vendor = [e for e in world.others(ctx) if e.vendor_id == block.header.tee_vendor_id]
    for e in same_vendor:
        record_attestation(tracker, produce_reattestation(block, e, world.authority(e.vendor_id), ctx), world.registry)
    assert tracker.distinct_vendors == 1 and not tracker.finalized
    _attest_all(world, block, ctx, tracker)
    assert tracker.finalized and tracker.distinct_vendors == 3
    cert = tracker.certificate()
    assert cert.vendors() == {1, 2, 3}
    assert verify_certificate(cert, block, world.registry, ctx)
    assert codec.decode(codec.encode(cert), FinalityCertificate) == cert


def test_tracker_rejects_foreign_and_stale_attestations(world):
    ctx = world.context()
    block = world.sealed(ctx=ctx)
    other = world.sealed(ctx=ctx, timestamp=2_000)
    tracker = FinalityTracker.for_block(block, ctx, 3)
    e = world.others(ctx)[-1]
    with pytest.raises(CommitmentMismatch):
        record_attestation(tracker, produce_reattestation(other, e, world.authority(e.vendor_id), ctx), world.registry)
    stale = dataclasses.replace(ctx, expected_nonce=bytes(32))
    with pytest.raises(InvalidQuote):
        record_attestation(tracker, produce_reattestation(block, e, world.authority(e.vendor_id), stale), world.registry)
    att = produce_reattestation(block, e, world.authority(e.vendor_id), ctx)
    forged = dataclasses.replace(att, quote=dataclasses.replace(att.quote, vendor_signature=bytes(64)))
    with pytest.raises(InvalidQuote):
        record_attestation(tracker, forged, world.registry)


def test_certificate_short_of_k_is_rejected(world):
    ctx = world.context()
    block = world.sealed(ctx=ctx)
    cert = FinalityCertificate(block.commitment(), (block.quote(),))
    assert not verify_certificate(cert, block, world.registry, ctx)


def test_finalize_appends_and_is_irrevocable(world):
    ctx = world.context()
    block = world.sealed(ctx=ctx)
    tracker = FinalityTracker.for_block(block, ctx, 3)
    with pytest.raises(NotFinalized):
        finalize(tracker, world.chain)
    _attest_all(world, block, ctx, tracker)
    finalize(tracker, world.chain)
    assert world.chain.height == 1 and world.chain.head == block
    assert world.chain.state == apply_batch(world.setup.state, default_txs())
    with pytest.raises(AlreadyFinalized):
        finalize(tracker, world.chain)


def test_adopt_mode_checks_state_root(world):
    chain = LocalChain.from_genesis(world.registry, world.setup.roster, world.setup.state, StateMode.ADOPT)
    ctx = chain.context()
    block = world.sealed(ctx=ctx)
    tracker = FinalityTracker.for_block(block, ctx, 3)
    _attest_all(world, block, ctx, tracker)
    with pytest.raises(ValueError):
        finalize(tracker, chain, adopted_state=world.setup.state)
    adopted = apply_batch(world.setup.state, default_txs())
    finalize(tracker, chain, adopted_state=adopted)
    assert chain.state is adopted
    assert block_hash(chain.head) == block_hash(block)


def test_attach_quote_resigns(world):
    block = world.sealed()
    again = attach_quote(block.blanked(quote=True, signature=True), block.quote(), world.proposer(world.context()))
    assert again == block
