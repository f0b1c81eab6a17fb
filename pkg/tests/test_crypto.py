import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pseudorate import crypto
from pseudorate.crypto import (
    Credential,
    CredentialChain,
    certify,
    generate_keypair,
    generate_sealing_keypair,
    seal,
    unseal,
    verify_chain,
    verify_credential,
)
from pseudorate.encoding import EncodingError
from pseudorate.errors import InvalidArgument

from support import all_single_field_mutants, honest_chain, make_stack, replace


def test_sign_verify_round_trip_empty_message():
    pair = generate_keypair()
    assert crypto.verify(pair.public, b"", crypto.sign(pair.private, b""))


def test_fresh_pairs_have_distinct_ids():
    assert generate_keypair().key_id != generate_keypair().key_id


def test_seeded_generation_is_deterministic():
    a = generate_keypair(seed=b"fixed-seed")
    b = generate_keypair(seed=b"fixed-seed")
    assert a.key_id == b.key_id
    assert a.private == b.private
    assert generate_keypair(seed=b"other-seed").key_id != a.key_id


def test_signing_and_sealing_seeds_are_independent():
    signing = generate_keypair(seed=b"s")
    sealing = generate_sealing_keypair(seed=b"s")
    assert signing.public != sealing.public


def test_certify_round_trip():
    issuer = generate_keypair()
    cred = certify(issuer, b"score=5", {"group": "1"})
    assert verify_credential(cred)


def test_certify_rejects_empty_entity():
    with pytest.raises(InvalidArgument):
        certify(generate_keypair(), b"")


def test_signature_bit_flip_rejected():
    cred = certify(generate_keypair(), b"score=5")
    for i in range(0, len(cred.signature), 7):
        sig = bytearray(cred.signature)
        sig[i] ^= 0x40
        mutant = Credential(cred.entity, cred.issuer_public, bytes(sig), cred.meta)
        assert not verify_credential(mutant)


def test_meta_tamper_breaks_verification():
    cred = certify(generate_keypair(), b"score=5", {"group": "1"})
    tampered = Credential(cred.entity, cred.issuer_public, cred.signature, {"group": "2"})
    assert not verify_credential(tampered)
    added = Credential(cred.entity, cred.issuer_public, cred.signature, {"group": "1", "x": "y"})
    assert not verify_credential(added)


def test_issuer_swap_rejected():
    cred = certify(generate_keypair(), b"entity")
    other = generate_keypair()
    assert not verify_credential(Credential(cred.entity, other.public, cred.signature, cred.meta))


def test_malformed_credentials_return_false_not_crash():
    pair = generate_keypair()
    cred = certify(pair, b"x")
    weird = [
        Credential(b"", pair.public, cred.signature, {}),
        Credential(b"x", b"short", cred.signature, {}),
        Credential(b"x", pair.public, b"", {}),
        Credential(b"x", pair.public, cred.signature, {"k": 5}),  # type: ignore[dict-item]
    ]
    for mutant in weird:
        assert verify_credential(mutant) is False


def test_all_one_byte_truncations_rejected():
    cred = certify(generate_keypair(), b"payload", {"a": "b"})
    blob = cred.to_bytes()
    for cut in range(len(blob)):
        truncated = blob[:cut] + blob[cut + 1 :]
        try:
            mutant = Credential.from_bytes(truncated)
        except EncodingError:
            continue
        assert not verify_credential(mutant)


def test_credential_bytes_canonical():
    cred = certify(generate_keypair(), b"payload", {"a": "b"})
    blob = cred.to_bytes()
    assert Credential.from_bytes(blob).to_bytes() == blob


@given(st.binary(max_size=128), st.binary(min_size=1, max_size=16))
@settings(max_examples=30)
def test_sign_verify_property(message, suffix):
    pair = generate_keypair(seed=b"prop")
    signature = crypto.sign(pair.private, message)
    assert crypto.verify(pair.public, message, signature)
    assert not crypto.verify(pair.public, message + suffix, signature)


# -- sealed blobs -------------------------------------------------------------


def test_seal_unseal_round_trip():
    pair = generate_sealing_keypair()
    assert unseal(pair, seal(pair.public, b"secret")) == b"secret"


def test_unseal_with_wrong_key_fails():
    pair, other = generate_sealing_keypair(), generate_sealing_keypair()
    blob = seal(pair.public, b"secret")
    with pytest.raises(crypto.SealError):
        unseal(other, blob)


def test_unseal_rejects_short_blob():
    with pytest.raises(crypto.SealError):
        unseal(generate_sealing_keypair(), b"tiny")


# -- chains -------------------------------------------------------------------


def _stack_chain(seed=1):
    stack = make_stack(seed)
    agent = stack.new_agent("chain")
    ticket, payload, chain = honest_chain(stack, agent, group=2)
    registry = {g: pub for g, (pub, _) in stack.pca.group_registry().items()}
    return stack, chain, registry


def test_honest_chain_valid():
    _, chain, registry = _stack_chain()
    report = verify_chain(chain, registry)
    assert report.valid
    assert report.group == 2
    assert report.reason is None


def test_chain_needs_nonempty_registry():
    _, chain, _ = _stack_chain()
    with pytest.raises(InvalidArgument):
        verify_chain(chain, {})


def test_csk_credential_from_other_identity_is_link_mismatch():
    stack = make_stack(3)
    agent_a = stack.new_agent("a")
    agent_b = stack.new_agent("b")
    _, _, chain_a = honest_chain(stack, agent_a)
    _, _, chain_b = honest_chain(stack, agent_b)
    registry = {g: pub for g, (pub, _) in stack.pca.group_registry().items()}
    crossed = replace(chain_a, "csk", chain_b.csk_cred)
    report = verify_chain(crossed, registry)
    assert not report.valid
    assert report.reason == "link-mismatch"


def test_unregistered_group_key_reported():
    _, chain, registry = _stack_chain()
    report = verify_chain(chain, {9: crypto.generate_keypair().public})
    assert not report.valid
    assert report.reason == "unknown-group"


def test_every_single_field_mutation_invalid():
    _, chain, registry = _stack_chain()
    assert verify_chain(chain, registry).valid
    count = 0
    for slot, fieldname, mode, mutant in all_single_field_mutants(chain):
        report = verify_chain(mutant, registry)
        assert not report.valid, f"mutant survived: {slot}.{fieldname} ({mode})"
        count += 1
    assert count == 36  # 3 credentials x 4 fields x 3 modes


def test_random_bit_flips_never_verify():
    _, chain, registry = _stack_chain()
    blob = chain.to_bytes()
    rng = random.Random(99)
    for _ in range(1000):
        flipped = bytearray(blob)
        pos = rng.randrange(len(flipped))
        flipped[pos] ^= 1 << rng.randrange(8)
        try:
            mutant = CredentialChain.from_bytes(bytes(flipped))
        except EncodingError:
            continue
        assert not verify_chain(mutant, registry).valid
