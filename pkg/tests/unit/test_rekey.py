#!/usr/bin/env python3
"""
Unit tests for the rekey codec

Key generation by the SN, recovery by members, one-way refresh, sealing
under each cipher, nonce freshness and the canonical encodings.
"""

import pytest

# Import the module under test
import sys
import os
sys.path.append(os.path.join(os.path.dirname(__file__), '..', '..', 'src'))

from core.exceptions import AuthFailure, ConfigError, DegreeViolation, FreshnessViolation, ProtocolError
from core.gf_mds import get_field
from core.rekey import (CIPHERS, HashFunction, RekeyBroadcast, RekeyCodec, SealedKeyMsg, SeedAssignment,
                        SeedKey, SessionKey, decode_message, encode_message, find_duplicate_keys, logic_seed)


class TestKeyGeneration:
    """Test suite for MDS-based node key generation"""

    @pytest.fixture
    def codec(self):
        return RekeyCodec(get_field(8), owner="SN1")

    @pytest.fixture
    def member_codec(self):
        return RekeyCodec(get_field(8), owner="members")

    @pytest.fixture
    def seeds(self):
        return [SeedKey(1, b'\x11'), SeedKey(2, b'\x22'), SeedKey(5, b'\x5a')]

    def test_derive_symbol_is_keyed_hash(self, codec):
        """Test c_j depends only on the secret and the nonce and fits in m bits"""
        r1 = codec.nonce_for(1, "SN1.T1")
        before = codec.ops.snapshot()['C_H']
        c = codec.derive_symbol(SeedKey(3, b'\x33'), r1)
        assert 0 <= c < 256
        assert codec.derive_symbol(b'\x33', r1) == c
        assert codec.ops.snapshot()['C_H'] == before + 2
        symbols = {codec.derive_symbol(b'\x33', codec.nonce_for(e, "SN1.T1")) for e in range(1, 33)}
        assert len(symbols) > 8

    def test_every_participant_recovers_key(self, codec, member_codec, seeds):
        """Test each participant derives the SN's key from the broadcast"""
        r = codec.nonce_for(1, "SN1.T1")
        key, broadcast = codec.sn_generate_key([(s.j, s) for s in seeds], r, "SN1.T1", epoch=1)
        for seed in seeds:
            recovered = member_codec.member_recover_key(seed, broadcast)
            assert recovered.raw == key.raw
            assert recovered.expanded == key.expanded
            assert recovered.epoch == 1

    def test_outsiders_do_not_recover(self, codec, member_codec, seeds):
        """Test seeds that were not participants land on other keys"""
        r = codec.nonce_for(1, "SN1.T1")
        key, broadcast = codec.sn_generate_key([(s.j, s) for s in seeds], r, "SN1.T1", epoch=1)
        hits = sum(member_codec.member_recover_key(SeedKey(j, bytes([j * 7 % 256])), broadcast).expanded
                   == key.expanded for j in range(9, 41))
        assert hits <= 3

    def test_broadcast_carries_public_symbols_only(self, codec, seeds):
        """Test the broadcast holds n - 1 public symbols and the positions"""
        r = codec.nonce_for(2, "SN1.T1")
        _, broadcast = codec.sn_generate_key([(s.j, s) for s in seeds], r, "SN1.T1", epoch=2)
        assert len(broadcast.public_symbols) == len(seeds) - 1
        assert broadcast.points == (1, 2, 5)

    def test_nonce_reuse_refused(self, codec, seeds):
        """Test the same nonce cannot drive two generations"""
        r = codec.nonce_for(3, "SN1.T1")
        codec.sn_generate_key([(s.j, s) for s in seeds], r, "SN1.T1", epoch=3)
        with pytest.raises(FreshnessViolation):
            codec.sn_generate_key([(s.j, s) for s in seeds], r, "SN1.T1", epoch=4)

    def test_generations_must_match_participants(self, codec, seeds):
        """Test a generation list of the wrong length is refused"""
        r = codec.nonce_for(6, "SN1.T1")
        with pytest.raises(ProtocolError):
            codec.sn_generate_key([(s.j, s) for s in seeds], r, "SN1.T1", epoch=6, generations=(1, 2))

    def test_generations_travel_with_broadcast(self, codec, seeds):
        """Test the broadcast lists one generation per position"""
        r = codec.nonce_for(7, "SN1.T1")
        _, broadcast = codec.sn_generate_key([(s.j, s) for s in seeds], r, "SN1.T1", epoch=7,
                                             generations=(4, 9, 12))
        assert broadcast.generations == (4, 9, 12)

    def test_retired_epoch_refused(self, codec, seeds):
        """Test generation under an epoch below the retirement floor is refused"""
        codec.sn_generate_key([(s.j, s) for s in seeds], codec.nonce_for(3, "T"), "T", epoch=3)
        codec.retire_nonces(5)
        with pytest.raises(FreshnessViolation):
            codec.sn_generate_key([(s.j, s) for s in seeds], codec.nonce_for(4, "T"), "T", epoch=4)

    def test_retirement_bounds_nonce_memory(self, codec, seeds):
        """Test only nonces of live epochs are remembered"""
        for epoch in range(1, 41):
            codec.sn_generate_key([(s.j, s) for s in seeds], codec.nonce_for(epoch, "T"), "T", epoch=epoch)
            codec.retire_nonces(epoch)
        assert codec.outstanding_nonces == 1
        with pytest.raises(FreshnessViolation):
            codec.sn_generate_key([(s.j, s) for s in seeds], codec.nonce_for(40, "T"), "T", epoch=40)

    def test_derive_symbol_uniform(self, codec):
        """Test c_j spreads evenly over GF(2^8) for a fixed nonce"""
        r = codec.nonce_for(1, "SN1.T1")
        counts = [0] * 256
        for i in range(256 * 64):
            counts[codec.derive_symbol(i.to_bytes(4, 'big'), r)] += 1
        chi_square = sum((c - 64) ** 2 / 64 for c in counts)
        assert chi_square < 400
        assert min(counts) > 20

    def test_derive_symbol_collisions_at_birthday_rate(self, codec):
        """Test distinct secrets collide on c_j no more often than chance"""
        r = codec.nonce_for(2, "SN1.T1")
        counts = [0] * 256
        n = 2048
        for i in range(n):
            counts[codec.derive_symbol(b'seed' + i.to_bytes(4, 'big'), r)] += 1
        pairs = sum(c * (c - 1) // 2 for c in counts)
        expected = n * (n - 1) / 2 / 256
        assert abs(pairs - expected) < 0.15 * expected

    def test_fresh_nonce_gives_fresh_symbol(self, codec):
        """Test one seed under 10^4 nonce pairs collides at most twice the chance rate"""
        collisions = 0
        for e in range(10_000):
            a = codec.derive_symbol(b'\x42', codec.nonce_for(2 * e, "SN1.T1"))
            b = codec.derive_symbol(b'\x42', codec.nonce_for(2 * e + 1, "SN1.T1"))
            collisions += a == b
        assert collisions <= 2 * 10_000 / 256

    def test_node_id_separates_expanded_keys(self, codec):
        """Test one raw symbol expands to 10^4 distinct keys under distinct node ids"""
        r = codec.nonce_for(1, "SN1")
        keys = [SessionKey(0x5A, codec.kdf_expand(0x5A, r, f"SN1.T{i}"), 1) for i in range(10_000)]
        assert find_duplicate_keys(keys) == []

    def test_expanded_keys_never_collide(self, codec):
        """Test every (symbol, nonce) pair expands to a distinct cipher key"""
        keys = [SessionKey(raw, codec.kdf_expand(raw, codec.nonce_for(e, "SN1"), "SN1"), e)
                for e in range(1, 9) for raw in range(256)]
        assert find_duplicate_keys(keys) == []

    def test_no_participants(self, codec):
        """Test generation needs at least one participant"""
        with pytest.raises(ProtocolError):
            codec.sn_generate_key([], b'\x00' * 8)

    def test_duplicate_positions(self, codec):
        """Test two participants cannot share a code position"""
        with pytest.raises(ProtocolError):
            codec.sn_generate_key([(1, b'\x01'), (1, b'\x02')], b'\x01' * 8)

    def test_operation_counts(self, codec, seeds):
        """Test generation counts one hash per participant and one MDS solve"""
        before = codec.ops.snapshot()
        codec.sn_generate_key([(s.j, s) for s in seeds], codec.nonce_for(9, "x"), "x", 9)
        after = codec.ops.snapshot()
        assert after['C_H'] - before['C_H'] == 3
        assert after['C_M'] - before['C_M'] == 1

    def test_secret_masked_to_t_bits(self):
        """Test secrets wider than t bits lose their high bits"""
        codec = RekeyCodec(get_field(8), secret_bits=12)
        assert codec.secret_bytes == 2
        assert codec.mask_secret(b'\xff\xff') == b'\x0f\xff'

    def test_nonce_length(self):
        """Test r is l_r bits long"""
        codec = RekeyCodec(get_field(8), nonce_bits=128)
        assert len(codec.nonce_for(1, "SN1")) == 16

    def test_bad_nonce_bits(self):
        """Test nonce widths must be whole bytes"""
        with pytest.raises(ConfigError):
            RekeyCodec(get_field(8), nonce_bits=12)

    @pytest.mark.parametrize("name", ["sha256", "sha512", "md5"])
    def test_hash_choices(self, name, seeds):
        """Test every supported H produces recoverable keys"""
        codec = RekeyCodec(get_field(8), hash_name=name)
        r = codec.nonce_for(1, "T")
        key, broadcast = codec.sn_generate_key([(s.j, s) for s in seeds], r, "T", 1)
        assert codec.member_recover_key(seeds[0], broadcast).expanded == key.expanded

    def test_unknown_hash(self):
        """Test an unknown hash name is a configuration error"""
        with pytest.raises(ConfigError):
            HashFunction('sha1')


class TestSealing:
    """Test suite for sealed key transport and refresh"""

    @pytest.fixture
    def codec(self):
        return RekeyCodec(get_field(8), owner="SN1")

    @pytest.fixture
    def keys(self, codec):
        sealing = SessionKey(0x12, codec.kdf_expand(0x12, b'a' * 8, "SN1.T1"), epoch=1)
        payload = SessionKey(0x34, codec.kdf_expand(0x34, b'b' * 8, "SN1"), epoch=2)
        return sealing, payload

    @pytest.mark.parametrize("cipher", ["hmac-stream", "aes-gcm"])
    def test_seal_open(self, cipher, keys):
        """Test a sealed key opens under the right key"""
        codec = RekeyCodec(get_field(8), cipher_name=cipher)
        sealing, payload = keys
        msg = codec.seal_key(sealing, payload, "SN1.T1", "SN1")
        assert codec.open_key(sealing, msg) == payload

    @pytest.mark.parametrize("cipher", ["hmac-stream", "aes-gcm"])
    def test_wrong_key_fails(self, cipher, keys):
        """Test opening under another key raises AuthFailure"""
        codec = RekeyCodec(get_field(8), cipher_name=cipher)
        sealing, payload = keys
        msg = codec.seal_key(sealing, payload, "SN1.T1", "SN1")
        wrong = SessionKey(sealing.raw, codec.kdf_expand(0x99, b'c' * 8, "SN1.T1"), sealing.epoch)
        with pytest.raises(AuthFailure):
            codec.open_key(wrong, msg)
        assert codec.try_open(wrong, msg) is None

    def test_stale_sealing_epoch(self, codec, keys):
        """Test a key from another epoch is refused before decryption"""
        sealing, payload = keys
        msg = codec.seal_key(sealing, payload, "SN1.T1", "SN1")
        stale = SessionKey(sealing.raw, sealing.expanded, sealing.epoch + 1)
        with pytest.raises(AuthFailure):
            codec.open_key(stale, msg)

    def test_tampered_header(self, codec, keys):
        """Test relabelling the payload node breaks authentication"""
        sealing, payload = keys
        msg = codec.seal_key(sealing, payload, "SN1.T1", "SN1")
        forged = SealedKeyMsg("SN1.T1", "SN2", msg.ciphertext, msg.epoch, msg.sealing_epoch)
        with pytest.raises(AuthFailure):
            codec.open_key(sealing, forged)

    def test_null_cipher_opens_with_any_key(self, keys):
        """Test the negative-control cipher ignores the key"""
        codec = RekeyCodec(get_field(8), cipher_name='null')
        sealing, payload = keys
        msg = codec.seal_key(sealing, payload, "SN1.T1", "SN1")
        anyone = SessionKey(0, b'\x00' * 32, sealing.epoch)
        assert codec.try_open(anyone, msg) == payload

    def test_refresh_is_deterministic_and_one_way(self, codec, keys):
        """Test refresh gives the same successor to every holder and a new key"""
        _, key = keys
        first = codec.refresh_key(key, b'r' * 8, "SN1", epoch=5)
        second = RekeyCodec(get_field(8)).refresh_key(key, b'r' * 8, "SN1", epoch=5)
        assert first == second
        assert first.expanded != key.expanded
        assert codec.refresh_key(key, b's' * 8, "SN1", epoch=5).expanded != first.expanded

    def test_cipher_registry(self):
        """Test the three cipher names are registered"""
        assert set(CIPHERS) == {'hmac-stream', 'aes-gcm', 'null'}


class TestWireFormat:
    """Test suite for canonical message encodings"""

    def test_broadcast_layout(self):
        """Test the broadcast encodes kind, target and symbols"""
        msg = RekeyBroadcast("SN1.T1", b'\x01' * 8, (7, 9), epoch=3, points=(1, 2, 3))
        data = encode_message(msg)
        assert data[0] == 0x01
        assert decode_message(data) == msg

    def test_sealed_with_refresh_nonce(self):
        """Test the refresh nonce survives encoding"""
        msg = SealedKeyMsg("SN1.T1", "SN1", b'ct', epoch=4, sealing_epoch=2, refresh_nonce=b'n' * 8)
        data = encode_message(msg)
        assert data[0] == 0x02
        assert decode_message(data) == msg

    def test_seed_assignment(self):
        """Test seed unicasts keep position and secret"""
        msg = SeedAssignment("u1", "SN1", SeedKey(17, b'\xab'), epoch=1)
        assert decode_message(encode_message(msg)) == msg

    def test_broadcast_generations(self):
        """Test per-position generations survive encoding"""
        msg = RekeyBroadcast("SN1.T1", b'\x02' * 8, (5,), epoch=6, points=(3, 8), generations=(2, 11))
        decoded = decode_message(encode_message(msg))
        assert decoded.generations == (2, 11)
        assert decoded == msg

    def test_seed_assignment_generation(self):
        """Test the seed generation survives encoding"""
        msg = SeedAssignment("u9", "SN2", SeedKey(4, b'\x44', generation=70000), epoch=2)
        assert decode_message(encode_message(msg)).seed.generation == 70000

    def test_wide_symbols(self):
        """Test GF(2^16) symbols take two bytes each"""
        msg = RekeyBroadcast("T", b'\x00' * 8, (0xBEEF,), epoch=1, points=(1, 2))
        assert decode_message(encode_message(msg, symbol_bytes=2)).public_symbols == (0xBEEF,)

    def test_truncated_message(self):
        """Test a cut message raises ProtocolError"""
        data = encode_message(SeedAssignment("u1", "SN1", SeedKey(1, b'\x01'), epoch=1))
        with pytest.raises(ProtocolError):
            decode_message(data[:-1])

    def test_unknown_kind(self):
        """Test an unknown leading byte is refused"""
        with pytest.raises(ProtocolError):
            decode_message(b'\x09')


class TestLogicSeeds:
    """Test suite for XOR logic-node seeds"""

    def test_xor_of_children(self):
        """Test s_T = s_1 xor s_2 xor s_3"""
        assert logic_seed([b'\x0f', b'\xf0']) == b'\xff'
        assert logic_seed([b'\x01', b'\x02', b'\x04']) == b'\x07'

    def test_equal_children_cancel(self):
        """Test two children sharing a secret give an all-zero seed"""
        assert logic_seed([b"\x5a\xa5", b"\x5a\xa5"]) == b"\x00\x00"

    @pytest.mark.parametrize("count", [1, 4])
    def test_degree_limits(self, count):
        """Test logic seeds need two or three children"""
        with pytest.raises(DegreeViolation):
            logic_seed([b'\x01'] * count)

    def test_duplicate_key_detection(self):
        """Test repeated expanded keys are reported"""
        a = SessionKey(1, b'a' * 32, 1)
        b = SessionKey(2, b'b' * 32, 1)
        assert find_duplicate_keys([a, b, SessionKey(1, b'a' * 32, 2)]) == [SessionKey(1, b'a' * 32, 2)]

    def test_duplicate_index_across_calls(self):
        """Test a shared index catches repeats between batches"""
        seen = {}
        first = [SessionKey(1, b'a' * 32, 1), SessionKey(2, b'b' * 32, 1)]
        assert find_duplicate_keys(first, seen) == []
        assert find_duplicate_keys([SessionKey(3, b'c' * 32, 2)], seen) == []
        assert find_duplicate_keys([SessionKey(2, b'b' * 32, 3)], seen) == [SessionKey(2, b'b' * 32, 3)]
        assert len(seen) == 3
