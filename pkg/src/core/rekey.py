#!/usr/bin/env python3
"""
Key derivation codec: seed keys, MDS session keys and sealed key messages

An SN (or the BS) turns the secrets of a node's children into codeword
symbols c_j = H(s_j || r), solves for the message (m_1..m_n) and keeps
m_1 as the node key. Only r and m_2..m_n are multicast; a participant
recomputes its own c_j and recovers m_1. Keys of upper nodes travel
sealed under child keys.

Author: bdstest
License: Apache 2.0
Copyright: 2025 CDSI - Compliance Data Systems Insights
"""

import logging
import struct
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives import constant_time, hashes, hmac
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

try:
    from .exceptions import (AuthFailure, ConfigError, DegreeViolation,
                             FreshnessViolation, ProtocolError)
    from .gf_mds import FieldElem, GaloisField, get_field
except ImportError:
    import sys
    from pathlib import Path
    sys.path.append(str(Path(__file__).parent))
    from exceptions import (AuthFailure, ConfigError, DegreeViolation,
                            FreshnessViolation, ProtocolError)
    from gf_mds import FieldElem, GaloisField, get_field

# Configure logging
logger = logging.getLogger(__name__)

EXPANDED_KEY_BYTES = 32
TAG_BYTES = 16

# Wire message kinds
KIND_BROADCAST = 0x01
KIND_SEALED = 0x02
KIND_SEED = 0x03


# ---------------------------------------------------------------------------
# Pluggable hash H


class HashFunction:
    """H(.) used for c_j = H(s || r) and for nonces"""

    ALGORITHMS = {
        'sha256': hashes.SHA256,
        'sha512': hashes.SHA512,
        'md5': hashes.MD5,
    }

    def __init__(self, name: str = 'sha256'):
        if name not in self.ALGORITHMS:
            raise ConfigError(f"unknown hash '{name}', choose from {sorted(self.ALGORITHMS)}")
        self.name = name
        self._algorithm = self.ALGORITHMS[name]

    @property
    def digest_size(self) -> int:
        return self._algorithm.digest_size

    def digest(self, *parts: bytes) -> bytes:
        h = hashes.Hash(self._algorithm())
        for part in parts:
            h.update(part)
        return h.finalize()


# ---------------------------------------------------------------------------
# Pluggable cipher for E_k(.)


class CipherSuite:
    """Authenticated encryption; deterministic given (key, header, plaintext)"""

    name = 'abstract'

    def seal(self, key: bytes, header: bytes, plaintext: bytes) -> bytes:
        raise NotImplementedError

    def open(self, key: bytes, header: bytes, ciphertext: bytes) -> bytes:
        raise NotImplementedError


class HmacStreamCipher(CipherSuite):
    """Keyed-hash keystream XOR plus a truncated keyed-hash tag"""

    name = 'hmac-stream'

    @staticmethod
    def _mac(key: bytes, *parts: bytes) -> bytes:
        h = hmac.HMAC(key, hashes.SHA256())
        for part in parts:
            h.update(part)
        return h.finalize()

    def _keystream(self, key: bytes, header: bytes, length: int) -> bytes:
        blocks = []
        for counter in range((length + 31) // 32):
            blocks.append(self._mac(key, b'ks', struct.pack('>I', counter), header))
        return b''.join(blocks)[:length]

    def seal(self, key: bytes, header: bytes, plaintext: bytes) -> bytes:
        stream = self._keystream(key, header, len(plaintext))
        body = bytes(a ^ b for a, b in zip(plaintext, stream))
        tag = self._mac(key, b'tag', header, body)[:TAG_BYTES]
        return body + tag

    def open(self, key: bytes, header: bytes, ciphertext: bytes) -> bytes:
        if len(ciphertext) < TAG_BYTES:
            raise AuthFailure("ciphertext shorter than tag")
        body, tag = ciphertext[:-TAG_BYTES], ciphertext[-TAG_BYTES:]
        expected = self._mac(key, b'tag', header, body)[:TAG_BYTES]
        if not constant_time.bytes_eq(tag, expected):
            raise AuthFailure("tag mismatch")
        stream = self._keystream(key, header, len(body))
        return bytes(a ^ b for a, b in zip(body, stream))


class AesGcmCipher(CipherSuite):
    """AES-256-GCM with the nonce derived from the header"""

    name = 'aes-gcm'

    def __init__(self):
        self._hash = HashFunction('sha256')

    def seal(self, key: bytes, header: bytes, plaintext: bytes) -> bytes:
        nonce = self._hash.digest(header)[:12]
        return AESGCM(key).encrypt(nonce, plaintext, header)

    def open(self, key: bytes, header: bytes, ciphertext: bytes) -> bytes:
        nonce = self._hash.digest(header)[:12]
        try:
            return AESGCM(key).decrypt(nonce, ciphertext, header)
        except InvalidTag as e:
            raise AuthFailure("AES-GCM tag mismatch") from e


class NullCipher(CipherSuite):
    """Broken on purpose: ignores the key. Negative control for the probes."""

    name = 'null'

    def seal(self, key: bytes, header: bytes, plaintext: bytes) -> bytes:
        return plaintext

    def open(self, key: bytes, header: bytes, ciphertext: bytes) -> bytes:
        return ciphertext


CIPHERS = {
    HmacStreamCipher.name: HmacStreamCipher,
    AesGcmCipher.name: AesGcmCipher,
    NullCipher.name: NullCipher,
}


def get_cipher(name: str) -> CipherSuite:
    if name not in CIPHERS:
        raise ConfigError(f"unknown cipher '{name}', choose from {sorted(CIPHERS)}")
    return CIPHERS[name]()


# ---------------------------------------------------------------------------
# Domain types


@dataclass(frozen=True)
class SeedKey:
    """(j, s): codeword position and t-bit secret.

    generation numbers each assignment of a position within its subgroup,
    so a released position handed to a new leaf never matches the old seed.
    """
    j: int
    s: bytes
    generation: int = 0


@dataclass(frozen=True)
class SessionKey:
    """Node key: protocol-level symbol m_1 plus the expanded cipher key"""
    raw: FieldElem
    expanded: bytes
    epoch: int


@dataclass(frozen=True)
class RekeyBroadcast:
    """Public MDS payload (r, m_2..m_n) for one node"""
    target_node: str
    r: bytes
    public_symbols: Tuple[FieldElem, ...]
    epoch: int
    points: Tuple[int, ...] = ()
    generations: Tuple[int, ...] = ()


@dataclass(frozen=True)
class SealedKeyMsg:
    """E_k(k'): payload node key sealed under the sealing node key"""
    sealing_key_node: str
    payload_key_node: str
    ciphertext: bytes
    epoch: int
    sealing_epoch: int = 0
    refresh_nonce: Optional[bytes] = None


@dataclass(frozen=True)
class SeedAssignment:
    """Seed key unicast from an SN to one member over a secure channel"""
    member: str
    subgroup: str
    seed: SeedKey
    epoch: int


WireMessage = Union[RekeyBroadcast, SealedKeyMsg, SeedAssignment]


@dataclass
class OperationCounter:
    """C_E / C_D / C_H / C_M tallies for one role"""
    counts: Counter = field(default_factory=Counter)

    def add(self, op: str, amount: int = 1) -> None:
        self.counts[op] += amount

    def snapshot(self) -> Dict[str, int]:
        return {op: self.counts.get(op, 0) for op in ('C_E', 'C_D', 'C_H', 'C_M')}


# ---------------------------------------------------------------------------
# Canonical encodings


def _pack_str(value: str) -> bytes:
    data = value.encode('utf-8')
    return struct.pack('>H', len(data)) + data


def _pack_bytes(value: bytes) -> bytes:
    return struct.pack('>H', len(value)) + value


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, size: int) -> bytes:
        if self.offset + size > len(self.data):
            raise ProtocolError(f"message truncated at byte {self.offset}")
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self) -> str:
        (size,) = self.unpack('>H')
        return self.take(size).decode('utf-8')

    def blob(self) -> bytes:
        (size,) = self.unpack('>H')
        return self.take(size)


def encode_session_key(key: SessionKey) -> bytes:
    return struct.pack('>QI', key.epoch, key.raw) + _pack_bytes(key.expanded)


def decode_session_key(data: bytes) -> SessionKey:
    reader = _Reader(data)
    epoch, raw = reader.unpack('>QI')
    return SessionKey(raw=raw, expanded=reader.blob(), epoch=epoch)


def sealed_header(msg_fields: Tuple[str, str, int, int, Optional[bytes]]) -> bytes:
    sealing, payload, epoch, sealing_epoch, refresh = msg_fields
    return (_pack_str(sealing) + _pack_str(payload)
            + struct.pack('>QQ', epoch, sealing_epoch) + _pack_bytes(refresh or b''))


def encode_message(msg: WireMessage, symbol_bytes: int = 1) -> bytes:
    """Canonical big-endian layout; see docs/WIRE_FORMAT.md"""
    if isinstance(msg, RekeyBroadcast):
        body = (_pack_str(msg.target_node) + struct.pack('>Q', msg.epoch) + _pack_bytes(msg.r)
                + struct.pack('>H', len(msg.points))
                + b''.join(struct.pack('>H', p) for p in msg.points)
                + struct.pack('>H', len(msg.generations))
                + b''.join(struct.pack('>I', g) for g in msg.generations)
                + struct.pack('>BH', symbol_bytes, len(msg.public_symbols))
                + b''.join(s.to_bytes(symbol_bytes, 'big') for s in msg.public_symbols))
        return bytes([KIND_BROADCAST]) + body
    if isinstance(msg, SealedKeyMsg):
        header = sealed_header((msg.sealing_key_node, msg.payload_key_node, msg.epoch,
                                msg.sealing_epoch, msg.refresh_nonce))
        return bytes([KIND_SEALED]) + header + _pack_bytes(msg.ciphertext)
    if isinstance(msg, SeedAssignment):
        body = (_pack_str(msg.member) + _pack_str(msg.subgroup)
                + struct.pack('>QHI', msg.epoch, msg.seed.j, msg.seed.generation)
                + _pack_bytes(msg.seed.s))
        return bytes([KIND_SEED]) + body
    raise ProtocolError(f"cannot encode {type(msg).__name__}")


def decode_message(data: bytes) -> WireMessage:
    reader = _Reader(data)
    (kind,) = reader.unpack('>B')
    if kind == KIND_BROADCAST:
        target = reader.string()
        (epoch,) = reader.unpack('>Q')
        r = reader.blob()
        (count,) = reader.unpack('>H')
        points = tuple(reader.unpack('>H')[0] for _ in range(count))
        (count,) = reader.unpack('>H')
        generations = tuple(reader.unpack('>I')[0] for _ in range(count))
        width, count = reader.unpack('>BH')
        symbols = tuple(int.from_bytes(reader.take(width), 'big') for _ in range(count))
        return RekeyBroadcast(target, r, symbols, epoch, points, generations)
    if kind == KIND_SEALED:
        sealing = reader.string()
        payload = reader.string()
        epoch, sealing_epoch = reader.unpack('>QQ')
        refresh = reader.blob() or None
        return SealedKeyMsg(sealing, payload, reader.blob(), epoch, sealing_epoch, refresh)
    if kind == KIND_SEED:
        member = reader.string()
        subgroup = reader.string()
        epoch, j, generation = reader.unpack('>QHI')
        return SeedAssignment(member, subgroup, SeedKey(j, reader.blob(), generation), epoch)
    raise ProtocolError(f"unknown message kind 0x{kind:02X}")


# ---------------------------------------------------------------------------
# XOR logic seeds


def logic_seed(children_seeds: Sequence[bytes]) -> bytes:
    """s_T = s_1 xor s_2 (xor s_3) for a logic node"""
    if len(children_seeds) < 2:
        raise DegreeViolation(f"logic node needs 2 or 3 children, got {len(children_seeds)}")
    if len(children_seeds) > 3:
        raise DegreeViolation(f"logic node needs 2 or 3 children, got {len(children_seeds)}")
    size = len(children_seeds[0])
    if any(len(s) != size for s in children_seeds):
        raise ProtocolError("child secrets differ in length")
    out = bytearray(size)
    for secret in children_seeds:
        for i, b in enumerate(secret):
            out[i] ^= b
    return bytes(out)


# ---------------------------------------------------------------------------
# The codec


class RekeyCodec:
    """Key generation, recovery and sealing for one owner (SN, BS or members)"""

    def __init__(self, field: Optional[GaloisField] = None, hash_name: str = 'sha256',
                 cipher_name: str = 'hmac-stream', secret_bits: Optional[int] = None,
                 nonce_bits: int = 64, owner: str = ''):
        self.field = field or get_field(8)
        self.hash = HashFunction(hash_name)
        self.cipher = get_cipher(cipher_name)
        self.secret_bits = secret_bits or self.field.m
        if nonce_bits % 8 or not 8 <= nonce_bits <= 8 * self.hash.digest_size:
            raise ConfigError(f"nonce bits must be a multiple of 8 within the digest, got {nonce_bits}")
        self.nonce_bits = nonce_bits
        self.owner = owner
        self.ops = OperationCounter()
        self._used_nonces: Dict[bytes, int] = {}
        self._nonce_floor = 0

    # -- helpers --------------------------------------------------------

    @property
    def secret_bytes(self) -> int:
        return (self.secret_bits + 7) // 8

    def mask_secret(self, secret: bytes) -> bytes:
        """Clear the bits above t in the leading byte"""
        spare = 8 * self.secret_bytes - self.secret_bits
        if not spare:
            return secret
        return bytes([secret[0] & (0xFF >> spare)]) + secret[1:]

    @property
    def outstanding_nonces(self) -> int:
        return len(self._used_nonces)

    def nonce_for(self, epoch: int, scope: str) -> bytes:
        """r = H(epoch || scope) truncated to l_r bits"""
        digest = self.hash.digest(struct.pack('>Q', epoch), scope.encode('utf-8'))
        return digest[:self.nonce_bits // 8]

    def _truncate_symbol(self, digest: bytes) -> FieldElem:
        value = int.from_bytes(digest, 'big')
        return value >> (8 * len(digest) - self.field.m)

    # -- operations -----------------------------------------------------

    def derive_symbol(self, seed: Union[SeedKey, bytes], r: bytes) -> FieldElem:
        """c_j = first m bits of H(s || r)"""
        secret = seed.s if isinstance(seed, SeedKey) else seed
        self.ops.add('C_H')
        return self._truncate_symbol(self.hash.digest(secret, r))

    def kdf_expand(self, raw: FieldElem, r: bytes, node: str) -> bytes:
        """Fixed-length cipher key from the m-bit symbol"""
        hkdf = HKDF(algorithm=hashes.SHA256(), length=EXPANDED_KEY_BYTES, salt=r,
                    info=b'gkm-node|' + node.encode('utf-8'))
        return hkdf.derive(raw.to_bytes(4, 'big'))

    def retire_nonces(self, floor: int) -> None:
        """Forget nonces of epochs below floor; those epochs can no longer generate"""
        self._nonce_floor = max(self._nonce_floor, floor)
        for r in [r for r, e in self._used_nonces.items() if e < self._nonce_floor]:
            del self._used_nonces[r]

    def sn_generate_key(self, participants: Sequence[Tuple[int, Union[SeedKey, bytes]]], r: bytes,
                        target_node: str = '', epoch: int = 0,
                        generations: Sequence[int] = ()) -> Tuple[SessionKey, RekeyBroadcast]:
        """Controller side: solve for m_1 over the participants' symbols"""
        if not participants:
            raise ProtocolError("at least one participant is required")
        points = [j for j, _ in participants]
        if len(set(points)) != len(points):
            raise ProtocolError(f"duplicate participant positions {points}")
        if generations and len(generations) != len(points):
            raise ProtocolError(f"{len(generations)} generations for {len(points)} participants")
        if epoch < self._nonce_floor:
            raise FreshnessViolation(f"epoch {epoch} already retired by {self.owner or 'controller'}")
        if r in self._used_nonces:
            raise FreshnessViolation(f"nonce reused by {self.owner or 'controller'}")
        self._used_nonces[r] = epoch

        values = [self.derive_symbol(secret, r) for _, secret in participants]
        message = self.field.solve(points, values)
        self.ops.add('C_M')
        raw = message[0]
        key = SessionKey(raw=raw, expanded=self.kdf_expand(raw, r, target_node), epoch=epoch)
        broadcast = RekeyBroadcast(target_node=target_node, r=r, public_symbols=tuple(message[1:]),
                                   epoch=epoch, points=tuple(points),
                                   generations=tuple(generations))
        return key, broadcast

    def member_recover_key(self, seed: SeedKey, b: RekeyBroadcast) -> SessionKey:
        """Member side: m_1 = c_j xor sum_{k>=2} m_k j^(k-1)"""
        c_j = self.derive_symbol(seed, b.r)
        raw = c_j
        if b.public_symbols:
            raw ^= self.field.evaluate((0,) + tuple(b.public_symbols), seed.j)
        self.ops.add('C_M')
        return SessionKey(raw=raw, expanded=self.kdf_expand(raw, b.r, b.target_node), epoch=b.epoch)

    def refresh_key(self, key: SessionKey, r: bytes, node: str, epoch: int) -> SessionKey:
        """One-way successor of a key; holders of the old key can compute it"""
        self.ops.add('C_H')
        hkdf = HKDF(algorithm=hashes.SHA256(), length=EXPANDED_KEY_BYTES, salt=r,
                    info=b'gkm-refresh|' + node.encode('utf-8'))
        expanded = hkdf.derive(key.expanded)
        return SessionKey(raw=self._truncate_symbol(expanded), expanded=expanded, epoch=epoch)

    def seal_key(self, sealing: SessionKey, payload: SessionKey, sealing_node: str = '',
                 payload_node: str = '', refresh_nonce: Optional[bytes] = None) -> SealedKeyMsg:
        header = sealed_header((sealing_node, payload_node, payload.epoch, sealing.epoch, refresh_nonce))
        self.ops.add('C_E')
        ciphertext = self.cipher.seal(sealing.expanded, header, encode_session_key(payload))
        return SealedKeyMsg(sealing_key_node=sealing_node, payload_key_node=payload_node,
                            ciphertext=ciphertext, epoch=payload.epoch,
                            sealing_epoch=sealing.epoch, refresh_nonce=refresh_nonce)

    def open_key(self, sealing: SessionKey, msg: SealedKeyMsg) -> SessionKey:
        if sealing.epoch != msg.sealing_epoch:
            raise AuthFailure(f"sealing key epoch {sealing.epoch} != {msg.sealing_epoch}")
        header = sealed_header((msg.sealing_key_node, msg.payload_key_node, msg.epoch,
                                msg.sealing_epoch, msg.refresh_nonce))
        self.ops.add('C_D')
        plaintext = self.cipher.open(sealing.expanded, header, msg.ciphertext)
        try:
            key = decode_session_key(plaintext)
        except (ProtocolError, UnicodeDecodeError, ValueError) as e:
            raise AuthFailure("sealed payload does not decode") from e
        if key.epoch != msg.epoch:
            raise AuthFailure("payload epoch does not match header")
        return key

    def try_open(self, sealing: SessionKey, msg: SealedKeyMsg) -> Optional[SessionKey]:
        """Adversary helper: ignores epoch labels, None on failure"""
        relabelled = SessionKey(sealing.raw, sealing.expanded, msg.sealing_epoch)
        try:
            return self.open_key(relabelled, msg)
        except AuthFailure:
            return None


def find_duplicate_keys(keys: Iterable[SessionKey],
                        seen: Optional[Dict[bytes, SessionKey]] = None) -> List[SessionKey]:
    """Keys whose expanded form was already seen (key-independence checks).

    Pass seen to carry the index across calls; it is updated in place.
    """
    seen = {} if seen is None else seen
    duplicates = []
    for key in keys:
        if key.expanded in seen:
            duplicates.append(key)
        seen[key.expanded] = key
    return duplicates
