"""Three-party dataflow that hands S to the selector without exposing any alpha_n.

Clients seal their label distributions under the selector's public key, the
server combines sealed vectors into sealed inner products, and only the
selector, holding the private key, unseals the matrix.

:class:`MockHomomorphicBackend` reproduces this dataflow with rational
plaintexts masked by a key-derived keystream. It enforces who may unseal
what; it is not encryption and gives no cryptographic guarantee.
"""
from __future__ import annotations

import hashlib
import json
import secrets
import struct
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .core import ClientRecord
from .exceptions import AbsentWitness, PrivacyViolation, ProtocolError
from .qcid import InnerProductMatrix

BACKEND_TAG = "mock-he-v1"


@dataclass(frozen=True)
class PublicKey:
    material: bytes

    @property
    def fingerprint(self) -> str:
        return hashlib.sha256(b"fp" + self.material).hexdigest()[:16]


@dataclass(frozen=True)
class PrivateKey:
    secret: bytes = field(repr=False)

    def public_key(self) -> PublicKey:
        return PublicKey(hashlib.sha256(b"pk" + self.secret).digest())


@dataclass(frozen=True)
class SealedVector:
    """Opaque ciphertext of a vector (or, with ``length == 1``, a scalar)."""

    payload: bytes = field(repr=False)
    backend: str
    fingerprint: str
    length: int

    def to_bytes(self) -> bytes:
        """Length-prefixed frame: 4-byte little-endian length, then the body."""
        header = json.dumps({"backend": self.backend, "fingerprint": self.fingerprint,
                             "length": self.length}).encode()
        body = struct.pack("<I", len(header)) + header + self.payload
        return struct.pack("<I", len(body)) + body

    @classmethod
    def from_bytes(cls, frame: bytes) -> "SealedVector":
        if len(frame) < 4:
            raise ProtocolError("truncated frame")
        (size,) = struct.unpack("<I", frame[:4])
        body = frame[4:]
        if len(body) != size:
            raise ProtocolError(f"frame announces {size} bytes, carries {len(body)}")
        (hsize,) = struct.unpack("<I", body[:4])
        header = json.loads(body[4:4 + hsize])
        return cls(body[4 + hsize:], header["backend"], header["fingerprint"], header["length"])


def _keystream(material: bytes, nonce: bytes, n: int) -> bytes:
    out = bytearray()
    counter = 0
    while len(out) < n:
        out.extend(hashlib.sha256(material + nonce + counter.to_bytes(8, "little")).digest())
        counter += 1
    return bytes(out[:n])


def _xor(a: bytes, b: bytes) -> bytes:
    return bytes(x ^ y for x, y in zip(a, b))


class MockHomomorphicBackend:
    """Stand-in for an FHE library with the seal / combine / unseal contract."""

    tag = BACKEND_TAG

    def keygen(self) -> tuple[PublicKey, PrivateKey]:
        private = PrivateKey(secrets.token_bytes(32))
        return private.public_key(), private

    def _mask(self, key: PublicKey, values: Sequence[Fraction]) -> bytes:
        plain = json.dumps([[v.numerator, v.denominator] for v in values]).encode()
        nonce = secrets.token_bytes(16)
        return nonce + _xor(plain, _keystream(key.material, nonce, len(plain)))

    def _unmask(self, key: PublicKey, payload: bytes) -> list[Fraction]:
        nonce, body = payload[:16], payload[16:]
        plain = _xor(body, _keystream(key.material, nonce, len(body)))
        return [Fraction(n, d) for n, d in json.loads(plain)]

    def _check(self, sealed: SealedVector, key: PublicKey):
        if sealed.backend != self.tag:
            raise ProtocolError(f"ciphertext from backend {sealed.backend!r}, expected {self.tag!r}")
        if sealed.fingerprint != key.fingerprint:
            raise ProtocolError("ciphertext sealed under a different key")

    def seal(self, vector, key: PublicKey) -> SealedVector:
        values = [Fraction(v) for v in vector]
        return SealedVector(self._mask(key, values), self.tag, key.fingerprint, len(values))

    def combine_inner_product(self, a: SealedVector, b: SealedVector, key: PublicKey) -> SealedVector:
        """Sealed ``a . b``; the caller never sees either operand."""
        self._check(a, key)
        self._check(b, key)
        if a.length != b.length:
            raise ProtocolError("operand lengths differ")
        dot = sum(x * y for x, y in zip(self._unmask(key, a.payload), self._unmask(key, b.payload)))
        return SealedVector(self._mask(key, [Fraction(dot)]), self.tag, key.fingerprint, 1)

    def unseal(self, sealed: SealedVector, private: PrivateKey) -> list[Fraction]:
        key = private.public_key()
        self._check(sealed, key)
        return self._unmask(key, sealed.payload)


@dataclass
class PartyView:
    """Append-only log of every plaintext value one party has observed."""

    role: str
    ledger: list = field(default_factory=list)

    def observe(self, kind: str, owner, value) -> None:
        self.ledger.append((kind, owner, value))

    def kinds(self) -> set:
        return {kind for kind, _, _ in self.ledger}

    def entries(self, kind: str) -> list:
        return [(owner, value) for k, owner, value in self.ledger if k == kind]


def audit_views(views: dict) -> None:
    """Raise :class:`PrivacyViolation` if any party saw more than its role allows."""
    for name, view in views.items():
        if view.role == "server" and view.kinds() & {"alpha", "s_entry"}:
            raise PrivacyViolation("server observed plaintext")
        if view.role == "selector" and "alpha" in view.kinds():
            raise PrivacyViolation("selector observed a label distribution")
        if view.role == "client":
            if "s_entry" in view.kinds():
                raise PrivacyViolation(f"{name} observed an inner product")
            if any(owner != name for owner, _ in view.entries("alpha")):
                raise PrivacyViolation(f"{name} observed another client's distribution")


@dataclass
class ProtocolResult:
    S: InnerProductMatrix
    views: dict
    wire_bytes: int


def run_protocol(clients: Sequence[ClientRecord], backend=None) -> ProtocolResult:
    """Deliver S to the selector; every message crosses as a serialized frame."""
    backend = backend or MockHomomorphicBackend()
    clients = sorted(clients, key=lambda c: c.id)
    n_classes = clients[0].distribution.n_classes
    selector = PartyView("selector")
    server = PartyView("server")
    views = {"selector": selector, "server": server}

    public, private = backend.keygen()
    inbox = []
    for c in clients:
        name = f"client{c.id}"
        view = PartyView("client")
        view.observe("alpha", name, tuple(c.distribution.proportions))
        views[name] = view
        inbox.append(backend.seal(c.distribution.proportions, public).to_bytes())

    received = [SealedVector.from_bytes(frame) for frame in inbox]
    for frame in received:
        if frame.backend != backend.tag:
            raise ProtocolError(f"server received a {frame.backend!r} ciphertext")
        server.observe("ciphertext", None, frame.fingerprint)
    n = len(received)
    sealed_S = [[None] * n for _ in range(n)]
    for i in range(n):
        for j in range(i, n):
            sealed = backend.combine_inner_product(received[i], received[j], public)
            sealed_S[i][j] = sealed_S[j][i] = sealed.to_bytes()

    wire = sum(map(len, inbox)) + sum(len(f) for row in sealed_S for f in row)
    rows = []
    for i in range(n):
        row = []
        for j in range(n):
            (value,) = backend.unseal(SealedVector.from_bytes(sealed_S[i][j]), private)
            selector.observe("s_entry", (i, j), value)
            row.append(value)
        rows.append(row)
    audit_views(views)
    return ProtocolResult(InnerProductMatrix(rows, n_classes), views, wire)


@dataclass(frozen=True)
class NonIdentifiabilityWitness:
    original: np.ndarray
    alternative: np.ndarray
    permutation: tuple
    max_error: float


def check_nonidentifiability(A, S=None, tol: float = 1e-12) -> NonIdentifiabilityWitness:
    """A second distribution matrix with the same Gram matrix as ``A``.

    Swaps the first pair of classes whose columns differ; any column
    permutation is orthogonal, so ``A' A'^T = A A^T``.
    """
    A = np.array([[float(v) for v in row] for row in A], dtype=np.float64)
    S = A @ A.T if S is None else (S.to_array() if isinstance(S, InnerProductMatrix) else np.asarray(S, float))
    n_classes = A.shape[1]
    for i in range(n_classes):
        for j in range(i + 1, n_classes):
            if not np.array_equal(A[:, i], A[:, j]):
                perm = list(range(n_classes))
                perm[i], perm[j] = j, i
                alt = A[:, perm]
                err = float(np.max(np.abs(alt @ alt.T - S)))
                if err > tol:
                    raise ProtocolError(f"permuted matrix misses S by {err:.3g}")
                return NonIdentifiabilityWitness(A, alt, tuple(perm), err)
    raise AbsentWitness("every column permutation leaves the distribution matrix unchanged")
