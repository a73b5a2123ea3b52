"""Local content-addressed store with an append-only latest-pointer index.

Objects live under ``<root>/objects/<sha256 hex>``; the index is
``<root>/index.log``, one JSON line per ``set_latest`` call. Content ids are
SHA-256 hex digests of the stored bytes and are re-verified on every read.

:class:`ProfileVault` layers deterministic authenticated encryption
(AES-SIV) on top so equal profile snapshots map to equal content ids.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
import threading
from dataclasses import dataclass
from pathlib import Path

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESSIV

from frba.profile import UserProfile, profile_from_json, profile_to_json

DIGEST = "sha256"


class StoreError(Exception):
    pass


class NotFound(StoreError, KeyError):
    pass


class IntegrityError(StoreError):
    """Stored bytes no longer hash to their content id."""


@dataclass(frozen=True)
class ContentId:
    hash: str

    def __post_init__(self):
        h = self.hash.lower()
        if len(h) != 64 or any(c not in "0123456789abcdef" for c in h):
            raise ValueError(f"not a {DIGEST} hex digest: {self.hash!r}")
        object.__setattr__(self, "hash", h)

    @classmethod
    def of(cls, data: bytes) -> "ContentId":
        return cls(hashlib.sha256(data).hexdigest())

    def __str__(self) -> str:
        return self.hash


class ContentStore:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.objects = self.root / "objects"
        self.index_path = self.root / "index.log"
        self.objects.mkdir(parents=True, exist_ok=True)
        self._index_lock = threading.Lock()

    def _path(self, cid: ContentId) -> Path:
        return self.objects / cid.hash

    def put(self, data: bytes) -> ContentId:
        cid = ContentId.of(data)
        path = self._path(cid)
        if path.exists():
            return cid
        try:
            fd, tmp = tempfile.mkstemp(dir=self.objects, prefix=".tmp-")
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, path)
        except OSError as exc:
            raise StoreError(f"cannot write object {cid}: {exc}") from exc
        return cid

    def get(self, cid: ContentId | str) -> bytes:
        cid = cid if isinstance(cid, ContentId) else ContentId(cid)
        try:
            data = self._path(cid).read_bytes()
        except FileNotFoundError:
            raise NotFound(f"unknown content id {cid}") from None
        if ContentId.of(data) != cid:
            raise IntegrityError(f"digest mismatch for {cid}")
        return data

    def __contains__(self, cid) -> bool:
        cid = cid if isinstance(cid, ContentId) else ContentId(cid)
        return self._path(cid).exists()

    # -- index --

    def set_latest(self, user_id: str, cid: ContentId) -> None:
        line = json.dumps({"user_id": user_id, "cid": cid.hash}, sort_keys=True) + "\n"
        with self._index_lock:
            with open(self.index_path, "a", encoding="utf-8") as fh:
                fh.write(line)
                fh.flush()
                os.fsync(fh.fileno())

    def history(self, user_id: str | None = None) -> list[tuple[str, ContentId]]:
        if not self.index_path.exists():
            return []
        out = []
        with open(self.index_path, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                entry = json.loads(line)
                if user_id is None or entry["user_id"] == user_id:
                    out.append((entry["user_id"], ContentId(entry["cid"])))
        return out

    def get_latest(self, user_id: str) -> ContentId:
        entries = self.history(user_id)
        if not entries:
            raise NotFound(f"no entries for user {user_id!r}")
        return entries[-1][1]


class ProfileVault:
    """Encrypted profile snapshots; ``keys`` maps user_id -> 32/48/64-byte AES-SIV key."""

    def __init__(self, store: ContentStore, keys: dict[str, bytes]):
        self.store = store
        self.keys = keys

    @staticmethod
    def generate_key() -> bytes:
        return AESSIV.generate_key(512)

    def _cipher(self, user_id: str) -> AESSIV:
        try:
            return AESSIV(self.keys[user_id])
        except KeyError:
            raise StoreError(f"no key configured for user {user_id!r}") from None

    def save(self, profile: UserProfile) -> ContentId:
        plaintext = profile_to_json(profile).encode("utf-8")
        blob = self._cipher(profile.user_id).encrypt(plaintext, [profile.user_id.encode()])
        cid = self.store.put(blob)
        self.store.set_latest(profile.user_id, cid)
        return cid

    def load(self, user_id: str, cid: ContentId | None = None) -> UserProfile:
        cid = cid or self.store.get_latest(user_id)
        blob = self.store.get(cid)
        try:
            plaintext = self._cipher(user_id).decrypt(blob, [user_id.encode()])
        except InvalidTag:
            raise IntegrityError(f"authentication failed for {cid}") from None
        return profile_from_json(plaintext.decode("utf-8"))
