import hashlib
import os
import struct
import zlib
from typing import Any, Dict, Tuple

from src.core.errors import FormatError

CHECKPOINT_MAGIC = b"DMSC"
FEATURES_MAGIC = b"DMSF"


def get_file_kind(file_path: str) -> str:
    """Determine the artefact kind from its leading magic bytes"""
    with open(file_path, "rb") as f:
        magic = f.read(4)
    kinds = {
        CHECKPOINT_MAGIC: "checkpoint",
        FEATURES_MAGIC: "features",
    }
    return kinds.get(magic, "unknown")


def ensure_directory_exists(directory_path: str) -> None:
    """Ensure that a directory exists, creating it if necessary"""
    if directory_path:
        os.makedirs(directory_path, exist_ok=True)


def sha256_file(file_path: str) -> str:
    digest = hashlib.sha256()
    with open(file_path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def get_file_info(file_path: str) -> Dict[str, Any]:
    """Get basic file information"""
    return {
        "file_path": file_path,
        "file_name": os.path.basename(file_path),
        "kind": get_file_kind(file_path),
        "file_size": os.path.getsize(file_path),
        "sha256": sha256_file(file_path),
    }


def write_bytes_atomic(file_path: str, payload: bytes) -> None:
    """Write a file through a temporary sibling so readers never see a partial file"""
    ensure_directory_exists(os.path.dirname(file_path))
    tmp_path = f"{file_path}.tmp"
    with open(tmp_path, "wb") as f:
        f.write(payload)
    os.replace(tmp_path, file_path)


def with_crc32(payload: bytes) -> bytes:
    return payload + struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF)


class BinaryReader:
    """Sequential little-endian reader that reports byte offsets on failure"""

    def __init__(self, data: bytes, what: str):
        self.data = data
        self.what = what
        self.offset = 0

    @property
    def remaining(self) -> int:
        return len(self.data) - self.offset

    def read(self, size: int, field: str) -> bytes:
        if size > self.remaining:
            raise FormatError(
                f"truncated {self.what}: {field} needs {size} bytes, {self.remaining} available",
                self.offset,
            )
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str, field: str) -> Tuple:
        return struct.unpack("<" + fmt, self.read(struct.calcsize("<" + fmt), field))

    def u32(self, field: str) -> int:
        return self.unpack("I", field)[0]

    def i32(self, field: str) -> int:
        return self.unpack("i", field)[0]

    def text(self, field: str) -> str:
        length = self.u32(f"{field} length")
        start = self.offset
        raw = self.read(length, field)
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as e:
            raise FormatError(f"{field} is not valid UTF-8: {e}", start)

    def expect_magic(self, magic: bytes) -> None:
        found = self.read(len(magic), "magic")
        if found != magic:
            raise FormatError(f"bad magic {found!r}, expected {magic!r} for {self.what}", 0)

    def verify_crc32(self) -> None:
        """Check the trailing CRC32 against everything read so far; must be the last field"""
        body_end = self.offset
        stored = self.u32("crc32")
        actual = zlib.crc32(self.data[:body_end]) & 0xFFFFFFFF
        if stored != actual:
            raise FormatError(f"checksum mismatch in {self.what}: stored {stored:08x}, computed {actual:08x}", body_end)
        if self.remaining:
            raise FormatError(f"{self.remaining} unexpected trailing bytes in {self.what}", self.offset)
