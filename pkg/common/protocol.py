# Implements the "Length-Prefixed Framing Protocol" for binary artifacts.
# Frame Format:
# [ 4-byte Header ] [ N-byte Body ]
# - Header: A 4-byte unsigned integer ('!I') in network byte order
#             (big-endian), specifying the length of the body.
# - Body: N bytes of data (a canonical encoding or a UTF-8 JSON string).
#
# Proof bundles, data bundles, key files and chain files are all sequences
# of frames. ByteReader is the cursor every canonical decoder reads through.

import struct
import logging

from common import config
from common.errors import EncodingError

# Constants

# Header is 4 bytes, unsigned int, network byte order
HEADER_FORMAT = '!I'
HEADER_LENGTH = struct.calcsize(HEADER_FORMAT)

MAX_FRAME_SIZE = config.MAX_FRAME_SIZE

logger = logging.getLogger(__name__)


# Public API Functions

def frame(body: bytes) -> bytes:
    """
    Frames one body using the length-prefixed protocol.

    1. Checks body size.
    2. Packs the length into a 4-byte header.
    3. Returns header + body.
    """
    length = len(body)
    if length > MAX_FRAME_SIZE:
        raise EncodingError(f"Frame size ({length} bytes) exceeds limit ({MAX_FRAME_SIZE} bytes)")
    return struct.pack(HEADER_FORMAT, length) + body


def pack_frames(bodies: list[bytes]) -> bytes:
    """Concatenates framed bodies, prefixed by a 4-byte frame count."""
    return struct.pack(HEADER_FORMAT, len(bodies)) + b''.join(frame(b) for b in bodies)


def read_frame(data: bytes, offset: int) -> tuple[bytes, int]:
    """
    Reads one frame starting at 'offset'.

    Returns the body and the offset just past it.
    """
    if offset + HEADER_LENGTH > len(data):
        raise EncodingError(f"Truncated frame header at offset {offset}")

    body_length = struct.unpack_from(HEADER_FORMAT, data, offset)[0]
    if body_length > MAX_FRAME_SIZE:
        logger.error(f"Invalid frame length received: {body_length}.")
        raise EncodingError(f"Frame length {body_length} exceeds limit")

    start = offset + HEADER_LENGTH
    end = start + body_length
    if end > len(data):
        raise EncodingError(f"Truncated frame body: expected {body_length} bytes, "
                            f"{len(data) - start} available")
    return data[start:end], end


def unpack_frames(data: bytes, expected: int | None = None) -> list[bytes]:
    """
    Splits bytes produced by pack_frames back into bodies.
    Trailing bytes and count mismatches are protocol violations.
    """
    if len(data) < HEADER_LENGTH:
        raise EncodingError("Missing frame count")
    count = struct.unpack_from(HEADER_FORMAT, data, 0)[0]
    if expected is not None and count != expected:
        raise EncodingError(f"Expected {expected} frames, found {count}")

    bodies = []
    offset = HEADER_LENGTH
    for _ in range(count):
        body, offset = read_frame(data, offset)
        bodies.append(body)
    if offset != len(data):
        raise EncodingError(f"{len(data) - offset} trailing bytes after {count} frames")
    return bodies


class ByteReader:
    """Cursor over a canonical encoding. Every read is bounds-checked."""

    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def read(self, length: int) -> bytes:
        end = self.offset + length
        if end > len(self.data):
            raise EncodingError(f"Truncated input: wanted {length} bytes at offset {self.offset}")
        chunk = self.data[self.offset:end]
        self.offset = end
        return chunk

    def u8(self) -> int:
        return self.read(1)[0]

    def u32(self) -> int:
        return struct.unpack('!I', self.read(4))[0]

    def u64(self) -> int:
        return struct.unpack('!Q', self.read(8))[0]

    def finish(self):
        """Raises if any bytes are left unread."""
        if self.offset != len(self.data):
            raise EncodingError(f"{len(self.data) - self.offset} trailing bytes")
