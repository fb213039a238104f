"""Baseline sequential grayscale JPEG: JFIF framing, encoder and decoder."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ..field import FormatError, as_gray8, round_half_away
from .dct import fdct8x8, idct8x8
from .huffman import BitReader, BitWriter, HuffmanTable, extend, magnitude_code
from .tables import (
    AC_LUMINANCE_BITS,
    AC_LUMINANCE_VALUES,
    DC_LUMINANCE_BITS,
    DC_LUMINANCE_VALUES,
    UNZIGZAG,
    ZIGZAG,
    scale_quant_table,
)

SOI, EOI, SOS, DQT, DHT, DRI, COM, APP0 = 0xD8, 0xD9, 0xDA, 0xDB, 0xC4, 0xDD, 0xFE, 0xE0
SOF0, SOF1 = 0xC0, 0xC1
# every other SOFn (progressive, lossless, hierarchical, arithmetic)
UNSUPPORTED_SOF = {0xC2, 0xC3, 0xC5, 0xC6, 0xC7, 0xC9, 0xCA, 0xCB, 0xCD, 0xCE, 0xCF}
RST = range(0xD0, 0xD8)
STANDALONE = {SOI, EOI, 0x01, *RST}

DC_TABLE = HuffmanTable(DC_LUMINANCE_BITS, DC_LUMINANCE_VALUES)
AC_TABLE = HuffmanTable(AC_LUMINANCE_BITS, AC_LUMINANCE_VALUES)


class JPEGError(FormatError):
    pass


class MarkerError(JPEGError):
    """Missing or malformed marker segment."""


class UnsupportedModeError(JPEGError):
    """Valid JPEG, but not baseline sequential single-component."""


class TruncatedDataError(JPEGError):
    pass


@dataclass(frozen=True)
class Segment:
    marker: int
    offset: int
    payload: bytes

    @property
    def name(self) -> str:
        return MARKER_NAMES.get(self.marker, f"0xFF{self.marker:02X}")


MARKER_NAMES = {SOI: "SOI", EOI: "EOI", SOS: "SOS", DQT: "DQT", DHT: "DHT", DRI: "DRI",
                COM: "COM", APP0: "APP0", SOF0: "SOF0", SOF1: "SOF1", 0xC2: "SOF2"}


def parse_segments(data: bytes):
    """Split a JPEG byte stream into marker segments.

    The entropy-coded data following SOS is attached to the SOS segment
    (after its header) so payloads tile the whole stream.
    """
    data = bytes(data)
    if data[:2] != b"\xff\xd8":
        raise MarkerError("stream does not start with SOI (FFD8)")
    segments = [Segment(SOI, 0, b"")]
    pos = 2
    n = len(data)
    while True:
        if pos >= n:
            raise TruncatedDataError("stream ends before EOI")
        if data[pos] != 0xFF:
            raise MarkerError(f"expected marker at offset {pos}, found 0x{data[pos]:02X}")
        while pos + 1 < n and data[pos + 1] == 0xFF:
            pos += 1  # fill bytes
        if pos + 1 >= n:
            raise TruncatedDataError("stream ends inside a marker")
        marker = data[pos + 1]
        start = pos
        pos += 2
        if marker == EOI:
            segments.append(Segment(EOI, start, b""))
            return segments
        if marker in STANDALONE:
            if marker in RST:
                raise UnsupportedModeError("restart marker outside entropy-coded data")
            raise MarkerError(f"unexpected standalone marker 0xFF{marker:02X} at offset {start}")
        if pos + 2 > n:
            raise TruncatedDataError(f"segment length missing at offset {start}")
        (length,) = struct.unpack_from(">H", data, pos)
        if length < 2:
            raise MarkerError(f"segment length {length} too small at offset {start}")
        if pos + length > n:
            raise TruncatedDataError(f"segment 0xFF{marker:02X} at offset {start} runs past end of stream")
        payload = data[pos + 2:pos + length]
        pos += length
        if marker == SOS:
            end = _entropy_end(data, pos)
            payload = payload + data[pos:end]
            pos = end
        segments.append(Segment(marker, start, payload))


def _entropy_end(data: bytes, pos: int) -> int:
    n = len(data)
    while True:
        i = data.find(b"\xff", pos)
        if i < 0 or i + 1 >= n:
            raise TruncatedDataError("entropy-coded data not terminated by a marker")
        nxt = data[i + 1]
        if nxt == 0x00:
            pos = i + 2
        elif nxt in RST:
            raise UnsupportedModeError("restart markers are not supported")
        elif nxt == 0xFF:
            pos = i + 1
        else:
            return i


def _unstuff(raw: bytes) -> bytes:
    return raw.replace(b"\xff\x00", b"\xff")


@dataclass(frozen=True)
class FrameInfo:
    width: int
    height: int
    quant: dict
    dc_tables: dict
    ac_tables: dict
    qt_index: int
    dc_index: int
    ac_index: int
    scan_data: bytes


def _read_frame(segments) -> FrameInfo:
    quant, dc_tables, ac_tables = {}, {}, {}
    frame = None
    for seg in segments:
        m, p = seg.marker, seg.payload
        if m in UNSUPPORTED_SOF:
            raise UnsupportedModeError(f"{seg.name} frames are not supported (baseline only)")
        if m == DRI:
            if len(p) < 2:
                raise MarkerError("DRI segment too short")
            if struct.unpack_from(">H", p)[0] != 0:
                raise UnsupportedModeError("restart intervals are not supported")
        elif m == DQT:
            i = 0
            while i < len(p):
                pq, tq = p[i] >> 4, p[i] & 15
                size = 128 if pq else 64
                if i + 1 + size > len(p):
                    raise MarkerError("DQT segment too short")
                fmt = ">64H" if pq else "64B"
                zz = np.array(struct.unpack_from(fmt, p, i + 1), dtype=np.int64)
                quant[tq] = zz[UNZIGZAG]
                i += 1 + size
        elif m == DHT:
            i = 0
            while i < len(p):
                if i + 17 > len(p):
                    raise MarkerError("DHT segment too short")
                tc, th = p[i] >> 4, p[i] & 15
                bits = p[i + 1:i + 17]
                count = sum(bits)
                if i + 17 + count > len(p):
                    raise MarkerError("DHT segment too short")
                try:
                    table = HuffmanTable(bits, p[i + 17:i + 17 + count])
                except ValueError as exc:
                    raise MarkerError(f"bad Huffman table: {exc}") from None
                (ac_tables if tc else dc_tables)[th] = table
                i += 17 + count
        elif m in (SOF0, SOF1):
            if len(p) < 6:
                raise MarkerError("SOF segment too short")
            precision, height, width, ncomp = struct.unpack_from(">BHHB", p)
            if precision != 8:
                raise UnsupportedModeError(f"{precision}-bit samples are not supported")
            if ncomp != 1:
                raise UnsupportedModeError(f"{ncomp}-component images are not supported (grayscale only)")
            if len(p) < 9:
                raise MarkerError("SOF segment too short")
            if height == 0:
                raise UnsupportedModeError("DNL-defined image height is not supported")
            frame = (width, height, p[6], p[8])
        elif m == SOS:
            if frame is None:
                raise MarkerError("SOS before SOF")
            ns = p[0]
            if ns != 1:
                raise UnsupportedModeError(f"scan with {ns} components is not supported")
            header_len = 1 + 2 * ns + 3
            if len(p) < header_len or p[1] != frame[2]:
                raise MarkerError("SOS does not reference the frame component")
            ss, se, a = p[3], p[4], p[5]
            if ss != 0 or se != 63 or a != 0:
                raise UnsupportedModeError("spectral selection / successive approximation not supported")
            return FrameInfo(frame[0], frame[1], quant, dc_tables, ac_tables,
                             frame[3], p[2] >> 4, p[2] & 15, p[header_len:])
    raise MarkerError("no SOF0/SOS found")


class JfifStream:
    """Serialized JPEG stream with a lazily parsed segment view."""

    def __init__(self, data: bytes):
        self.data = bytes(data)

    def __len__(self) -> int:
        return len(self.data)

    def __bytes__(self) -> bytes:
        return self.data

    def __eq__(self, other):
        return isinstance(other, JfifStream) and other.data == self.data

    def __hash__(self):
        return hash(self.data)

    @cached_property
    def segments(self):
        return parse_segments(self.data)

    @cached_property
    def frame(self) -> FrameInfo:
        return _read_frame(self.segments)

    @property
    def width(self) -> int:
        return self.frame.width

    @property
    def height(self) -> int:
        return self.frame.height

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.data)

    @classmethod
    def load(cls, path) -> "JfifStream":
        with open(path, "rb") as fh:
            return cls(fh.read())


def _segment(marker: int, payload: bytes) -> bytes:
    return struct.pack(">BBH", 0xFF, marker, len(payload) + 2) + payload


def _dht(tc: int, th: int, table: HuffmanTable) -> bytes:
    return bytes([tc << 4 | th, *table.bits, *table.values])


def to_blocks(img: np.ndarray) -> np.ndarray:
    """Edge-replicate to multiples of 8 and split into (rows, cols, 8, 8) blocks."""
    h, w = img.shape
    ph, pw = -h % 8, -w % 8
    padded = np.pad(img, ((0, ph), (0, pw)), mode="edge")
    by, bx = padded.shape[0] // 8, padded.shape[1] // 8
    return padded.reshape(by, 8, bx, 8).swapaxes(1, 2)


def quantize_blocks(img, quality: int) -> np.ndarray:
    """Quantized DCT coefficients, shape (nblocks, 64) in natural order, raster block order."""
    q = scale_quant_table(quality)
    blocks = to_blocks(as_gray8(img)).astype(np.float64) - 128.0
    coeffs = fdct8x8(blocks).reshape(-1, 64)
    return round_half_away(coeffs / q).astype(np.int64)


def encode_scan(coeffs: np.ndarray, dc_table=DC_TABLE, ac_table=AC_TABLE) -> bytes:
    """Huffman-code quantized blocks (natural order) into stuffed entropy data."""
    bw = BitWriter()
    write = bw.write
    dc_codes, ac_codes = dc_table.codes, ac_table.codes
    eob = ac_codes[0x00]
    zrl = ac_codes[0xF0]
    pred = 0
    for zz in coeffs[:, ZIGZAG].tolist():
        diff = zz[0] - pred
        pred = zz[0]
        size, bits = magnitude_code(diff)
        write(*dc_codes[size])
        write(bits, size)
        run = 0
        last = 63
        while last > 0 and zz[last] == 0:
            last -= 1
        for k in range(1, last + 1):
            v = zz[k]
            if v == 0:
                run += 1
                continue
            while run > 15:
                write(*zrl)
                run -= 16
            size, bits = magnitude_code(v)
            write(*ac_codes[(run << 4) | size])
            write(bits, size)
            run = 0
        if last < 63:
            write(*eob)
    return bw.flush()


def build_stream(width: int, height: int, qtable: np.ndarray, scan: bytes) -> bytes:
    app0 = b"JFIF\x00" + struct.pack(">BBBHHBB", 1, 1, 0, 1, 1, 0, 0)
    dqt = bytes([0]) + bytes(np.asarray(qtable, dtype=np.int64)[ZIGZAG].astype(np.uint8))
    sof = struct.pack(">BHHB", 8, height, width, 1) + bytes([1, 0x11, 0])
    dht = _dht(0, 0, DC_TABLE) + _dht(1, 0, AC_TABLE)
    sos = bytes([1, 1, 0x00, 0, 63, 0])
    return b"".join([
        b"\xff\xd8",
        _segment(APP0, app0),
        _segment(DQT, dqt),
        _segment(SOF0, sof),
        _segment(DHT, dht),
        _segment(SOS, sos),
        scan,
        b"\xff\xd9",
    ])


def encode(img, quality: int = 75) -> JfifStream:
    """Encode an 8-bit grayscale image as a baseline JFIF stream."""
    img = as_gray8(img)
    if img.shape[0] > 65535 or img.shape[1] > 65535:
        raise ValueError("image dimensions exceed 65535")
    qtable = scale_quant_table(quality)
    scan = encode_scan(quantize_blocks(img, quality))
    return JfifStream(build_stream(img.shape[1], img.shape[0], qtable, scan))


def decode_coefficients(frame: FrameInfo) -> np.ndarray:
    """Entropy-decode the scan into quantized coefficients, (nblocks, 64) natural order."""
    try:
        dc = frame.dc_tables[frame.dc_index]
        ac = frame.ac_tables[frame.ac_index]
    except KeyError:
        raise MarkerError("scan references an undefined Huffman table") from None
    nblocks = ((frame.height + 7) // 8) * ((frame.width + 7) // 8)
    reader = BitReader(_unstuff(frame.scan_data))
    decode, receive = reader.decode, reader.receive
    out = np.zeros((nblocks, 64), dtype=np.int64)
    rows = []
    pred = 0
    try:
        for _ in range(nblocks):
            zz = [0] * 64
            s = decode(dc)
            if s > 11:
                raise JPEGError(f"DC size category {s} out of range")
            pred += extend(receive(s), s)
            zz[0] = pred
            k = 1
            while k < 64:
                rs = decode(ac)
                r, s = rs >> 4, rs & 15
                if s == 0:
                    if r == 15:
                        k += 16
                        continue
                    break
                k += r
                if k > 63:
                    raise JPEGError("AC run exceeds block length")
                zz[k] = extend(receive(s), s)
                k += 1
            rows.append(zz)
    except EOFError as exc:
        raise TruncatedDataError(f"truncated entropy data after {len(rows)} of {nblocks} blocks: {exc}") from None
    except ValueError as exc:
        if isinstance(exc, JPEGError):
            raise
        raise JPEGError(str(exc)) from None
    out[:, ZIGZAG] = np.array(rows, dtype=np.int64).reshape(nblocks, 64)
    return out


def reconstruct_blocks(coeffs: np.ndarray, qtable: np.ndarray, width: int, height: int) -> np.ndarray:
    by, bx = (height + 7) // 8, (width + 7) // 8
    deq = (coeffs * qtable).reshape(by, bx, 8, 8).astype(np.float64)
    pix = idct8x8(deq) + 128.0
    pix = np.clip(round_half_away(pix), 0, 255).astype(np.uint8)
    return pix.swapaxes(1, 2).reshape(by * 8, bx * 8)[:height, :width]


def decode(stream) -> np.ndarray:
    """Decode a baseline grayscale JPEG (``JfifStream`` or bytes) to a uint8 array."""
    s = stream if isinstance(stream, JfifStream) else JfifStream(stream)
    frame = s.frame
    if frame.qt_index not in frame.quant:
        raise MarkerError("frame references an undefined quantization table")
    # make sure the stream terminates properly before spending time on the scan
    if s.segments[-1].marker != EOI:
        raise MarkerError("stream does not end with EOI")
    coeffs = decode_coefficients(frame)
    return reconstruct_blocks(coeffs, frame.quant[frame.qt_index], frame.width, frame.height)
