"""Canonical Huffman tables and the entropy-coded bit streams around them."""

from __future__ import annotations


class HuffmanTable:
    """Canonical code built from a DHT (code-length counts, symbol list)."""

    def __init__(self, bits, values):
        bits = [int(b) for b in bits]
        values = [int(v) for v in values]
        if len(bits) != 16:
            raise ValueError("Huffman table needs 16 code-length counts")
        if sum(bits) != len(values):
            raise ValueError(f"Huffman table declares {sum(bits)} symbols but lists {len(values)}")
        self.bits = tuple(bits)
        self.values = tuple(values)
        self.codes = {}
        code = 0
        k = 0
        for length in range(1, 17):
            for _ in range(bits[length - 1]):
                if code >= 1 << length:
                    raise ValueError("Huffman code lengths overflow")
                self.codes[values[k]] = (code, length)
                code += 1
                k += 1
            code <<= 1
        self._lut = None

    def lookup(self):
        """Tables indexed by the next 16 stream bits: (code length, symbol)."""
        if self._lut is None:
            lengths = [0] * 65536
            symbols = [0] * 65536
            for sym, (code, length) in self.codes.items():
                lo = code << (16 - length)
                hi = (code + 1) << (16 - length)
                if hi > 65536:
                    raise ValueError("Huffman code does not fit in 16 bits")
                lengths[lo:hi] = [length] * (hi - lo)
                symbols[lo:hi] = [sym] * (hi - lo)
            self._lut = (lengths, symbols)
        return self._lut


class BitWriter:
    """MSB-first bit packer with 0xFF byte stuffing."""

    def __init__(self):
        self.out = bytearray()
        self._acc = 0
        self._n = 0

    def write(self, value: int, nbits: int) -> None:
        if nbits == 0:
            return
        self._acc = (self._acc << nbits) | (value & ((1 << nbits) - 1))
        self._n += nbits
        while self._n >= 8:
            self._n -= 8
            byte = (self._acc >> self._n) & 0xFF
            self.out.append(byte)
            if byte == 0xFF:
                self.out.append(0x00)
        self._acc &= (1 << self._n) - 1

    def flush(self) -> bytes:
        if self._n:
            self.write((1 << (8 - self._n)) - 1, 8 - self._n)
        return bytes(self.out)


class BitReader:
    """Reads an unstuffed entropy segment; running past its end raises ``EOFError``."""

    def __init__(self, data: bytes):
        self.total = 8 * len(data)
        self.data = bytes(data) + b"\xff\xff\xff"
        self.pos = 0

    def peek16(self) -> int:
        byte = self.pos >> 3
        v = int.from_bytes(self.data[byte:byte + 3], "big")
        return (v >> (8 - (self.pos & 7))) & 0xFFFF

    def decode(self, table: HuffmanTable) -> int:
        lengths, symbols = table.lookup()
        v = self.peek16()
        n = lengths[v]
        if n == 0:
            if self.pos + 16 > self.total:
                raise EOFError("entropy-coded data ends inside a Huffman code")
            raise ValueError(f"invalid Huffman code at bit {self.pos}")
        self.pos += n
        if self.pos > self.total:
            raise EOFError("entropy-coded data ends inside a Huffman code")
        return symbols[v]

    def receive(self, nbits: int) -> int:
        if nbits == 0:
            return 0
        v = self.peek16() >> (16 - nbits)
        self.pos += nbits
        if self.pos > self.total:
            raise EOFError("entropy-coded data ends inside a coefficient")
        return v


def extend(v: int, size: int) -> int:
    """Signed coefficient from its ``size``-bit magnitude code."""
    if size == 0:
        return 0
    return v if v >= 1 << (size - 1) else v - (1 << size) + 1


def magnitude_code(v: int):
    """(size category, appended bits) for a signed coefficient."""
    if v == 0:
        return 0, 0
    size = abs(v).bit_length()
    return size, (v if v > 0 else v + (1 << size) - 1)
