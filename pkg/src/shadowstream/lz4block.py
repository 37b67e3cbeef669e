"""LZ4 block-format compression.

Uses the system liblz4 through ctypes when present (the fast path) and
falls back to a pure-Python encoder/decoder otherwise. Both sides speak
the standard block format, so streams are interchangeable; the test suite
cross-validates one against the other. Framing (uncompressed length,
dimensions) travels in packet metadata, never inside the stream.
"""

from __future__ import annotations

import ctypes
import ctypes.util

from .errors import WireDecodeError

_MIN_MATCH = 4
_MF_LIMIT = 12      # a match may not start within the last 12 bytes
_LAST_LITERALS = 5  # the last 5 bytes are always literals
_MAX_OFFSET = 65535
_HASH_LOG = 16


def compress_bound(n: int) -> int:
    """Worst-case compressed size for an n-byte input (format guarantee)."""
    return n + n // 255 + 16


def _load_native():
    for name in ("liblz4.so.1", "liblz4.so", ctypes.util.find_library("lz4")):
        if not name:
            continue
        try:
            lib = ctypes.CDLL(name)
        except OSError:
            continue
        lib.LZ4_compress_default.argtypes = [
            ctypes.c_char_p, ctypes.c_char_p, ctypes.c_int, ctypes.c_int]
        lib.LZ4_compress_default.restype = ctypes.c_int
        lib.LZ4_decompress_safe.argtypes = [
            ctypes.c_char_p, ctypes.c_char_p, ctypes.c_int, ctypes.c_int]
        lib.LZ4_decompress_safe.restype = ctypes.c_int
        return lib
    return None


_native = _load_native()


def native_available() -> bool:
    return _native is not None


def _compress_native(data: bytes) -> bytes:
    cap = compress_bound(len(data))
    dst = ctypes.create_string_buffer(cap)
    n = _native.LZ4_compress_default(data, dst, len(data), cap)
    if n <= 0:
        raise RuntimeError("liblz4 compression failed")
    return dst.raw[:n]


def _decompress_native(data: bytes, out_len: int) -> bytes:
    dst = ctypes.create_string_buffer(out_len) if out_len else ctypes.create_string_buffer(1)
    n = _native.LZ4_decompress_safe(data, dst, len(data), out_len)
    if n < 0:
        raise WireDecodeError("corrupt LZ4 block")
    if n != out_len:
        raise WireDecodeError(f"LZ4 block decoded to {n} bytes, expected {out_len}")
    return dst.raw[:out_len]


def _hash4(word: int) -> int:
    return ((word * 2654435761) & 0xFFFFFFFF) >> (32 - _HASH_LOG)


def _compress_pure(data: bytes) -> bytes:
    n = len(data)
    out = bytearray()

    def emit(lit_start: int, lit_end: int, offset: int | None, mlen: int) -> None:
        ll = lit_end - lit_start
        token_l = 15 if ll >= 15 else ll
        token_m = 0 if offset is None else min(mlen - _MIN_MATCH, 15)
        out.append((token_l << 4) | token_m)
        if ll >= 15:
            rem = ll - 15
            while rem >= 255:
                out.append(255)
                rem -= 255
            out.append(rem)
        out += data[lit_start:lit_end]
        if offset is not None:
            out += offset.to_bytes(2, "little")
            extra = mlen - _MIN_MATCH
            if extra >= 15:
                rem = extra - 15
                while rem >= 255:
                    out.append(255)
                    rem -= 255
                out.append(rem)

    if n == 0:
        return b"\x00"

    table = [-1] * (1 << _HASH_LOG)
    anchor = 0
    ip = 0
    match_limit = n - _MF_LIMIT          # last legal match start
    copy_limit = n - _LAST_LITERALS      # matches may not extend past here
    while ip <= match_limit:
        word = int.from_bytes(data[ip:ip + 4], "little")
        h = _hash4(word)
        cand = table[h]
        table[h] = ip
        if cand >= 0 and ip - cand <= _MAX_OFFSET and data[cand:cand + 4] == data[ip:ip + 4]:
            mlen = _MIN_MATCH
            while ip + mlen < copy_limit and data[cand + mlen] == data[ip + mlen]:
                mlen += 1
            emit(anchor, ip, ip - cand, mlen)
            ip += mlen
            anchor = ip
        else:
            ip += 1
    emit(anchor, n, None, 0)
    return bytes(out)


def _decompress_pure(data: bytes, out_len: int) -> bytes:
    dst = bytearray(out_len)
    src = memoryview(data)
    n = len(data)
    ip = 0
    op = 0

    def varlen(base: int, ip: int) -> tuple[int, int]:
        length = base
        while True:
            if ip >= n:
                raise WireDecodeError("truncated LZ4 block (length run)")
            b = src[ip]
            ip += 1
            length += b
            if b != 255:
                break
        return length, ip

    while True:
        if ip >= n:
            raise WireDecodeError("truncated LZ4 block (missing token)")
        token = src[ip]
        ip += 1
        ll = token >> 4
        if ll == 15:
            ll, ip = varlen(15, ip)
        if ip + ll > n:
            raise WireDecodeError("truncated LZ4 block (literals)")
        if op + ll > out_len:
            raise WireDecodeError("LZ4 block overflows expected length")
        dst[op:op + ll] = src[ip:ip + ll]
        ip += ll
        op += ll
        if ip == n:
            if op != out_len:
                raise WireDecodeError(f"LZ4 block decoded to {op} bytes, expected {out_len}")
            return bytes(dst)
        if ip + 2 > n:
            raise WireDecodeError("truncated LZ4 block (offset)")
        offset = src[ip] | (src[ip + 1] << 8)
        ip += 2
        if offset == 0 or offset > op:
            raise WireDecodeError("corrupt LZ4 block (bad match offset)")
        mlen = (token & 15) + _MIN_MATCH
        if (token & 15) == 15:
            mlen, ip = varlen(mlen, ip)
        if op + mlen > out_len:
            raise WireDecodeError("LZ4 block overflows expected length")
        if offset >= mlen:
            dst[op:op + mlen] = dst[op - offset:op - offset + mlen]
            op += mlen
        else:
            for _ in range(mlen):  # overlapping copy (run encoding)
                dst[op] = dst[op - offset]
                op += 1


def compress_block(data: bytes) -> bytes:
    """LZ4 block compression of raw bytes."""
    if _native is not None:
        return _compress_native(data)
    return _compress_pure(data)


def decompress_block(data: bytes, out_len: int) -> bytes:
    """Decode an LZ4 block with a known decompressed length. Raises
    WireDecodeError on corruption or length mismatch."""
    if _native is not None:
        return _decompress_native(data, out_len)
    return _decompress_pure(data, out_len)
