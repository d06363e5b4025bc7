"""Classic libpcap file parsing down to TCP/UDP header fields.

Only the classic pcap container is handled (pcapng is out of scope), with
either byte order and micro- or nanosecond timestamps, and only Ethernet
link-layer captures. Frames that are not parseable IP packets are skipped
and counted, never fatal; a truncated record header ends the stream with a
distinct error.
"""

from __future__ import annotations

import enum
import ipaddress
import struct
from dataclasses import dataclass

MAGIC_LE_MICROS = 0xA1B2C3D4
MAGIC_BE_MICROS = 0xD4C3B2A1
MAGIC_LE_NANOS = 0xA1B23C4D
MAGIC_BE_NANOS = 0x4D3CB2A1

LINKTYPE_ETHERNET = 1

ETHERTYPE_IPV4 = 0x0800
ETHERTYPE_IPV6 = 0x86DD
ETHERTYPE_VLAN = 0x8100

IPPROTO_TCP = 6
IPPROTO_UDP = 17

V4_MAPPED_PREFIX = 0xFFFF << 32

# Flag order is normative for feature extraction; see features.FEATURE_NAMES.
TCP_FLAG_NAMES = ("ns", "cwr", "ece", "urg", "ack", "psh", "rst", "syn", "fin", "reserved")
NO_FLAGS = (0,) * 10


class CaptureError(Exception):
    """Base class for capture-format problems."""


class UnknownMagicError(CaptureError):
    pass


class TruncatedHeaderError(CaptureError):
    """Global header shorter than 24 bytes."""


class TruncatedRecordError(CaptureError):
    """Per-record header or packet data cut short mid-file."""


class UnsupportedLinkTypeError(CaptureError):
    pass


class Transport(enum.Enum):
    TCP = "tcp"
    UDP = "udp"
    OTHER = "other"


@dataclass(frozen=True)
class PacketRecord:
    """One parsed packet. Addresses are 128-bit integers (IPv4 mapped into
    ::ffff:0:0/96) so ordering and equality work uniformly."""

    timestamp: float
    src_ip: int
    dst_ip: int
    src_port: int
    dst_port: int
    transport: Transport
    total_bytes: int
    tcp_flags: tuple
    capture_index: int


def ip_to_int(text: str) -> int:
    addr = ipaddress.ip_address(text)
    if addr.version == 4:
        return V4_MAPPED_PREFIX | int(addr)
    return int(addr)


def ip_to_str(value: int) -> str:
    if value >> 32 == 0xFFFF:
        return str(ipaddress.IPv4Address(value & 0xFFFFFFFF))
    return str(ipaddress.IPv6Address(value))


def _decode_tcp_flags(offset_byte: int, flag_byte: int) -> tuple:
    return (
        offset_byte & 0x01,          # NS
        (flag_byte >> 7) & 1,        # CWR
        (flag_byte >> 6) & 1,        # ECE
        (flag_byte >> 5) & 1,        # URG
        (flag_byte >> 4) & 1,        # ACK
        (flag_byte >> 3) & 1,        # PSH
        (flag_byte >> 2) & 1,        # RST
        (flag_byte >> 1) & 1,        # SYN
        flag_byte & 1,               # FIN
        1 if offset_byte & 0x0E else 0,  # any reserved bit set
    )


class CaptureReader:
    """Iterator over PacketRecords from one pcap file. Single consumer;
    open one reader per file for concurrent work."""

    def __init__(self, path):
        self.path = str(path)
        self._fh = open(path, "rb")
        try:
            header = self._fh.read(24)
            if len(header) < 4:
                raise TruncatedHeaderError(f"{self.path}: no pcap magic")
            magic = struct.unpack("<I", header[:4])[0]
            if magic in (MAGIC_LE_MICROS, MAGIC_LE_NANOS):
                self._endian = "<"
            elif magic in (MAGIC_BE_MICROS, MAGIC_BE_NANOS):
                self._endian = ">"
            else:
                raise UnknownMagicError(f"{self.path}: unknown magic 0x{magic:08X}")
            if len(header) < 24:
                raise TruncatedHeaderError(f"{self.path}: global header truncated")
            native_magic = struct.unpack(self._endian + "I", header[:4])[0]
            self._tick = 1e-9 if native_magic == MAGIC_LE_NANOS else 1e-6
            link_type = struct.unpack(self._endian + "I", header[20:24])[0]
            if link_type != LINKTYPE_ETHERNET:
                raise UnsupportedLinkTypeError(
                    f"{self.path}: link type {link_type} not supported (Ethernet only)")
        except Exception:
            self._fh.close()
            raise
        self.frames_total = 0
        self.frames_skipped = 0
        self.records_emitted = 0

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False

    def __iter__(self):
        return self

    def __next__(self) -> PacketRecord:
        while True:
            header = self._fh.read(16)
            if len(header) == 0:
                raise StopIteration
            if len(header) < 16:
                raise TruncatedRecordError(f"{self.path}: record header truncated")
            ts_sec, ts_frac, incl_len, _orig_len = struct.unpack(self._endian + "IIII", header)
            data = self._fh.read(incl_len)
            if len(data) < incl_len:
                raise TruncatedRecordError(f"{self.path}: packet data truncated")
            index = self.frames_total
            self.frames_total += 1
            record = self._decode_frame(ts_sec + ts_frac * self._tick, data, index)
            if record is None:
                self.frames_skipped += 1
                continue
            self.records_emitted += 1
            return record

    def _decode_frame(self, ts: float, data: bytes, index: int):
        if len(data) < 14:
            return None
        ethertype = struct.unpack(">H", data[12:14])[0]
        offset = 14
        if ethertype == ETHERTYPE_VLAN:
            # unwrap a single 802.1Q tag; nested tags are skipped
            if len(data) < 18:
                return None
            ethertype = struct.unpack(">H", data[16:18])[0]
            offset = 18
            if ethertype == ETHERTYPE_VLAN:
                return None
        if ethertype == ETHERTYPE_IPV4:
            return self._decode_ipv4(ts, data[offset:], index)
        if ethertype == ETHERTYPE_IPV6:
            return self._decode_ipv6(ts, data[offset:], index)
        return None

    def _decode_ipv4(self, ts: float, ip: bytes, index: int):
        if len(ip) < 20 or ip[0] >> 4 != 4:
            return None
        ihl = (ip[0] & 0x0F) * 4
        if ihl < 20 or len(ip) < ihl:
            return None
        total_len = struct.unpack(">H", ip[2:4])[0]
        if total_len < ihl:
            return None
        frag = struct.unpack(">H", ip[6:8])[0]
        if frag & 0x1FFF:
            return None  # non-first fragment: header-level features only
        proto = ip[9]
        src = V4_MAPPED_PREFIX | struct.unpack(">I", ip[12:16])[0]
        dst = V4_MAPPED_PREFIX | struct.unpack(">I", ip[16:20])[0]
        # Ethernet padding can extend past the IP datagram; clip to total_len
        l4 = ip[ihl:min(len(ip), total_len)]
        return self._finish(ts, src, dst, proto, l4, total_len, index)

    def _decode_ipv6(self, ts: float, ip: bytes, index: int):
        if len(ip) < 40 or ip[0] >> 4 != 6:
            return None
        payload_len = struct.unpack(">H", ip[4:6])[0]
        next_header = ip[6]
        src = int.from_bytes(ip[8:24], "big")
        dst = int.from_bytes(ip[24:40], "big")
        l4 = ip[40:min(len(ip), 40 + payload_len)]
        return self._finish(ts, src, dst, next_header, l4, payload_len + 40, index)

    def _finish(self, ts, src, dst, proto, l4, total_bytes, index):
        if proto == IPPROTO_TCP:
            if len(l4) < 14:
                return None  # need ports through the flags byte
            sport, dport = struct.unpack(">HH", l4[:4])
            flags = _decode_tcp_flags(l4[12], l4[13])
            transport = Transport.TCP
        elif proto == IPPROTO_UDP:
            if len(l4) < 8:
                return None
            sport, dport = struct.unpack(">HH", l4[:4])
            flags = NO_FLAGS
            transport = Transport.UDP
        else:
            sport = dport = 0
            flags = NO_FLAGS
            transport = Transport.OTHER
        return PacketRecord(
            timestamp=ts, src_ip=src, dst_ip=dst, src_port=sport, dst_port=dport,
            transport=transport, total_bytes=total_bytes, tcp_flags=flags,
            capture_index=index)


def open_capture(path) -> CaptureReader:
    """Open a classic pcap file; byte order and timestamp resolution are
    inferred from the magic number."""
    return CaptureReader(path)
