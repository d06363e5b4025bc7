"""Per-packet feature extraction and dataset serialization.

Each finalized flow becomes one multivariate time series with a fixed-order
13-feature row per packet: direction relative to the initiator, inter-arrival
time in seconds (0 for the first packet), size in bytes at the IP layer, and
the ten TCP flag bits. Datasets are a pair of CSVs: flows.csv holds per-flow
metadata, series.csv holds the long-format feature rows with 9 fractional
digits.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from .flows import Flow
from .pcap import ip_to_str

FEATURE_NAMES = [
    "direction", "iat_seconds", "bytes",
    "flag_ns", "flag_cwr", "flag_ece", "flag_urg", "flag_ack",
    "flag_psh", "flag_rst", "flag_syn", "flag_fin", "flag_reserved",
]
NUM_FEATURES = len(FEATURE_NAMES)

FLOWS_HEADER = ["flow_id", "src_ip", "src_port", "dst_ip", "dst_port",
                "transport", "start_ts", "end_ts", "num_packets", "label"]
SERIES_HEADER = ["flow_id", "seq_index"] + FEATURE_NAMES + ["rel_ts"]


class DatasetFormatError(Exception):
    pass


@dataclass
class MtsSample:
    """One labeled time series: values is (L, d), timestamps absolute seconds.
    endpoints, when known, is (src_ip, src_port, dst_ip, dst_port, transport)
    in initiator orientation."""

    flow_id: str
    values: np.ndarray
    timestamps: np.ndarray
    label: str
    endpoints: tuple | None = field(default=None)

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def duration(self) -> float:
        return float(self.timestamps[-1] - self.timestamps[0])


def _fmt(x: float) -> str:
    return f"{x:.9f}"


def flow_id_for(flow: Flow) -> str:
    src_ip, src_port = flow.initiator
    dst_ip, dst_port = flow.responder
    return (f"{ip_to_str(src_ip)}:{src_port}-{ip_to_str(dst_ip)}:{dst_port}"
            f"-{flow.key.transport.value}@{flow.start_ts:.6f}")


def extract_mts(flow: Flow) -> MtsSample:
    """Row i holds the feature vector of packet i; the first IAT entry is 0."""
    n = len(flow.packets)
    values = np.zeros((n, NUM_FEATURES))
    timestamps = np.array([p.timestamp for p in flow.packets])
    for i, (packet, direction) in enumerate(zip(flow.packets, flow.directions)):
        values[i, 0] = direction
        values[i, 1] = 0.0 if i == 0 else timestamps[i] - timestamps[i - 1]
        values[i, 2] = packet.total_bytes
        values[i, 3:13] = packet.tcp_flags
    src_ip, src_port = flow.initiator
    dst_ip, dst_port = flow.responder
    return MtsSample(
        flow_id=flow_id_for(flow),
        values=values,
        timestamps=timestamps,
        label=flow.label if flow.label is not None else "BENIGN",
        endpoints=(ip_to_str(src_ip), src_port, ip_to_str(dst_ip), dst_port,
                   flow.key.transport.value),
    )


def write_dataset(samples, out_dir) -> dict:
    """Write flows.csv and series.csv under out_dir; returns a small manifest
    with row counts. Numeric fields carry exactly 9 fractional digits."""
    samples = list(samples)
    os.makedirs(out_dir, exist_ok=True)
    flows_path = os.path.join(out_dir, "flows.csv")
    series_path = os.path.join(out_dir, "series.csv")
    n_rows = 0
    with open(flows_path, "w", newline="", encoding="utf-8") as fh_flows, \
            open(series_path, "w", newline="", encoding="utf-8") as fh_series:
        flows_csv = csv.writer(fh_flows, lineterminator="\n")
        series_csv = csv.writer(fh_series, lineterminator="\n")
        flows_csv.writerow(FLOWS_HEADER)
        series_csv.writerow(SERIES_HEADER)
        for sample in samples:
            endpoints = sample.endpoints or ("*", "*", "*", "*", "*")
            flows_csv.writerow([
                sample.flow_id,
                endpoints[0], endpoints[1], endpoints[2], endpoints[3], endpoints[4],
                _fmt(sample.timestamps[0]), _fmt(sample.timestamps[-1]),
                sample.length, sample.label,
            ])
            start = sample.timestamps[0]
            for i in range(sample.length):
                row = [sample.flow_id, i]
                row.extend(_fmt(v) for v in sample.values[i])
                row.append(_fmt(sample.timestamps[i] - start))
                series_csv.writerow(row)
                n_rows += 1
    return {"flows": len(samples), "series_rows": n_rows,
            "flows_path": flows_path, "series_path": series_path}


def read_dataset(directory) -> list:
    """Inverse of write_dataset. Rows of one flow must carry contiguous
    seq_index values starting at 0."""
    flows_path = os.path.join(directory, "flows.csv")
    series_path = os.path.join(directory, "series.csv")
    for path in (flows_path, series_path):
        if not os.path.exists(path):
            raise DatasetFormatError(f"missing dataset file: {path}")

    meta = {}
    order = []
    with open(flows_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != FLOWS_HEADER:
            raise DatasetFormatError(f"{flows_path}: unexpected header")
        for row in reader:
            endpoints = None
            if row[1] != "*":
                endpoints = (row[1], int(row[2]), row[3], int(row[4]), row[5])
            meta[row[0]] = {
                "endpoints": endpoints,
                "start_ts": float(row[6]),
                "num_packets": int(row[8]),
                "label": row[9],
            }
            order.append(row[0])

    rows_by_flow = {}
    with open(series_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != SERIES_HEADER:
            raise DatasetFormatError(f"{series_path}: unexpected header")
        for row in reader:
            flow_id = row[0]
            if flow_id not in meta:
                raise DatasetFormatError(f"{series_path}: unknown flow_id {flow_id}")
            rows_by_flow.setdefault(flow_id, []).append(row)

    samples = []
    for flow_id in order:
        rows = rows_by_flow.get(flow_id, [])
        info = meta[flow_id]
        if len(rows) != info["num_packets"]:
            raise DatasetFormatError(
                f"{flow_id}: {len(rows)} series rows, metadata says {info['num_packets']}")
        indices = [int(r[1]) for r in rows]
        if indices != list(range(len(rows))):
            raise DatasetFormatError(f"{flow_id}: seq_index not contiguous from 0")
        values = np.array([[float(v) for v in r[2:2 + NUM_FEATURES]] for r in rows])
        rel = np.array([float(r[-1]) for r in rows])
        samples.append(MtsSample(
            flow_id=flow_id,
            values=values,
            timestamps=info["start_ts"] + rel,
            label=info["label"],
            endpoints=info["endpoints"],
        ))
    return samples
