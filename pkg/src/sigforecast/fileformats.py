"""On-disk formats for feature matrices and window provenance.

A feature-matrix file is a text header (key=value lines and the feature
name table) followed by a DATA marker and the raw matrix as little-endian
64-bit floats in column-major order, one window per column.  The window
provenance table travels in a sibling CSV.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataFormatError
from .featbank import FeatureMatrix
from .pipeline import WindowTable

_MAGIC = "#sigforecast-features v1"


@dataclass
class FeatureFile:
    matrix: FeatureMatrix
    table: WindowTable
    patient_id: str
    feature_set: str
    segment_onsets: dict[int, float]  # segment id -> event onset seconds
    config_hash: str = ""


def provenance_path(features_path) -> Path:
    p = Path(features_path)
    return p.with_name(p.name + ".windows.csv")


def write_feature_file(
    path,
    matrix: FeatureMatrix,
    table: WindowTable,
    *,
    patient_id: str,
    feature_set: str,
    segment_onsets: dict[int, float],
    provenance: str = "",
):
    path = Path(path)
    m, n_win = matrix.values.shape
    header = [
        f"{_MAGIC} {provenance}".rstrip(),
        f"patient_id={patient_id}",
        f"feature_set={feature_set}",
        f"sample_rate_hz={table.sample_rate:.17g}",
        f"delta_samples={table.delta_samples}",
        f"duration_s={table.duration_s:.17g}",
        f"n_features={m}",
        f"n_windows={n_win}",
    ]
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode())
        fh.write(("\n".join(matrix.names) + "\n").encode())
        fh.write(b"DATA\n")
        fh.write(np.ascontiguousarray(matrix.values.T, dtype="<f8").tobytes())
    rows = [
        "# " + provenance if provenance else "#",
        "k,segment_id,index_in_segment,window_start_s,window_end_s,"
        "time_to_seizure_s,segment_onset_s",
    ]
    fs = table.sample_rate
    for k in range(len(table)):
        sid = int(table.segment_id[k])
        start_s = table.start_sample[k] / fs
        end_s = (table.start_sample[k] + table.delta_samples) / fs
        rows.append(
            f"{k},{sid},{int(table.index_in_segment[k])},{start_s:.10g},"
            f"{end_s:.10g},{table.time_to_seizure[k]:.10g},"
            f"{segment_onsets[sid]:.10g}"
        )
    provenance_path(path).write_text("\n".join(rows) + "\n", encoding="utf-8")


def read_feature_file(path) -> FeatureFile:
    path = Path(path)
    if not path.exists():
        raise DataFormatError(f"{path}: no such file")
    header: dict[str, str] = {}
    names: list[str] = []
    config_hash = ""
    with open(path, "rb") as fh:
        first = fh.readline().decode().rstrip("\n")
        if not first.startswith(_MAGIC):
            raise DataFormatError(f"{path}: not a feature-matrix file")
        if "config=" in first:
            config_hash = first.split("config=")[-1].split()[0]
        needed = 7
        while len(header) < needed:
            line = fh.readline().decode().rstrip("\n")
            if "=" not in line:
                raise DataFormatError(f"{path}: bad header line {line!r}")
            key, value = line.split("=", 1)
            header[key] = value
        m = int(header["n_features"])
        n_win = int(header["n_windows"])
        for _ in range(m):
            names.append(fh.readline().decode().rstrip("\n"))
        marker = fh.readline().decode().rstrip("\n")
        if marker != "DATA":
            raise DataFormatError(f"{path}: missing DATA marker")
        payload = fh.read()
    expected = 8 * m * n_win
    if len(payload) != expected:
        raise DataFormatError(
            f"{path}: payload is {len(payload)} bytes, expected {expected}"
        )
    values = np.frombuffer(payload, dtype="<f8").reshape(n_win, m).T.copy()
    matrix = FeatureMatrix(values, names, None)

    prov = provenance_path(path)
    if not prov.exists():
        raise DataFormatError(f"{prov}: missing window-provenance file")
    seg_ids, idx_in_seg, starts, tts = [], [], [], []
    onsets: dict[int, float] = {}
    fs = float(header["sample_rate_hz"])
    with open(prov, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#") or line.startswith("k,"):
                continue
            parts = line.split(",")
            if len(parts) != 7:
                raise DataFormatError(f"{prov}: bad row {line!r}")
            seg_ids.append(int(parts[1]))
            idx_in_seg.append(int(parts[2]))
            starts.append(int(round(float(parts[3]) * fs)))
            tts.append(float(parts[5]))
            onsets[int(parts[1])] = float(parts[6])
    if len(seg_ids) != n_win:
        raise DataFormatError(
            f"{prov}: {len(seg_ids)} rows but matrix has {n_win} windows"
        )
    table = WindowTable(
        segment_id=np.array(seg_ids, dtype=np.int64),
        index_in_segment=np.array(idx_in_seg, dtype=np.int64),
        start_sample=np.array(starts, dtype=np.int64),
        time_to_seizure=np.array(tts),
        sample_rate=fs,
        delta_samples=int(header["delta_samples"]),
        duration_s=float(header["duration_s"]),
    )
    return FeatureFile(
        matrix=matrix,
        table=table,
        patient_id=header["patient_id"],
        feature_set=header["feature_set"],
        segment_onsets=onsets,
        config_hash=config_hash,
    )
