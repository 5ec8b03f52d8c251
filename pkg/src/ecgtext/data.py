"""12-lead ECG dataset container, validation, EDS1 serialization, patient splits.

A record is a 12 x 5000 float32 matrix (millivolts); the sampling rate lives in
the dataset header rather than being implied. Lead order is fixed as
I, II, III, aVR, aVL, aVF, V1..V6.

EDS1 binary layout (little-endian throughout):

    magic "EDS1" | u32 version=1 | f32 sampling_rate_hz
    u32 label_count | per label: u16 byte-length + UTF-8 bytes
    u32 record_count
    per record: u32 patient_id | u16 label_index | 12*5000 f32 samples,
    lead-major (lead 0 samples 0..4999, then lead 1, ...)
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, FormatError

N_LEADS = 12
N_SAMPLES = 5000
LEAD_NAMES = ("I", "II", "III", "aVR", "aVL", "aVF",
              "V1", "V2", "V3", "V4", "V5", "V6")

EDS_MAGIC = b"EDS1"
EDS_VERSION = 1


@dataclass(frozen=True)
class LabelTable:
    """Ordered, persisted list of unique non-empty label strings."""

    labels: tuple[str, ...]

    def __post_init__(self):
        if not self.labels:
            raise DataError("label table must contain at least one label")
        seen = set()
        for i, lab in enumerate(self.labels):
            if not lab:
                raise DataError(f"label {i} is empty")
            if lab in seen:
                raise DataError(f"duplicate label {lab!r}")
            seen.add(lab)

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, index: int) -> str:
        return self.labels[index]

    def index_of(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise DataError(f"unknown label {label!r}") from None


@dataclass
class EcgRecord:
    """One ECG: patient id, index into the dataset's label table, 12x5000 samples."""

    patient_id: int
    label_index: int
    samples: np.ndarray

    def __post_init__(self):
        # float32 C-order is the storage contract; coerce once here so the
        # on-disk round trip is byte-identical.
        self.samples = np.ascontiguousarray(self.samples, dtype=np.float32)


@dataclass
class EcgDataset:
    sampling_rate_hz: float
    label_table: LabelTable
    records: list[EcgRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def label_of(self, record: EcgRecord) -> str:
        return self.label_table[record.label_index]

    def patient_ids(self) -> set[int]:
        return {r.patient_id for r in self.records}


@dataclass(frozen=True)
class SplitSpec:
    """Train/val/test ratios plus the shuffle seed for patient assignment."""

    ratios: tuple[float, float, float]
    seed: int

    def __post_init__(self):
        if len(self.ratios) != 3:
            raise DataError("ratios must have exactly three entries")
        for r in self.ratios:
            if not (0.0 <= r <= 1.0):
                raise DataError(f"ratio {r} outside [0, 1]")
        if abs(sum(self.ratios) - 1.0) > 1e-9:
            raise DataError(f"ratios sum to {sum(self.ratios)!r}, expected 1.0")
        if self.seed < 0:
            raise DataError("seed must be a non-negative integer")


def validate_dataset(dataset: EcgDataset) -> list[str]:
    """Collect every invariant violation; an empty list means the dataset is valid."""
    violations: list[str] = []
    if not (dataset.sampling_rate_hz > 0):
        violations.append(f"dataset: sampling rate {dataset.sampling_rate_hz} is not positive")
    n_labels = len(dataset.label_table)
    for i, rec in enumerate(dataset.records):
        if rec.samples.shape != (N_LEADS, N_SAMPLES):
            got = "x".join(str(d) for d in rec.samples.shape)
            violations.append(
                f"record {i}: sample count {got} != {N_LEADS}x{N_SAMPLES}")
            continue
        if not np.isfinite(rec.samples).all():
            lead, pos = np.argwhere(~np.isfinite(rec.samples))[0]
            violations.append(
                f"record {i}: non-finite sample at lead {lead} position {pos}")
        if not (0 <= rec.label_index < n_labels):
            violations.append(
                f"record {i}: label index {rec.label_index} out of range ({n_labels} labels)")
        if rec.patient_id < 0:
            violations.append(f"record {i}: negative patient id {rec.patient_id}")
    return violations


def save_dataset(dataset: EcgDataset, path) -> None:
    violations = validate_dataset(dataset)
    if violations:
        raise DataError("refusing to save invalid dataset: " + "; ".join(violations))
    with open(path, "wb") as f:
        f.write(dataset_to_bytes(dataset))


def dataset_to_bytes(dataset: EcgDataset) -> bytes:
    parts = [EDS_MAGIC, struct.pack("<If", EDS_VERSION, dataset.sampling_rate_hz)]
    parts.append(struct.pack("<I", len(dataset.label_table)))
    for lab in dataset.label_table.labels:
        raw = lab.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise DataError(f"label too long to serialize ({len(raw)} bytes)")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
    parts.append(struct.pack("<I", len(dataset.records)))
    for rec in dataset.records:
        parts.append(struct.pack("<IH", rec.patient_id, rec.label_index))
        parts.append(rec.samples.astype("<f4", copy=False).tobytes(order="C"))
    return b"".join(parts)


class _Cursor:
    """Byte reader that reports the offending offset on truncation."""

    def __init__(self, buf: bytes):
        self.buf = buf
        self.off = 0

    def take(self, n: int, what: str) -> bytes:
        if self.off + n > len(self.buf):
            raise FormatError(
                f"truncated file: expected {n} bytes for {what}, "
                f"only {len(self.buf) - self.off} remain",
                offset=self.off)
        out = self.buf[self.off:self.off + n]
        self.off += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def expect_end(self, what: str) -> None:
        if self.off != len(self.buf):
            raise FormatError(
                f"{len(self.buf) - self.off} trailing bytes after {what}",
                offset=self.off)


def load_dataset(path) -> EcgDataset:
    with open(path, "rb") as f:
        return dataset_from_bytes(f.read())


def dataset_from_bytes(buf: bytes) -> EcgDataset:
    cur = _Cursor(buf)
    magic = cur.take(4, "magic")
    if magic != EDS_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {EDS_MAGIC!r}", offset=0)
    version, rate = cur.unpack("<If", "header")
    if version != EDS_VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    (label_count,) = cur.unpack("<I", "label count")
    labels = []
    for i in range(label_count):
        (nbytes,) = cur.unpack("<H", f"label {i} length")
        off = cur.off
        raw = cur.take(nbytes, f"label {i}")
        try:
            labels.append(raw.decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise FormatError(f"label {i} is not valid UTF-8: {exc}", offset=off)
    try:
        table = LabelTable(tuple(labels))
    except DataError as exc:
        raise FormatError(str(exc), offset=cur.off)
    (record_count,) = cur.unpack("<I", "record count")
    sample_bytes = N_LEADS * N_SAMPLES * 4
    records = []
    for i in range(record_count):
        patient_id, label_index = cur.unpack("<IH", f"record {i} header")
        if label_index >= label_count:
            raise FormatError(
                f"record {i}: label index {label_index} out of range "
                f"({label_count} labels)",
                offset=cur.off - 2)
        raw = cur.take(sample_bytes, f"record {i} samples")
        samples = np.frombuffer(raw, dtype="<f4").reshape(N_LEADS, N_SAMPLES).copy()
        records.append(EcgRecord(patient_id, label_index, samples))
    cur.expect_end("last record")
    return EcgDataset(sampling_rate_hz=rate, label_table=table, records=records)


def split_by_patient(dataset: EcgDataset, spec: SplitSpec) -> tuple[EcgDataset, EcgDataset, EcgDataset]:
    """Partition records into train/val/test with disjoint patient id sets.

    Unique patient ids are sorted, shuffled by the spec seed, and cut at the
    cumulative-ratio prefix sums, so the assignment depends only on
    (patient id set, ratios, seed).
    """
    if not dataset.records:
        raise DataError("cannot split an empty dataset")
    pids = np.array(sorted(dataset.patient_ids()), dtype=np.int64)
    rng = np.random.default_rng(spec.seed)
    shuffled = pids[rng.permutation(len(pids))]
    n = len(pids)
    cut1 = int(np.floor(n * spec.ratios[0] + 0.5))
    cut2 = int(np.floor(n * (spec.ratios[0] + spec.ratios[1]) + 0.5))
    buckets = (set(shuffled[:cut1].tolist()),
               set(shuffled[cut1:cut2].tolist()),
               set(shuffled[cut2:].tolist()))
    outputs = []
    for bucket in buckets:
        recs = [r for r in dataset.records if r.patient_id in bucket]
        outputs.append(EcgDataset(dataset.sampling_rate_hz, dataset.label_table, recs))
    return outputs[0], outputs[1], outputs[2]


def assert_patient_disjoint(*datasets: EcgDataset) -> None:
    """Raise DataError if any patient id appears in more than one dataset."""
    seen: dict[int, int] = {}
    for idx, ds in enumerate(datasets):
        for pid in ds.patient_ids():
            if pid in seen:
                raise DataError(
                    f"patient {pid} appears in splits {seen[pid]} and {idx}: "
                    "patient-level leakage")
            seen[pid] = idx
