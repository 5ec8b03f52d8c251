import numpy as np
import pytest

from ecgtext.data import (EcgDataset, EcgRecord, LabelTable, SplitSpec,
                          N_LEADS, N_SAMPLES, assert_patient_disjoint,
                          dataset_from_bytes, dataset_to_bytes, load_dataset,
                          save_dataset, split_by_patient, validate_dataset)
from ecgtext.errors import DataError, FormatError

from conftest import random_dataset


def _dataset(n_records=3, n_patients=3, seed=0):
    rng = np.random.default_rng(seed)
    table = LabelTable(("alpha rhythm", "beta rhythm"))
    records = [
        EcgRecord(patient_id=i % n_patients, label_index=i % 2,
                  samples=rng.standard_normal((N_LEADS, N_SAMPLES)).astype(np.float32))
        for i in range(n_records)
    ]
    return EcgDataset(500.0, table, records)


class TestLabelTable:
    def test_rejects_duplicates(self):
        with pytest.raises(DataError, match="duplicate"):
            LabelTable(("a", "b", "a"))

    def test_rejects_empty_strings(self):
        with pytest.raises(DataError, match="empty"):
            LabelTable(("a", ""))

    def test_index_lookup(self):
        table = LabelTable(("x", "y"))
        assert table.index_of("y") == 1
        with pytest.raises(DataError, match="unknown label"):
            table.index_of("z")


class TestValidation:
    def test_valid_dataset_yields_no_violations(self):
        assert validate_dataset(_dataset()) == []

    def test_wrong_sample_count_is_named(self):
        ds = _dataset()
        ds.records[1] = EcgRecord(0, 0, np.zeros((N_LEADS, N_SAMPLES - 1), np.float32))
        violations = validate_dataset(ds)
        assert len(violations) == 1
        assert "record 1" in violations[0]
        assert "sample count" in violations[0]

    def test_nan_sample_is_named(self):
        ds = _dataset()
        ds.records[2].samples[4, 100] = np.nan
        violations = validate_dataset(ds)
        assert len(violations) == 1
        assert "record 2" in violations[0] and "non-finite sample" in violations[0]

    def test_label_index_out_of_range(self):
        ds = _dataset()
        ds.records[0].label_index = 99
        violations = validate_dataset(ds)
        assert any("label index 99 out of range" in v for v in violations)


class TestSerialization:
    def test_round_trip_is_byte_identical(self, tmp_path):
        ds = _dataset()
        path = tmp_path / "data.eds"
        save_dataset(ds, path)
        reloaded = load_dataset(path)
        assert dataset_to_bytes(reloaded) == path.read_bytes()
        assert reloaded.label_table.labels == ds.label_table.labels
        for a, b in zip(ds.records, reloaded.records):
            assert a.patient_id == b.patient_id
            assert a.label_index == b.label_index
            assert a.samples.tobytes() == b.samples.tobytes()

    def test_bad_magic(self):
        buf = b"XXXX" + dataset_to_bytes(_dataset())[4:]
        with pytest.raises(FormatError, match="bad magic"):
            dataset_from_bytes(buf)

    def test_truncation_reports_expected_vs_actual(self):
        # Oracle: the format definition. A record needs 12*5000*4 sample
        # bytes; slicing the file mid-record must name that shortfall.
        buf = dataset_to_bytes(_dataset(n_records=1))
        cut = len(buf) - 100
        with pytest.raises(FormatError) as err:
            dataset_from_bytes(buf[:cut])
        msg = str(err.value)
        assert f"expected {N_LEADS * N_SAMPLES * 4} bytes" in msg
        assert "samples" in msg and "offset" in msg

    def test_truncation_at_every_section(self):
        buf = dataset_to_bytes(_dataset(n_records=2))
        for cut in (2, 6, 10, 13, 40, len(buf) - 1):
            with pytest.raises(FormatError):
                dataset_from_bytes(buf[:cut])

    def test_label_index_out_of_range_in_file(self):
        ds = _dataset(n_records=1)
        buf = bytearray(dataset_to_bytes(ds))
        # label_index field sits right after the u32 patient id of record 0.
        idx_off = len(buf) - N_LEADS * N_SAMPLES * 4 - 2
        buf[idx_off:idx_off + 2] = (200).to_bytes(2, "little")
        with pytest.raises(FormatError, match="label index 200 out of range"):
            dataset_from_bytes(bytes(buf))

    def test_trailing_bytes_rejected(self):
        buf = dataset_to_bytes(_dataset()) + b"\x00"
        with pytest.raises(FormatError, match="trailing"):
            dataset_from_bytes(buf)

    def test_random_round_trips(self):
        rng = np.random.default_rng(123)
        for _ in range(30):
            ds = random_dataset(rng, n_records=int(rng.integers(1, 4)))
            buf = dataset_to_bytes(ds)
            assert dataset_to_bytes(dataset_from_bytes(buf)) == buf

    def test_refuses_to_save_invalid(self, tmp_path):
        ds = _dataset()
        ds.records[0].samples[0, 0] = np.inf
        with pytest.raises(DataError, match="invalid dataset"):
            save_dataset(ds, tmp_path / "x.eds")


class TestSplitByPatient:
    def test_decile_counts(self):
        # Oracle: shuffled-patient prefix sums with cuts at
        # floor(n*cum + 0.5); 10 patients at (0.8, 0.1, 0.1) give 8/1/1.
        rng = np.random.default_rng(0)
        table = LabelTable(("l",))
        records = [EcgRecord(pid, 0, rng.standard_normal((N_LEADS, N_SAMPLES)).astype(np.float32))
                   for pid in range(10) for _ in range(2)]
        ds = EcgDataset(500.0, table, records)
        for seed in (0, 1, 99):
            tr, va, te = split_by_patient(ds, SplitSpec((0.8, 0.1, 0.1), seed))
            assert (len(tr.patient_ids()), len(va.patient_ids()),
                    len(te.patient_ids())) == (8, 1, 1)

    def test_single_patient_all_train(self):
        rng = np.random.default_rng(1)
        ds = EcgDataset(500.0, LabelTable(("l",)), [
            EcgRecord(7, 0, rng.standard_normal((N_LEADS, N_SAMPLES)).astype(np.float32))
            for _ in range(5)])
        tr, va, te = split_by_patient(ds, SplitSpec((1.0, 0.0, 0.0), seed=3))
        assert len(tr.records) == 5 and not va.records and not te.records

    def test_deterministic(self):
        ds = _dataset(n_records=12, n_patients=6)
        spec = SplitSpec((0.5, 0.25, 0.25), seed=11)
        a = split_by_patient(ds, spec)
        b = split_by_patient(ds, spec)
        for x, y in zip(a, b):
            assert [r.patient_id for r in x.records] == [r.patient_id for r in y.records]

    def test_disjoint_and_conserving_property(self):
        rng = np.random.default_rng(7)
        for _ in range(25):
            ds = random_dataset(rng, n_records=int(rng.integers(2, 10)))
            ratios = rng.dirichlet((1.0, 1.0, 1.0))
            ratios = tuple(float(r) for r in ratios / ratios.sum())
            splits = split_by_patient(ds, SplitSpec(ratios, int(rng.integers(1000))))
            assert sum(len(s.records) for s in splits) == len(ds.records)
            assert_patient_disjoint(*splits)

    def test_empty_dataset_rejected(self):
        ds = EcgDataset(500.0, LabelTable(("l",)), [])
        with pytest.raises(DataError, match="empty"):
            split_by_patient(ds, SplitSpec((1.0, 0.0, 0.0), 0))

    def test_ratio_validation(self):
        with pytest.raises(DataError):
            SplitSpec((0.5, 0.5, 0.5), 0)
        with pytest.raises(DataError):
            SplitSpec((1.2, -0.1, -0.1), 0)


class TestLeakageGuard:
    def test_overlap_raises(self):
        a = _dataset(n_records=3, n_patients=3)
        b = _dataset(n_records=3, n_patients=3)
        with pytest.raises(DataError, match="leakage"):
            assert_patient_disjoint(a, b)
