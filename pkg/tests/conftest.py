import numpy as np
import pytest
import torch

# Determinism contracts in these tests assume a fixed reduction order.
torch.set_num_threads(1)


@pytest.fixture(scope="session")
def tiny_dataset():
    from ecgtext.synth import default_suite, gen_dataset
    return gen_dataset(default_suite()[:4], records_per_class=6,
                       patients_per_class=3, seed=42)


@pytest.fixture(scope="session")
def tiny_bank(tiny_dataset):
    from ecgtext.textbank import build_bank
    return build_bank(tiny_dataset.label_table.labels, dim=24, seed=7)


def random_dataset(rng: np.random.Generator, n_records: int = 3):
    """Small random-but-valid dataset for round-trip and split properties."""
    from ecgtext.data import EcgDataset, EcgRecord, LabelTable, N_LEADS, N_SAMPLES
    labels = ["normal sinus rhythm", "atrial flutter", "洞性頻脈",
              "wide QRS rhythm"][: int(rng.integers(1, 5))]
    table = LabelTable(tuple(labels))
    records = []
    for _ in range(n_records):
        samples = rng.standard_normal((N_LEADS, N_SAMPLES)).astype(np.float32)
        records.append(EcgRecord(
            patient_id=int(rng.integers(0, 50)),
            label_index=int(rng.integers(0, len(labels))),
            samples=samples))
    return EcgDataset(sampling_rate_hz=500.0, label_table=table, records=records)
