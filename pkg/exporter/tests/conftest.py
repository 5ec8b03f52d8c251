import os

import pytest

# The stand-in checkpoint is local; make any accidental hub access fail fast.
os.environ.setdefault("HF_HUB_OFFLINE", "1")
os.environ.setdefault("TRANSFORMERS_OFFLINE", "1")


def make_labels(n: int) -> tuple[str, ...]:
    base = ["Normal", "洞性頻脈", "Complete Right Bundle Branch Block",
            "Atrial Fibrillation", "心房細動", "Left Axis Deviation"]
    labels = []
    for i in range(n):
        labels.append(f"{base[i % len(base)]} variant {i}")
    return tuple(labels)


@pytest.fixture(scope="session")
def tiny_model_dir(tmp_path_factory):
    from ecgtext_exporter import DEFAULT_TEMPLATE, build_tiny_model_dir
    labels = make_labels(98)
    corpus = list(labels) + [DEFAULT_TEMPLATE]
    path = tmp_path_factory.mktemp("tinylm")
    return build_tiny_model_dir(path, corpus, hidden_size=32, seed=7), labels
