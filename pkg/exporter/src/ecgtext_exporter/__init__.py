"""Frozen language-model prompt embeddings, exported as ETB1 tables."""

from .etb1 import Etb1Error, read_table, write_table
from .exporter import (DEFAULT_TEMPLATE, POOLINGS, ExportError, ExportJob,
                       export)
from .tinylm import build_tiny_model_dir

__version__ = "0.1.0"
