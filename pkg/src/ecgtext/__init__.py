"""Contrastive ECG-text pretraining with frozen text embeddings.

Pipeline: a 1-D residual encoder maps 12x5000 ECG records into a shared space
with frozen language-model text embeddings of report labels; a bidirectional
InfoNCE objective aligns matched pairs; classification ranks label prompts by
cosine similarity, either over the fine-grained label set or over zero-shot
superset vocabularies.
"""

from .contrastive import (TAU_INIT, Temperature, cosine_sim, loss_e2t,
                          loss_t2e, similarity_matrix, total_loss)
from .checkpoint import (Checkpoint, build_model, checkpoint_from_bytes,
                         checkpoint_to_bytes, load_checkpoint, save_checkpoint)
from .data import (EcgDataset, EcgRecord, LabelTable, SplitSpec,
                   assert_patient_disjoint, dataset_from_bytes,
                   dataset_to_bytes, load_dataset, save_dataset,
                   split_by_patient, validate_dataset)
from .encoder import (EcgEncoder, EncoderConfig, ProjectionHead, init_encoder,
                      init_head, init_model, project, standardize)
from .errors import DataError, EcgTextError, FormatError, NumericError
from .synth import SynthClassSpec, default_suite, gen_dataset, gen_record
from .textbank import (EmbeddingTable, PromptTemplate, build_bank, load_table,
                       lookup, render_prompt, save_table, synthetic_embed,
                       table_from_bytes, table_sha256, table_to_bytes)
from .train import (DecoupledAdam, GradCheckReport, TrainConfig, TrainState,
                    grad_check, init_state, state_from_checkpoint,
                    state_to_checkpoint, train, train_step)
from .zeroshot import (EvalReport, MappingTable, TaskSpec, classify,
                       eval_task, evaluate_projected, load_mapping,
                       render_report, task_spec, topk_accuracy,
                       MITBIH_LABELS, RHYTHM_LABELS, SUPERCLASS_LABELS)

__version__ = "0.1.0"
