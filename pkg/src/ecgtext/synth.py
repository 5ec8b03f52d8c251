"""Deterministic synthetic 12-lead ECG generator.

Morphology is deliberately simple: a jittered train of Gaussian QRS bumps at a
class-specific beat rate, a slower sinusoid standing in for the T wave (scaled
per lead), and white noise. The goal is a separable, learnable surrogate
corpus for exercising the contrastive pipeline, not physiological realism.
Signals are 12 x 5000 samples at 500 Hz (10 s).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import EcgDataset, EcgRecord, LabelTable, N_LEADS, N_SAMPLES
from .errors import DataError

SAMPLING_RATE_HZ = 500.0
DURATION_S = N_SAMPLES / SAMPLING_RATE_HZ
QRS_AMPLITUDE_MV = 1.0


@dataclass(frozen=True)
class SynthClassSpec:
    label: str
    base_rate_hz: float
    qrs_width_s: float
    t_amp: tuple[float, ...]
    noise_std: float = 0.05
    arrhythmia_jitter: float = 0.0

    def __post_init__(self):
        if not self.label:
            raise DataError("class label must be non-empty")
        if not (0.5 <= self.base_rate_hz <= 4.0):
            raise DataError(f"base rate {self.base_rate_hz} outside [0.5, 4.0] Hz")
        if not (0.02 <= self.qrs_width_s <= 0.2):
            raise DataError(f"qrs width {self.qrs_width_s} outside [0.02, 0.2] s")
        if len(self.t_amp) != N_LEADS:
            raise DataError(f"t_amp must have {N_LEADS} entries")
        if self.noise_std < 0:
            raise DataError("noise std must be non-negative")
        if not (0.0 <= self.arrhythmia_jitter < 1.0):
            raise DataError("jitter fraction must be in [0, 1)")


def gen_record(spec: SynthClassSpec, patient_id: int, seed: int) -> EcgRecord:
    """One synthetic record, fully determined by (spec, patient_id, seed)."""
    rng = np.random.default_rng([seed, patient_id])
    t = np.arange(N_SAMPLES) / SAMPLING_RATE_HZ

    period = 1.0 / spec.base_rate_hz
    beat_times = []
    center = 0.5 * period
    while center < DURATION_S:
        beat_times.append(center)
        step = period * (1.0 + spec.arrhythmia_jitter * rng.uniform(-1.0, 1.0))
        center += step
    qrs = np.zeros(N_SAMPLES)
    for c in beat_times:
        qrs += QRS_AMPLITUDE_MV * np.exp(-0.5 * ((t - c) / spec.qrs_width_s) ** 2)

    # T-wave surrogate at half the beat rate, phase fixed per patient.
    phase = 2.0 * np.pi * rng.uniform()
    t_wave = np.sin(2.0 * np.pi * (spec.base_rate_hz / 2.0) * t + phase)

    samples = np.empty((N_LEADS, N_SAMPLES), dtype=np.float32)
    t_amp = np.asarray(spec.t_amp, dtype=np.float64)
    for lead in range(N_LEADS):
        sig = qrs + t_amp[lead] * t_wave
        if spec.noise_std > 0:
            sig = sig + rng.normal(0.0, spec.noise_std, N_SAMPLES)
        samples[lead] = sig.astype(np.float32)
    return EcgRecord(patient_id=patient_id, label_index=0, samples=samples)


def gen_dataset(specs: list[SynthClassSpec], records_per_class: int,
                patients_per_class: int, seed: int,
                first_patient_id: int = 1) -> EcgDataset:
    """Balanced dataset: per class, records are dealt round-robin over that
    class's own block of patient ids (ids never cross classes).

    ``first_patient_id`` offsets the whole id range so separately generated
    cohorts (e.g. a train file and a validation file) stay patient-disjoint.
    """
    if not specs:
        raise DataError("need at least one class spec")
    if records_per_class < 1 or patients_per_class < 1:
        raise DataError("records_per_class and patients_per_class must be positive")
    if first_patient_id < 0:
        raise DataError("first_patient_id must be non-negative")
    labels = [s.label for s in specs]
    table = LabelTable(tuple(labels))
    records = []
    for ci, spec in enumerate(specs):
        for r in range(records_per_class):
            pid = first_patient_id + ci * patients_per_class + (r % patients_per_class)
            rec_seed = int(np.random.SeedSequence([seed, ci, r]).generate_state(1)[0])
            rec = gen_record(spec, pid, rec_seed)
            rec.label_index = ci
            records.append(rec)
    return EcgDataset(sampling_rate_hz=SAMPLING_RATE_HZ, label_table=table,
                      records=records)


_NARROW_S = 0.03
_WIDE_S = 0.12

# Lead weighting patterns for the T-wave surrogate; two contrasts so width
# is not the only morphological cue. Lead II (index 1) stays below the QRS
# fundamental so the dominant spectral peak of lead II tracks the beat rate.
_T_AMP_A = (0.20, 0.08, 0.15, 0.10, 0.10, 0.15, 0.05, 0.10, 0.15, 0.20, 0.25, 0.30)
_T_AMP_B = (0.30, 0.06, 0.25, 0.20, 0.05, 0.10, 0.25, 0.20, 0.10, 0.05, 0.15, 0.10)


def default_suite() -> list[SynthClassSpec]:
    """Eight separable classes: four beat rates crossed with two QRS widths."""
    suite = []
    for rate in (1.0, 1.5, 2.0, 2.5):
        suite.append(SynthClassSpec(
            label=f"{rate:.1f} Hz narrow QRS rhythm",
            base_rate_hz=rate, qrs_width_s=_NARROW_S, t_amp=_T_AMP_A,
            noise_std=0.05, arrhythmia_jitter=0.02))
        suite.append(SynthClassSpec(
            label=f"{rate:.1f} Hz wide QRS rhythm",
            base_rate_hz=rate, qrs_width_s=_WIDE_S, t_amp=_T_AMP_B,
            noise_std=0.05, arrhythmia_jitter=0.02))
    return suite
