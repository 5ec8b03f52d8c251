import numpy as np
import pytest

from ecgtext.errors import DataError, NumericError
from ecgtext.synth import default_suite, gen_dataset
from ecgtext.textbank import EmbeddingTable, build_bank
from ecgtext.train import TrainConfig, init_state, state_to_checkpoint
from ecgtext.zeroshot import (MITBIH_LABELS, RHYTHM_LABELS, SUPERCLASS_LABELS,
                              EvalReport, ReportRow, TaskSpec, classify,
                              eval_task, evaluate_projected, load_mapping,
                              render_report, task_spec)


def brute_force_ranking(query, table: EmbeddingTable) -> list[str]:
    """Oracle: exhaustive scalar cosine comparison with stable ordering."""
    query = np.asarray(query, dtype=np.float64)
    scored = []
    for pos, lab in enumerate(table.labels):
        v = table.vectors[pos].astype(np.float64)
        cos = float(v @ query / (np.linalg.norm(v) * np.linalg.norm(query)))
        scored.append((-cos, pos, lab))
    scored.sort()
    return [lab for _, _, lab in scored]


class TestMappingTable:
    def test_shipped_file_has_98_fine_labels(self):
        mapping = load_mapping()
        assert len(mapping) == 98

    def test_superclass_vocabulary_has_exactly_five_members(self):
        mapping = load_mapping()
        used = {r.superclass for r in mapping.rows.values() if r.superclass}
        assert used == set(SUPERCLASS_LABELS)
        assert len(SUPERCLASS_LABELS) == 5

    def test_normal_row(self):
        row = load_mapping().rows["Normal"]
        assert row.superclass == "Normal ECG"
        assert row.mitbih == "Normal Beat"
        assert row.rhythm is None

    def test_complete_right_bundle_branch_block_row(self):
        row = load_mapping().rows["Complete Right Bundle Branch Block"]
        assert row.superclass == "Conduction Disturbance"
        assert row.mitbih == "Right bundle branch block beat"

    def test_tachycardia_excluded_everywhere(self):
        row = load_mapping().rows["Tachycardia"]
        assert row.superclass is None and row.rhythm is None and row.mitbih is None

    def test_surprising_rows_kept_verbatim(self):
        rows = load_mapping().rows
        assert rows["Severe Bradycardia"].superclass == "Mycardinal Infarction"
        assert rows["Sinoatrial Block"].superclass == "Mycardinal Infarction"
        assert (rows["Frequent Supraventricular Premature Contractions"].mitbih
                == "Premature ventricular contraction")

    def test_rhythm_column_vocabulary(self):
        used = {r.rhythm for r in load_mapping().rows.values() if r.rhythm}
        assert used == set(RHYTHM_LABELS)

    def test_mitbih_column_vocabulary(self):
        used = {r.mitbih for r in load_mapping().rows.values() if r.mitbih}
        assert used == set(MITBIH_LABELS)

    def test_duplicate_fine_label_rejected(self, tmp_path):
        path = tmp_path / "dup.tsv"
        path.write_text("fine_label\tsuperclass\trhythm\tmitbih\n"
                        "A\tHypertrophy\t\t\nA\t\t\t\n", encoding="utf-8")
        with pytest.raises(DataError, match="duplicate fine label"):
            load_mapping(path)

    def test_unknown_superset_value_rejected(self, tmp_path):
        path = tmp_path / "bad.tsv"
        path.write_text("fine_label\tsuperclass\trhythm\tmitbih\n"
                        "A\tNot A Superclass\t\t\n", encoding="utf-8")
        with pytest.raises(DataError, match="unknown superclass value"):
            load_mapping(path)

    def test_header_required(self, tmp_path):
        path = tmp_path / "nohdr.tsv"
        path.write_text("A\tHypertrophy\t\t\n", encoding="utf-8")
        with pytest.raises(DataError, match="header"):
            load_mapping(path)


class TestClassify:
    def test_exact_candidate_ranks_first(self):
        bank = build_bank(("a", "b", "c"), dim=8, seed=0)
        top = classify(bank.lookup("b"), bank, k=1)
        assert top[0][0] == "b"
        assert top[0][1] == pytest.approx(1.0, abs=1e-6)

    def test_full_k_is_a_permutation(self):
        bank = build_bank(tuple("abcdefgh"), dim=8, seed=1)
        ranked = classify(np.ones(8), bank, k=len(bank))
        assert sorted(lab for lab, _ in ranked) == sorted(bank.labels)

    def test_matches_brute_force_on_random_instances(self):
        rng = np.random.default_rng(2)
        for trial in range(200):
            n = int(rng.integers(2, 20))
            labels = tuple(f"cand-{trial}-{i}" for i in range(n))
            table = EmbeddingTable(labels, rng.standard_normal((n, 6)).astype(np.float32))
            q = rng.standard_normal(6)
            mine = [lab for lab, _ in classify(q, table, k=n)]
            assert mine == brute_force_ranking(q, table)

    def test_tie_break_uses_candidate_order(self):
        vecs = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]], np.float32)
        table = EmbeddingTable(("first", "other", "dup"), vecs)
        ranked = classify(np.array([1.0, 0.0]), table, k=3)
        assert [lab for lab, _ in ranked] == ["first", "dup", "other"]

    def test_zero_norm_query_rejected(self):
        bank = build_bank(("a", "b"), dim=4, seed=0)
        with pytest.raises(NumericError, match="zero-norm"):
            classify(np.zeros(4), bank, k=1)

    def test_k_bounds(self):
        bank = build_bank(("a", "b"), dim=4, seed=0)
        with pytest.raises(DataError):
            classify(np.ones(4), bank, k=3)


def _aligned_setup(n_classes=6, per_class=4, dim=10, seed=3):
    rng = np.random.default_rng(seed)
    labels = tuple(f"class-{i}" for i in range(n_classes))
    cand = rng.standard_normal((n_classes, dim))
    truths, proj = [], []
    for ci in range(n_classes):
        for _ in range(per_class):
            truths.append(labels[ci])
            proj.append(cand[ci])
    return TaskSpec("finegrained", labels), np.array(proj), truths, cand


class TestEvaluateProjected:
    def test_oracle_alignment_scores_everything(self):
        spec, proj, truths, cand = _aligned_setup()
        report = evaluate_projected(proj, truths, spec, cand)
        assert report.overall.top1 == 1.0 and report.overall.top5 == 1.0
        assert all(r.top1 == 1.0 for r in report.per_label)

    def test_rank_three_of_98_counts_for_top5_only(self):
        labels = tuple(f"c{i}" for i in range(98))
        cand = np.eye(98)
        query = 1.0 * cand[40] + 0.9 * cand[7] + 0.8 * cand[3]
        spec = TaskSpec("finegrained", labels)
        report = evaluate_projected(query[None, :], ["c3"], spec, cand)
        assert report.overall.support == 1
        assert report.overall.top1 == 0.0
        assert report.overall.top5 == 1.0

    def test_records_without_mapping_are_excluded(self):
        spec = TaskSpec("superclass", SUPERCLASS_LABELS)
        rng = np.random.default_rng(0)
        cand = rng.standard_normal((5, 6))
        proj = rng.standard_normal((4, 6))
        truths = ["Hypertrophy", None, "Normal ECG", None]
        report = evaluate_projected(proj, truths, spec, cand)
        assert report.overall.support == 2

    def test_all_excluded_raises_empty_set(self):
        spec = TaskSpec("rhythm", RHYTHM_LABELS)
        with pytest.raises(DataError, match="empty evaluable set"):
            evaluate_projected(np.ones((2, 3)), [None, None], spec, np.ones((2, 3)))

    def test_superset_reports_have_no_top5(self):
        rng = np.random.default_rng(1)
        spec = TaskSpec("superclass", SUPERCLASS_LABELS)
        report = evaluate_projected(rng.standard_normal((10, 4)),
                                    [SUPERCLASS_LABELS[0]] * 10, spec,
                                    rng.standard_normal((5, 4)))
        assert report.overall.top5 is None

    def test_topk_monotone_and_support_adds_up(self):
        rng = np.random.default_rng(4)
        labels = tuple(f"c{i}" for i in range(12))
        spec = TaskSpec("finegrained", labels)
        cand = rng.standard_normal((12, 5))
        proj = rng.standard_normal((60, 5))
        truths = [labels[int(rng.integers(12))] for _ in range(60)]
        report = evaluate_projected(proj, truths, spec, cand)
        assert report.overall.top1 <= report.overall.top5
        for row in report.per_label:
            assert row.top1 <= row.top5
        assert sum(r.support for r in report.per_label) == report.overall.support

    def test_binomial_null_for_five_class_task(self):
        # Oracle: with i.i.d. random query embeddings, fixed candidates, and
        # balanced ground truth, hits are Binomial(n, 1/5).
        rng = np.random.default_rng(12345)
        n_per, n_classes = 500, 5
        spec = TaskSpec("superclass", SUPERCLASS_LABELS)
        cand = rng.standard_normal((n_classes, 32))
        truths = [SUPERCLASS_LABELS[i % n_classes] for i in range(n_per * n_classes)]
        proj = rng.standard_normal((n_per * n_classes, 32))
        report = evaluate_projected(proj, truths, spec, cand)
        sigma = np.sqrt(0.2 * 0.8 / (n_per * n_classes))
        assert abs(report.overall.top1 - 0.2) <= 3 * sigma


@pytest.fixture(scope="module")
def setup():
    suite = default_suite()[:3]
    dataset = gen_dataset(suite, records_per_class=4, patients_per_class=2, seed=5)
    labels = list(dataset.label_table.labels) + list(SUPERCLASS_LABELS)
    bank = build_bank(labels, dim=16, seed=6)
    config = TrainConfig(batch_size=2, epochs=0, width_factor=1 / 16,
                         proj_dim=8, seed=1)
    ckpt = state_to_checkpoint(init_state(config, bank.dim))
    return dataset, bank, ckpt


class TestEvalTask:

    def test_finegrained_runs(self, setup):
        dataset, bank, ckpt = setup
        report = eval_task(ckpt, dataset, bank, load_mapping(), "finegrained")
        assert report.overall.support == len(dataset.records)
        assert 0.0 <= report.overall.top1 <= report.overall.top5 <= 1.0

    def test_superclass_needs_mapped_labels(self, setup):
        dataset, bank, ckpt = setup
        # Synthetic labels have no mapping rows, so the evaluable set is empty.
        with pytest.raises(DataError, match="empty evaluable set"):
            eval_task(ckpt, dataset, bank, load_mapping(), "superclass")

    def test_missing_candidate_labels_reported(self, setup):
        dataset, _, ckpt = setup
        bare = build_bank(dataset.label_table.labels, dim=16, seed=6)
        with pytest.raises(DataError, match="missing from embedding bank"):
            eval_task(ckpt, dataset, bare, load_mapping(), "superclass")

    def test_task_spec_candidates(self, setup):
        _, bank, _ = setup
        assert task_spec("finegrained", bank).candidates == bank.labels
        assert task_spec("superclass", bank).candidates == SUPERCLASS_LABELS
        assert task_spec("rhythm", bank).candidates == RHYTHM_LABELS
        assert task_spec("mitbih", bank).candidates == MITBIH_LABELS
        with pytest.raises(DataError):
            task_spec("form", bank)


class TestRenderReport:
    def test_percent_formatting(self):
        report = EvalReport("finegrained",
                            ReportRow("all", 250, 0.784, 0.9045),
                            [ReportRow("Normal", 250, 0.784, 0.9045)])
        text = render_report(report)
        assert "78.40%" in text and "90.45%" in text

    def test_empty_per_label_list(self):
        report = EvalReport("superclass", ReportRow("all", 3, 1 / 3, None), [])
        lines = render_report(report).splitlines()
        assert lines[0] == "label\tsupport\ttop1\ttop5"
        assert len(lines) == 2 and lines[1] == "all\t3\t33.33%\t"

    def test_rendering_is_deterministic(self, tmp_path):
        report = EvalReport("finegrained",
                            ReportRow("all", 2, 0.5, 1.0),
                            [ReportRow("x", 1, 0.0, 1.0), ReportRow("y", 1, 1.0, 1.0)])
        p1, p2 = tmp_path / "a.tsv", tmp_path / "b.tsv"
        render_report(report, p1)
        render_report(report, p2)
        assert p1.read_bytes() == p2.read_bytes()
