import io
import json

import pandas as pd
import pytest

from app.exceptions import ReportSchemaError
from app.models import AttackSpace, AttackSpec, EvalConfig, EvalReport, ThreatModel
from app.reporting import (
    SUMMARY_FILE,
    TIMINGS_FILE,
    attack_label,
    comparison_table,
    confusion_frame,
    load_reports,
    merge_reports,
    render_outputs,
    write_outputs,
)


def _report(model_name="cnn", label="FGSM linf", robust=0.25, clean=0.75, duration=1.5):
    return EvalReport(
        model_name=model_name,
        label=label,
        num_samples=4,
        num_attacked=3,
        clean_accuracy=clean,
        robust_accuracy=robust,
        attack_success_rate=2 / 3,
        confusion=[[1, 1], [2, 0]],
        per_class_robust_accuracy=[0.5, 0.0],
        misclassification_spread=[0.0, 0.0],
        prediction_sinks=[2 / 3, 1 / 3],
        top_sinks=[0, 1],
        class_names=["cat", "dog"],
        config=EvalConfig(threat=ThreatModel(), attack_preset="FGSM"),
        duration_seconds=duration,
    )


class TestComparisonTable:
    def test_best_model_flagged(self):
        table = comparison_table([
            {"label": "FGSM", "model_name": "a", "robust_accuracy": 0.3},
            {"label": "FGSM", "model_name": "b", "robust_accuracy": 0.5},
        ])
        assert table.loc["FGSM", "best"] == "b"

    def test_ties_name_every_model(self):
        table = comparison_table([
            {"label": "BIM-10", "model_name": "a", "robust_accuracy": 0.2},
            {"label": "BIM-10", "model_name": "b", "robust_accuracy": 0.2},
        ])
        assert table.loc["BIM-10", "best"] == "a|b"

    def test_rows_and_columns_keep_first_seen_order(self):
        table = comparison_table([
            {"label": "PGD", "model_name": "z", "robust_accuracy": 0.1},
            {"label": "FGSM", "model_name": "a", "robust_accuracy": 0.4},
        ])
        assert list(table.index) == ["PGD", "FGSM"]
        assert list(table.columns) == ["z", "a", "best"]

    def test_duplicate_rejected(self):
        with pytest.raises(ReportSchemaError):
            comparison_table([
                {"label": "FGSM", "model_name": "a", "robust_accuracy": 0.3},
                {"label": "FGSM", "model_name": "a", "robust_accuracy": 0.4},
            ])


class TestRenderOutputs:
    """Files produced by one evaluation run."""

    def test_file_set(self):
        files = render_outputs([_report(), _report(label="BIM-10 l2")])
        assert set(files) == {
            "reports/cnn/fgsm-linf.json", "reports/cnn/bim-10-l2.json",
            "confusion/cnn/fgsm-linf.csv", "confusion/cnn/bim-10-l2.csv",
            "robust_accuracy.csv", "clean_accuracy.csv", SUMMARY_FILE, TIMINGS_FILE,
        }

    def test_durations_only_in_timings(self):
        files = render_outputs([_report(duration=2.5)])
        assert "duration_seconds" not in files[SUMMARY_FILE]
        assert "duration_seconds" not in files["reports/cnn/fgsm-linf.json"]
        assert "2.5" in files[TIMINGS_FILE]

    def test_rendering_is_deterministic(self):
        fast, slow = render_outputs([_report(duration=1.0)]), render_outputs([_report(duration=9.0)])
        assert fast.keys() == slow.keys()
        for name in fast:
            if name != TIMINGS_FILE:
                assert fast[name] == slow[name], name

    @pytest.mark.parametrize("first,second", [(("A B", "FGSM linf"), ("a-b", "FGSM linf")),
                                              (("cnn", "FGSM linf"), ("cnn", "fgsm_linf"))])
    def test_colliding_file_names_rejected(self, first, second):
        with pytest.raises(ReportSchemaError):
            render_outputs([_report(*first), _report(*second)])

    def test_confusion_uses_class_names(self):
        frame = confusion_frame(_report())
        assert list(frame.index) == ["cat", "dog"]
        assert frame.loc["dog", "cat"] == 2

    def test_written_summary_reloads(self, tmp_path):
        report = _report()
        write_outputs(render_outputs([report]), tmp_path)
        (loaded,) = load_reports(tmp_path / SUMMARY_FILE)
        assert loaded.model_dump() == report.model_dump()
        assert (tmp_path / "confusion" / "cnn" / "fgsm-linf.csv").is_file()


class TestMergeReports:
    def _write(self, directory, reports):
        write_outputs(render_outputs(reports), directory)
        return directory / SUMMARY_FILE

    def test_models_side_by_side(self, tmp_path):
        first = self._write(tmp_path / "a", [_report("plain", "FGSM", 0.1), _report("plain", "BIM", 0.05)])
        second = self._write(tmp_path / "b", [_report("normalized", "FGSM", 0.3)])

        files = merge_reports([first, second])

        merged = json.loads(files["comparison.json"])
        assert merged["models"] == ["plain", "normalized"]
        assert merged["rows"][0] == {"attack": "FGSM", "robust_accuracy": {"plain": 0.1, "normalized": 0.3},
                                     "best": ["normalized"]}
        assert merged["rows"][1]["robust_accuracy"] == {"plain": 0.05, "normalized": None}
        assert merged["rows"][1]["best"] == ["plain"]
        csv = pd.read_csv(io.StringIO(files["comparison.csv"]), index_col=0)
        assert csv.loc["FGSM", "best"] == "normalized"

    def test_same_model_twice_rejected(self, tmp_path):
        first = self._write(tmp_path / "a", [_report("plain", "FGSM")])
        with pytest.raises(ReportSchemaError):
            merge_reports([first, first])

    def test_schema_version_checked(self, tmp_path):
        path = tmp_path / "old.json"
        path.write_text(json.dumps({"schema_version": 0, "reports": []}))
        with pytest.raises(ReportSchemaError):
            merge_reports([path])


class TestAttackLabel:
    def test_default_label(self):
        assert attack_label(AttackSpec(preset="FGSM"), "linf") == "FGSM linf"

    def test_space_and_quantization(self):
        spec = AttackSpec(preset="BIM-10", space=AttackSpace.NETWORK)
        assert attack_label(spec, "l2") == "BIM-10 l2 network"
        assert attack_label(AttackSpec(preset="FGSM", post_quantize=True), "linf") == "FGSM linf quantized"

    def test_explicit_label_wins(self):
        assert attack_label(AttackSpec(preset="FGSM", label="weak"), "linf") == "weak"

    def test_overridden_counts_name_the_attack_that_runs(self):
        spec = AttackSpec(preset="BIM-10", iterations=20)
        assert attack_label(spec, "linf", "BIM-20") == "BIM-20 linf"
