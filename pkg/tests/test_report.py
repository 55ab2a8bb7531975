import os

import numpy as np
import pytest

from boxsplit.report import (
    AlignmentRow,
    MetricReport,
    ReportRow,
    load_boxsets,
    parse_report_text,
    render_boxset_figure,
    render_report_csv,
    render_report_figures,
    render_report_text,
    save_boxsets,
)
from boxsplit.synthetic import generate_synthetic_shape


def sample_report():
    return MetricReport(
        seed=7,
        points_per_cloud=256,
        rows=[
            ReportRow("table", 5, "conditional", "classifier", "cd", 46.08, 0.014166, 75.87, 64, 180),
            ReportRow("table", 8, "conditional", "classifier", "cd", 47.08, 0.013923, 73.51, 64, 120),
            ReportRow("table", 5, "token", "classifier", "cd", 27.41, 0.024615, 91.39, 64, 180),
        ],
        alignment=[AlignmentRow("table", "self", 0.0003, 0.012, 0.01, 0.97)],
    )


class TestReportFormats:
    def test_text_roundtrip(self):
        report = sample_report()
        back = parse_report_text(render_report_text(report))
        assert back.seed == report.seed
        assert len(back.rows) == len(report.rows)
        for a, b in zip(report.rows, back.rows):
            assert a == b
        assert back.alignment == report.alignment

    def test_header_first_line(self):
        text = render_report_text(sample_report())
        assert text.splitlines()[0] == "boxsplit-report v1"

    def test_csv_row_count(self):
        csv = render_report_csv(sample_report())
        lines = csv.strip().splitlines()
        # header + 3 metrics per row + 4 metrics per alignment row
        assert len(lines) == 1 + 3 * 3 + 4

    def test_invalid_ranges_rejected(self):
        bad = sample_report()
        bad.rows[0].cov_pct = 120.0
        with pytest.raises(ValueError):
            render_report_text(bad)

    def test_figures_written(self, tmp_path):
        paths = render_report_figures(sample_report(), str(tmp_path))
        assert paths
        for p in paths:
            assert os.path.exists(p)
            assert os.path.getsize(p) > 0

    def test_boxset_gallery(self, tmp_path):
        sets = [
            [b.params() for b in generate_synthetic_shape("table", s)] for s in range(3)
        ]
        path = render_boxset_figure(sets, str(tmp_path / "gallery.png"))
        assert os.path.getsize(path) > 0


class TestBoxsetsFormat:
    def test_roundtrip(self, tmp_path):
        sets = [
            (0, np.stack([b.params() for b in generate_synthetic_shape("chair", 0)])),
            (3, np.stack([b.params() for b in generate_synthetic_shape("chair", 1)])),
        ]
        path = str(tmp_path / "sets.txt")
        save_boxsets(path, sets)
        back = load_boxsets(path)
        assert len(back) == 2
        for (la, pa), (lb, pb) in zip(sets, back):
            assert la == lb
            assert np.array_equal(pa, pb)

    def test_bad_header(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("nonsense\n")
        with pytest.raises(ValueError):
            load_boxsets(str(path))
