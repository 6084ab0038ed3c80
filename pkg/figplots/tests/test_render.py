import csv
import hashlib
from pathlib import Path

import pytest

from figplots import PlotSpec, SchemaError, read_sweep_csv, render
from figplots.cli import main

FIXTURE = Path(__file__).parent / "fixtures" / "golden_sweep.csv"


def sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class TestReadCsv:
    def test_fixture_parses(self):
        rows = read_sweep_csv(FIXTURE)
        assert len(rows) == 36
        assert {r["algo"] for r in rows} == {"VoS-SCA", "VoS-Fixed",
                                             "Random-SCA", "Random-Fixed"}

    def test_missing_column_named(self, tmp_path):
        bad = tmp_path / "bad.csv"
        with open(FIXTURE, newline="") as fh:
            rows = list(csv.reader(fh))
        drop = rows[0].index("product_vos")
        with open(bad, "w", newline="") as fh:
            writer = csv.writer(fh)
            for row in rows:
                writer.writerow([c for i, c in enumerate(row) if i != drop])
        with pytest.raises(SchemaError, match="product_vos"):
            read_sweep_csv(bad)

    def test_empty_rows_rejected(self, tmp_path):
        empty = tmp_path / "empty.csv"
        with open(FIXTURE, newline="") as fh:
            header = fh.readline()
        empty.write_text(header)
        with pytest.raises(SchemaError, match="no data rows"):
            read_sweep_csv(empty)


class TestRender:
    def test_golden_fixture_checksum_stable(self, tmp_path):
        out1 = render(PlotSpec(str(FIXTURE), str(tmp_path / "a.png")))
        out2 = render(PlotSpec(str(FIXTURE), str(tmp_path / "b.png")))
        assert sha256(out1) == sha256(out2)

    def test_input_never_mutated(self, tmp_path):
        before = sha256(FIXTURE)
        render(PlotSpec(str(FIXTURE), str(tmp_path / "c.png")))
        assert sha256(FIXTURE) == before

    def test_two_point_single_algorithm(self, tmp_path):
        small = tmp_path / "small.csv"
        with open(FIXTURE, newline="") as fh:
            reader = csv.DictReader(fh)
            rows = [r for r in reader if r["algo"] == "VoS-SCA"
                    and float(r["sweep_value"]) in (10.0, 20.0)]
            cols = reader.fieldnames
        with open(small, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=cols)
            writer.writeheader()
            writer.writerows(rows)
        out = render(PlotSpec(str(small), str(tmp_path / "one.png")))
        assert out.exists() and out.stat().st_size > 0

    def test_empty_data_writes_no_file(self, tmp_path):
        empty = tmp_path / "empty.csv"
        with open(FIXTURE, newline="") as fh:
            empty.write_text(fh.readline())
        target = tmp_path / "never.png"
        with pytest.raises(SchemaError):
            render(PlotSpec(str(empty), str(target)))
        assert not target.exists()

    def test_overwrite_refused_without_flag(self, tmp_path):
        target = tmp_path / "d.png"
        render(PlotSpec(str(FIXTURE), str(target)))
        with pytest.raises(FileExistsError):
            render(PlotSpec(str(FIXTURE), str(target)))
        render(PlotSpec(str(FIXTURE), str(target), overwrite=True))

    def test_missing_algorithm_warns_and_skips(self, tmp_path):
        spec = PlotSpec(str(FIXTURE), str(tmp_path / "e.png"),
                        styles={"VoS-SCA": {"color": "#112233", "marker": "o"},
                                "Genie": {"color": "#445566", "marker": "*"}})
        with pytest.warns(UserWarning, match="Genie"):
            out = render(spec)
        assert out.exists()

    def test_product_vos_metric(self, tmp_path):
        out = render(PlotSpec(str(FIXTURE), str(tmp_path / "f.png"),
                              metric="product_vos"))
        assert out.exists()

    def test_invalid_metric_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            PlotSpec(str(FIXTURE), str(tmp_path / "g.png"), metric="wall_ms")


class TestCli:
    def test_round_trip(self, tmp_path):
        out = tmp_path / "cli.png"
        assert main(["--csv", str(FIXTURE), "--out", str(out)]) == 0
        assert out.exists()

    def test_schema_failure_exit_code(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("a,b\n1,2\n")
        assert main(["--csv", str(bad), "--out", str(tmp_path / "x.png")]) == 1
        assert "missing required column" in capsys.readouterr().err

    def test_overwrite_flag(self, tmp_path):
        out = tmp_path / "cli2.png"
        assert main(["--csv", str(FIXTURE), "--out", str(out)]) == 0
        assert main(["--csv", str(FIXTURE), "--out", str(out)]) == 1
        assert main(["--csv", str(FIXTURE), "--out", str(out), "--overwrite"]) == 0
