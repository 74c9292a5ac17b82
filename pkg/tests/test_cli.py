import csv
import io
import json
import math

import pytest

from trideficit.cli import COMMANDS, EXIT_DEGENERATE, EXIT_DOMAIN, EXIT_USAGE, run
from trideficit.counterex import SEARCH_CSV_FIELDS
from trideficit.rare import TAIL_CSV_FIELDS


def call(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = run(list(argv), stdout=out, stderr=err)
    return code, out.getvalue(), err.getvalue()


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def error_line(err):
    return json.loads(err.strip().splitlines()[-1])


class TestExamples:
    def test_rate_half(self):
        code, out, _ = call("rate", "--q", "0.5")
        assert code == 0
        (r,) = rows(out)
        assert float(r["L_closed"]) == 2.0 and float(r["s_star_closed"]) == 0.0
        assert abs(float(r["L"]) - 2) <= 1e-8
        assert abs(float(r["s_star"])) <= 1e-6

    def test_rate_several(self):
        code, out, _ = call("rate", "--q", "0.1", "0.9")
        got = rows(out)
        assert [r["law"] for r in got] == ["0.1", "0.9"]
        for r in got:
            assert float(r["L"]) == pytest.approx(float(r["L_closed"]), abs=1e-8)

    def test_rate_general_law(self):
        code, out, _ = call("rate", "--atoms=-1@0.5,1@0.5")
        assert code == 0
        (r,) = rows(out)
        assert float(r["L"]) == pytest.approx(0.5, abs=1e-8)
        assert r["L_closed"] == "nan"

    def test_identity_check(self):
        code, out, _ = call("identity-check", "--n", "10", "--m", "20", "--samples", "100", "--seed", "7")
        assert code == 0
        got = rows(out)
        assert len(got) == 100
        assert all(r["residual"] == "0" for r in got)
        assert all(r["inequality_holds"] == "true" for r in got)
        assert got[0]["p"] == "4/9"

    def test_counterexample(self):
        code, out, _ = call("counterexample", "--q", "0.75")
        assert code == 0
        (r,) = rows(out)
        assert tuple(r) == SEARCH_CSV_FIELDS
        assert float(r["eta"]) > 0

    def test_counterexample_all_rows(self):
        code, out, _ = call("counterexample", "--q", "0.5", "--n-delta", "3", "--n-eps", "4", "--all-rows")
        got = rows(out)
        assert len(got) == 12
        assert max(float(r["eta"]) for r in got) <= 1e-3


class TestSubcommands:
    def test_spectrum(self):
        code, out, _ = call("spectrum", "--model", "gnp", "--n", "12", "--p", "0.4", "--samples", "5", "--seed", "1")
        assert code == 0
        for r in rows(out):
            assert float(r["cubic_sum"]) == pytest.approx(float(r["bulk_cubic"]) + float(r["extreme_cubic"]))
            assert float(r["lambda_min"]) <= float(r["lambda_second_min"]) <= float(r["lambda_max"])

    def test_net_verify(self):
        code, out, _ = call("net-verify", "--kind", "euclidean", "--d", "2", "--draws", "500", "--seed", "4")
        (r,) = rows(out)
        assert r["passed"] == "true" and float(r["max_distance"]) <= 0.5

    def test_bound_marks_vacuous_range(self):
        code, out, _ = call("bound", "--q", "0.5", "--n", "10", "--t", "1", "20")
        got = rows(out)
        assert got[0]["union_log_bound"] == "nan"
        assert float(got[1]["union_log_bound"]) < 0
        assert float(got[1]["hoeffding_log_bound"]) == pytest.approx(-0.5 * 400 * 2)

    def test_tail_estimate(self, tmp_path):
        path = tmp_path / "tail.csv"
        code, out, _ = call(
            "tail-estimate", "--model", "gnp", "--n", "16", "--p", "0.5", "--t", "0.03",
            "--samples", "4000", "--seed", "2", "-o", str(path),
        )
        assert code == 0
        got = rows(path.read_text())
        assert tuple(got[0]) == TAIL_CSV_FIELDS
        assert [r["estimator"] for r in got] == ["naive", "tilted"]
        assert "log_prob" in out  # summary table goes to stdout beside a file

    def test_structure_report(self):
        code, out, err = call(
            "structure-report", "--model", "gnm", "--n", "14", "--m", "45", "--t", "0.0",
            "--samples", "500", "--seed", "3",
        )
        assert code == 0
        got = rows(out)
        assert [r["share"] for r in got][0] == "lambda_min_share"
        assert int(got[0]["accepted"]) > 0
        assert "accepted" in err

    def test_cramer(self):
        code, out, _ = call("cramer", "--m", "250", "500")
        gaps = [float(r["gap"]) for r in rows(out)]
        assert gaps[1] <= gaps[0]

    def test_hypergeo(self):
        code, out, err = call("hypergeo", "--N", "200", "400", "--r", "1", "--s", "1")
        assert all(float(r["gap"]) == 0.0 for r in rows(out))


class TestErrors:
    def test_unknown_subcommand(self):
        code, _, err = call("bogus")
        assert code == EXIT_USAGE
        e = error_line(err)
        assert e["code"] == 2 and e["error"] == "usage"

    def test_bad_flag_type(self):
        code, _, err = call("rate", "--q", "half")
        assert code == EXIT_USAGE

    def test_seed_mandatory(self):
        for cmd in ("identity-check", "spectrum", "net-verify"):
            code, _, err = call(cmd)
            assert code == EXIT_DOMAIN
            assert "seed" in error_line(err)["message"]

    def test_domain_violation(self):
        code, _, err = call("rate", "--q", "1.5")
        assert code == EXIT_DOMAIN and error_line(err)["error"] == "domain"
        code, _, _ = call("tail-estimate", "--model", "gnp", "--n", "10", "--p", "0.5", "--t", "0.9", "--seed", "1")
        assert code == EXIT_DOMAIN
        code, _, _ = call("tail-estimate", "--model", "gnm", "--n", "10", "--seed", "1", "--t", "0.1")
        assert code == EXIT_DOMAIN

    def test_threshold_choice(self):
        code, _, err = call("tail-estimate", "--model", "gnp", "--n", "10", "--p", "0.5", "--seed", "1")
        assert code == EXIT_DOMAIN

    def test_degenerate_still_writes(self, tmp_path):
        path = tmp_path / "d.csv"
        code, _, err = call(
            "tail-estimate", "--model", "gnp", "--n", "20", "--p", "0.5", "--t", "0.12",
            "--samples", "500", "--seed", "3", "--estimator", "naive", "-o", str(path),
        )
        assert code == EXIT_DEGENERATE
        assert error_line(err)["code"] == 4
        (r,) = rows(path.read_text())
        assert r["log_prob"] == "-inf"

    def test_bad_workers(self):
        code, _, _ = call("cramer", "--workers", "0")
        assert code == EXIT_DOMAIN


class TestConfig:
    def test_file_and_override(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"n": 12, "m": 30, "samples": 3, "seed": 9}))
        _, out, _ = call("identity-check", "--config", str(cfg))
        assert len(rows(out)) == 3
        _, out, _ = call("identity-check", "--config", str(cfg), "--samples", "2")
        assert len(rows(out)) == 2
        assert rows(out)[0]["p"] == "5/11"

    def test_lists_and_switches(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"q": [0.3, 0.6], "positive-only": True}))
        _, out, _ = call("rate", "--config", str(cfg))
        assert [r["law"] for r in rows(out)] == ["0.3", "0.6"]

    def test_negative_values(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"atoms": "-1@0.25,0@0.5,1@0.25"}))
        code, out, _ = call("rate", "--config", str(cfg))
        assert code == 0

    @pytest.mark.parametrize("content", ['{"bogus": 1}', "[1, 2]", "{not json"])
    def test_bad_config(self, tmp_path, content):
        cfg = tmp_path / "c.json"
        cfg.write_text(content)
        code, _, err = call("rate", "--config", str(cfg))
        assert code == EXIT_DOMAIN

    def test_missing_config(self, tmp_path):
        code, _, _ = call("rate", "--config", str(tmp_path / "nope.json"))
        assert code == EXIT_DOMAIN


class TestDeterminism:
    def test_byte_identical_across_runs_and_workers(self, tmp_path):
        base = ["tail-estimate", "--model", "gnm", "--n", "16", "--m", "60", "--level", "0.05",
                "--pilot-samples", "3000", "--samples", "3000", "--seed", "11"]
        texts = []
        for i, workers in enumerate(("1", "1", "3")):
            path = tmp_path / f"{i}.csv"
            assert call(*base, "--workers", workers, "-o", str(path))[0] == 0
            texts.append(path.read_bytes())
        assert texts[0] == texts[1] == texts[2]

    def test_structure_report_workers(self):
        base = ["structure-report", "--model", "gnp", "--n", "12", "--p", "0.5", "--t", "0.02",
                "--samples", "3000", "--seed", "5"]
        assert call(*base)[1] == call(*base, "--workers", "4")[1]

    def test_seed_changes_output(self):
        a = call("spectrum", "--model", "gnm", "--n", "10", "--m", "20", "--samples", "2", "--seed", "1")[1]
        b = call("spectrum", "--model", "gnm", "--n", "10", "--m", "20", "--samples", "2", "--seed", "2")[1]
        assert a != b

    def test_float_format(self):
        _, out, _ = call("cramer", "--m", "250")
        r = rows(out)[0]
        assert r["q"] == "0.29999999999999999"
        assert len(r["empirical"].lstrip("-").replace(".", "").lstrip("0")) >= 16


class TestHelp:
    @pytest.mark.parametrize("name", sorted(COMMANDS))
    def test_schema_in_help(self, name, capsys):
        assert run([name, "--help"]) == 0
        text = capsys.readouterr().out
        assert "CSV columns:" in text

    def test_top_level_help(self, capsys):
        assert run(["--help"]) == 0
        assert "structure-report" in capsys.readouterr().out
