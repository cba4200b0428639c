import csv
import json
import math
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from threshreg.evaluation import TuningGrid
from threshreg.experiment import (RECORD_FIELDS, ConfigError, ExperimentSpec, MethodSpec, ResultStore,
                                  bundled_configs, emit_tables, load_config, markdown_table, read_replicates, run_experiment,
                                  run_replicate)
from threshreg.penalty import Penalty

CONFIG_DIR = Path(__file__).resolve().parents[1] / "src" / "threshreg" / "configs"


def tiny_spec(setting="linear", reps=2, **kw):
    base = dict(setting=setting, n=30, p=12, r=0.25, replications=reps,
                methods=(MethodSpec("SCAD_t", Penalty.parse("scad")),
                         MethodSpec("SICA_t", Penalty.parse("sica"))),
                tuning=TuningGrid(n_lambda=8), master_seed=7, test_size=500)
    base.update(kw)
    return ExperimentSpec(**base)


class TestSpec:
    def test_method_defaults(self):
        m = MethodSpec.from_dict({"penalty": "scad"})
        assert m.name == "SCAD_t" and m.thresholded and m.penalty.a == 3.7
        m = MethodSpec.from_dict({"penalty": "scad", "thresholded": False})
        assert m.name == "SCAD"
        with pytest.raises(ConfigError):
            MethodSpec.from_dict({"a": 3})

    def test_validation(self):
        with pytest.raises(ConfigError):
            tiny_spec(methods=())
        with pytest.raises(ConfigError):
            tiny_spec(reps=0)
        with pytest.raises(ConfigError):
            tiny_spec(setting="gamma")
        with pytest.raises(ConfigError):
            tiny_spec(methods=(MethodSpec("Oracle", Penalty.parse("l1")),))
        with pytest.raises(ConfigError):
            tiny_spec(setting="csv", csv_path="x.csv", response="y", csv_family="gaussian")

    def test_from_dict_errors(self):
        with pytest.raises(ConfigError):
            ExperimentSpec.from_dict({"setting": "linear", "n": 10, "p": 10, "bogus": 1,
                                      "methods": [{"penalty": "l1"}]})
        with pytest.raises(ConfigError):
            ExperimentSpec.from_dict({"setting": "linear", "n": 10, "p": 10,
                                      "methods": [{"penalty": "scad", "a": 1.0}]})

    def test_load_config_errors(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "missing.json")
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        with pytest.raises(ConfigError):
            load_config(bad)
        bad.write_text("[1, 2]")
        with pytest.raises(ConfigError):
            load_config(bad)

    @pytest.mark.parametrize("path", sorted(CONFIG_DIR.glob("*.json")), ids=lambda p: p.stem)
    def test_shipped_configs_load(self, path):
        spec = load_config(path)
        assert spec.replications >= 1 and spec.methods
        assert "_comment" in json.loads(path.read_text())

    def test_bundled_config_by_name(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        assert "linear_desk" in bundled_configs()
        assert load_config("linear_desk") == load_config(CONFIG_DIR / "linear_desk.json")
        (tmp_path / "linear_desk").write_text("{not json")
        with pytest.raises(ConfigError):
            load_config("linear_desk")

    def test_method_names_include_oracle(self):
        assert tiny_spec().method_names == ["SCAD_t", "SICA_t", "Oracle"]
        assert tiny_spec(include_oracle=False).method_names == ["SCAD_t", "SICA_t"]


class TestReplicates:
    @pytest.mark.parametrize("setting", ["linear", "logistic", "poisson"])
    def test_one_record_per_method(self, setting):
        spec = tiny_spec(setting, n=60, p=12)
        recs = run_replicate(spec, 0)
        assert [r["method"] for r in recs] == spec.method_names
        assert all(set(r) == set(RECORD_FIELDS) for r in recs)
        assert all(r["status"] == "ok" for r in recs)

    def test_replicate_is_deterministic(self):
        spec = tiny_spec()
        a, b = run_replicate(spec, 1), run_replicate(spec, 1)
        strip = [{k: v for k, v in r.items() if k != "seconds"} for r in a]
        assert strip == [{k: v for k, v in r.items() if k != "seconds"} for r in b]

    def test_csv_setting(self, tmp_path):
        rng = np.random.default_rng(0)
        X = rng.standard_normal((80, 6))
        y = X[:, 0] - X[:, 2] + 0.3 * rng.standard_normal(80)
        f = tmp_path / "d.csv"
        with f.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{j}" for j in range(6)] + ["y"])
            for i in range(80):
                w.writerow([repr(float(v)) for v in X[i]] + [repr(float(y[i]))])
        spec = ExperimentSpec.from_dict({
            "setting": "csv", "replications": 2, "methods": [{"penalty": "scad"}],
            "tuning": {"method": "kfold", "k": 3, "n_lambda": 6},
            "csv": {"path": str(f), "response": "y", "family": "gaussian"}})
        store = run_experiment(spec, output_dir=tmp_path / "out")
        assert [r["status"] for r in store.records] == ["ok", "ok"]
        assert all(r["pe"] > 0 for r in store.records)


class TestRunner:
    def test_store_and_tables(self, tmp_path):
        spec = tiny_spec(reps=3)
        store = run_experiment(spec, output_dir=tmp_path)
        assert len(store.records) == 3 * len(spec.method_names)
        files = emit_tables(store, output_dir=tmp_path)
        names = {p.name for p in files}
        assert {"aggregate.csv", "aggregate.json", "aggregate.md", "path.csv"} <= names
        assert (tmp_path / "replicates.csv").exists() and (tmp_path / "config.json").exists()
        doc = json.loads((tmp_path / "aggregate.json").read_text())
        assert "consistency_probability" in doc["methods"]["SCAD_t"]
        md = (tmp_path / "aggregate.md").read_text()
        assert md.startswith("| Measure | SCAD_t | SICA_t | Oracle |")
        for label in ("PE", "L2 loss", "L1 loss", "Linf loss", "FP", "FN", "sigma_hat"):
            assert f"| {label} |" in md

    def test_aggregate_csv_round_trip(self, tmp_path):
        store = run_experiment(tiny_spec(reps=3), output_dir=tmp_path)
        emit_tables(store, ["csv"], tmp_path)
        with (tmp_path / "aggregate.csv").open() as fh:
            rows = list(csv.DictReader(fh))
        agg = store.aggregate()
        assert len(rows) == len(agg)
        for row, a in zip(rows, agg):
            assert (row["method"], row["measure"]) == (a["method"], a["measure"])
            assert float(row["value"]) == a["value"] and float(row["se"]) == a["se"]

    def test_standard_error_definition(self, tmp_path):
        store = run_experiment(tiny_spec(reps=4), output_dir=tmp_path)
        pe = [r["pe"] for r in store.records if r["method"] == "SCAD_t"]
        v, s = store.table()["SCAD_t"]["pe"]
        assert v == pytest.approx(np.mean(pe)) and s == pytest.approx(np.std(pe, ddof=1) / 2)

    def test_poisson_uses_trimmed_means(self, tmp_path):
        spec = tiny_spec("poisson", reps=2, n=60)
        store = run_experiment(spec, output_dir=tmp_path, with_path=False)
        assert store.statistic == "trimmed_mean"
        emit_tables(store, ["csv", "markdown"], tmp_path)
        assert "trimmed_mean" in (tmp_path / "aggregate.csv").read_text()
        assert "5% trimmed means" in (tmp_path / "aggregate.md").read_text()

    def test_single_record_store(self, tmp_path):
        spec = tiny_spec(reps=1, include_oracle=False,
                         methods=(MethodSpec("L1_t", Penalty.parse("l1")),))
        store = run_experiment(spec, output_dir=tmp_path, with_path=False)
        assert len(store.records) == 1
        assert emit_tables(store, output_dir=tmp_path)
        with pytest.raises(ValueError):
            emit_tables(ResultStore(spec), output_dir=tmp_path)

    def test_resume_after_interruption(self, tmp_path):
        spec = tiny_spec(reps=3)
        full = run_experiment(spec, output_dir=tmp_path / "a", with_path=False)
        emit_tables(full, ["csv"], tmp_path / "a")
        # interrupted run: two complete replicates and a partial third
        part = tmp_path / "b"
        run_experiment(replace(spec, replications=2), output_dir=part, with_path=False)
        with (part / "replicates.csv").open("a") as fh:
            fh.write("2,SCAD_t,ok" + "," * (len(RECORD_FIELDS) - 3) + "\n")
        assert len(read_replicates(part / "replicates.csv")) == 7
        resumed = run_experiment(spec, output_dir=part, with_path=False)
        emit_tables(resumed, ["csv"], part)
        assert len(read_replicates(part / "replicates.csv")) == 9
        assert (part / "aggregate.csv").read_bytes() == (tmp_path / "a" / "aggregate.csv").read_bytes()

    def test_workers_do_not_change_aggregate(self, tmp_path):
        spec = tiny_spec(reps=4)
        out = []
        for w in (1, 2):
            d = tmp_path / f"w{w}"
            emit_tables(run_experiment(spec, workers=w, output_dir=d, with_path=False), ["csv"], d)
            out.append((d / "aggregate.csv").read_bytes())
        assert out[0] == out[1]

    def test_read_replicates_rejects_foreign_file(self, tmp_path):
        f = tmp_path / "replicates.csv"
        f.write_text("a,b\n1,2\n")
        from threshreg.exceptions import DataError
        with pytest.raises(DataError):
            read_replicates(f)

    def test_markdown_table_contents(self, tmp_path):
        store = run_experiment(tiny_spec(reps=2), output_dir=tmp_path, with_path=False)
        md = markdown_table(store)
        v, s = store.table()["SCAD_t"]["pe"]
        assert f"{v:.4f} ({s:.4f})" in md
        assert not math.isnan(v)
