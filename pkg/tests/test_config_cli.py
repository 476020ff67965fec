import json
import shutil

import pytest

from leakhound.cli import main
from leakhound.config import (ConfigError, PipelineConfig, dump_config, load_config, parse_config,
                              with_overrides)
from leakhound.pipeline import PREDICTIONS, PROFILE, model_file

SMALL = ["--epochs", "4", "--n-val", "15", "--n-perturbations", "300"]


class TestConfig:
    def test_parse_sections(self):
        cfg = parse_config("[run]\nseed = 7\noutput = o\n\n[features]\nfreq_t = 5\ntfidf_t = none\n"
                           "[model]\nprune = no\nkind = dt\n[split]\ntrain_domains = a.com, b.com\n")
        assert cfg.seed == 7 and cfg.output == "o" and cfg.features.freq_t == 5
        assert cfg.features.tfidf_t is None and cfg.model.prune is False
        assert cfg.split.train_domains == ("a.com", "b.com")

    def test_seed_required(self):
        with pytest.raises(ConfigError):
            parse_config("[features]\nfreq_t = 3\n")

    @pytest.mark.parametrize("text", ["[run]\nseed = 1\nbogus = 2\n", "[run]\nseed = x\n",
                                      "[nowhere]\na = 1\n[run]\nseed = 1\n",
                                      "[run]\nseed = 1\n[model]\nprune = maybe\n",
                                      "[run]\nseed = 1\n[model]\nepochs = many\n"])
    def test_bad_config(self, text):
        with pytest.raises(ConfigError):
            parse_config(text)

    def test_round_trip(self, tmp_path):
        cfg = with_overrides(PipelineConfig(seed=4), {"features.tfidf_t": 0.25, "split.test_domains": ("x.org",),
                                                      "lime.kernel_width": 1.5, "model.max_depth": None})
        path = tmp_path / "c.ini"
        path.write_text(dump_config(cfg))
        assert load_config(path) == cfg

    def test_overrides_skip_none(self):
        cfg = with_overrides(PipelineConfig(), {"seed": 3, "model.epochs": None, "lime.n_val": 9})
        assert cfg.seed == 3 and cfg.model.epochs == 50 and cfg.lime.n_val == 9

    @pytest.mark.parametrize("overrides", [{"split.train_domains": ("a",), "split.test_domains": ("a", "b")},
                                           {"model.kind": "svm"}, {"model.arch": "tiny"}, {"threads": 0},
                                           {"split.test_fraction": 0.6, "split.val_fraction": 0.5},
                                           {"model.alpha": 0.0}, {"input.paths": ("/no/such/file",)},
                                           {"features.tfidf_t": -1.0}, {"features.freq_t": 0},
                                           {"features.heuristic1_threshold": 1.5}])
    def test_validation(self, overrides):
        with pytest.raises(ConfigError):
            with_overrides(PipelineConfig(), overrides).validate()


@pytest.fixture(scope="module")
def generated(tmp_path_factory):
    out = tmp_path_factory.mktemp("gen")
    assert main(["generate", "--n", "500", "--seed", "3", "--out", str(out)]) == 0
    return out


def fresh(generated, tmp_path, name="run"):
    out = tmp_path / name
    out.mkdir()
    shutil.copy(generated / "corpus.fl", out / "corpus.fl")
    return out


class TestCli:
    def test_run_end_to_end(self, generated, tmp_path, capsys):
        out = fresh(generated, tmp_path)
        assert main(["run", "--out", str(out), "--seed", "3", *SMALL]) == 0
        assert "Model results" in capsys.readouterr().out
        report = json.loads((out / "report.json").read_text())
        names = [r["model"] for r in report["results"]]
        assert names[0] == "DT" and names[1].startswith("DT pruned") and "NN paper-reduced" in names
        assert report["config"]["seed"] == 3

    def test_same_seed_gives_identical_models(self, generated, tmp_path):
        outs = [fresh(generated, tmp_path, n) for n in ("a", "b")]
        for out in outs:
            assert main(["run", "--out", str(out), "--seed", "5", "--no-explain", "--epochs", "3"]) == 0
        for name in (model_file("nn"), model_file("dt")):
            assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()

    def test_overlapping_domains(self, generated, tmp_path, capsys):
        out = fresh(generated, tmp_path)
        code = main(["run", "--out", str(out), "--seed", "1", "--train-domains", "a.com,b.com",
                     "--test-domains", "b.com"])
        assert code == 2 and "overlap" in capsys.readouterr().err

    def test_unknown_format_is_usage_error(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["ingest", "x.log", "--format", "pcap", "--seed", "1"])
        assert exc.value.code == 2

    def test_missing_model_file(self, generated, tmp_path):
        out = fresh(generated, tmp_path)
        code = main(["detect", "--model-file", str(out / "nope.lhmd"), "--corpus", str(out / "corpus.fl"),
                     "--out", str(out), "--seed", "1"])
        assert code == 2

    def test_n_val_too_large(self, generated, tmp_path, capsys):
        out = fresh(generated, tmp_path)
        code = main(["run", "--out", str(out), "--seed", "1", "--epochs", "2", "--n-val", "100000"])
        assert code == 2 and "--n-val" in capsys.readouterr().err

    def test_divergence_exit_code(self, generated, tmp_path):
        out = fresh(generated, tmp_path)
        code = main(["run", "--out", str(out), "--seed", "1", "--model", "nn", "--epochs", "2",
                     "--learning-rate", "1e300", "--no-explain"])
        assert code == 4

    def test_empty_input(self, tmp_path, caplog):
        empty = tmp_path / "empty.fl"
        empty.write_text("")
        out = tmp_path / "o"
        assert main(["ingest", str(empty), "--out", str(out), "--seed", "1"]) == 0
        assert "empty corpus" in caplog.text
        assert (out / "corpus.fl").read_bytes() == b""

    def test_empty_vocabulary_exit_code(self, generated, tmp_path):
        out = fresh(generated, tmp_path)
        code = main(["run", "--out", str(out), "--seed", "1", "--h1-threshold", "1.0", "--no-explain"])
        assert code == 3

    def test_stagewise_and_detect_with_profile(self, generated, tmp_path):
        out = fresh(generated, tmp_path)
        common = ["--out", str(out), "--seed", "2"]
        for cmd in (["label"], ["featurize"], ["train", "--model", "dt"]):
            assert main(cmd + common) == 0
        corpus = (out / "corpus.fl").read_text()
        subject = next(line for line in (generated / "truth_findings.tsv").read_text().splitlines()[1:]
                       if "device_identifier" in line).split("\t")[-1]
        assert subject in corpus
        code = main(["detect", "--model-file", str(out / model_file("dt")), "--corpus", str(out / "corpus.fl"),
                     "--profile", subject] + common)
        assert code == 0
        rows = (out / PREDICTIONS).read_text().splitlines()
        assert rows[0] == "flow_id,probability,predicted_label,true_label" and len(rows) == 501
        assert (out / PROFILE).read_text().startswith(f"subject: {subject}")
