"""
Unit tests for run configuration.
"""
from pathlib import Path

import pytest

from entityprobes.config import RunConfig, parse_value
from entityprobes.exceptions import MissingArtifactError, ValidationError
from entityprobes.taskgen import FAMILIES


class TestRunConfig:
    """Test cases for RunConfig."""

    def test_defaults(self):
        """Test defaults of the main knobs."""
        cfg = RunConfig()
        assert cfg.per_label == 500
        assert cfg.none_per_relation == 100
        assert cfg.detection_per_relation == 5
        assert cfg.candidates == 30
        assert cfg.patience == 3
        assert cfg.families == list(FAMILIES)

    def test_subtype_family_opt_in(self):
        """Test T-S is only included on request."""
        assert RunConfig(subtype_tasks=True).families[-1] == "T-S"

    def test_task_selection_order(self):
        """Test selected families come back in canonical order."""
        assert RunConfig(tasks=("P-R", "T-1")).families == ["T-1", "P-R"]

    def test_unknown_family(self):
        """Test unknown families are rejected."""
        with pytest.raises(ValidationError):
            RunConfig(tasks=("T-9",))

    @pytest.mark.parametrize("kwargs", [
        {"per_label": 0},
        {"jobs": 0},
        {"format": "xml"},
        {"mid_min": 10, "high_min": 10},
    ])
    def test_invalid(self, kwargs):
        """Test invalid values are rejected."""
        with pytest.raises(ValidationError):
            RunConfig(**kwargs)

    def test_unknown_key(self):
        """Test unknown keys are rejected."""
        with pytest.raises(ValidationError):
            RunConfig.from_dict({"perlabel": 3})

    def test_dict_round_trip(self):
        """Test to_dict/from_dict keeps every value."""
        cfg = RunConfig(tasks=("T-1",), per_label=7, location_roots=("Place", "Region"))
        assert RunConfig.from_dict(cfg.to_dict()) == cfg

    def test_overrides(self):
        """Test non-None overrides win and None leaves values alone."""
        cfg = RunConfig(per_label=4).with_overrides(per_label=None, seed=99, tasks=("R-C",))
        assert cfg.per_label == 4
        assert cfg.seed == 99
        assert cfg.tasks == ("R-C",)

    def test_override_unknown_key(self):
        """Test overriding an unknown key raises."""
        with pytest.raises(ValidationError):
            RunConfig().with_overrides(colour="blue")

    def test_derived_settings(self):
        """Test derived component configurations carry the run values."""
        cfg = RunConfig(seed=5, per_label=9, l2=0.5, max_resample_attempts=7, synth_dim=12, margin=2.0)
        assert cfg.probe_config().l2 == 0.5
        assert cfg.generation_settings().per_label == 9
        assert cfg.generation_settings().corruption.max_resample_attempts == 7
        assert cfg.synth_spec().dim == 12
        assert cfg.synth_spec().seed == 5
        assert cfg.linker_config().margin == 2.0
        assert cfg.linker_config().seed == 5

    def test_synth_seed_override(self):
        """Test an explicit synthetic seed replaces the master seed."""
        assert RunConfig(seed=5, synth_seed=11).synth_spec().seed == 11

    def test_echo_leaves_out_runtime_keys(self):
        """Test the echoed configuration does not depend on worker count or output directory."""
        a = RunConfig(jobs=1, out="run-a", seed=3).echo()
        b = RunConfig(jobs=4, out="run-b", seed=3).echo()
        assert a == b
        assert "jobs" not in a
        assert "out" not in a
        assert a["seed"] == 3


class TestConfigFile:
    """Test cases for reading configuration files."""

    def test_parse_file(self, write_file, tmp_path):
        """Test values are typed and relative paths resolved."""
        path = write_file("run.conf", "# comment\n\ntriples = data/t.tsv\nper_label = 3\n"
                                      "tasks = T-1, R-C\nstandardize = true\nl2 = 0.01\n")
        cfg = RunConfig.from_file(path)
        assert cfg.triples == str(tmp_path / "data" / "t.tsv")
        assert cfg.per_label == 3
        assert cfg.tasks == ("T-1", "R-C")
        assert cfg.standardize is True
        assert cfg.l2 == 0.01

    def test_absolute_paths_kept(self, write_file):
        """Test absolute paths are left untouched."""
        cfg = RunConfig.from_file(write_file("run.conf", "out = /tmp/probe-out\n"))
        assert cfg.out == "/tmp/probe-out"

    def test_embedding_list(self, write_file, tmp_path):
        """Test several embedding files are parsed and resolved one by one."""
        cfg = RunConfig.from_file(write_file("run.conf", "embeddings = a.vec, /abs/b.vec\n"))
        assert cfg.embeddings == (str(tmp_path / "a.vec"), "/abs/b.vec")

    def test_missing_file(self, tmp_path):
        """Test a missing config file raises."""
        with pytest.raises(MissingArtifactError):
            RunConfig.from_file(tmp_path / "absent.conf")

    def test_malformed_line(self, write_file):
        """Test a line without '=' raises with its location."""
        with pytest.raises(ValidationError, match=":2:"):
            RunConfig.from_file(write_file("run.conf", "seed = 1\nper_label 3\n"))

    def test_bad_value(self, write_file):
        """Test a non-integer integer value raises."""
        with pytest.raises(ValidationError):
            RunConfig.from_file(write_file("run.conf", "per_label = many\n"))

    def test_parse_value(self):
        """Test value parsing per key type."""
        assert parse_value("seed", "4") == 4
        assert parse_value("synth_seed", "8") == 8
        assert parse_value("margin", "0.5") == 0.5
        assert parse_value("per_word_rows", "False") is False
        assert parse_value("location_roots", "Place, ,Region") == ("Place", "Region")
        assert parse_value("out", "results") == "results"
        with pytest.raises(ValidationError):
            parse_value("standardize", "yes")

    def test_toy_config(self, toy_dir):
        """Test the bundled toy configuration parses."""
        cfg = RunConfig.from_file(toy_dir / "toy.conf")
        assert cfg.per_label == 4
        assert cfg.synth_dim == 16
        assert Path(cfg.out) == toy_dir / "out"


class TestRequire:
    """Test cases for required paths."""

    def test_not_configured(self):
        """Test a required key without value raises."""
        with pytest.raises(ValidationError):
            RunConfig().require("triples")

    def test_configured_but_missing(self, tmp_path):
        """Test a configured path that does not exist raises."""
        with pytest.raises(MissingArtifactError):
            RunConfig(triples=str(tmp_path / "none.tsv")).require("triples")

    def test_optional_path(self, write_file):
        """Test path() returns None for unset keys and the path otherwise."""
        existing = write_file("t.tsv", "")
        cfg = RunConfig(triples=str(existing))
        assert cfg.path("ontology") is None
        assert cfg.path("triples") == existing

    def test_embedding_paths(self, write_file, tmp_path):
        """Test embedding paths come back in order and a missing one raises."""
        first, second = write_file("a.vec", "1 1\nA 1\n"), write_file("b.vec", "1 1\nA 2\n")
        assert RunConfig(embeddings=(str(first), str(second))).embedding_paths() == [first, second]
        assert RunConfig().embedding_paths() == []
        with pytest.raises(MissingArtifactError):
            RunConfig(embeddings=(str(tmp_path / "none.vec"),)).embedding_paths()
