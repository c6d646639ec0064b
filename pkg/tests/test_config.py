"""INI experiment files and dotted overrides."""

import pytest

from gatedpool.config import PROFILES, desk_profile, load_config, paper_profile, parse_config
from gatedpool.model import ConfigError


class TestParse:
    def test_empty_text_gives_defaults(self):
        exp = parse_config("")
        assert exp.model.pooling.kind == "netvlad"
        assert exp.train.lr == 0.0002
        assert exp.data.num_videos == 20000

    def test_sections_and_types(self):
        exp = parse_config("""
[model]
hidden = 32
batch_norm = no
[pooling]
kind = netfv
clusters = 8
[train]
lr = 1e-3
decay_interval = 1_000_000
staircase = true
""")
        assert exp.model.hidden == 32 and exp.model.batch_norm is False
        assert exp.model.pooling.kind == "netfv" and exp.model.pooling.clusters == 8
        assert exp.train.lr == 1e-3 and exp.train.decay_interval == 1_000_000
        assert exp.train.staircase is True

    def test_overrides_win(self):
        exp = parse_config("[pooling]\nkind = bow\n", ["pooling.kind=netrvlad", "train.seed=4"])
        assert exp.model.pooling.kind == "netrvlad" and exp.train.seed == 4

    @pytest.mark.parametrize("text,overrides", [
        ("[model]\nwidth = 3\n", []),
        ("[optim]\nlr = 1\n", []),
        ("", ["pooling.tau=3"]),
        ("", ["pooling"]),
        ("", ["model.hidden=abc"]),
        ("", ["model.batch_norm=maybe"]),
        ("", ["pooling.kind=lstm"]),
        ("", ["train.batch_size=1"]),
        ("not an ini file", []),
    ])
    def test_rejections(self, text, overrides):
        with pytest.raises(ConfigError):
            parse_config(text, overrides)

    def test_resolved_dump_round_trips(self):
        exp = parse_config("", ["gating.after_pooling=glu", "data.frame_noise=0.3",
                                "classifier.null_expert=false"])
        again = parse_config(exp.dumps())
        assert again == exp

    def test_load_from_file(self, tmp_path):
        path = tmp_path / "x.cfg"
        path.write_text("[classifier]\nexperts = 4\n")
        assert load_config(path).model.classifier.experts == 4
        with pytest.raises(OSError):
            load_config(tmp_path / "missing.cfg")


class TestProfiles:
    def test_desk_matches_data_dims(self):
        exp = desk_profile()
        assert (exp.model.visual_dim, exp.model.audio_dim, exp.model.num_labels) == (
            exp.data.visual_dim, exp.data.audio_dim, exp.data.num_labels)

    def test_desk_recipe(self):
        exp = desk_profile()
        assert exp.data.suppression_pairs == 25 and exp.model.hidden == 128
        assert (exp.train.lr, exp.train.decay_interval, exp.train.epochs) == (0.002, 11_400, 10)

    def test_parse_on_top_of_a_profile(self):
        base = desk_profile()
        exp = parse_config("[model]\nhidden = 32\n", ["train.epochs=2"], base=base)
        assert exp.model.hidden == 32 and exp.train.epochs == 2
        assert exp.train.decay_interval == 11_400
        assert base.model.hidden == 128 and base.train.epochs == 10

    def test_profiles_registry(self):
        assert set(PROFILES) == {"desk", "paper"}
        assert PROFILES["paper"]().model.hidden == 1024

    def test_paper_dims(self):
        exp = paper_profile()
        assert (exp.model.visual_dim, exp.model.audio_dim, exp.model.hidden) == (1024, 128, 1024)
        assert exp.train.decay_interval == 4_000_000
