import pytest

from caaed.config import ExperimentConfig
from caaed.errors import ConfigError

MINIMAL = "[data]\nseed = 1\n[train]\nseed = 2\n"


def test_minimal_config_uses_defaults():
    cfg = ExperimentConfig.loads(MINIMAL)
    assert cfg.data.seed == 1 and cfg.train.seed == 2
    assert cfg.train.ss_end == 0.4 and cfg.decode.max_len == 200
    assert cfg.vocab.kind == "word-piece"


def test_seeds_are_mandatory():
    with pytest.raises(ConfigError, match="train.seed"):
        ExperimentConfig.loads("[data]\nseed = 1\n")
    with pytest.raises(ConfigError, match="data.seed"):
        ExperimentConfig.loads("[train]\nseed = 1\n")


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="lerning_rate"):
        ExperimentConfig.loads(MINIMAL + "lerning_rate = 3\n")


def test_unknown_section_rejected():
    with pytest.raises(ConfigError):
        ExperimentConfig.loads(MINIMAL + "[extras]\nx = 1\n")


def test_bad_value_rejected():
    with pytest.raises(ConfigError):
        ExperimentConfig.loads(MINIMAL.replace("seed = 2", "seed = two"))
    with pytest.raises(ConfigError):
        ExperimentConfig.loads(MINIMAL + "label_smoothing = 1.5\n")


def test_malformed_text():
    with pytest.raises(ConfigError):
        ExperimentConfig.loads("seed = 1\n")


def test_dumps_round_trip():
    cfg = ExperimentConfig.loads(MINIMAL + "lr = 0.005\nshuffle = false\n[vocab]\nkind = mixed-unit\n")
    back = ExperimentConfig.loads(cfg.dumps())
    assert back == cfg
    assert back.train.lr == 0.005 and back.train.shuffle is False


def test_language_and_holdout():
    cfg = ExperimentConfig.loads("[data]\nseed = 0\nsuffixes = ,s,ed\nholdout = talk+s, walk+ed\n"
                                 "suffix_weights = 2,1,1\n[train]\nseed = 0\n")
    lang = cfg.data.language()
    assert lang.suffixes == ("", "s", "ed")
    assert cfg.data.holdout_pairs() == [("talk", "s"), ("walk", "ed")]
    with pytest.raises(ConfigError):
        ExperimentConfig.loads("[data]\nseed = 0\nholdout = talks\n[train]\nseed = 0\n").data.holdout_pairs()
