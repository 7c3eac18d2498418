import pytest

from kbpn.config import TrainConfig, apply_overrides, dumps, from_dict, load, loads


def test_defaults_match_protocol():
    cfg = TrainConfig()
    assert cfg.train.batch_size == 8
    assert (cfg.train.lr_initial, cfg.train.lr_drop_to) == (1e-4, 1e-5)
    assert cfg.data.sigma_range == (0.2, 4.0)
    assert cfg.model.kernel_size == 21 and cfg.model.down_mode == "area"
    assert cfg.data.lr_patch_size == 32
    assert cfg.train.resolved_drop_step() == 750


def test_round_trip_text():
    cfg = apply_overrides(TrainConfig(), {"model.variant": "kcbpn", "train.seed": 5,
                                          "data.sigma_range": "0.5, 2.0", "train.drop_step": 10,
                                          "data.dataset_dir": "/data/hr", "run_dir": "runs/x"})
    again = loads(dumps(cfg))
    assert again == cfg
    assert from_dict(cfg.to_dict()) == cfg


def test_file_then_overrides(tmp_path):
    path = tmp_path / "exp.ini"
    path.write_text("[model]\nvariant = dbpn_bl\nstages = 3\n[train]\nseed = 1\n")
    cfg = load(path)
    assert (cfg.model.variant, cfg.model.stages, cfg.train.seed) == ("dbpn_bl", 3, 1)
    assert cfg.model.base_channels == 64  # untouched default
    cfg = apply_overrides(cfg, {"train.seed": "9", "model.residual_feedback": "false"})
    assert cfg.train.seed == 9 and cfg.model.residual_feedback is False


def test_optional_values_parse_none():
    cfg = loads("[train]\nseed = none\ndrop_step = none\n")
    assert cfg.train.seed is None and cfg.train.drop_step is None


@pytest.mark.parametrize("text", ["[bogus]\nx = 1\n", "[train]\nnot_a_key = 1\n", "[run]\nfoo = 1\n"])
def test_unknown_keys_rejected(text):
    with pytest.raises(KeyError):
        loads(text)


@pytest.mark.parametrize("override", [{"train.batch_size": 0}, {"data.sigma_range": "0, 4"},
                                      {"data.sigma_range": "1, 11"}, {"data.blur_family": "motion"},
                                      {"model.variant": "srcnn"}])
def test_invalid_values_rejected(override):
    with pytest.raises(ValueError):
        apply_overrides(TrainConfig(), override)
