import pytest

from embreg.config import PipelineConfig, apply_overrides, load_config, set_option
from embreg.errors import ShapeMismatch


def test_defaults():
    cfg = PipelineConfig()
    assert cfg.match_step == 4
    assert cfg.sscc_iterations == 5
    assert cfg.epsilon == 0.7
    assert cfg.coarse_stride == 4
    assert cfg.parameterization == "displacement"
    assert cfg.enable_instance is True


def test_load_config_parses_types_and_comments(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(
        "# full line comment\n"
        "match_step = 2\n"
        "epsilon = 0.5   # trailing comment\n"
        "intensity_term = lncc\n"
        "enable_coarse = false\n"
        "\n"
        "svf_steps=6\n"
    )
    cfg = load_config(path)
    assert cfg.match_step == 2
    assert cfg.epsilon == 0.5
    assert cfg.intensity_term == "lncc"
    assert cfg.enable_coarse is False
    assert cfg.svf_steps == 6
    # untouched keys keep their defaults
    assert cfg.coarse_stride == 4


def test_load_config_rejects_garbage(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("this is not a key value line\n")
    with pytest.raises(ShapeMismatch):
        load_config(path)


def test_set_option_unknown_key():
    with pytest.raises(ShapeMismatch):
        set_option(PipelineConfig(), "no_such_key", "1")


def test_set_option_bad_boolean():
    with pytest.raises(ShapeMismatch):
        set_option(PipelineConfig(), "enable_affine", "maybe")


@pytest.mark.parametrize("text,value", [("true", True), ("1", True), ("off", False), ("NO", False)])
def test_boolean_spellings(text, value):
    cfg = PipelineConfig()
    set_option(cfg, "enable_affine", text)
    assert cfg.enable_affine is value


def test_apply_overrides_wins_over_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("epsilon = 0.5\n")
    cfg = load_config(path)
    apply_overrides(cfg, ["epsilon=0.9", "coarse_reg_weight=2.5"])
    assert cfg.epsilon == 0.9
    assert cfg.coarse_reg_weight == 2.5


def test_apply_overrides_rejects_malformed_item():
    with pytest.raises(ShapeMismatch):
        apply_overrides(PipelineConfig(), ["epsilon0.9"])
