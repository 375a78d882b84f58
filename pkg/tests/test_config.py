import pytest

from textpress.codec.neural import NeuralCodecConfig
from textpress.config import dump_config, load_config, parse_config
from textpress.controller import ControllerConfig
from textpress.stiqa.model import StiqaConfig


def test_empty_config_gives_defaults():
    cfg = parse_config("")
    assert cfg == {"stiqa": StiqaConfig(), "controller": ControllerConfig(), "neural": NeuralCodecConfig()}
    assert load_config() == cfg


def test_overrides_are_typed():
    cfg = parse_config("""
        # comment
        stiqa.epochs = 7
        stiqa.augment = off   # inline comment
        stiqa.variant = prob
        controller.lam = 5
    """.replace("        ", ""))
    assert cfg["stiqa"].epochs == 7 and cfg["stiqa"].augment is False and cfg["stiqa"].variant == "prob"
    assert cfg["controller"].lam == 5.0 and isinstance(cfg["controller"].lam, float)


def test_dump_roundtrip(tmp_path):
    cfg = parse_config("controller.iterations = 4\nstiqa.learning_rate = 0.01\n")
    path = tmp_path / "c.cfg"
    path.write_text(dump_config(cfg))
    assert load_config(path) == cfg


@pytest.mark.parametrize("text", [
    "bogus.x = 1", "stiqa.nope = 1", "epochs = 3", "stiqa.augment = maybe",
    "stiqa.epochs = many", "controller.lam = -1", "stiqa.variant = huge",
])
def test_bad_config_rejected(text):
    with pytest.raises(ValueError):
        parse_config(text)
