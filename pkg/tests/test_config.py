"""Config parsing, validation, and lossless text round-trips."""

import pytest

from pimann import config as cf
from pimann.errors import ConfigError


def test_defaults_roundtrip_losslessly():
    cfg = cf.RunConfig()
    assert cf.from_text(cf.to_text(cfg)) == cfg


def test_overrides_roundtrip(tmp_path):
    cfg = cf.RunConfig(
        base_path="a.fvecs",
        nclusters=32,
        cooccur_adoption_threshold=0.125,
        model_overrides={"plateau_bytes": 512, "small_slope": 0.75},
    )
    path = tmp_path / "run.cfg"
    cf.save(cfg, path)
    back = cf.load(path)
    assert back == cfg
    assert back.model().plateau_bytes == 512
    assert back.model().small_slope == 0.75


def test_parse_booleans_and_comments():
    text = "# comment\n\ncooccur_enabled = false\nseed=9\n"
    cfg = cf.from_text(text)
    assert cfg.cooccur_enabled is False
    assert cfg.seed == 9


def test_unknown_key_rejected():
    with pytest.raises(ConfigError) as info:
        cf.from_text("no_such_knob = 3\n")
    assert "no_such_knob" in str(info.value)


def test_bad_value_rejected():
    with pytest.raises(ConfigError):
        cf.from_text("nclusters = many\n")
    with pytest.raises(ConfigError):
        cf.from_text("cooccur_enabled = maybe\n")


def test_validation_errors(tmp_path):
    base = tmp_path / "b.fvecs"
    base.write_bytes(b"")
    query = tmp_path / "q.fvecs"
    query.write_bytes(b"")
    good = cf.RunConfig(base_path=str(base), query_path=str(query))
    good.validate()
    with pytest.raises(ConfigError):
        cf.RunConfig(base_path=str(base), query_path="missing.fvecs").validate()
    with pytest.raises(ConfigError):
        cf.RunConfig(base_path=str(base), query_path=str(query), nprobe=99).validate()
    with pytest.raises(ConfigError):
        cf.RunConfig(base_path=str(base), query_path=str(query), kstar=512).validate()
    with pytest.raises(ConfigError):
        cf.RunConfig(base_path=str(base), query_path=str(query), threads=0).validate()
