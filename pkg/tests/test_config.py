from __future__ import annotations

import pytest
from pydantic import ValidationError

from replaylab.core.config import (
    RESOLVED_CONFIG_NAME,
    AppConfig,
    dump_study_config,
    get_settings,
    load_study_config,
    parse_dotted,
    write_resolved_config,
)
from replaylab.core.errors import ConfigError
from replaylab.core.logging import resolve_level
from replaylab.schemas.study import EnvSection, StudyConfig, StudySection
from replaylab.schemas.variant import TargetSpec, VariantSpec


def test_empty_config_is_all_defaults():
    config = load_study_config()
    assert config == StudyConfig()
    assert config.replay.ratio == 0.25
    assert config.agent.variant_spec() == VariantSpec.dqn()


def test_invalid_value_names_the_key():
    with pytest.raises(ConfigError) as excinfo:
        load_study_config(overrides=["replay.ratio=-1"])
    assert excinfo.value.key == "replay.ratio"
    assert str(excinfo.value).startswith("replay.ratio:")


@pytest.mark.parametrize(
    ("override", "key"),
    [("replay.bogus=1", "replay.bogus"), ("bogus.field=1", "bogus"), ("nosection=1", "nosection")],
)
def test_unknown_keys_are_rejected(override, key):
    with pytest.raises(ConfigError) as excinfo:
        load_study_config(overrides=[override])
    assert excinfo.value.key == key


def test_line_without_assignment_is_rejected():
    with pytest.raises(ConfigError, match="expected 'key = value'"):
        parse_dotted(["replay.ratio 0.5"])


def test_parse_dotted_values():
    tree = parse_dotted(
        [
            "# study setup",
            "",
            'study.envs = ["chain", "gridworld+noise"]',
            "env.name = chain",
            "replay.ratio = 0.5",
            "agent.use_per = true",
            "offline.dataset = null",
        ]
    )
    assert tree == {
        "study": {"envs": ["chain", "gridworld+noise"]},
        "env": {"name": "chain"},
        "replay": {"ratio": 0.5},
        "agent": {"use_per": True},
        "offline": {"dataset": None},
    }


def test_overrides_apply_after_the_file(tmp_path):
    path = tmp_path / "study.conf"
    path.write_text("replay.ratio = 0.5\nreplay.capacity = 100\n")

    config = load_study_config(path, ["replay.ratio=2"], defaults={"replay": {"batch_size": 8}})
    assert (config.replay.ratio, config.replay.capacity, config.replay.batch_size) == (2.0, 100, 8)


def test_missing_file_is_a_config_error(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_study_config(tmp_path / "absent.conf")


def test_dump_then_load_reproduces_the_config(tmp_path):
    config = load_study_config(
        overrides=[
            'study.envs=["chain"]',
            "replay.mode=fixed_oldest",
            "replay.oldest_age=300",
            "agent.variant=rainbow",
            "agent.v_min=-1.5",
            "grid.capacities=[100, 200]",
        ]
    )
    path = write_resolved_config(config, tmp_path)

    assert path.name == RESOLVED_CONFIG_NAME
    assert load_study_config(path) == config
    assert dump_study_config(load_study_config(path)) == path.read_text()


def test_app_settings_read_the_environment(monkeypatch, tmp_path):
    monkeypatch.setenv("REPLAYLAB_WORKERS", "3")
    monkeypatch.setenv("REPLAYLAB_OUTPUT_DIR", str(tmp_path))
    monkeypatch.setenv("LOG_LEVEL", "DEBUG")
    get_settings.cache_clear()
    try:
        settings = get_settings()
        assert (settings.workers, settings.output_dir, settings.log_level) == (3, tmp_path, "DEBUG")
    finally:
        get_settings.cache_clear()


def test_app_settings_reject_zero_workers(monkeypatch):
    monkeypatch.setenv("REPLAYLAB_WORKERS", "0")
    with pytest.raises(ValidationError):
        AppConfig()
    get_settings.cache_clear()
    try:
        with pytest.raises(ConfigError) as excinfo:
            get_settings()
    finally:
        get_settings.cache_clear()
    assert excinfo.value.key == "REPLAYLAB_WORKERS"


def test_fixed_oldest_mode_needs_an_age():
    with pytest.raises(ConfigError) as excinfo:
        load_study_config(overrides=["replay.mode=fixed_oldest"])
    assert excinfo.value.key == "replay.oldest_age"

    config = load_study_config(overrides=["replay.mode=fixed_oldest", "replay.oldest_age=250"])
    assert (config.replay.mode, config.replay.oldest_age) == ("fixed_oldest", 250)
    assert load_study_config(overrides=["replay.oldest_age=250"]).replay.mode == "fixed_ratio"


def test_study_section_validation():
    with pytest.raises(ValidationError):
        StudySection(envs=["pong"])
    with pytest.raises(ValidationError):
        StudySection(sticky_levels=[1.5])
    assert StudySection(envs=["sparse_maze+noise"]).envs == ["sparse_maze+noise"]


def test_env_labels():
    assert EnvSection(name="gridworld").label == "gridworld"
    assert EnvSection(name="gridworld", reward_noise=True, sticky=0.25).label == "gridworld+noise/sticky0.25"


def test_variant_presets():
    dqn = VariantSpec.dqn()
    rainbow = VariantSpec.rainbow()
    assert (dqn.use_per, dqn.use_adam, dqn.use_c51, dqn.n) == (False, False, False, 1)
    assert (rainbow.use_per, rainbow.use_adam, rainbow.use_c51, rainbow.n) == (True, True, True, 3)
    assert (dqn.name, rainbow.name) == ("dqn", "rainbow")

    with pytest.raises(ValidationError):
        VariantSpec(base="dqn", use_per=True)
    with pytest.raises(ValidationError):
        VariantSpec(base="rainbow", use_per=True, use_adam=True, use_c51=True, n=5)


def test_variant_components():
    added = VariantSpec.dqn().with_component("nstep", n=5)
    assert (added.n, added.name, added.base) == (5, "dqn+nstep5", "custom")

    removed = VariantSpec.rainbow().without_component("nstep")
    assert (removed.n, removed.use_per, removed.name) == (1, True, "rainbow-nstep")
    assert VariantSpec.rainbow().without_component("adam").use_adam is False
    assert VariantSpec(use_per=True, use_c51=True, n=3).name == "dqn+per+c51+nstep3"


def test_agent_section_overrides_the_preset():
    config = load_study_config(overrides=["agent.variant=rainbow", "agent.n=5"])
    spec = config.agent.variant_spec()
    assert (spec.use_per, spec.use_adam, spec.use_c51, spec.n, spec.base) == (True, True, True, 5, "custom")

    config = load_study_config(overrides=["agent.target=contraction_matched", "agent.n=3"])
    assert config.agent.variant_spec().name == "dqn+contraction3"


@pytest.mark.parametrize(
    ("variant", "kind", "horizon", "contraction"),
    [
        (VariantSpec.dqn(), "one_step", 1, 0.9),
        (VariantSpec.rainbow(), "n_step", 3, 0.9**3),
        (VariantSpec(n=3, target="contraction_matched"), "contraction_matched", 1, 0.9**3),
        (VariantSpec(target="monte_carlo"), "monte_carlo", None, 0.0),
    ],
)
def test_target_specs(variant, kind, horizon, contraction):
    spec = variant.target_spec(0.9)
    assert (spec.kind, spec.horizon) == (kind, horizon)
    assert spec.contraction == pytest.approx(contraction)


def test_one_step_target_requires_n_of_one():
    with pytest.raises(ValidationError):
        TargetSpec(kind="one_step", n=2)


def test_log_levels_are_resolved_by_name():
    assert resolve_level(" debug ") == "DEBUG"
    with pytest.raises(ConfigError) as excinfo:
        resolve_level("chatty")
    assert excinfo.value.key == "LOG_LEVEL"
