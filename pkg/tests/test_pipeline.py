import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from convasr.errors import ConfigError
from convasr.pipeline import ExperimentConfig, derive_seed, run_end_to_end

TINY = dict(corpus={"n_utts": 16, "T_range": (20, 40)},
            lstm_schedule={"epochs": 1, "learning_rate": 0.5, "batch_size": 8},
            resnet_schedule={"epochs": 1, "steps_per_epoch": 3, "batch_size": 8, "learning_rate": 0.03},
            fusion_grid=(0.0, 0.5, 1.0), probe_repeats=2)


def test_config_json_round_trip():
    cfg = ExperimentConfig(seed=5, **TINY)
    back = ExperimentConfig.from_dict(json.loads(cfg.to_json()))
    assert back == cfg
    assert back.corpus_config().T_range == (20, 40)
    assert back.corpus_config().seed == 5


def test_config_rejects_unknown_and_bad_values():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"sead": 1})
    with pytest.raises(ConfigError):
        ExperimentConfig(splits=(0.5, 0.5))
    with pytest.raises(ConfigError):
        ExperimentConfig(sa_mtl_lambda=-0.1)


@given(st.integers(0, 2**31), st.text(min_size=1, max_size=12))
def test_derived_seeds_are_stable(root, name):
    assert derive_seed(root, name) == derive_seed(root, name)
    assert 0 <= derive_seed(root, name) < 2**32


def test_derived_seeds_separate_components():
    names = ["lstm-init", "resnet-init", "lstm-schedule", "resnet-schedule", "probe", "lm-text"]
    assert len({derive_seed(0, n) for n in names}) == len(names)
    assert derive_seed(0, "probe") != derive_seed(1, "probe")


def test_lambda_shares_shuffle_order():
    cfg = ExperimentConfig()
    assert cfg.lstm_schedule_for(0.0).seed == cfg.lstm_schedule_for(0.1).seed
    assert cfg.lstm_schedule_for(0.1).lam == 0.1


def test_tiny_end_to_end_is_deterministic():
    a = run_end_to_end(ExperimentConfig(seed=2, **TINY))
    b = run_end_to_end(ExperimentConfig(seed=2, **TINY))
    assert a.metrics == b.metrics and a.fusion_weights == b.fusion_weights
    assert set(a.checks) == {"lstm_frame_acc>=0.90", "resnet_frame_acc>=0.85", "fused_wer<=best+0.5",
                             "probe_lambda<probe_0", "runtime<15min"}
    assert set(a.hypotheses) == {"lstm", "resnet", "fused"}
    assert abs(sum(a.fusion_weights) - 1) < 1e-12
    assert json.loads(a.to_json())["metrics"] == a.metrics
