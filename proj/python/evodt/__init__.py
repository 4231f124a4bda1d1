"""OpenAI-style evolution strategies for small decision transformer policies."""

from ._core import (
    ConfigError,
    ContractError,
    DecodeError,
    PolicyKind,
    PolicySpec,
    centered_ranks,
    checkpoint_bytes,
    decision_transformer_spec,
    eval_seeds,
    evaluate_checkpoint,
    feedforward_spec,
    init_params,
    load_checkpoint,
    param_count,
    policy_spec,
    resolve_config,
    rollout,
    teacher_return,
    train,
)

__all__ = [
    "ConfigError",
    "ContractError",
    "DecodeError",
    "PolicyKind",
    "PolicySpec",
    "centered_ranks",
    "checkpoint_bytes",
    "decision_transformer_spec",
    "eval_seeds",
    "evaluate_checkpoint",
    "feedforward_spec",
    "init_params",
    "load_checkpoint",
    "param_count",
    "policy_spec",
    "resolve_config",
    "rollout",
    "teacher_return",
    "train",
]
