from ._coreflow import (
    BackendError,
    ChatBackend,
    ConfigError,
    Environment,
    HttpBackend,
    OptimizerConfig,
    ParseError,
    RepairError,
    ScriptedBackend,
    StepKind,
    Workflow,
    evaluate,
    example_workflow_text,
    execute,
    feedback_sentence,
    normalize,
    optimize_incontext,
    optimize_reinforce,
    parse,
    parse_plan,
    repair,
    run_baseline,
    serialize,
    softmax,
    validate,
)

__all__ = [name for name in dir() if not name.startswith("_")]
