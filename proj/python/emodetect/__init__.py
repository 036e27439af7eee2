"""Python bindings for the emodetect C++ core."""

from ._core import (
    Dataset,
    EmoError,
    LabelSchema,
    Strategy,
    Track,
    build_chat_request,
    cli,
    export_instructions,
    featurize,
    head_probabilities,
    improvement_distribution,
    infer,
    intensity_table,
    macro_f1,
    pairwise_yes_probability,
    parse_chat_response,
    parse_completion,
    pearson,
    per_sample_f1,
    render_completion,
    render_prompts,
    template_version,
    train_head,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
