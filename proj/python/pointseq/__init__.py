"""Autoregressive point-sequence detection toolkit.

Thin Python facade over the C++ core: tokenizer and matching primitives,
instance metrics, GRPO building blocks, and the experiment stages
(generate / sft / rft / evaluate / report).
"""

from ._core import (
    ConfigError,
    IoError,
    NumericError,
    aji,
    clipped_surrogate,
    compute_advantages,
    default_config,
    dequantize,
    detection_f1,
    encode_points,
    evaluate,
    generate,
    hungarian_match,
    panoptic_quality,
    parse_points,
    quantize,
    render_scene,
    report,
    resolved_config,
    rft,
    sft,
    soft_label,
    vocab_size,
)

__all__ = [
    "ConfigError",
    "IoError",
    "NumericError",
    "aji",
    "clipped_surrogate",
    "compute_advantages",
    "default_config",
    "dequantize",
    "detection_f1",
    "encode_points",
    "evaluate",
    "generate",
    "hungarian_match",
    "panoptic_quality",
    "parse_points",
    "quantize",
    "render_scene",
    "report",
    "resolved_config",
    "rft",
    "sft",
    "soft_label",
    "vocab_size",
]
