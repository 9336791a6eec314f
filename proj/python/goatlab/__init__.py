"""Python surface over the goatlab core: SVD-segmented adapter mixtures,
routing statistics, alignment checks and the parameter/FLOPs cost model."""

from goatlab._goatlab import (  # noqa: F401
    ExpertPair,
    GoatLayer,
    LayerVariant,
    Rng,
    RouteResult,
    SegmentSpec,
    Strategy,
    backward,
    build_goat_layer,
    equivalent_gradient,
    finite_diff_grad,
    flops_estimate,
    forward,
    goat_s_scales,
    kaiming_uniform,
    make_segments,
    matmul,
    param_count,
    sgd_step_lora,
    svd,
    theoretical_scale,
    topk_softmax,
    verify_router_stats,
)

__all__ = [
    "ExpertPair",
    "GoatLayer",
    "LayerVariant",
    "Rng",
    "RouteResult",
    "SegmentSpec",
    "Strategy",
    "backward",
    "build_goat_layer",
    "equivalent_gradient",
    "finite_diff_grad",
    "flops_estimate",
    "forward",
    "goat_s_scales",
    "kaiming_uniform",
    "make_segments",
    "matmul",
    "param_count",
    "sgd_step_lora",
    "svd",
    "theoretical_scale",
    "topk_softmax",
    "verify_router_stats",
]
