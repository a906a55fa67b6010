"""Hardmax-to-softmax conversion: query/key scaling and denoising layers.

Scaling queries and keys by c multiplies attention-score separations by
c^2, driving softmax weights toward the hardmax ones. With exact attention
weights a large enough c makes the rounded softmax model token-identical.
When attention weights themselves are rounded, each layer is split in two:
attention plus an error-absorbing MLP that snaps coordinates within 1/4
back onto {-1, 0, 1}, then the original MLP in an attention-free layer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fpcore import FloatFormat, Precision, is_representable
from .gadgets import denoising_neurons
from .netcore import (
    Dims,
    EvalConfig,
    HeadParams,
    LayerParams,
    TransformerParams,
    forward,
)

__all__ = [
    "ConversionSpec",
    "ConversionError",
    "scale_qk",
    "c0_exact_attention",
    "c0_denoising",
    "min_att_exponent_bits",
    "next_pow2_at_least",
    "act_format_containing",
    "convert_with_denoising",
    "audit_hardmax_preconditions",
    "minimal_c_search",
]

_CERTIFIED_SOURCES = {"compile_dfa", "compile_cot", "compile_scot", "rope_prefix"}


class ConversionError(ValueError):
    pass


@dataclass(frozen=True)
class ConversionSpec:
    c: float
    mode: str  # scaled_only | denoised
    act_precision: Precision
    att_precision: Precision
    context_bound: int

    def __post_init__(self) -> None:
        if self.c <= 0:
            raise ConversionError("c must be positive")
        if self.mode not in ("scaled_only", "denoised"):
            raise ConversionError("mode must be scaled_only or denoised")
        if self.mode == "denoised":
            fmt = self.att_precision.fmt
            if fmt is None or fmt.mantissa_bits < 4:
                raise ConversionError("denoised mode needs a finite att format with b_m >= 4")


def _require_certified(params: TransformerParams, audited: bool) -> None:
    if params.source not in _CERTIFIED_SOURCES and not audited:
        raise ConversionError(
            "conversion is only certified for compiler output; run "
            "audit_hardmax_preconditions and pass audited=True to override"
        )


def scale_qk(params: TransformerParams, c: float, audited: bool = False) -> TransformerParams:
    """Scale query/key projections by c; hardmax behavior is unchanged."""
    if c <= 0:
        raise ConversionError("c must be positive")
    _require_certified(params, audited)
    if params.qk_scale != 1.0:
        raise ConversionError("model is already scaled")
    out = TransformerParams(
        dims=params.dims,
        vocab=list(params.vocab),
        emb=params.emb,
        unemb=params.unemb,
        positional=params.positional,
        layers=params.layers,
        qk_scale=float(c),
        source=params.source,
        mode="scaled-softmax",
        meta=dict(params.meta),
    )
    out.meta.pop("_tokidx", None)
    return out


def c0_exact_attention(d: int, d_ff: int, d_k: int, n_layers: int, context_bound: int) -> float:
    """Scale threshold for token-identical conversion with exact att weights."""
    if min(d, d_ff, d_k, n_layers, context_bound) < 1:
        raise ValueError("all arguments must be >= 1")
    log_term = (
        math.log(16.0 / 6.0)
        + math.log(max(4 * d, 20 * d_k))
        + math.log(context_bound)
        + n_layers * math.log(48 * d * d_ff + 12)
    )
    return math.sqrt(2.0 * math.sqrt(d_k) * log_term)


def c0_denoising(d_k: int, context_bound: int) -> float:
    """Scale threshold when attention weights are rounded and denoised."""
    if d_k < 1 or context_bound < 1:
        raise ValueError("arguments must be >= 1")
    return d_k ** 0.25 * math.sqrt(math.log(96.0 * context_bound))


def min_att_exponent_bits(context_bound: int) -> int:
    """Smallest b_e whose subnormal threshold covers attention weights 1/N."""
    if context_bound < 1:
        raise ValueError("context bound must be >= 1")
    need = (context_bound - 1).bit_length()  # ceil(log2 N)
    b_e = 2
    while 2 - 2 ** (b_e - 1) > -need:
        b_e += 1
    return b_e


def next_pow2_at_least(x: float) -> float:
    if x <= 0:
        raise ValueError("x must be positive")
    return 2.0 ** math.ceil(math.log2(x))


def act_format_containing(c: float, mantissa_bits: int = 1, min_exponent_bits: int = 3) -> FloatFormat:
    """Smallest b_e >= min_exponent_bits whose format represents c exactly."""
    for b_e in range(max(2, min_exponent_bits), 12):
        fmt = FloatFormat(mantissa_bits, b_e)
        if is_representable(c, fmt):
            return fmt
    raise ConversionError(f"no supported format with {mantissa_bits} mantissa bits contains {c}")


def convert_with_denoising(
    params: TransformerParams, c: float, audited: bool = False
) -> TransformerParams:
    """Depth-doubling conversion: attention + denoising MLP, then the MLP.

    Weight codes stay in {0,+-1,+-2}; the c scale lives on query/key
    projections. Evaluate in rounded-softmax mode with compliant formats to
    reproduce the hardmax tokens.
    """
    if c <= 0:
        raise ConversionError("c must be positive")
    _require_certified(params, audited)
    if params.qk_scale != 1.0:
        raise ConversionError("convert the unscaled hardmax model")
    dims = params.dims
    d_ff_new = max(dims.d_ff, 6 * dims.d)
    new_dims = Dims(
        d=dims.d,
        d_k=dims.d_k,
        d_v=dims.d_v,
        d_ff=d_ff_new,
        n_heads=dims.n_heads,
        n_layers=2 * dims.n_layers,
    )

    denoise = denoising_neurons(list(range(dims.d)))
    den_w1 = np.zeros((d_ff_new, dims.d), dtype=np.int8)
    den_bias4 = np.zeros(d_ff_new, dtype=np.int32)
    den_w2 = np.zeros((dims.d, d_ff_new), dtype=np.int8)
    for i, n in enumerate(denoise):
        for coord, w in n.in_w.items():
            den_w1[i, coord] = w
        den_bias4[i] = n.bias4
        for coord, w in n.out_w.items():
            den_w2[coord, i] = w

    zero_heads = [
        HeadParams(
            np.zeros((dims.d_k, dims.d), dtype=np.int8),
            np.zeros((dims.d_k, dims.d), dtype=np.int8),
            np.zeros((dims.d_v, dims.d), dtype=np.int8),
            np.zeros((dims.d, dims.d_v), dtype=np.int8),
        )
        for _ in range(dims.n_heads)
    ]

    layers: list[LayerParams] = []
    for layer in params.layers:
        layers.append(LayerParams(layer.heads, den_w1, den_bias4, den_w2))
        w1 = np.zeros((d_ff_new, dims.d), dtype=np.int8)
        bias4 = np.zeros(d_ff_new, dtype=np.int32)
        w2 = np.zeros((dims.d, d_ff_new), dtype=np.int8)
        w1[: dims.d_ff] = layer.w1
        bias4[: dims.d_ff] = layer.bias4
        w2[:, : dims.d_ff] = layer.w2
        layers.append(LayerParams(zero_heads, w1, bias4, w2))

    out = TransformerParams(
        dims=new_dims,
        vocab=list(params.vocab),
        emb=params.emb,
        unemb=params.unemb,
        positional=params.positional,
        layers=layers,
        qk_scale=float(c),
        source=params.source,
        mode="denoised-softmax",
        meta={k: v for k, v in params.meta.items() if k != "_tokidx"},
    )
    out.validate_weights()
    return out


def audit_hardmax_preconditions(
    params: TransformerParams, inputs: list[list[str]]
) -> list[str]:
    """Trace-audit the conversion preconditions on the given inputs.

    Checks selector-style projections, disjoint head outputs, ternary
    embeddings, ternary activations, tie-invariant values and the
    unit output-score gap. Returns a list of violation descriptions.
    """
    problems: list[str] = []
    for name, m in (("emb", params.emb), ("unemb", params.unemb)):
        if np.abs(m).max(initial=0) > 1:
            problems.append(f"{name} not ternary")
    for li, layer in enumerate(params.layers):
        written: set[int] = set()
        for hi, head in enumerate(layer.heads):
            for mat_name, mat in (("wq", head.wq), ("wk", head.wk), ("wv", head.wv), ("wo", head.wo)):
                if np.abs(mat).max(initial=0) > 1:
                    problems.append(f"layer {li} head {hi} {mat_name} not ternary")
            rows = set(np.nonzero(head.wo.any(axis=1))[0].tolist())
            if rows & written:
                problems.append(f"layer {li} head {hi} writes coordinates of another head")
            written |= rows
    cfg = EvalConfig(attention="hardmax", capture_trace=True)
    for tokens in inputs:
        reps, trace = forward(params, tokens, cfg)
        for name, arr in trace.representation_arrays():
            if not np.all(np.isin(arr, (-1.0, 0.0, 1.0))):
                problems.append(f"non-ternary activation {name} on {tokens[:8]}...")
                break
        for li, lt in enumerate(trace.layers):
            for h in range(len(lt.dots)):
                for i, dots in enumerate(lt.dots[h]):
                    mask = dots == dots.max()
                    if mask.sum() > 1:
                        vals = np.stack([lt.v[h][j] for j in np.nonzero(mask)[0]])
                        if not np.all(vals == vals[0]):
                            problems.append(
                                f"tie-variant values at layer {li} head {h} pos {i}"
                            )
        scores = params.unemb.astype(np.float64) @ reps[-1]
        top = np.sort(scores)[::-1]
        if len(top) > 1 and top[0] - top[1] < 1.0:
            problems.append(f"output-score gap {top[0] - top[1]} < 1 on {tokens[:8]}...")
    return problems


def minimal_c_search(
    params: TransformerParams,
    reference_tokens: list[list[str]],
    cfg: EvalConfig,
    c_max: float = 2.0 ** 12,
) -> float:
    """Diagnostic only: smallest power-of-two c that keeps all generations.

    Bisects over powers of two comparing next-token outputs against the
    hardmax model position by position. Makes no theoretical guarantee.
    """
    from .netcore import Evaluator

    hard_cfg = EvalConfig(attention="hardmax")

    def agrees(c: float) -> bool:
        scaled = scale_qk(params, c)
        for tokens in reference_tokens:
            ev_h = Evaluator(params, hard_cfg)
            ev_s = Evaluator(scaled, cfg)
            for t in range(1, len(tokens)):
                ev_h.extend([tokens[t - 1]])
                ev_s.extend([tokens[t - 1]])
                if ev_h.next_token() != ev_s.next_token():
                    return False
        return True

    lo, hi = 0, int(math.log2(c_max))
    if not agrees(2.0 ** hi):
        raise ConversionError(f"even c = {c_max} does not reproduce the hardmax tokens")
    while lo < hi:
        mid = (lo + hi) // 2
        if agrees(2.0 ** mid):
            hi = mid
        else:
            lo = mid + 1
    return 2.0 ** hi
