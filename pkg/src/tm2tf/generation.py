"""Greedy autoregressive decoding and the CoT / SCoT protocols.

A CoT run extends the input block until </outp> appears. An SCoT run
iterates segments: a segment ending in </summ> has its summary block
promoted to the next prompt; a segment ending in </outp> carries the
output. Ill-formed generations become an explicit "undefined" outcome
with a machine-readable reason instead of silently passing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .automata import EINP, EOUTP, ESUMM, INP, OUTP, SUMM, token_class
from .netcore import BinaryAbsolute, EvalConfig, Evaluator, TransformerParams

__all__ = ["GenerationTrace", "generate", "run_cot", "run_scot"]


@dataclass
class GenerationTrace:
    protocol: str  # plain | cot | scot
    segments: list[list[str]] = field(default_factory=list)
    outcome: str = "undefined"  # output | undefined | budget_exceeded
    output: list[str] | None = None
    reason: str | None = None
    total_tokens: int = 0  # t_T(w): all segment lengths summed
    max_segment: int = 0  # s_T(w): longest single segment
    tie_warnings: int = 0
    eval_traces: list = field(default_factory=list)
    records: list[dict] = field(default_factory=list)


def _default_budget(params: TransformerParams) -> int:
    if isinstance(params.positional, BinaryAbsolute):
        return 2 ** params.positional.r + 16
    return 4096


def generate(
    params: TransformerParams,
    prompt: list[str],
    stop_set: set[str],
    max_steps: int,
    cfg: EvalConfig,
    records: list[dict] | None = None,
    segment_index: int = 0,
) -> tuple[list[str], bool, Evaluator]:
    """Greedy extension until a stop token is emitted (inclusive).

    Returns (tokens, budget_exceeded, evaluator). The stop token itself is
    never fed back through the model.
    """
    if not prompt:
        raise ValueError("prompt must be nonempty")
    if not stop_set:
        raise ValueError("stop_set must be nonempty")
    ev = Evaluator(params, cfg)
    ev.extend(prompt)
    tokens = list(prompt)
    for _ in range(max_steps):
        tok = ev.next_token()
        tokens.append(tok)
        if records is not None:
            scores = ev.output_scores_last()
            top2 = np.argsort(scores)[-2:][::-1]
            records.append(
                {
                    "segment": segment_index,
                    "position": len(tokens) - 1,
                    "token": tok,
                    "top2": [
                        [params.vocab[int(i)], float(scores[int(i)])] for i in top2
                    ],
                }
            )
        if tok in stop_set:
            return tokens, False, ev
        ev.extend([tok])
    return tokens, True, ev


def _find_block(tokens: list[str], start: int, opener: str, closer: str):
    """Validate a single opener...closer block after index start."""
    openers = [i for i in range(start, len(tokens)) if tokens[i] == opener]
    if len(openers) != 1:
        return None, f"{opener} occurs {len(openers)} times after the prompt"
    o = openers[0]
    if tokens[-1] != closer:
        return None, f"sequence does not end with {closer}"
    body = tokens[o + 1 : len(tokens) - 1]
    if closer in body or opener in body:
        return None, f"nested {opener} block"
    return body, None


def run_cot(
    params: TransformerParams,
    word: list[str] | str,
    cfg: EvalConfig,
    budget: int | None = None,
    record_steps: bool = False,
) -> GenerationTrace:
    """Decode from <inp> w </inp> until </outp>; validate the output block."""
    word = list(word)
    trace = GenerationTrace(protocol="cot")
    budget = budget if budget is not None else _default_budget(params)
    records = trace.records if record_steps else None
    prompt = [INP, *word, EINP]
    tokens, exceeded, ev = generate(params, prompt, {EOUTP}, budget, cfg, records)
    trace.segments = [tokens]
    trace.total_tokens = len(tokens)
    trace.max_segment = len(tokens)
    trace.tie_warnings = ev.trace.tie_warnings
    if cfg.capture_trace:
        trace.eval_traces.append(ev.trace)
    if exceeded:
        trace.outcome = "budget_exceeded"
        return trace
    body, err = _find_block(tokens, len(prompt), OUTP, EOUTP)
    if err is not None:
        trace.outcome, trace.reason = "undefined", err
        return trace
    if any(token_class(t) != "sym" for t in body):
        trace.outcome, trace.reason = "undefined", "output block contains non-input symbols"
        return trace
    trace.outcome, trace.output = "output", body
    return trace


def run_scot(
    params: TransformerParams,
    word: list[str] | str,
    cfg: EvalConfig,
    budget: int | None = None,
    max_segments: int = 4096,
    record_steps: bool = False,
) -> GenerationTrace:
    """The iterated segment/summary loop; budget applies per segment."""
    word = list(word)
    trace = GenerationTrace(protocol="scot")
    budget = budget if budget is not None else _default_budget(params)
    prompt = [INP, *word, EINP]
    for seg_idx in range(max_segments):
        records = trace.records if record_steps else None
        tokens, exceeded, ev = generate(
            params, prompt, {EOUTP, ESUMM}, budget, cfg, records, segment_index=seg_idx
        )
        trace.segments.append(tokens)
        trace.total_tokens += len(tokens)
        trace.max_segment = max(trace.max_segment, len(tokens))
        trace.tie_warnings += ev.trace.tie_warnings
        if cfg.capture_trace:
            trace.eval_traces.append(ev.trace)
        if exceeded:
            trace.outcome = "budget_exceeded"
            return trace
        if tokens[-1] == EOUTP:
            body, err = _find_block(tokens, len(prompt), OUTP, EOUTP)
            if err is not None:
                trace.outcome, trace.reason = "undefined", err
                return trace
            if any(token_class(t) != "sym" for t in body):
                trace.outcome, trace.reason = (
                    "undefined",
                    "output block contains non-input symbols",
                )
                return trace
            trace.outcome, trace.output = "output", body
            return trace
        body, err = _find_block(tokens, len(prompt), SUMM, ESUMM)
        if err is not None:
            trace.outcome, trace.reason = "undefined", err
            return trace
        if not body:
            trace.outcome, trace.reason = "undefined", "empty summary block"
            return trace
        prompt = [SUMM, *body, ESUMM]
    trace.outcome, trace.reason = "undefined", "segment limit reached"
    return trace
