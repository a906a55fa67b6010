"""Randomized oracle validation, the position-vector precision probe, and
capacity/property drivers.

Validation samples small random Turing machines, skips the ones that do
not halt cleanly, compiles the rest and compares greedy generation against
the direct simulation token for token. Every checked trial also audits the
construction invariants (ternary activations, integer score gaps,
tie-invariant values, unit output-score gaps, length bounds).
"""

from __future__ import annotations

import itertools
import math
import random
import time
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .automata import (
    TokenBudgetError,
    TuringMachine,
    cot_token_oracle,
    dfa_accepts,
    scot_segments_oracle,
    tm_run,
)
from .compilers import (
    choose_r_cot,
    choose_r_scot,
    compile_cot,
    compile_dfa,
    compile_scot,
)
from .fpcore import EXACT, FloatFormat, Precision, round_array
from .generation import run_cot, run_scot
from .netcore import (
    ActivationTrace,
    EvalConfig,
    forward,
    hardmax_weights,
    separation,
    softmax_weights,
)
from .softmaxify import (
    act_format_containing,
    c0_denoising,
    c0_exact_attention,
    convert_with_denoising,
    min_att_exponent_bits,
    next_pow2_at_least,
    scale_qk,
)

__all__ = [
    "ValidationReport",
    "ProbeReport",
    "TrialConfig",
    "acceptance_dfas",
    "sample_tm",
    "sample_word",
    "validate_cot",
    "validate_scot",
    "validate_dfa",
    "validate_softmax",
    "probe_phi",
    "instantiate_capacity",
    "trace_invariant_violations",
    "rounding_relative_error_suite",
    "perturbation_doubling_suite",
    "softmax_hardmax_distance_suite",
]


@dataclass
class ValidationReport:
    name: str
    attempted: int = 0
    skipped: int = 0
    checked: int = 0
    mismatches: list[dict] = field(default_factory=list)
    violations: dict[str, int] = field(default_factory=dict)
    trials: list[dict] = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def ok(self) -> bool:
        return not self.mismatches and not any(self.violations.values())

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "attempted": self.attempted,
            "skipped": self.skipped,
            "checked": self.checked,
            "mismatches": self.mismatches,
            "violations": self.violations,
            "wall_time": self.wall_time,
            "trials": self.trials,
        }


@dataclass
class ProbeReport:
    format_name: str
    scanned: int
    first_confusion: int | None = None  # i*
    confounder: int | None = None  # j*

    def to_json(self) -> dict:
        return {
            "format": self.format_name,
            "scanned": self.scanned,
            "first_confusion": self.first_confusion,
            "confounder": self.confounder,
        }


# ---------------------------------------------------------------------------
# machine sampling


def acceptance_dfas() -> list:
    """The three fixed recognizers used by the exhaustive DFA validation."""
    from .automata import Dfa

    parity = Dfa(
        ("even", "odd"),
        ("0", "1"),
        {
            ("even", "0"): "even",
            ("even", "1"): "odd",
            ("odd", "0"): "odd",
            ("odd", "1"): "even",
        },
        "even",
        frozenset({"even"}),
    )
    contains_ab = Dfa(
        ("start", "saw_a", "hit"),
        ("a", "b"),
        {
            ("start", "a"): "saw_a",
            ("start", "b"): "start",
            ("saw_a", "a"): "saw_a",
            ("saw_a", "b"): "hit",
            ("hit", "a"): "hit",
            ("hit", "b"): "hit",
        },
        "start",
        frozenset({"hit"}),
    )
    mod3_delta = {}
    for i in range(3):
        mod3_delta[(f"m{i}", "a")] = f"m{(i + 1) % 3}"
        mod3_delta[(f"m{i}", "b")] = f"m{i}"
    mod3 = Dfa(("m0", "m1", "m2"), ("a", "b"), mod3_delta, "m0", frozenset({"m0"}))
    return [parity, contains_ab, mod3]


def sample_tm(seed, tapes: int, q_count: int, gamma_count: int) -> TuringMachine:
    """Random machine: uniform transitions on all non-halting states.

    The input alphabet is the tape alphabet minus the blank; the last state
    halts. Deterministic in the seed.
    """
    if q_count < 2 or gamma_count < 2 or tapes < 1:
        raise ValueError("need q_count >= 2, gamma_count >= 2, tapes >= 1")
    rng = random.Random(seed)
    states = tuple(f"q{i}" for i in range(q_count))
    tape_alphabet = tuple(f"g{i}" for i in range(gamma_count - 1)) + ("_",)
    delta = {}
    for q in states[:-1]:
        for syms in itertools.product(tape_alphabet, repeat=tapes):
            delta[(q, syms)] = (
                rng.choice(states),
                tuple(rng.choice(tape_alphabet) for _ in range(tapes)),
                tuple(rng.choice("LSR") for _ in range(tapes)),
            )
    return TuringMachine(
        tapes,
        states,
        tape_alphabet[:-1],
        tape_alphabet,
        "_",
        states[0],
        states[-1],
        delta,
    )


def sample_word(seed, tm: TuringMachine, max_len: int) -> list[str]:
    rng = random.Random(seed)
    return [rng.choice(tm.input_alphabet) for _ in range(rng.randint(0, max_len))]


# ---------------------------------------------------------------------------
# trace invariants


def trace_invariant_violations(
    traces: list[ActivationTrace], hardmax: bool = True
) -> dict[str, int]:
    """Count construction-invariant violations over evaluator traces."""
    out = {"ternary": 0, "score_gap": 0, "tie_values": 0, "output_gap": 0}
    for trace in traces:
        for _, arr in trace.representation_arrays():
            if not np.all(np.isin(arr, (-1.0, 0.0, 1.0))):
                out["ternary"] += 1
        if hardmax:
            for lt in trace.layers:
                for h in range(len(lt.dots)):
                    for i, dots in enumerate(lt.dots[h]):
                        if not np.array_equal(dots, np.rint(dots)):
                            out["score_gap"] += 1
                            continue
                        best = dots.max()
                        mask = dots == best
                        rest = dots[~mask]
                        if rest.size and best - rest.max() < 1.0:
                            out["score_gap"] += 1
                        if mask.sum() > 1:
                            vals = np.stack(
                                [lt.v[h][j] for j in np.nonzero(mask)[0]]
                            )
                            if not np.all(vals == vals[0]):
                                out["tie_values"] += 1
        for scores in trace.output_scores:
            top = np.sort(scores)[::-1]
            if len(top) > 1 and top[0] - top[1] < 1.0 - 1e-9:
                out["output_gap"] += 1
    return out


def _merge_violations(total: dict[str, int], part: dict[str, int]) -> None:
    for k, v in part.items():
        total[k] = total.get(k, 0) + v


def attention_rounding_bound_violations(
    trace: ActivationTrace, att_fmt: FloatFormat
) -> int:
    """Check sum_j |rounded alpha - alpha| <= 2^(-b_m-1) + n e^(-beta) per head.

    Reconstructs the pre-rounding softmax weights from the traced dot
    products (the engine computes them the same way, so the reconstruction
    is bit-identical) and compares the summed rounding error against the
    weight-rounding bound at the trace's own score separation.
    """
    violations = 0
    for lt in trace.layers:
        for h in range(len(lt.dots)):
            for i, dots in enumerate(lt.dots[h]):
                d_k = lt.q[h][i].shape[0]
                scores = dots / math.sqrt(d_k)
                raw = softmax_weights(scores)
                rounded, _ = round_array(raw, att_fmt)
                err = float(np.abs(rounded - raw).sum())
                beta = separation(scores)
                n = dots.size
                bound = 2.0 ** (-att_fmt.mantissa_bits - 1) + n * math.exp(-beta)
                if err > bound + 1e-12:
                    violations += 1
    return violations


# ---------------------------------------------------------------------------
# randomized validation


@dataclass(frozen=True)
class TrialConfig:
    tapes_choices: tuple[int, ...] = (1, 2)
    q_max: int = 4
    gamma_max: int = 3
    word_max: int = 4
    step_cap: int = 40
    r_spread: int = 8  # r drawn from r_min, r_min+2, ..., r_min+r_spread


def _sample_trial(seed: int, index: int, cfg: TrialConfig):
    rng = random.Random(f"{seed}|trial|{index}")
    tapes = rng.choice(cfg.tapes_choices)
    q_count = rng.randint(2, cfg.q_max)
    gamma_count = rng.randint(2, cfg.gamma_max)
    tm = sample_tm(f"{seed}|tm|{index}", tapes, q_count, gamma_count)
    word = sample_word(f"{seed}|w|{index}", tm, cfg.word_max)
    r_bump = 2 * rng.randint(0, cfg.r_spread // 2)
    return tm, word, r_bump


def _first_divergence(expected: list[str], got: list[str]) -> dict:
    idx = next(
        (i for i, (a, b) in enumerate(zip(expected, got)) if a != b),
        min(len(expected), len(got)),
    )
    return {
        "index": idx,
        "expected": expected[idx] if idx < len(expected) else None,
        "actual": got[idx] if idx < len(got) else None,
        "expected_len": len(expected),
        "actual_len": len(got),
    }


def validate_cot(
    seed: int,
    trials: int,
    cfg: TrialConfig = TrialConfig(),
    eval_cfg: EvalConfig | None = None,
    convert=None,
) -> ValidationReport:
    """Token-for-token comparison of compiled CoT models against the oracle.

    `convert` optionally maps (params, report) to a converted model used in
    place of the hardmax one, evaluated with `eval_cfg`.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    start = time.perf_counter()
    report = ValidationReport(name="cot" if convert is None else "cot-converted")
    hardmax = convert is None
    for index in range(trials):
        report.attempted += 1
        tm, word, r_bump = _sample_trial(seed, index, cfg)
        result = tm_run(tm, word, cfg.step_cap)
        trial = {
            "index": index,
            "tapes": tm.tapes,
            "states": len(tm.states),
            "symbols": len(tm.tape_alphabet),
            "word_len": len(word),
        }
        if not result.halted:
            report.skipped += 1
            trial["status"] = "skipped-nonhalting"
            report.trials.append(trial)
            continue
        if result.output is None:
            report.skipped += 1
            trial["status"] = "skipped-invalid-output"
            report.trials.append(trial)
            continue
        r = choose_r_cot(max(result.steps, len(word), 1)) + r_bump
        trial.update({"steps": result.steps, "space": result.space, "r": r})
        expected = cot_token_oracle(tm, word, r, step_cap=cfg.step_cap)
        params, comp_report = compile_cot(tm, r)
        if convert is not None:
            params = convert(params, comp_report)
        run_cfg = eval_cfg if eval_cfg is not None else EvalConfig(capture_trace=True)
        trace = run_cot(params, word, run_cfg)
        report.checked += 1
        got = trace.segments[0]
        if got != expected:
            report.mismatches.append({"trial": index, **_first_divergence(expected, got)})
            trial["status"] = "mismatch"
        else:
            trial["status"] = "checked"
        if len(got) > 4 + 2 * len(word) + 4 * result.steps:
            _merge_violations(report.violations, {"length_bound": 1})
        if run_cfg.capture_trace:
            _merge_violations(
                report.violations, trace_invariant_violations(trace.eval_traces, hardmax)
            )
        report.trials.append(trial)
    report.wall_time = time.perf_counter() - start
    return report


def validate_scot(
    seed: int,
    trials: int,
    cfg: TrialConfig = TrialConfig(),
    eval_cfg: EvalConfig | None = None,
    convert=None,
) -> ValidationReport:
    """Segment-for-segment comparison of compiled SCoT models."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    start = time.perf_counter()
    report = ValidationReport(name="scot" if convert is None else "scot-converted")
    hardmax = convert is None
    for index in range(trials):
        report.attempted += 1
        tm, word, r_bump = _sample_trial(seed, index, cfg)
        result = tm_run(tm, word, cfg.step_cap)
        trial = {
            "index": index,
            "tapes": tm.tapes,
            "states": len(tm.states),
            "symbols": len(tm.tape_alphabet),
            "word_len": len(word),
        }
        if not result.halted or result.output is None:
            report.skipped += 1
            trial["status"] = (
                "skipped-nonhalting" if not result.halted else "skipped-invalid-output"
            )
            report.trials.append(trial)
            continue
        r = choose_r_scot(max(result.space, 1)) + r_bump
        trial.update({"steps": result.steps, "space": result.space, "r": r})
        try:
            expected = scot_segments_oracle(tm, word, r, step_cap=cfg.step_cap)
        except TokenBudgetError:
            report.skipped += 1
            trial["status"] = "skipped-r-too-small"
            report.trials.append(trial)
            continue
        params, comp_report = compile_scot(tm, r)
        if convert is not None:
            params = convert(params, comp_report)
        run_cfg = eval_cfg if eval_cfg is not None else EvalConfig(capture_trace=True)
        trace = run_scot(params, word, run_cfg)
        report.checked += 1
        if trace.segments != expected:
            seg_idx = next(
                (
                    i
                    for i, (a, b) in enumerate(zip(expected, trace.segments))
                    if a != b
                ),
                min(len(expected), len(trace.segments)),
            )
            info = {"trial": index, "segment": seg_idx}
            if seg_idx < min(len(expected), len(trace.segments)):
                info.update(_first_divergence(expected[seg_idx], trace.segments[seg_idx]))
            report.mismatches.append(info)
            trial["status"] = "mismatch"
        else:
            trial["status"] = "checked"
        if trace.max_segment > 8 * (result.space + 3):
            _merge_violations(report.violations, {"segment_length_bound": 1})
        if trace.total_tokens > 8 * result.steps + 2 * len(word) + 4:
            _merge_violations(report.violations, {"total_length_bound": 1})
        if run_cfg.capture_trace:
            _merge_violations(
                report.violations, trace_invariant_violations(trace.eval_traces, hardmax)
            )
        report.trials.append(trial)
    report.wall_time = time.perf_counter() - start
    return report


def validate_dfa(dfas: list, r: int, max_len: int) -> ValidationReport:
    """Exhaustive agreement with dfa_accepts on all words up to max_len."""
    from .automata import BOS, FALSE, TRUE

    start = time.perf_counter()
    report = ValidationReport(name="dfa")
    cfg = EvalConfig(capture_trace=True)
    for d_idx, dfa in enumerate(dfas):
        params, comp_report = compile_dfa(dfa, r)
        from .compilers import dfa_dims

        if comp_report.dims != dfa_dims(dfa, r):
            report.mismatches.append({"dfa": d_idx, "error": "dims deviate from formulas"})
        for n in range(max_len + 1):
            for word in itertools.product(dfa.alphabet, repeat=n):
                report.attempted += 1
                report.checked += 1
                want = TRUE if dfa_accepts(dfa, list(word)) else FALSE
                from .netcore import Evaluator

                ev = Evaluator(params, cfg)
                ev.extend([BOS, *word])
                got = ev.next_token()
                if got != want:
                    report.mismatches.append(
                        {"dfa": d_idx, "word": "".join(word), "expected": want, "actual": got}
                    )
                _merge_violations(
                    report.violations, trace_invariant_violations([ev.trace], True)
                )
    report.wall_time = time.perf_counter() - start
    return report


def validate_softmax(
    mode: str,
    seed: int,
    trials: int,
    cfg: TrialConfig = TrialConfig(),
    protocol: str = "cot",
    att_mantissa_bits: int = 4,
    check_denoising_margin: bool = True,
) -> ValidationReport:
    """Re-run CoT/SCoT validation on converted models at theorem settings.

    mode "scaled_only": c from the exact-attention bound, bf16 activations,
    exact attention weights. mode "denoised": depth-doubled model, c from
    the denoising bound, 1-mantissa-bit activations containing c, and
    attention weights rounded to `att_mantissa_bits` (a value below the
    theorem's 4 is allowed for diagnostics; mismatches are then recorded,
    not failed).
    """
    if mode not in ("scaled_only", "denoised"):
        raise ValueError("mode must be scaled_only or denoised")
    margin_violations = [0]

    def convert(params, comp_report):
        n_bound = 2 ** comp_report.r
        d = comp_report.dims
        if mode == "scaled_only":
            c = next_pow2_at_least(
                c0_exact_attention(d.d, d.d_ff, d.d_k, d.n_layers, n_bound)
            )
            return scale_qk(params, c)
        c = next_pow2_at_least(c0_denoising(d.d_k, n_bound))
        return convert_with_denoising(params, c)

    def eval_cfg_for(params) -> EvalConfig:
        if mode == "scaled_only":
            return EvalConfig(
                attention="softmax",
                act_precision=Precision(FloatFormat(7, 8)),
                att_precision=EXACT,
                capture_trace=False,
            )
        n_bound = 2 ** params.meta["r"]
        return EvalConfig(
            attention="softmax",
            act_precision=Precision(act_format_containing(params.qk_scale)),
            att_precision=Precision(
                FloatFormat(att_mantissa_bits, min_att_exponent_bits(n_bound))
            ),
            capture_trace=mode == "denoised" and check_denoising_margin,
        )

    if trials < 1:
        raise ValueError("trials must be >= 1")
    start = time.perf_counter()
    report = ValidationReport(name=f"{protocol}-{mode}")
    for index in range(trials):
        report.attempted += 1
        tm, word, r_bump = _sample_trial(seed, index, cfg)
        result = tm_run(tm, word, cfg.step_cap)
        trial = {"index": index, "tapes": tm.tapes, "word_len": len(word)}
        if not result.halted or result.output is None:
            report.skipped += 1
            trial["status"] = "skipped"
            report.trials.append(trial)
            continue
        if protocol == "cot":
            r = choose_r_cot(max(result.steps, len(word), 1)) + r_bump
            try:
                expected = [cot_token_oracle(tm, word, r, step_cap=cfg.step_cap)]
            except TokenBudgetError:
                report.skipped += 1
                trial["status"] = "skipped-r-too-small"
                report.trials.append(trial)
                continue
            params, comp_report = compile_cot(tm, r)
        else:
            r = choose_r_scot(max(result.space, 1)) + r_bump
            try:
                expected = scot_segments_oracle(tm, word, r, step_cap=cfg.step_cap)
            except TokenBudgetError:
                report.skipped += 1
                trial["status"] = "skipped-r-too-small"
                report.trials.append(trial)
                continue
            params, comp_report = compile_scot(tm, r)
        converted = convert(params, comp_report)
        run_cfg = eval_cfg_for(converted)
        runner = run_cot if protocol == "cot" else run_scot
        trace = runner(converted, word, run_cfg)
        report.checked += 1
        trial.update({"r": r, "c": converted.qk_scale, "status": "checked"})
        if trace.segments != expected:
            seg_idx = next(
                (i for i, (a, b) in enumerate(zip(expected, trace.segments)) if a != b),
                min(len(expected), len(trace.segments)),
            )
            info = {"trial": index, "segment": seg_idx}
            if seg_idx < min(len(expected), len(trace.segments)):
                info.update(_first_divergence(expected[seg_idx], trace.segments[seg_idx]))
            report.mismatches.append(info)
            trial["status"] = "mismatch"
        if mode == "denoised" and check_denoising_margin and run_cfg.capture_trace:
            viol = _denoising_margin_violations(params, trace, run_cfg)
            if viol:
                _merge_violations(report.violations, {"denoising_margin": viol})
        report.trials.append(trial)
    report.wall_time = time.perf_counter() - start
    return report


def _denoising_margin_violations(hard_params, trace, run_cfg) -> int:
    """Check pre-denoising deviations <= 1/4 against the hardmax reference."""
    violations = 0
    hard_cfg = EvalConfig(attention="hardmax", capture_trace=True)
    for seg, ev_trace in zip(trace.segments, trace.eval_traces):
        processed = seg[:-1]  # the final stop token is never fed forward
        _, hard_trace = forward(hard_params, processed, hard_cfg)
        for orig_l, hard_lt in enumerate(hard_trace.layers):
            conv_lt = ev_trace.layers[2 * orig_l]
            for i in range(len(hard_lt.x_mid)):
                dev = np.abs(conv_lt.x_mid[i] - hard_lt.x_mid[i]).max()
                if dev > 0.25 + 1e-12:
                    violations += 1
    return violations


# ---------------------------------------------------------------------------
# the phi position-vector probe


def _round_sqrt_mantissa(p: int, q: int, fmt: FloatFormat) -> tuple[int, int]:
    """Correctly round sqrt(p/q) (p >= 0, q >= 1) to the format, half-even.

    Returns (mantissa, exponent) with value = mantissa * 2^exponent, exact.
    """
    if p == 0:
        return 0, 0

    def at_least_pow2(e: int) -> bool:  # sqrt(p/q) >= 2^e
        if e >= 0:
            return p >= q * 4 ** e
        return p * 4 ** (-e) >= q

    e = 0
    while not at_least_pow2(e):
        e -= 1
    while at_least_pow2(e + 1):
        e += 1
    eff = min(max(e, fmt.e_min), fmt.e_max)
    s = fmt.mantissa_bits - eff
    # n = sqrt(p/q) * 2^s; a/b = n^2 with non-negative integers.
    a = p * 4 ** max(0, s)
    b = q * 4 ** max(0, -s)
    n0 = math.isqrt(a * b) // b
    cmp = 4 * a - (2 * n0 + 1) ** 2 * b  # sign of n - (n0 + 1/2)
    if cmp > 0:
        n_rounded = n0 + 1
    elif cmp < 0:
        n_rounded = n0
    else:
        n_rounded = n0 if n0 % 2 == 0 else n0 + 1
    cap = (2 ** (fmt.mantissa_bits + 1) - 1) * 2 ** (fmt.e_max - eff)
    return min(n_rounded, cap), eff - fmt.mantissa_bits


_PHI_SHIFT = 80  # fixed-point scale 2^-80 covers every coordinate exactly


def _round_sqrt_ratio_exact(p: int, q: int, fmt: FloatFormat) -> Fraction:
    mant, exp = _round_sqrt_mantissa(p, q, fmt)
    return Fraction(mant) * Fraction(2) ** exp


def _phi_coords(max_i: int, fmt: FloatFormat, normalization: str):
    """Rounded (a_i, b_i) with phi_i = (i, 1, -i, -1)/norm = (a, b, -a, -b).

    Returns float views plus exact integer views scaled by 2^_PHI_SHIFT.
    """
    a = np.zeros(max_i + 1)
    b = np.zeros(max_i + 1)
    a_int = [0] * (max_i + 1)
    b_int = [0] * (max_i + 1)
    if normalization == "float64":
        idx = np.arange(max_i + 1, dtype=np.float64)
        norm = np.sqrt(2.0 * idx * idx + 2.0)
        a[1:], _ = round_array(idx[1:] / norm[1:], fmt)
        b[1:], _ = round_array(1.0 / norm[1:], fmt)
        for i in range(1, max_i + 1):
            af = Fraction(a[i])
            bf = Fraction(b[i])
            a_int[i] = int(af * 2 ** _PHI_SHIFT)
            b_int[i] = int(bf * 2 ** _PHI_SHIFT)
            if Fraction(a_int[i], 2 ** _PHI_SHIFT) != af or Fraction(
                b_int[i], 2 ** _PHI_SHIFT
            ) != bf:
                raise AssertionError("fixed-point scale too small for the format")
    elif normalization == "exact":
        for i in range(1, max_i + 1):
            denom = 2 * i * i + 2
            ma, ea = _round_sqrt_mantissa(i * i, denom, fmt)
            mb, eb = _round_sqrt_mantissa(1, denom, fmt)
            if ea + _PHI_SHIFT < 0 or eb + _PHI_SHIFT < 0:
                raise AssertionError("fixed-point scale too small for the format")
            a_int[i] = ma << (ea + _PHI_SHIFT)
            b_int[i] = mb << (eb + _PHI_SHIFT)
            a[i] = math.ldexp(ma, ea)
            b[i] = math.ldexp(mb, eb)
    else:
        raise ValueError("normalization must be 'float64' or 'exact'")
    return a, b, a_int, b_int


def probe_phi(
    fmt: FloatFormat,
    max_i: int,
    format_name: str = "",
    normalization: str = "exact",
) -> ProbeReport:
    """First index whose rounded position vector is out-argmaxed by an earlier one.

    Dot products are exact: a float64 prefilter finds near-ties, which are
    then decided in rational arithmetic. The default normalization rounds
    the exact real coordinates i/sqrt(2i^2+2) straight into the format;
    "float64" instead rounds host-computed values (the double rounding
    shifts the fp64 confusion index and is kept for diagnosis only).
    """
    if max_i < 2:
        raise ValueError("max_i must be >= 2")
    a, b, a_int, b_int = _phi_coords(max_i, fmt, normalization)
    # Float64 dot products of values <= 1 err below 5e-16; 1e-14 is a safe
    # prefilter slack before exact integer confirmation.
    margin = 1e-14
    for i in range(2, max_i + 1):
        lhs = a[1:i] * a[i] + b[1:i] * b[i]
        rhs = a[i] * a[i] + b[i] * b[i]
        candidates = np.nonzero(lhs >= rhs - margin)[0] + 1
        if candidates.size == 0:
            continue
        self_dot = a_int[i] * a_int[i] + b_int[i] * b_int[i]
        best_j, best_dot = None, self_dot
        for j in candidates.tolist():
            dot = a_int[i] * a_int[j] + b_int[i] * b_int[j]
            if dot > best_dot or (dot == best_dot and best_j is not None and j > best_j):
                best_j, best_dot = j, dot
        if best_j is not None:
            return ProbeReport(format_name or str(fmt), i, i, best_j)
    return ProbeReport(format_name or str(fmt), max_i, None, None)


# ---------------------------------------------------------------------------
# capacity instantiation


def instantiate_capacity(
    l_budget: int,
    d_k_budget: int,
    d_budget: int,
    d_ff_budget: int,
    construction: str = "cot",
) -> dict:
    """Largest even r per budget and machine sizes fitting the width budgets."""
    if min(l_budget, d_k_budget, d_budget, d_ff_budget) < 1:
        raise ValueError("budgets must be >= 1")
    if construction not in ("cot", "scot"):
        raise ValueError("construction must be cot or scot")
    r_depth = max(0, (2 * (l_budget - 8) // 5) // 2 * 2)
    r_dk = max(0, ((d_k_budget + 1) // 4) // 2 * 2)
    r = min(r_depth, r_dk)
    rows = []
    for tapes in (1, 2, 3):
        for gamma in (2, 4, 10):
            d_g = (gamma - 1).bit_length()
            if construction == "cot":
                slack = d_ff_budget - 1
            else:
                slack = d_ff_budget - 4 * tapes * d_g - 4 * tapes - 1
            max_states = max(0, slack // gamma ** tapes)
            d_q = max((max_states - 1).bit_length(), 0) if max_states else 0
            if construction == "cot":
                d_used = (
                    6 * tapes * r + 6 * r + 3 * d_q + (3 * tapes + 1) * d_g + 10 * tapes + 21
                )
            else:
                d_used = (
                    7 * tapes * r + 9 * r + 5 * d_q + (4 * tapes + 1) * d_g + 13 * tapes + 31
                )
            rows.append(
                {
                    "tapes": tapes,
                    "gamma": gamma,
                    "max_states": max_states,
                    "d_used": d_used,
                    "fits_d": d_used <= d_budget,
                }
            )
    return {
        "construction": construction,
        "r_from_depth": r_depth,
        "r_from_d_k": r_dk,
        "r": r,
        "context_bound": 2 ** r,
        "machines": rows,
    }


# ---------------------------------------------------------------------------
# property suites


def rounding_relative_error_suite(fmt: FloatFormat, samples: int, seed: int) -> int:
    """Violations of |round(x) - x| <= 2^(-b_m-1) |x| over the normal range."""
    rng = np.random.default_rng(seed)
    exps = rng.uniform(fmt.e_min, fmt.e_max, samples)
    mants = rng.uniform(1.0, 2.0 - 2.0 ** -fmt.mantissa_bits, samples)
    signs = rng.choice([-1.0, 1.0], samples)
    xs = signs * mants * np.exp2(exps)
    ys, _ = round_array(xs, fmt)
    bound = 2.0 ** (-fmt.mantissa_bits - 1) * np.abs(xs)
    return int(np.sum(np.abs(ys - xs) > bound))


def perturbation_doubling_suite(fmt: FloatFormat, samples: int, seed: int) -> int:
    """Violations of |round(x + y) - x| <= 2|y| for representable x."""
    rng = np.random.default_rng(seed)
    exps = rng.integers(fmt.e_min, fmt.e_max, samples)
    mants = rng.integers(0, 2 ** fmt.mantissa_bits, samples)
    signs = rng.choice([-1.0, 1.0], samples)
    xs = signs * (1.0 + mants * 2.0 ** -fmt.mantissa_bits) * np.exp2(exps.astype(float))
    ys = rng.uniform(-1.0, 1.0, samples) * np.abs(xs) * 0.4
    keep = np.abs(xs + ys) <= fmt.max_value
    xs, ys = xs[keep], ys[keep]
    rounded, _ = round_array(xs + ys, fmt)
    return int(np.sum(np.abs(rounded - xs) > 2 * np.abs(ys) + 1e-300))


def softmax_hardmax_distance_suite(vectors: int, seed: int) -> int:
    """Violations of ||softmax - hardmax||_1 <= 2 n exp(-separation)."""
    rng = np.random.default_rng(seed)
    violations = 0
    for _ in range(vectors):
        n = int(rng.integers(1, 40))
        scores = rng.integers(-6, 7, n).astype(np.float64) * rng.uniform(0.2, 5.0)
        beta = separation(scores)
        dist = float(np.abs(softmax_weights(scores) - hardmax_weights(scores)).sum())
        if dist > 2 * n * math.exp(-beta) + 1e-9:
            violations += 1
    return violations
