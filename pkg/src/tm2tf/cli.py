"""Command-line surface: compile, convert, run, validate, probe.

Exit codes: 0 success (and zero mismatches for validate), 1 validation
mismatch, 2 usage/file/schema errors. All outputs go to explicit --out
paths; stdout carries short human-readable summaries.
"""

from __future__ import annotations

import argparse
import json
import sys

from .automata import MachineError, load_dfa, load_tm
from .fpcore import parse_precision
from .generation import run_cot, run_scot
from .harness import (
    TrialConfig,
    acceptance_dfas,
    instantiate_capacity,
    probe_phi,
    validate_cot,
    validate_dfa,
    validate_scot,
    validate_softmax,
)
from .netcore import EvalConfig, load_model, save_model
from .softmaxify import (
    act_format_containing,
    c0_denoising,
    c0_exact_attention,
    convert_with_denoising,
    min_att_exponent_bits,
    next_pow2_at_least,
    scale_qk,
)


class CliError(Exception):
    def __init__(self, message: str, code: int = 2):
        super().__init__(message)
        self.code = code


def _load_json(path: str) -> dict:
    try:
        with open(path) as f:
            return json.load(f)
    except OSError as exc:
        raise CliError(f"file error: cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CliError(f"schema error: {path} is not valid JSON: {exc}") from exc


def _write_json(path: str, doc: dict) -> None:
    try:
        with open(path, "w") as f:
            json.dump(doc, f, indent=None, separators=(",", ":"))
    except OSError as exc:
        raise CliError(f"file error: cannot write {path}: {exc}") from exc


def load_machine(path: str):
    """Load a DFA or TM spec; the 'tapes' field marks Turing machines."""
    doc = _load_json(path)
    try:
        if "tapes" in doc:
            return load_tm(doc)
        return load_dfa(doc)
    except MachineError as exc:
        raise CliError(f"schema error: {path}: {exc}") from exc


def _parse_word(text: str) -> list[str]:
    if not text:
        return []
    return text.split(",") if "," in text else list(text)


def _even(value: str) -> int:
    r = int(value)
    if r % 2 != 0:
        raise argparse.ArgumentTypeError("r must be even")
    return r


def _eval_config(args) -> EvalConfig:
    try:
        act = parse_precision(args.act_format)
        att = parse_precision(args.att_format)
    except ValueError as exc:
        raise CliError(f"usage error: {exc}") from exc
    try:
        return EvalConfig(attention=args.attention, act_precision=act, att_precision=att)
    except ValueError as exc:
        raise CliError(f"usage error: {exc}") from exc


def _add_eval_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--attention", choices=["hardmax", "softmax"], default="hardmax")
    p.add_argument("--act-format", default="exact")
    p.add_argument("--att-format", default="exact")
    p.add_argument("--budget", type=int, default=None)
    p.add_argument("--trace-out", help="JSON-lines dump of emitted tokens")


def _cmd_compile(args) -> int:
    machine = load_machine(args.machine)
    from .automata import Dfa, TuringMachine
    from .compilers import compile_cot, compile_dfa, compile_scot

    if args.command == "compile-dfa":
        if not isinstance(machine, Dfa):
            raise CliError("usage error: compile-dfa expects a DFA spec")
        params, report = compile_dfa(machine, args.r)
    else:
        if not isinstance(machine, TuringMachine):
            raise CliError("usage error: expected a Turing machine spec")
        try:
            if args.command == "compile-cot":
                params, report = compile_cot(machine, args.r)
            else:
                params, report = compile_scot(machine, args.r)
        except ValueError as exc:
            raise CliError(f"usage error: {exc}") from exc
    save_model(params, args.out)
    if args.report:
        _write_json(args.report, report.to_json())
    d = report.dims
    print(
        f"{report.construction}: r={report.r} L={d.n_layers} H={d.n_heads} "
        f"d={d.d} d_k={d.d_k} d_v={d.d_v} d_ff={d.d_ff} -> {args.out}"
    )
    return 0


def _cmd_convert(args) -> int:
    params = load_model(args.model)
    d = params.dims
    context_bound = args.context_bound
    if context_bound is None:
        r = params.meta.get("r")
        if r is None:
            raise CliError("usage error: model has no r; pass --N explicitly")
        context_bound = 2 ** r
    if args.c == "auto":
        if args.mode == "scaled":
            c = next_pow2_at_least(
                c0_exact_attention(d.d, d.d_ff, d.d_k, d.n_layers, context_bound)
            )
        else:
            c = next_pow2_at_least(c0_denoising(d.d_k, context_bound))
    else:
        try:
            c = float(args.c)
        except ValueError as exc:
            raise CliError(f"usage error: bad --c value {args.c!r}") from exc
    try:
        converted = (
            scale_qk(params, c) if args.mode == "scaled" else convert_with_denoising(params, c)
        )
    except ValueError as exc:
        raise CliError(f"usage error: {exc}") from exc
    save_model(converted, args.out)
    extra = ""
    if args.mode == "denoised":
        fmt = act_format_containing(c)
        extra = (
            f" act>=custom:{fmt.mantissa_bits},{fmt.exponent_bits}"
            f" att>=custom:4,{min_att_exponent_bits(context_bound)}"
        )
    print(f"converted mode={args.mode} c={c} N={context_bound}{extra} -> {args.out}")
    return 0


def _cmd_run(args) -> int:
    params = load_model(args.model)
    cfg = _eval_config(args)
    word = _parse_word(args.word)
    runner = run_cot if args.command == "run-cot" else run_scot
    try:
        trace = runner(
            params, word, cfg, budget=args.budget, record_steps=args.trace_out is not None
        )
    except Exception as exc:  # token-out-of-vocab etc.
        raise CliError(f"usage error: {exc}") from exc
    if args.trace_out:
        try:
            with open(args.trace_out, "w") as f:
                for rec in trace.records:
                    f.write(json.dumps(rec) + "\n")
                for i, seg in enumerate(trace.segments):
                    f.write(json.dumps({"segment": i, "length": len(seg)}) + "\n")
        except OSError as exc:
            raise CliError(f"file error: {exc}") from exc
    print(f"outcome: {trace.outcome}")
    if trace.outcome == "output":
        print("output: " + "".join(trace.output))
        print(f"t_T={trace.total_tokens} s_T={trace.max_segment} segments={len(trace.segments)}")
    elif trace.reason:
        print(f"reason: {trace.reason}")
    return 0 if trace.outcome == "output" else 1


def _cmd_validate(args) -> int:
    cfg = TrialConfig(step_cap=args.step_cap)
    if args.protocol == "dfa":
        dfas = [load_machine(p) for p in args.dfa] if args.dfa else acceptance_dfas()
        report = validate_dfa(dfas, r=args.r, max_len=args.max_len)
    elif args.mode == "hardmax":
        fn = validate_cot if args.protocol == "cot" else validate_scot
        report = fn(seed=args.seed, trials=args.trials, cfg=cfg)
    else:
        mode = "scaled_only" if args.mode == "scaled" else "denoised"
        report = validate_softmax(
            mode, seed=args.seed, trials=args.trials, cfg=cfg, protocol=args.protocol
        )
    if args.out:
        _write_json(args.out, report.to_json())
    print(
        f"{report.name}: attempted={report.attempted} skipped={report.skipped} "
        f"checked={report.checked} mismatches={len(report.mismatches)} "
        f"violations={sum(report.violations.values())} ({report.wall_time:.1f}s)"
    )
    return 0 if report.ok else 1


def _cmd_probe(args) -> int:
    try:
        prec = parse_precision(args.format)
    except ValueError as exc:
        raise CliError(f"usage error: {exc}") from exc
    if prec.exact:
        print("exact precision never confuses positions")
        return 0
    rep = probe_phi(prec.fmt, args.max, args.format)
    if args.out:
        _write_json(args.out, rep.to_json())
    if rep.first_confusion is None:
        print(f"{args.format}: no confusion up to {rep.scanned}")
    else:
        print(f"{args.format}: i*={rep.first_confusion} confused with j*={rep.confounder}")
    return 0


def _cmd_c0(args) -> int:
    if args.mode == "exact":
        if None in (args.d, args.d_ff, args.d_k, args.layers, args.context_bound):
            raise CliError("usage error: c0 --mode exact needs --d --d-ff --d-k --L --N")
        value = c0_exact_attention(args.d, args.d_ff, args.d_k, args.layers, args.context_bound)
    else:
        if None in (args.d_k, args.context_bound):
            raise CliError("usage error: c0 --mode denoising needs --d-k --N")
        value = c0_denoising(args.d_k, args.context_bound)
    print(f"c0 = {value:.6g}  (next power of two: {next_pow2_at_least(value):g})")
    return 0


def _cmd_capacity(args) -> int:
    table = instantiate_capacity(
        args.layers, args.d_k, args.d, args.d_ff, args.construction
    )
    if args.out:
        _write_json(args.out, table)
    print(
        f"{table['construction']}: r<= {table['r_from_depth']} (depth), "
        f"{table['r_from_d_k']} (d_k) -> r={table['r']}, context {table['context_bound']}"
    )
    for row in table["machines"]:
        fits = "fits" if row["fits_d"] else "exceeds d"
        print(
            f"  K={row['tapes']} |Gamma|={row['gamma']}: up to {row['max_states']} states "
            f"(d={row['d_used']}, {fits})"
        )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tm2tf")
    sub = parser.add_subparsers(dest="command", required=True)

    for name in ("compile-dfa", "compile-cot", "compile-scot"):
        p = sub.add_parser(name)
        p.add_argument("--machine", "--dfa", "--tm", dest="machine", required=True)
        p.add_argument(
            "--r", type=int if name == "compile-dfa" else _even, required=True
        )
        p.add_argument("--out", required=True)
        p.add_argument("--report")
        p.set_defaults(func=_cmd_compile)

    p = sub.add_parser("convert")
    p.add_argument("--model", required=True)
    p.add_argument("--mode", choices=["scaled", "denoised"], required=True)
    p.add_argument("--c", default="auto")
    p.add_argument("--N", dest="context_bound", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_convert)

    for name in ("run-cot", "run-scot"):
        p = sub.add_parser(name)
        p.add_argument("--model", required=True)
        p.add_argument("--word", default="")
        _add_eval_flags(p)
        p.set_defaults(func=_cmd_run)

    p = sub.add_parser("validate")
    p.add_argument("--protocol", choices=["cot", "scot", "dfa"], required=True)
    p.add_argument("--mode", choices=["hardmax", "scaled", "denoised"], default="hardmax")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--step-cap", type=int, default=40)
    p.add_argument("--r", type=int, default=3)  # dfa protocol
    p.add_argument("--max-len", type=int, default=7)
    p.add_argument("--dfa", action="append")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("probe-phi")
    p.add_argument("--format", required=True)
    p.add_argument("--max", type=int, default=10000)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_probe)

    p = sub.add_parser("c0")
    p.add_argument("--mode", choices=["exact", "denoising"], required=True)
    p.add_argument("--d", type=int)
    p.add_argument("--d-ff", dest="d_ff", type=int)
    p.add_argument("--d-k", dest="d_k", type=int)
    p.add_argument("--L", dest="layers", type=int)
    p.add_argument("--N", dest="context_bound", type=int)
    p.set_defaults(func=_cmd_c0)

    p = sub.add_parser("capacity")
    p.add_argument("--L", dest="layers", type=int, required=True)
    p.add_argument("--d-k", dest="d_k", type=int, required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--d-ff", dest="d_ff", type=int, required=True)
    p.add_argument("--construction", choices=["cot", "scot"], default="cot")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_capacity)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(str(exc), file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
