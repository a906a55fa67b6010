"""DFAs, multi-tape Turing machines, and the token sequences they induce.

Tokens are plain strings with canonical forms so that oracle output,
compiled-model vocabularies and JSON files all agree:

  delimiters   <inp> </inp> <outp> </outp> <p> </p> <summ> </summ> <bos> True False
  input symbol the symbol itself (validated against reserved characters)
  run token    run:q|y1,y2|LR     (state entered, symbols written, moves)
  position bit bits:+-            (one +/- per tape, LSB-first blocks)
  tape token   tape:a,^b          (^ marks the head position on that tape)
  state token  state:q
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

__all__ = [
    "Dfa",
    "TuringMachine",
    "Configuration",
    "RunResult",
    "MachineError",
    "NonHaltingError",
    "InvalidOutputError",
    "TokenBudgetError",
    "INP",
    "EINP",
    "OUTP",
    "EOUTP",
    "POPEN",
    "PCLOSE",
    "SUMM",
    "ESUMM",
    "BOS",
    "TRUE",
    "FALSE",
    "run_token",
    "pos_token",
    "tape_token",
    "state_token",
    "parse_run_token",
    "parse_pos_token",
    "parse_tape_token",
    "parse_state_token",
    "token_class",
    "cot_vocab",
    "scot_vocab",
    "dfa_accepts",
    "tm_run",
    "cot_token_oracle",
    "encode_summary",
    "scot_segments_oracle",
    "load_dfa",
    "load_tm",
    "dfa_to_json",
    "tm_to_json",
]

INP, EINP = "<inp>", "</inp>"
OUTP, EOUTP = "<outp>", "</outp>"
POPEN, PCLOSE = "<p>", "</p>"
SUMM, ESUMM = "<summ>", "</summ>"
BOS, TRUE, FALSE = "<bos>", "True", "False"

_RESERVED = {INP, EINP, OUTP, EOUTP, POPEN, PCLOSE, SUMM, ESUMM, BOS, TRUE, FALSE}
_BAD_CHARS = set("|,^:")

MOVES = ("L", "S", "R")


class MachineError(ValueError):
    """Malformed machine description."""


class NonHaltingError(RuntimeError):
    """Machine did not halt within the step cap."""


class InvalidOutputError(RuntimeError):
    """Machine halted but tape 1 does not hold a word over the input alphabet."""


class TokenBudgetError(RuntimeError):
    """Token sequence does not fit the 2^r context (or cap) limit for this r."""


def _check_name(name: str, kind: str) -> None:
    if not name or name in _RESERVED or name[0] == "<" or _BAD_CHARS & set(name):
        raise MachineError(f"invalid {kind} name {name!r}")
    if any(c.isspace() for c in name):
        raise MachineError(f"invalid {kind} name {name!r}")


# ---------------------------------------------------------------------------
# token constructors / parsers


def run_token(state: str, written: tuple[str, ...], moves: tuple[str, ...]) -> str:
    return f"run:{state}|{','.join(written)}|{''.join(moves)}"


def pos_token(bits: tuple[int, ...]) -> str:
    return "bits:" + "".join("+" if b > 0 else "-" for b in bits)


def tape_token(symbols: tuple[str, ...], hats: tuple[bool, ...]) -> str:
    return "tape:" + ",".join(("^" + s) if h else s for s, h in zip(symbols, hats))


def state_token(state: str) -> str:
    return f"state:{state}"


def parse_run_token(tok: str) -> tuple[str, tuple[str, ...], tuple[str, ...]]:
    state, written, moves = tok[len("run:"):].split("|")
    return state, tuple(written.split(",")), tuple(moves)


def parse_pos_token(tok: str) -> tuple[int, ...]:
    return tuple(1 if c == "+" else -1 for c in tok[len("bits:"):])


def parse_tape_token(tok: str) -> tuple[tuple[str, ...], tuple[bool, ...]]:
    parts = tok[len("tape:"):].split(",")
    syms = tuple(p.lstrip("^") for p in parts)
    hats = tuple(p.startswith("^") for p in parts)
    return syms, hats


def parse_state_token(tok: str) -> str:
    return tok[len("state:"):]


def token_class(tok: str) -> str:
    if tok in _RESERVED:
        return "delim"
    for prefix, cls in (("run:", "run"), ("bits:", "pos"), ("tape:", "tape"), ("state:", "state")):
        if tok.startswith(prefix):
            return cls
    return "sym"


# ---------------------------------------------------------------------------
# machines


@dataclass(frozen=True)
class Dfa:
    states: tuple[str, ...]
    alphabet: tuple[str, ...]
    delta: dict[tuple[str, str], str]
    q_init: str
    accepting: frozenset[str]

    def __post_init__(self) -> None:
        if not self.states or not self.alphabet:
            raise MachineError("DFA needs at least one state and one symbol")
        for s in self.states:
            _check_name(s, "state")
        for a in self.alphabet:
            _check_name(a, "symbol")
        if len(set(self.states)) != len(self.states) or len(set(self.alphabet)) != len(self.alphabet):
            raise MachineError("duplicate state or symbol names")
        if self.q_init not in self.states:
            raise MachineError(f"init state {self.q_init!r} not in states")
        for f in self.accepting:
            if f not in self.states:
                raise MachineError(f"accepting state {f!r} not in states")
        for q in self.states:
            for a in self.alphabet:
                if (q, a) not in self.delta:
                    raise MachineError(f"delta missing entry ({q!r},{a!r})")
        for (q, a), q2 in self.delta.items():
            if q not in self.states or a not in self.alphabet:
                raise MachineError(f"delta entry ({q!r},{a!r}) uses unknown state/symbol")
            if q2 not in self.states:
                raise MachineError(f"delta entry ({q!r},{a!r}) targets unknown state {q2!r}")


@dataclass(frozen=True)
class TuringMachine:
    tapes: int
    states: tuple[str, ...]
    input_alphabet: tuple[str, ...]
    tape_alphabet: tuple[str, ...]
    blank: str
    q_init: str
    q_halt: str
    delta: dict[tuple[str, tuple[str, ...]], tuple[str, tuple[str, ...], tuple[str, ...]]]

    def __post_init__(self) -> None:
        if self.tapes < 1:
            raise MachineError("need at least one tape")
        if not self.input_alphabet:
            raise MachineError("input alphabet must be nonempty")
        for s in self.states:
            _check_name(s, "state")
        for a in self.tape_alphabet:
            _check_name(a, "symbol")
        if len(set(self.states)) != len(self.states) or len(set(self.tape_alphabet)) != len(self.tape_alphabet):
            raise MachineError("duplicate state or symbol names")
        if not set(self.input_alphabet) <= set(self.tape_alphabet):
            raise MachineError("input alphabet must be contained in the tape alphabet")
        if self.blank not in self.tape_alphabet or self.blank in self.input_alphabet:
            raise MachineError("blank must be a tape symbol outside the input alphabet")
        if self.q_init not in self.states or self.q_halt not in self.states:
            raise MachineError("init/halt state not in states")
        if self.q_init == self.q_halt:
            raise MachineError("init and halt states must differ")
        for q in self.states:
            if q == self.q_halt:
                continue
            for syms in itertools.product(self.tape_alphabet, repeat=self.tapes):
                if (q, syms) not in self.delta:
                    raise MachineError(f"delta missing entry ({q!r},{syms!r})")
        for (q, syms), (q2, writes, moves) in self.delta.items():
            entry = f"({q!r},{','.join(syms)})"
            if q not in self.states or q == self.q_halt:
                raise MachineError(f"delta entry {entry} uses invalid source state")
            if len(syms) != self.tapes or len(writes) != self.tapes or len(moves) != self.tapes:
                raise MachineError(f"delta entry {entry} has wrong arity")
            if q2 not in self.states:
                raise MachineError(f"delta entry {entry} targets unknown state {q2!r}")
            if not set(syms) <= set(self.tape_alphabet) or not set(writes) <= set(self.tape_alphabet):
                raise MachineError(f"delta entry {entry} uses unknown symbols")
            if not set(moves) <= set(MOVES):
                raise MachineError(f"delta entry {entry} uses invalid moves {moves!r}")


@dataclass
class Configuration:
    state: str
    tapes: list[list[str]]  # finite prefixes; blanks beyond
    heads: list[int]

    def read(self, blank: str) -> tuple[str, ...]:
        return tuple(
            tape[h] if h < len(tape) else blank for tape, h in zip(self.tapes, self.heads)
        )

    def clone(self) -> "Configuration":
        return Configuration(self.state, [list(t) for t in self.tapes], list(self.heads))


@dataclass
class RunResult:
    halted: bool
    steps: int
    space: int
    output: list[str] | None
    config_trace: list[Configuration] = field(default_factory=list)
    run_tokens: list[str] = field(default_factory=list)
    head_trace: list[list[int]] = field(default_factory=list)  # heads after each step


# ---------------------------------------------------------------------------
# run semantics


def dfa_accepts(dfa: Dfa, word: list[str] | str) -> bool:
    q = dfa.q_init
    for a in word:
        if a not in dfa.alphabet:
            raise MachineError(f"symbol {a!r} not in alphabet")
        q = dfa.delta[(q, a)]
    return q in dfa.accepting


def _read_output(tm: TuringMachine, tape1: list[str]) -> list[str] | None:
    """Tape 1 must be a word over the input alphabet followed by blanks."""
    end = 0
    while end < len(tape1) and tape1[end] != tm.blank:
        end += 1
    word = tape1[:end]
    if any(s not in tm.input_alphabet for s in word):
        return None
    if any(s != tm.blank for s in tape1[end:]):
        return None
    return word


def tm_run(tm: TuringMachine, word: list[str] | str, step_cap: int) -> RunResult:
    word = list(word)
    for a in word:
        if a not in tm.input_alphabet:
            raise MachineError(f"symbol {a!r} not in input alphabet")
    if step_cap < 0:
        raise ValueError("step_cap must be >= 0")

    config = Configuration(
        state=tm.q_init,
        tapes=[list(word)] + [[] for _ in range(tm.tapes - 1)],
        heads=[0] * tm.tapes,
    )
    trace = [config.clone()]
    run_tokens: list[str] = []
    head_trace: list[list[int]] = []
    space = max(len(word), 1)  # t=0 heads sit on cell 0

    steps = 0
    while config.state != tm.q_halt:
        if steps >= step_cap:
            return RunResult(False, steps, space, None, trace, run_tokens, head_trace)
        read = config.read(tm.blank)
        q2, writes, moves = tm.delta[(config.state, read)]
        for k in range(tm.tapes):
            tape, h = config.tapes[k], config.heads[k]
            while len(tape) <= h:
                tape.append(tm.blank)
            tape[h] = writes[k]
            if moves[k] == "R":
                config.heads[k] = h + 1
            elif moves[k] == "L":
                config.heads[k] = max(0, h - 1)
        config.state = q2
        steps += 1
        space = max(space, 1 + max(config.heads))
        run_tokens.append(run_token(q2, writes, moves))
        head_trace.append(list(config.heads))
        trace.append(config.clone())

    output = _read_output(tm, config.tapes[0])
    return RunResult(True, steps, space, output, trace, run_tokens, head_trace)


# ---------------------------------------------------------------------------
# vocabularies


def _run_tokens_all(tm: TuringMachine) -> list[str]:
    return [
        run_token(q, ys, ms)
        for q in tm.states
        for ys in itertools.product(tm.tape_alphabet, repeat=tm.tapes)
        for ms in itertools.product(MOVES, repeat=tm.tapes)
    ]


def cot_vocab(tm: TuringMachine) -> list[str]:
    delims = [INP, EINP, OUTP, EOUTP, POPEN, PCLOSE]
    pos = [pos_token(b) for b in itertools.product((-1, 1), repeat=tm.tapes)]
    return delims + list(tm.input_alphabet) + _run_tokens_all(tm) + pos


def scot_vocab(tm: TuringMachine) -> list[str]:
    per_tape = [(s, h) for h in (False, True) for s in tm.tape_alphabet]
    tape_toks = [
        tape_token(tuple(s for s, _ in combo), tuple(h for _, h in combo))
        for combo in itertools.product(per_tape, repeat=tm.tapes)
    ]
    states = [state_token(q) for q in tm.states]
    return cot_vocab(tm) + [SUMM, ESUMM] + tape_toks + states


# ---------------------------------------------------------------------------
# oracles


def _bit(value: int, s: int) -> int:
    return 1 if (value >> s) & 1 else -1


def _pos_block(heads: list[int], r: int) -> list[str]:
    for n in heads:
        if n >= 2 ** r:
            raise TokenBudgetError(f"head position {n} needs more than {r} bits")
    return (
        [POPEN]
        + [pos_token(tuple(_bit(n, s) for n in heads)) for s in range(r)]
        + [PCLOSE]
    )


def cot_token_oracle(
    tm: TuringMachine, word: list[str] | str, r: int, step_cap: int | None = None
) -> list[str]:
    """The exact CoT token sequence for running tm on word with r position bits.

    Alternates chunks of r run tokens with <p>...</p> blocks spelling the
    head positions LSB-first, ends the trace at the halting run token and
    appends the output block.
    """
    if r < 2 or r % 2 != 0:
        raise ValueError("r must be even and >= 2")
    if step_cap is None:
        step_cap = 2 ** r - 2
    result = tm_run(tm, word, step_cap)
    if not result.halted:
        raise NonHaltingError(f"no halt within {step_cap} steps")
    if result.output is None:
        raise InvalidOutputError("tape 1 is not a word over the input alphabet")

    tokens = [INP, *word, EINP]
    chunk = 0
    for t, tok in enumerate(result.run_tokens, start=1):
        tokens.append(tok)
        if t == result.steps:
            break
        chunk += 1
        if chunk == r:
            tokens.extend(_pos_block(result.head_trace[t - 1], r))
            chunk = 0
    tokens.extend([OUTP, *result.output, EOUTP])

    if len(tokens) > 2 ** r:
        raise TokenBudgetError(f"{len(tokens)} tokens exceed the 2^{r} context bound")
    return tokens


def encode_summary(config: Configuration, used_cells: int, blank: str) -> list[str]:
    """<summ>, per-cell tape tokens with hats at head positions, state, </summ>."""
    if used_cells < 1 + max(config.heads):
        raise ValueError("used_cells must cover every head position")
    toks = [SUMM]
    for i in range(used_cells):
        syms = tuple(
            tape[i] if i < len(tape) else blank for tape in config.tapes
        )
        hats = tuple(h == i for h in config.heads)
        toks.append(tape_token(syms, hats))
    toks.append(state_token(config.state))
    toks.append(ESUMM)
    return toks


def scot_segments_oracle(
    tm: TuringMachine, word: list[str] | str, r: int, step_cap: int = 10_000
) -> list[list[str]]:
    """The SCoT segments: summary_{i-1}, trace_i, summary_i per segment.

    A trace ends at the halting run token, or at the first run token once
    its length reaches 3*(len(previous summary) - 1). The last segment ends
    with the output block instead of a summary.
    """
    if r < 4 or r % 2 != 0:
        raise ValueError("r must be even and >= 4")
    word = list(word)
    result = tm_run(tm, word, step_cap)
    if not result.halted:
        raise NonHaltingError(f"no halt within {step_cap} steps")
    if result.output is None:
        raise InvalidOutputError("tape 1 is not a word over the input alphabet")

    # Space used after t steps, per the summary definition (s_0 = |word|).
    space_at = [len(word)]
    for heads in result.head_trace:
        space_at.append(max(space_at[-1], 1 + max(heads)))

    summary_prev = [INP, *word, EINP]
    segments: list[list[str]] = []
    t = 0
    while True:
        if len(summary_prev) - 1 >= 2 ** (r - 2):
            raise TokenBudgetError(
                f"prompt end position {len(summary_prev) - 1} breaks the 4j length-cap "
                f"detection for r={r}"
            )
        cap = 3 * (len(summary_prev) - 1)
        trace: list[str] = []
        chunk = 0
        halted_here = False
        while True:
            t += 1
            trace.append(result.run_tokens[t - 1])
            chunk += 1
            if parse_run_token(result.run_tokens[t - 1])[0] == tm.q_halt:
                halted_here = True
                break
            if len(trace) >= cap:
                break
            if chunk == r:
                trace.extend(_pos_block(result.head_trace[t - 1], r))
                chunk = 0
        if halted_here:
            summary_next = [OUTP, *result.output, EOUTP]
        else:
            summary_next = encode_summary(result.config_trace[t], space_at[t], tm.blank)
        segment = summary_prev + trace + summary_next
        if len(segment) > 2 ** r:
            raise TokenBudgetError(f"segment of {len(segment)} tokens exceeds 2^{r}")
        segments.append(segment)
        if halted_here:
            return segments
        summary_prev = summary_next


# ---------------------------------------------------------------------------
# JSON machine files


def load_dfa(doc: dict) -> Dfa:
    try:
        states = tuple(doc["states"])
        alphabet = tuple(doc["alphabet"])
        init = doc["init"]
        accepting = frozenset(doc["accepting"])
        raw_delta = doc["delta"]
    except (KeyError, TypeError) as exc:
        raise MachineError(f"DFA spec missing field: {exc}") from exc
    delta = {}
    for key, target in raw_delta.items():
        parts = key.split(",")
        if len(parts) != 2:
            raise MachineError(f"bad DFA delta key {key!r} (want 'state,symbol')")
        delta[(parts[0], parts[1])] = target
    return Dfa(states, alphabet, delta, init, accepting)


def dfa_to_json(dfa: Dfa) -> dict:
    return {
        "states": list(dfa.states),
        "alphabet": list(dfa.alphabet),
        "init": dfa.q_init,
        "accepting": sorted(dfa.accepting),
        "delta": {f"{q},{a}": q2 for (q, a), q2 in sorted(dfa.delta.items())},
    }


def load_tm(doc: dict) -> TuringMachine:
    try:
        tapes = int(doc["tapes"])
        states = tuple(doc["states"])
        input_alphabet = tuple(doc["input_alphabet"])
        tape_alphabet = tuple(doc["tape_alphabet"])
        blank = doc["blank"]
        init = doc["init"]
        halt = doc["halt"]
        raw_delta = doc["delta"]
    except (KeyError, TypeError, ValueError) as exc:
        raise MachineError(f"TM spec missing/bad field: {exc}") from exc
    delta = {}
    for key, value in raw_delta.items():
        try:
            q, syms = key.split("|")
            q2, writes, moves = value.split("|")
        except ValueError as exc:
            raise MachineError(
                f"bad TM delta entry {key!r}: {value!r} (want 'q|a,b' -> 'q2|c,d|L,R')"
            ) from exc
        delta[(q, tuple(syms.split(",")))] = (
            q2,
            tuple(writes.split(",")),
            tuple(moves.split(",")),
        )
    return TuringMachine(tapes, states, input_alphabet, tape_alphabet, blank, init, halt, delta)


def tm_to_json(tm: TuringMachine) -> dict:
    return {
        "tapes": tm.tapes,
        "states": list(tm.states),
        "input_alphabet": list(tm.input_alphabet),
        "tape_alphabet": list(tm.tape_alphabet),
        "blank": tm.blank,
        "init": tm.q_init,
        "halt": tm.q_halt,
        "delta": {
            f"{q}|{','.join(syms)}": f"{q2}|{','.join(writes)}|{','.join(moves)}"
            for (q, syms), (q2, writes, moves) in sorted(tm.delta.items())
        },
    }
