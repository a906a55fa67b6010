"""Turing machine to transformer compilation (CoT and SCoT variants).

The emitted model autoregressively writes the machine's run: one run token
per step, a head-position block after every r run tokens, then the output
block. Head positions are reconstructed by collecting block bits and
propagating movements; symbols are fetched with a binary search for the
latest write at the queried cell. The SCoT variant adds segment summaries:
tape contents with hatted head cells plus the state, emitted once the
trace reaches three times the prompt length.

Layer indices follow the proof schedule: bit collection ends at
L1 = r/2 + 1, movement propagation at L2 = L1 + r + 2, symbol extraction
at L3 = L2 + r + 1, output logic in the final four layers.
"""

from __future__ import annotations

import itertools
import math

from ..automata import (
    EINP,
    EOUTP,
    ESUMM,
    INP,
    OUTP,
    PCLOSE,
    POPEN,
    SUMM,
    TuringMachine,
    cot_vocab,
    parse_pos_token,
    parse_run_token,
    parse_state_token,
    parse_tape_token,
    scot_vocab,
    token_class,
)
from ..gadgets import (
    ModelBuilder,
    RegisterLayout,
    add_head_movement,
    bin_pm1,
    copy_register,
    full_subtract,
    selector_head,
    single_neuron,
    sub_pow2,
    sub_pow2_inplace,
    zero_register,
)
from ..netcore import BinaryAbsolute, Dims, TransformerParams
from .common import ENC_MOVES, CompileReport, enc_table

__all__ = [
    "choose_r_cot",
    "choose_r_scot",
    "cot_dims",
    "scot_dims",
    "compile_cot",
    "compile_scot",
]


def choose_r_cot(t_hat: int) -> int:
    """Smallest even r from the CoT length bound: toks fit 2^r when t <= t_hat."""
    if t_hat < 1:
        raise ValueError("t_hat must be >= 1")
    return 2 * math.ceil(0.5 * math.log2(4 + 6 * t_hat))


def choose_r_scot(s_hat: int) -> int:
    """Even r making every SCoT segment (<= 8(s_hat+3) tokens) fit 2^r."""
    if s_hat < 1:
        raise ValueError("s_hat must be >= 1")
    return max(4, 2 * math.ceil(0.5 * math.log2(8 * (s_hat + 3))))


def _log_dims(tm: TuringMachine) -> tuple[int, int]:
    d_q = (len(tm.states) - 1).bit_length()
    d_g = (len(tm.tape_alphabet) - 1).bit_length()
    return d_q, d_g


def cot_dims(tm: TuringMachine, r: int) -> Dims:
    d_q, d_g = _log_dims(tm)
    k = tm.tapes
    n_trans = len(tm.states) * len(tm.tape_alphabet) ** k
    return Dims(
        d=6 * k * r + 6 * r + 3 * d_q + (3 * k + 1) * d_g + 10 * k + 21,
        d_k=4 * r - 1,
        d_v=max(r, d_q, d_g),
        d_ff=max(18 * r + 2, 14 * k * r + 2 * r, n_trans + 1),
        n_heads=3 * k,
        n_layers=5 * r // 2 + 8,
    )


def scot_dims(tm: TuringMachine, r: int) -> Dims:
    d_q, d_g = _log_dims(tm)
    k = tm.tapes
    n_trans = len(tm.states) * len(tm.tape_alphabet) ** k
    return Dims(
        d=7 * k * r + 9 * r + 5 * d_q + (4 * k + 1) * d_g + 13 * k + 31,
        d_k=4 * r - 1,
        d_v=max(r, d_q, d_g),
        d_ff=max(
            22 * r + 11,
            18 * k * r + 2 * r + 1,
            n_trans + 4 * k * d_g + 4 * k + 1,
        ),
        n_heads=3 * k + 2,
        n_layers=5 * r // 2 + 8,
    )


class _TmCompiler:
    def __init__(self, tm: TuringMachine, r: int, scot: bool):
        if r % 2 != 0:
            raise ValueError("r must be even")
        if scot and r < 4:
            raise ValueError("the SCoT construction needs r >= 4")
        if not scot and r < 2:
            raise ValueError("r must be >= 2")
        self.tm = tm
        self.r = r
        self.scot = scot
        self.K = tm.tapes
        self.enc_q = enc_table(tm.states)
        self.enc_g = enc_table(tm.tape_alphabet)
        self.d_q, self.d_g = _log_dims(tm)
        self.dims = scot_dims(tm, r) if scot else cot_dims(tm, r)
        self.L1 = r // 2 + 1
        self.L2 = self.L1 + r + 2
        self.L3 = self.L2 + r + 1
        self.vocab = scot_vocab(tm) if scot else cot_vocab(tm)

    # -- layout ------------------------------------------------------------

    def _allocate(self) -> None:
        lay = RegisterLayout()
        r, K = self.r, self.K
        self.i_pos = lay.register("pos", r)
        self.f_inp = lay.flag("inp")
        self.f_einp = lay.flag("einp")
        self.f_outp = lay.flag("outp")
        self.f_eoutp = lay.flag("eoutp")
        self.f_popen = lay.flag("popen")
        self.f_pclose = lay.flag("pclose")
        self.f_run = lay.flag("run")
        self.f_sym = lay.flag("sym")
        self.f_postok = lay.flag("postok")
        self.i_posbit = [lay.register(f"posbit{k}", 1) for k in range(K)]
        self.i_state = lay.register("state", self.d_q)
        self.i_sym = [lay.register(f"sym{k}", self.d_g) for k in range(K)]
        self.i_move = [lay.register(f"move{k}", 2) for k in range(K)]
        self.f_const = lay.flag("const")
        self.f_exists_outp = lay.flag("exists_outp")
        self.f_input = lay.flag("input")
        self.f_output = lay.flag("output")
        self.f_notinp = lay.flag("notinp")
        self.i_searchpos = [lay.register(f"searchpos{k}", r) for k in range(K)]
        self.i_spos = [lay.register(f"spos{k}", r) for k in range(K)]
        self.i_pos_outp = lay.register("pos_outp", r)
        self.i_pos1 = lay.register("pos1", r)
        self.i_pos2 = lay.register("pos2", r)
        self.i_bits_ex1 = [lay.register(f"bits_ex1_{k}", 1) for k in range(K)]
        self.i_bits_ex2 = [lay.register(f"bits_ex2_{k}", 1) for k in range(K)]
        self.i_pos_minus = lay.register("pos_minus", r)
        self.i_hpos_minus = [lay.register(f"hpos_minus{k}", r) for k in range(K)]
        self.i_pos_sym = [lay.register(f"pos_sym{k}", r) for k in range(K)]
        self.i_pos_max = [lay.register(f"pos_max{k}", r) for k in range(K)]
        self.f_exist = [lay.flag(f"exist{k}") for k in range(K)]
        self.f_exists_high = [lay.flag(f"exists_high{k}") for k in range(K)]
        self.i_sym_ex = [lay.register(f"sym_ex{k}", self.d_g) for k in range(K)]
        self.i_hpos_p = [lay.register(f"hpos_p{k}", r) for k in range(K)]
        self.i_pos_scan = lay.register("pos_scan", r)  # the looping decrement
        self.i_nextbit = [lay.register(f"nextbit{k}", 1) for k in range(K)]
        self.f_to_pclose = lay.flag("to_pclose")
        self.i_state_ex = lay.register("state_ex", self.d_q)
        self.f_halt = lay.flag("halt")
        self.f_lastrun = lay.flag("lastrun")
        self.f_to_popen = lay.flag("to_popen")
        self.i_state_new = lay.register("state_new", self.d_q)
        self.i_sym_new = [lay.register(f"sym_new{k}", self.d_g) for k in range(K)]
        self.i_move_new = [lay.register(f"move_new{k}", 2) for k in range(K)]
        self.f_blank = lay.flag("blank")
        self.f_to_eoutp = lay.flag("to_eoutp")
        self.f_to_sigma = lay.flag("to_sigma")
        self.i_newsym_sigma = lay.register("newsym_sigma", self.d_g)

        if self.scot:
            self.f_summ = lay.flag("summ")
            self.f_esumm = lay.flag("esumm")
            self.f_tape = lay.flag("tape")
            self.f_q = lay.flag("qtok")
            self.f_head = [lay.flag(f"head{k}") for k in range(K)]
            self.f_exists_einp = lay.flag("exists_einp")
            self.f_exists_esumm = lay.flag("exists_esumm")
            self.f_finalsumm = lay.flag("finalsumm")
            self.f_tape_init = lay.flag("tape_init")
            self.f_tape_fin = lay.flag("tape_fin")
            self.i_pos_promptend = lay.register("pos_promptend", r)
            self.f_bit_equal = [lay.flag(f"bit_equal{s}") for s in range(r - 2)]
            self.f_lengthcap = lay.flag("lengthcap")
            self.f_to_summ = lay.flag("to_summ")
            self.i_pos_summ = lay.register("pos_summ", r)
            self.i_state_fin = lay.register("state_fin", self.d_q)
            self.i_hpos_fin = [lay.register(f"hpos_fin{k}", r) for k in range(K)]
            self.f_head_next = [lay.flag(f"head_next{k}") for k in range(K)]
            # Holds "nothing left to write": 1 at the summary token that must
            # emit the state token instead of another tape token.
            self.f_summary_done = lay.flag("summary_done")
            self.i_sym_next = [lay.register(f"sym_next{k}", self.d_g) for k in range(K)]
            self.i_head_next = [lay.register(f"head_next_bit{k}", 1) for k in range(K)]
            self.i_state_fin_out = lay.register("state_fin_out", self.d_q)

        if lay.d != self.dims.d:
            raise AssertionError(f"layout d={lay.d} but theorem d={self.dims.d}")
        self.layout = lay
        self.b = ModelBuilder(lay, n_layers=self.dims.n_layers)
        group = [
            self.f_inp,
            self.f_einp,
            self.f_outp,
            self.f_eoutp,
            self.f_popen,
            self.f_pclose,
            self.f_run,
            self.f_postok,
            self.f_input,
            self.f_output,
        ]
        if self.scot:
            group += [
                self.f_esumm,
                self.f_finalsumm,
                self.f_tape_init,
                self.f_tape_fin,
                self.f_q,
            ]
        self.b.declare_exclusive(group)

    # -- embeddings ----------------------------------------------------------

    def _embeddings(self) -> None:
        b, tm = self.b, self.tm
        for tok in self.vocab:
            vals = {self.f_const.coord: 1}
            if tok != INP:
                vals[self.f_notinp.coord] = 1
            cls = token_class(tok)
            if tok == INP:
                vals[self.f_inp.coord] = 1
            elif tok == EINP:
                vals[self.f_einp.coord] = 1
                vals.update(zip(self.i_state.coords, self.enc_q[tm.q_init]))
                for k in range(self.K):
                    vals.update(zip(self.i_searchpos[k].coords, bin_pm1(self.r, 0)))
            elif tok == OUTP:
                vals[self.f_outp.coord] = 1
                vals.update(zip(self.i_searchpos[0].coords, bin_pm1(self.r, 0)))
            elif tok == EOUTP:
                vals[self.f_eoutp.coord] = 1
            elif tok == POPEN:
                vals[self.f_popen.coord] = 1
            elif tok == PCLOSE:
                vals[self.f_pclose.coord] = 1
            elif tok == SUMM:
                vals[self.f_summ.coord] = 1
            elif tok == ESUMM:
                vals[self.f_esumm.coord] = 1
            elif cls == "sym":
                vals[self.f_sym.coord] = 1
                vals.update(zip(self.i_sym[0].coords, self.enc_g[tok]))
            elif cls == "run":
                state, written, moves = parse_run_token(tok)
                vals[self.f_run.coord] = 1
                vals.update(zip(self.i_state.coords, self.enc_q[state]))
                if state == tm.q_halt:
                    vals[self.f_halt.coord] = 1
                for k in range(self.K):
                    vals.update(zip(self.i_sym[k].coords, self.enc_g[written[k]]))
                    vals.update(zip(self.i_move[k].coords, ENC_MOVES[moves[k]]))
            elif cls == "pos":
                bits = parse_pos_token(tok)
                vals[self.f_postok.coord] = 1
                for k in range(self.K):
                    vals[self.i_posbit[k].coords[0]] = bits[k]
            elif cls == "tape":
                syms, hats = parse_tape_token(tok)
                vals[self.f_tape.coord] = 1
                for k in range(self.K):
                    vals.update(zip(self.i_sym[k].coords, self.enc_g[syms[k]]))
                    if hats[k]:
                        vals[self.f_head[k].coord] = 1
            elif cls == "state":
                vals[self.f_q.coord] = 1
                vals.update(zip(self.i_state.coords, self.enc_q[parse_state_token(tok)]))
            b.set_embedding(tok, {c: v for c, v in vals.items() if v})

    # -- layer 1 -------------------------------------------------------------

    def _layer1(self) -> None:
        b = self.b
        b.add_head(
            1,
            selector_head(
                "exists-outp", [self.f_const], [self.f_outp], [self.f_outp], self.f_exists_outp
            ),
        )
        b.add_neurons(
            1,
            [
                single_neuron(
                    [], [(self.f_sym, 1), (self.f_exists_outp, 0)], {self.f_input.coord: 1}
                ),
                single_neuron(
                    [], [(self.f_sym, 1), (self.f_exists_outp, 1)], {self.f_output.coord: 1}
                ),
            ],
            "mark-input-output",
        )
        b.add_neurons(
            1,
            sub_pow2(
                self.i_pos,
                self.i_spos[0],
                0,
                [(self.f_sym, 1), (self.f_exists_outp, 0)],
            ),
            "spos-input",
            gate_key=((self.f_sym.coord, 1), (self.f_exists_outp.coord, 0)),
        )
        b.add_neurons(
            1,
            copy_register(self.i_pos, self.i_pos_outp, [(self.f_outp, 1)]),
            "pos-outp-copy",
            gate_key=((self.f_outp.coord, 1),),
        )
        b.add_neurons(1, sub_pow2(self.i_pos, self.i_pos1, 0, []), "pos1-init")
        b.add_neurons(1, sub_pow2(self.i_pos, self.i_pos2, 1, []), "pos2-init")
        b.add_neurons(1, sub_pow2(self.i_pos, self.i_pos_minus, 0, []), "pos-minus-init")

        if self.scot:
            b.add_head(
                1,
                selector_head(
                    "exists-einp",
                    [self.f_const],
                    [self.f_einp],
                    [self.f_einp],
                    self.f_exists_einp,
                ),
            )
            b.add_head(
                1,
                selector_head(
                    "exists-esumm",
                    [self.f_const],
                    [self.f_esumm],
                    [self.f_esumm],
                    self.f_exists_esumm,
                ),
            )
            b.add_neurons(
                1,
                [
                    single_neuron(
                        [],
                        [(self.f_summ, 1), (self.f_exists_einp, 1)],
                        {self.f_finalsumm.coord: 1},
                    ),
                    single_neuron(
                        [],
                        [(self.f_summ, 1), (self.f_exists_esumm, 1)],
                        {self.f_finalsumm.coord: 1},
                    ),
                    # A prompt-leading <summ> plays the role of <inp>.
                    single_neuron(
                        [],
                        [(self.f_summ, 1), (self.f_exists_einp, 0), (self.f_exists_esumm, 0)],
                        {self.f_inp.coord: 1, self.f_notinp.coord: -1},
                    ),
                    single_neuron(
                        [],
                        [(self.f_tape, 1), (self.f_exists_einp, 0), (self.f_exists_esumm, 0)],
                        {self.f_tape_init.coord: 1},
                    ),
                    single_neuron(
                        [],
                        [(self.f_tape, 1), (self.f_exists_einp, 1)],
                        {self.f_tape_fin.coord: 1},
                    ),
                    single_neuron(
                        [],
                        [(self.f_tape, 1), (self.f_exists_esumm, 1)],
                        {self.f_tape_fin.coord: 1},
                    ),
                ],
                "segment-structure",
            )
            b.add_neurons(
                1,
                copy_register(self.i_pos, self.i_pos_promptend, [(self.f_einp, 1)]),
                "promptend-einp",
                gate_key=((self.f_einp.coord, 1),),
            )
            b.add_neurons(
                1,
                copy_register(self.i_pos, self.i_pos_promptend, [(self.f_esumm, 1)]),
                "promptend-esumm",
                gate_key=((self.f_esumm.coord, 1),),
            )

    # -- layer 2 -------------------------------------------------------------

    def _broadcast_head(self, name: str, marker, values, out) -> None:
        """Send a register from the unique marker token to all later tokens."""
        return selector_head(
            name,
            [self.f_const, marker, marker],
            [marker, self.f_inp, self.f_inp],
            [values],
            out,
        )

    def _layer2(self) -> None:
        b, r, K = self.b, self.r, self.K
        b.add_head(
            2, self._broadcast_head("broadcast-outp-pos", self.f_outp, self.i_pos_outp, self.i_pos_outp)
        )
        b.add_neurons(
            2,
            copy_register(self.i_pos, self.i_searchpos[0], [(self.f_output, 1)]),
            "searchpos-output-copy",
            gate_key=((self.f_output.coord, 1),),
        )
        for k in range(K):
            b.add_neurons(
                2,
                copy_register(self.i_pos, self.i_pos_sym[k], [(self.f_run, 1)]),
                f"pos-sym-run-{k}",
                gate_key=((self.f_run.coord, 1),),
            )
        b.add_neurons(
            2,
            copy_register(self.i_pos, self.i_pos_sym[0], [(self.f_input, 1)]),
            "pos-sym-input",
            gate_key=((self.f_input.coord, 1),),
        )
        if self.scot:
            pe_row = [(self.f_einp.coord, 1), (self.f_esumm.coord, 1)]
            b.add_head(
                2,
                selector_head(
                    "broadcast-promptend",
                    [self.f_const, pe_row, pe_row],
                    [pe_row, self.f_inp, self.f_inp],
                    [self.i_pos_promptend],
                    self.i_pos_promptend,
                ),
            )
            for k in range(K):
                b.add_neurons(
                    2,
                    sub_pow2(self.i_pos, self.i_spos[k], 0, [(self.f_tape_init, 1)]),
                    f"spos-tape-{k}",
                    gate_key=((self.f_tape_init.coord, 1),),
                )
                b.add_neurons(
                    2,
                    copy_register(self.i_pos, self.i_pos_sym[k], [(self.f_tape_init, 1)]),
                    f"pos-sym-tape-{k}",
                    gate_key=((self.f_tape_init.coord, 1),),
                )
            b.add_neurons(
                2,
                copy_register(self.i_pos, self.i_pos_summ, [(self.f_finalsumm, 1)]),
                "pos-summ-copy",
                gate_key=((self.f_finalsumm.coord, 1),),
            )
            eq_neurons = []
            for s in range(r - 2):
                for sign in (1, -1):
                    eq_neurons.append(
                        single_neuron(
                            [
                                (self.i_pos.bit(s + 2), (sign,)),
                                (self.i_pos_promptend.bit(s), (sign,)),
                            ],
                            [],
                            {self.f_bit_equal[s].coord: 1},
                        )
                    )
            b.add_neurons(2, eq_neurons, "bit-equal")

    # -- position-block bit collection: layers 2..L1 -------------------------

    def _collection(self) -> None:
        b, r, K = self.b, self.r, self.K
        for j in range(1, r // 2 + 1):
            layer = j + 1
            for k in range(K):
                b.add_head(
                    layer,
                    selector_head(
                        f"collect1-{j}-{k}",
                        [self.i_pos1],
                        [self.i_pos],
                        [self.i_posbit[k]],
                        self.i_bits_ex1[k],
                    ),
                )
                b.add_head(
                    layer,
                    selector_head(
                        f"collect2-{j}-{k}",
                        [self.i_pos2],
                        [self.i_pos],
                        [self.i_posbit[k]],
                        self.i_bits_ex2[k],
                    ),
                )
                b.add_neurons(
                    layer,
                    copy_register(
                        self.i_bits_ex1[k],
                        self.i_searchpos[k][r - 2 * j + 1 : r - 2 * j + 2],
                        [(self.f_pclose, 1)],
                    ),
                    f"collect-copy1-{j}-{k}",
                    gate_key=((self.f_pclose.coord, 1),),
                )
                b.add_neurons(
                    layer,
                    copy_register(
                        self.i_bits_ex2[k],
                        self.i_searchpos[k][r - 2 * j : r - 2 * j + 1],
                        [(self.f_pclose, 1)],
                    ),
                    f"collect-copy2-{j}-{k}",
                    gate_key=((self.f_pclose.coord, 1),),
                )
                b.add_neurons(
                    layer,
                    zero_register(self.i_bits_ex1[k], []) + zero_register(self.i_bits_ex2[k], []),
                    f"collect-zero-{j}-{k}",
                    bundle=f"bits-ex-{k}",
                )
            b.add_neurons(layer, sub_pow2_inplace(self.i_pos1, 1, []), f"pos1-dec-{j}", bundle="pos1")
            b.add_neurons(layer, sub_pow2_inplace(self.i_pos2, 1, []), f"pos2-dec-{j}", bundle="pos2")

    # -- SCoT layers 3 and 4 --------------------------------------------------

    def _scot_prompt_layers(self) -> None:
        b, r, K = self.b, self.r, self.K
        esumm_q = [self.f_esumm, self.f_esumm, self.f_const]
        for k in range(K):
            b.add_head(
                3,
                selector_head(
                    f"hat-extract-{k}",
                    esumm_q,
                    [self.f_head[k], self.f_head[k], self.f_inp],
                    [self.i_spos[k]],
                    self.i_searchpos[k],
                ),
            )
        b.add_head(
            3,
            selector_head(
                "state-extract-esumm",
                esumm_q,
                [self.f_q, self.f_q, self.f_inp],
                [self.i_state],
                self.i_state,
            ),
        )
        b.add_head(
            3, self._broadcast_head("broadcast-summ-pos", self.f_finalsumm, self.i_pos_summ, self.i_pos_summ)
        )
        cap_patterns = [(f, 1) for f in self.f_bit_equal]
        b.add_neurons(
            3,
            [
                single_neuron(
                    [
                        (self.i_pos[0:2], (-1, -1)),
                        (self.i_pos_promptend[r - 2 : r], (-1, -1)),
                    ],
                    cap_patterns,
                    {self.f_lengthcap.coord: 1},
                )
            ],
            "lengthcap",
        )
        for k in range(K):
            for flag, tag in ((self.f_finalsumm, "fs"), (self.f_tape_fin, "tf")):
                b.add_neurons(
                    3,
                    copy_register(self.i_pos, self.i_searchpos[k], [(flag, 1)]),
                    f"summary-offset-copy-{tag}-{k}",
                    gate_key=((flag.coord, 1),),
                )
        b.add_head(
            4,
            self._broadcast_head(
                "broadcast-lengthcap", self.f_lengthcap, self.f_lengthcap, self.f_lengthcap
            ),
        )
        b.add_neurons(
            4,
            [
                single_neuron(
                    [],
                    [(self.f_run, 1), (self.f_lengthcap, 1), (self.f_halt, 0)],
                    {self.f_to_summ.coord: 1},
                )
            ],
            "to-summ",
        )

    # -- subtraction pipelines ------------------------------------------------

    def _subtractions(self) -> None:
        b, r = self.b, self.r
        stages = full_subtract(self.i_pos_outp, self.i_searchpos[0], self.f_output)
        for s, stage in enumerate(stages):
            b.add_neurons(
                3 + s,
                stage,
                f"output-offset-sub-{s}",
                gate_key=((self.f_output.coord, 1),),
            )
        if self.scot:
            for k in range(self.K):
                for flag, tag in ((self.f_finalsumm, "fs"), (self.f_tape_fin, "tf")):
                    stages = full_subtract(self.i_pos_summ, self.i_searchpos[k], flag)
                    for s, stage in enumerate(stages):
                        b.add_neurons(
                            4 + s,
                            stage,
                            f"summary-offset-sub-{tag}-{k}-{s}",
                            gate_key=((flag.coord, 1),),
                        )

    # -- head position propagation: layers L1+1..L1+r+1 ------------------------

    def _propagation(self) -> None:
        b, r, K = self.b, self.r, self.K
        for j in range(1, r + 2):
            layer = self.L1 + j
            for k in range(K):
                b.add_head(
                    layer,
                    selector_head(
                        f"prop-fetch-{j}-{k}",
                        [self.i_pos_minus],
                        [self.i_pos],
                        [self.i_searchpos[k]],
                        self.i_hpos_minus[k],
                    ),
                )
                b.add_neurons(
                    layer,
                    add_head_movement(
                        self.i_hpos_minus[k],
                        self.i_searchpos[k],
                        self.i_move[k],
                        self.f_run,
                        ENC_MOVES,
                    )
                    + zero_register(self.i_searchpos[k], [(self.f_run, 1)]),
                    f"prop-move-{j}-{k}",
                    gate_key=((self.f_run.coord, 1),),
                )
                b.add_neurons(
                    layer,
                    copy_register(self.i_hpos_minus[k], self.i_searchpos[k], [(self.f_popen, 1)])
                    + zero_register(self.i_searchpos[k], [(self.f_popen, 1)]),
                    f"prop-popen-{j}-{k}",
                    gate_key=((self.f_popen.coord, 1),),
                )
                if j <= r:
                    b.add_neurons(
                        layer,
                        zero_register(self.i_hpos_minus[k], []),
                        f"prop-clear-{j}-{k}",
                        bundle=f"hpos-minus-{k}",
                    )

    # -- layer L2 ---------------------------------------------------------------

    def _layer_l2(self) -> None:
        b, K = self.b, self.K
        for k in range(K):
            b.add_neurons(
                self.L2,
                copy_register(self.i_hpos_minus[k], self.i_spos[k], [(self.f_run, 1)]),
                f"spos-run-{k}",
                gate_key=((self.f_run.coord, 1),),
            )
            b.add_neurons(
                self.L2,
                copy_register(self.i_searchpos[k], self.i_hpos_p[k], [(self.f_popen, 1)]),
                f"hpos-p-copy-{k}",
                gate_key=((self.f_popen.coord, 1),),
            )
            b.add_neurons(
                self.L2,
                copy_register(
                    self.i_searchpos[k][0:1], self.i_nextbit[k], [(self.f_popen, 1)]
                ),
                f"nextbit-popen-{k}",
                gate_key=((self.f_popen.coord, 1),),
            )
        b.add_neurons(self.L2, sub_pow2(self.i_pos, self.i_pos_scan, 0, []), "pos-scan-init")
        if self.scot:
            for k in range(K):
                b.add_head(
                    self.L2,
                    selector_head(
                        f"fin-hpos-{k}",
                        [self.i_pos_minus],
                        [self.i_pos],
                        [self.i_searchpos[k]],
                        self.i_hpos_fin[k],
                    ),
                )
            b.add_head(
                self.L2,
                selector_head(
                    "fin-state",
                    [self.i_pos_minus],
                    [self.i_pos],
                    [self.i_state],
                    self.i_state_fin,
                ),
            )

    # -- symbol search: layers L2+1..L3 -----------------------------------------

    def _symbol_search(self) -> None:
        b, r, K = self.b, self.r, self.K
        ones = (self.f_const, r - 1)
        for k in range(K):
            b.add_head(
                self.L2 + 1,
                selector_head(
                    f"exist-{k}",
                    [self.i_searchpos[k], ones],
                    [self.i_spos[k], (self.f_inp, r - 1)],
                    [self.f_notinp],
                    self.f_exist[k],
                ),
            )
        for j in range(r):
            layer = self.L2 + 1 + j
            bit = r - 1 - j
            for k in range(K):
                q_parts = [
                    self.i_searchpos[k],
                    (self.f_const, r + j),
                    self.f_const,
                    self.i_pos_max[k][bit + 1 : r],
                ]
                k_parts = [
                    self.i_spos[k],
                    (self.f_inp, r + j),
                    self.i_pos_sym[k][bit:r],
                ]
                b.add_head(
                    layer,
                    selector_head(
                        f"bsearch-{j}-{k}", q_parts, k_parts, [self.f_notinp], self.f_exists_high[k]
                    ),
                )
                b.add_neurons(
                    layer,
                    [
                        single_neuron(
                            [], [(self.f_exists_high[k], 1)], {self.i_pos_max[k].coords[bit]: 1}
                        ),
                        single_neuron(
                            [],
                            [(self.f_exists_high[k], 0), (self.f_exist[k], 1)],
                            {self.i_pos_max[k].coords[bit]: -1},
                        ),
                        single_neuron(
                            [], [(self.f_exists_high[k], 1)], {self.f_exists_high[k].coord: -1}
                        ),
                    ],
                    f"bsearch-bit-{j}-{k}",
                )

    # -- the position-block emission machinery: layers L2+1..L2+r ----------------

    def _pos_block_machinery(self) -> None:
        b, r, K = self.b, self.r, self.K
        for p in range(1, r):
            layer = self.L2 + p
            for k in range(K):
                b.add_head(
                    layer,
                    selector_head(
                        f"nextbit-fetch-{p}-{k}",
                        [self.i_pos_scan],
                        [self.i_pos],
                        [self.i_hpos_p[k].bit(p)],
                        self.i_nextbit[k],
                    ),
                )
            b.add_neurons(layer, sub_pow2_inplace(self.i_pos_scan, 0, []), f"pos-scan-dec-{p}", bundle="scan")
        # The r'th run token of a chunk must emit <p>: look r-1 back for a run
        # token. For r = 2 the scan register is needed elsewhere that layer,
        # but pos_minus holds i-1 = i-(r-1) permanently, so use it instead.
        if r == 2:
            b.add_head(
                self.L2 + r,
                selector_head(
                    "lastrun", [self.i_pos_minus], [self.i_pos], [self.f_run], self.f_lastrun
                ),
            )
        else:
            b.add_head(
                self.L2 + r - 1,
                selector_head(
                    "lastrun", [self.i_pos_scan], [self.i_pos], [self.f_run], self.f_lastrun
                ),
            )
        b.add_neurons(
            self.L2 + r - 1 if r > 2 else self.L2 + r,
            [
                single_neuron(
                    [],
                    [(self.f_lastrun, 1), (self.f_run, 1), (self.f_halt, 0)],
                    {self.f_to_popen.coord: 1},
                )
            ],
            "to-popen",
        )
        b.add_head(
            self.L2 + r,
            selector_head(
                "to-pclose", [self.i_pos_scan], [self.i_pos], [self.f_popen], self.f_to_pclose
            ),
        )
        b.add_neurons(self.L2 + r, sub_pow2_inplace(self.i_pos_scan, 1, []), "pos-scan-dec-2", bundle="scan")
        if self.scot:
            # Clear the <p> emission when the length cap fires the summary.
            b.add_neurons(
                self.L3,
                [
                    single_neuron(
                        [],
                        [(self.f_to_popen, 1), (self.f_to_summ, 1)],
                        {self.f_to_popen.coord: -1},
                    )
                ],
                "to-popen-clear",
            )

    # -- SCoT final-summary machinery ---------------------------------------------

    def _scot_summary_write(self) -> None:
        b, r, K = self.b, self.r, self.K
        for k in range(K):
            b.add_neurons(
                self.L2 + 1,
                zero_register(self.i_hpos_fin[k], [(self.f_finalsumm, 0)]),
                f"fin-hpos-clear-{k}",
                gate_key=((self.f_finalsumm.coord, 0),),
            )
        b.add_neurons(
            self.L2 + 1,
            zero_register(self.i_state_fin, [(self.f_finalsumm, 0)]),
            "fin-state-clear",
            gate_key=((self.f_finalsumm.coord, 0),),
        )
        b.add_head(
            self.L2 + 2,
            self._broadcast_head(
                "broadcast-fin-state", self.f_finalsumm, self.i_state_fin, self.i_state_fin
            ),
        )
        for k in range(K):
            b.add_head(
                self.L2 + 2,
                selector_head(
                    f"head-next-{k}",
                    [self.i_searchpos[k], (self.f_const, r - 1)],
                    [self.i_hpos_fin[k], (self.f_inp, r - 1)],
                    [self.f_notinp],
                    self.f_head_next[k],
                ),
            )
        done_flags = [(f, 0) for f in self.f_exist] + [(f, 0) for f in self.f_head_next]
        b.add_neurons(
            self.L2 + 3,
            [
                single_neuron([], done_flags + [(self.f_finalsumm, 1)], {self.f_summary_done.coord: 1}),
                single_neuron([], done_flags + [(self.f_tape_fin, 1)], {self.f_summary_done.coord: 1}),
            ],
            "summary-done",
        )
        b.add_neurons(
            self.L2 + 4,
            copy_register(self.i_state_fin, self.i_state_fin_out, [(self.f_summary_done, 1)]),
            "state-out-copy",
            gate_key=((self.f_summary_done.coord, 1),),
        )

    # -- extraction layer L3 ---------------------------------------------------

    def _extraction_layer(self) -> None:
        b, r, K = self.b, self.r, self.K
        for k in range(K):
            b.add_head(
                self.L3,
                selector_head(
                    f"extract-sym-{k}",
                    [self.i_pos_max[k], self.f_const],
                    [self.i_pos_sym[k], self.f_inp],
                    [self.i_sym[k]],
                    self.i_sym_ex[k],
                ),
            )
        b.add_head(
            self.L3,
            selector_head(
                "extract-state", [self.i_pos_scan], [self.i_pos], [self.i_state], self.i_state_ex
            ),
        )
        blank_enc = self.enc_g[self.tm.blank]
        blank_fill = []
        for k in range(K):
            out = {c: v for c, v in zip(self.i_sym_ex[k].coords, blank_enc) if v}
            blank_fill.append(
                single_neuron(
                    [],
                    [
                        (self.f_exist[k], 0),
                        (self.f_popen, 0),
                        (self.f_postok, 0),
                        (self.f_input, 0),
                    ],
                    out,
                )
            )
        b.add_neurons(self.L3, blank_fill, "blank-fill")
        b.add_neurons(
            self.L3,
            copy_register(self.i_state_ex, self.i_state, [(self.f_pclose, 1)]),
            "state-pclose-copy",
            gate_key=((self.f_pclose.coord, 1),),
        )

    # -- transition layer L3+1 ---------------------------------------------------

    def _transition_layer(self) -> None:
        b, K, tm = self.b, self.K, self.tm
        layer = self.L3 + 1
        neurons = []
        for q in tm.states:
            for syms in itertools.product(tm.tape_alphabet, repeat=K):
                if q == tm.q_halt:
                    # delta is unused on the halting state; emit a dummy stay
                    # step whose outputs get zeroed by the halt gate anyway.
                    q2, writes, moves = q, syms, ("S",) * K
                else:
                    q2, writes, moves = tm.delta[(q, syms)]
                out: dict[int, int] = {}
                out.update(
                    {c: v for c, v in zip(self.i_state_new.coords, self.enc_q[q2]) if v}
                )
                for k in range(K):
                    out.update(
                        {c: v for c, v in zip(self.i_sym_new[k].coords, self.enc_g[writes[k]]) if v}
                    )
                    out.update(
                        {c: v for c, v in zip(self.i_move_new[k].coords, ENC_MOVES[moves[k]]) if v}
                    )
                pats = [(self.i_state, self.enc_q[q])]
                for k in range(K):
                    pats.append((self.i_sym_ex[k], self.enc_g[syms[k]]))
                neurons.append(single_neuron(pats, [], out))
        b.add_neurons(layer, neurons, "transition", bundle="transition")
        b.add_neurons(
            layer,
            [
                single_neuron(
                    [(self.i_sym_ex[0], self.enc_g[tm.blank])], [], {self.f_blank.coord: 1}
                )
            ],
            "blank-flag",
        )
        if self.scot:
            emit_gates = [
                [(self.f_finalsumm, 1), (self.f_summary_done, 0)],
                [(self.f_tape_fin, 1), (self.f_summary_done, 0)],
            ]
            for k in range(K):
                for gi, gates in enumerate(emit_gates):
                    b.add_neurons(
                        layer,
                        copy_register(self.i_sym_ex[k], self.i_sym_next[k], gates),
                        f"sym-next-copy-{gi}-{k}",
                        gate_key=tuple((f.coord, v) for f, v in gates),
                    )
                    b.add_neurons(
                        layer,
                        [
                            single_neuron(
                                [], gates + [(self.f_head_next[k], 1)],
                                {self.i_head_next[k].coords[0]: 1},
                            ),
                            single_neuron(
                                [], gates + [(self.f_head_next[k], 0)],
                                {self.i_head_next[k].coords[0]: -1},
                            ),
                        ],
                        f"head-next-bit-{gi}-{k}",
                        gate_key=tuple((f.coord, v) for f, v in gates),
                    )

    # -- output logic layers L3+2..L ----------------------------------------------

    def _output_layers(self) -> None:
        b, K = self.b, self.K
        b.add_neurons(
            self.L3 + 2,
            [
                single_neuron([], [(self.f_outp, 1), (self.f_blank, 1)], {self.f_to_eoutp.coord: 1}),
                single_neuron(
                    [], [(self.f_output, 1), (self.f_blank, 1)], {self.f_to_eoutp.coord: 1}
                ),
            ],
            "to-eoutp",
        )
        # The three run-token cases are mutually exclusive through the halt
        # and to_popen bits (to_popen is cleared when to_summ fires); the
        # explicit run/qtok gating makes the disjointness checkable.
        zero_targets = [self.i_state_new] + self.i_sym_new + self.i_move_new
        gate_sets = [
            ("halt", [(self.f_halt, 1), (self.f_run, 1)]),
            ("popen", [(self.f_to_popen, 1), (self.f_halt, 0), (self.f_run, 1)]),
        ]
        if self.scot:
            gate_sets.append(
                (
                    "summ",
                    [
                        (self.f_to_summ, 1),
                        (self.f_to_popen, 0),
                        (self.f_halt, 0),
                        (self.f_run, 1),
                    ],
                )
            )
            gate_sets.append(("qtok", [(self.f_q, 1)]))
        for tag, gates in gate_sets:
            neurons = []
            for reg in zero_targets:
                neurons.extend(zero_register(reg, gates))
            b.add_neurons(
                self.L3 + 2,
                neurons,
                f"suppress-transition-{tag}",
                gate_key=tuple((f.coord, v) for f, v in gates),
            )
        b.add_neurons(
            self.L3 + 3,
            [
                single_neuron(
                    [], [(self.f_exists_outp, 1), (self.f_to_eoutp, 0)], {self.f_to_sigma.coord: 1}
                )
            ],
            "to-sigma",
        )
        b.add_neurons(
            self.L3 + 4,
            copy_register(self.i_sym_ex[0], self.i_newsym_sigma, [(self.f_to_sigma, 1)]),
            "newsym-copy",
            gate_key=((self.f_to_sigma.coord, 1),),
        )

    # -- unembeddings ---------------------------------------------------------------

    def _unembeddings(self) -> None:
        b, tm, K = self.b, self.tm, self.K
        for tok in self.vocab:
            cls = token_class(tok)
            vals: dict[int, int] = {}
            if tok == OUTP:
                vals[self.f_halt.coord] = 1
            elif tok == POPEN:
                vals[self.f_to_popen.coord] = 1
            elif tok == PCLOSE:
                vals[self.f_to_pclose.coord] = 1
            elif tok == EOUTP:
                vals[self.f_to_eoutp.coord] = 1
            elif tok == SUMM:
                vals[self.f_to_summ.coord] = 1
            elif tok == ESUMM:
                vals[self.f_q.coord] = 1
            elif cls == "run":
                state, written, moves = parse_run_token(tok)
                vals.update(
                    {c: v for c, v in zip(self.i_state_new.coords, self.enc_q[state]) if v}
                )
                for k in range(K):
                    vals.update(
                        {
                            c: v
                            for c, v in zip(self.i_sym_new[k].coords, self.enc_g[written[k]])
                            if v
                        }
                    )
                    vals.update(
                        {
                            c: v
                            for c, v in zip(self.i_move_new[k].coords, ENC_MOVES[moves[k]])
                            if v
                        }
                    )
            elif cls == "pos":
                bits = parse_pos_token(tok)
                for k in range(K):
                    vals[self.i_nextbit[k].coords[0]] = bits[k]
            elif cls == "sym":
                vals.update(
                    {c: v for c, v in zip(self.i_newsym_sigma.coords, self.enc_g[tok]) if v}
                )
            elif cls == "tape":
                syms, hats = parse_tape_token(tok)
                for k in range(K):
                    vals.update(
                        {c: v for c, v in zip(self.i_sym_next[k].coords, self.enc_g[syms[k]]) if v}
                    )
                    vals[self.i_head_next[k].coords[0]] = 1 if hats[k] else -1
            elif cls == "state":
                vals.update(
                    {
                        c: v
                        for c, v in zip(
                            self.i_state_fin_out.coords, self.enc_q[parse_state_token(tok)]
                        )
                        if v
                    }
                )
            if vals:
                b.set_unembedding(tok, vals)

    # -- assembly --------------------------------------------------------------------

    def build(self) -> tuple[TransformerParams, CompileReport]:
        self._allocate()
        self._embeddings()
        self._layer1()
        self._layer2()
        self._collection()
        if self.scot:
            self._scot_prompt_layers()
        self._subtractions()
        self._propagation()
        self._layer_l2()
        self._symbol_search()
        self._pos_block_machinery()
        if self.scot:
            self._scot_summary_write()
        self._extraction_layer()
        self._transition_layer()
        self._output_layers()
        self._unembeddings()

        params = self.b.finalize(
            self.vocab,
            self.dims,
            BinaryAbsolute(self.r, self.i_pos.coords),
            "compile_scot" if self.scot else "compile_cot",
        )
        params.meta["r"] = self.r
        report = CompileReport(
            construction="scot" if self.scot else "cot",
            r=self.r,
            dims=self.dims,
            registers=self.layout.as_dict(),
            manifest=self.b.manifest,
            heads_used=self.b.heads_used(),
            neurons_used=self.b.neurons_used(),
        )
        return params, report


def compile_cot(tm: TuringMachine, r: int) -> tuple[TransformerParams, CompileReport]:
    """Hardmax transformer generating toks(M, w, r) via CoT for fitting inputs."""
    return _TmCompiler(tm, r, scot=False).build()


def compile_scot(tm: TuringMachine, r: int) -> tuple[TransformerParams, CompileReport]:
    """Hardmax transformer generating the SCoT segments for fitting inputs."""
    return _TmCompiler(tm, r, scot=True).build()
