import itertools

import numpy as np
import pytest

from machines import contains_ab_dfa, mod3_dfa, parity_dfa

from tm2tf.automata import BOS, FALSE, TRUE, Dfa, dfa_accepts
from tm2tf.compilers import compile_dfa, dfa_dims
from tm2tf.netcore import EvalConfig, forward, next_token


def test_dims_example():
    # |Q|=2 (d_Q=1), |Sigma|=2 (d_Sigma=1), r=3.
    dims = dfa_dims(parity_dfa(), 3)
    assert dims.n_layers == 5
    assert dims.d_k == 3
    assert dims.d_v == 2
    assert dims.d == 12
    assert dims.d_ff == 34
    assert dims.n_heads == 1


def test_report_matches_formulas():
    params, report = compile_dfa(parity_dfa(), 3)
    assert report.dims == dfa_dims(parity_dfa(), 3)
    assert params.dims == report.dims
    assert max(report.neurons_used) <= report.dims.d_ff
    assert max(report.heads_used) <= 1


@pytest.mark.parametrize("make", [parity_dfa, contains_ab_dfa, mod3_dfa])
def test_exhaustive_words_up_to_7(make):
    dfa = make()
    params, _ = compile_dfa(dfa, 3)
    cfg = EvalConfig()
    for n in range(8):
        for word in itertools.product(dfa.alphabet, repeat=n):
            got = next_token(params, [BOS, *word], cfg)
            want = TRUE if dfa_accepts(dfa, list(word)) else FALSE
            assert got == want, word


def test_empty_word():
    params, _ = compile_dfa(parity_dfa(), 2)
    assert next_token(params, [BOS], EvalConfig()) == TRUE  # q_init accepting
    rej = Dfa(
        ("q0", "q1"),
        ("0",),
        {("q0", "0"): "q1", ("q1", "0"): "q0"},
        "q0",
        frozenset({"q1"}),
    )
    params, _ = compile_dfa(rej, 2)
    assert next_token(params, [BOS], EvalConfig()) == FALSE


def test_single_symbol_alphabet():
    dfa = Dfa(
        ("q0", "q1"),
        ("0",),
        {("q0", "0"): "q1", ("q1", "0"): "q0"},
        "q0",
        frozenset({"q0"}),
    )
    params, _ = compile_dfa(dfa, 3)
    for n in range(8):
        got = next_token(params, [BOS] + ["0"] * n, EvalConfig())
        assert got == (TRUE if n % 2 == 0 else FALSE)


def test_ternary_activations_and_output_gap():
    dfa = contains_ab_dfa()
    params, _ = compile_dfa(dfa, 3)
    cfg = EvalConfig(capture_trace=True)
    reps, trace = forward(params, [BOS, "a", "b", "a"], cfg)
    for name, arr in trace.representation_arrays():
        assert np.all(np.isin(arr, (-1.0, 0.0, 1.0))), name
    scores = params.unemb.astype(float) @ reps[-1]
    top = np.sort(scores)[::-1]
    assert top[0] - top[1] >= 1.0
