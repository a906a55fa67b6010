import json

import numpy as np
import pytest

from machines import fig2_machine, parity_dfa

from tm2tf.automata import dfa_to_json, tm_to_json
from tm2tf.cli import main
from tm2tf.netcore import load_model


@pytest.fixture
def tm_file(tmp_path):
    path = tmp_path / "machine.json"
    path.write_text(json.dumps(tm_to_json(fig2_machine())))
    return str(path)


@pytest.fixture
def dfa_file(tmp_path):
    path = tmp_path / "dfa.json"
    path.write_text(json.dumps(dfa_to_json(parity_dfa())))
    return str(path)


def test_compile_and_run_cot(tm_file, tmp_path, capsys):
    model = str(tmp_path / "model.json")
    report = str(tmp_path / "report.json")
    code = main(
        ["compile-cot", "--tm", tm_file, "--r", "6", "--out", model, "--report", report]
    )
    assert code == 0
    rep = json.loads(open(report).read())
    assert rep["dims"]["L"] == 23

    trace_file = str(tmp_path / "trace.jsonl")
    code = main(
        ["run-cot", "--model", model, "--word", "aab", "--trace-out", trace_file]
    )
    assert code == 0
    out = capsys.readouterr().out
    assert "output: acb" in out
    lines = [json.loads(l) for l in open(trace_file)]
    assert any("token" in l for l in lines)


def test_compile_cot_rejects_odd_r(tm_file, tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["compile-cot", "--tm", tm_file, "--r", "5", "--out", str(tmp_path / "m.json")])
    assert exc.value.code == 2


def test_model_roundtrip_bit_exact(dfa_file, tmp_path):
    model = str(tmp_path / "model.json")
    assert main(["compile-dfa", "--dfa", dfa_file, "--r", "3", "--out", model]) == 0
    first = load_model(model)
    second_path = str(tmp_path / "model2.json")
    from tm2tf.netcore import save_model

    save_model(first, second_path)
    assert open(model).read() == open(second_path).read()
    second = load_model(second_path)
    assert np.array_equal(first.emb, second.emb)
    for l1, l2 in zip(first.layers, second.layers):
        assert np.array_equal(l1.w1, l2.w1)
        assert np.array_equal(l1.bias4, l2.bias4)


def test_schema_error_exit_code(tmp_path):
    bad = tmp_path / "bad.json"
    doc = tm_to_json(fig2_machine())
    del doc["halt"]
    bad.write_text(json.dumps(doc))
    code = main(
        ["compile-cot", "--tm", str(bad), "--r", "6", "--out", str(tmp_path / "m.json")]
    )
    assert code == 2


def test_missing_file_exit_code(tmp_path):
    code = main(
        ["compile-cot", "--tm", str(tmp_path / "nope.json"), "--r", "6", "--out", "x"]
    )
    assert code == 2


def test_schema_error_names_entry(tmp_path, capsys):
    doc = tm_to_json(fig2_machine())
    doc["delta"]["go|a"] = "nowhere|a|S"
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(doc))
    code = main(
        ["compile-cot", "--tm", str(bad), "--r", "6", "--out", str(tmp_path / "m.json")]
    )
    assert code == 2
    assert "nowhere" in capsys.readouterr().err


def test_convert_auto_and_run_softmax(tm_file, tmp_path, capsys):
    model = str(tmp_path / "model.json")
    main(["compile-cot", "--tm", tm_file, "--r", "6", "--out", model])
    conv = str(tmp_path / "denoised.json")
    assert main(["convert", "--model", model, "--mode", "denoised", "--out", conv]) == 0
    msg = capsys.readouterr().out
    assert "c=" in msg
    converted = load_model(conv)
    assert converted.dims.n_layers == 46

    code = main(
        [
            "run-cot",
            "--model",
            conv,
            "--word",
            "aab",
            "--attention",
            "softmax",
            "--act-format",
            "custom:1,4",
            "--att-format",
            "custom:4,5",
        ]
    )
    assert code == 0
    assert "output: acb" in capsys.readouterr().out


def test_validate_dfa_cli(tmp_path, capsys):
    out = str(tmp_path / "report.json")
    code = main(["validate", "--protocol", "dfa", "--max-len", "3", "--out", out])
    assert code == 0
    rep = json.loads(open(out).read())
    assert rep["mismatches"] == []


def test_validate_cot_cli(tmp_path):
    code = main(
        ["validate", "--protocol", "cot", "--seed", "3", "--trials", "10", "--step-cap", "25"]
    )
    assert code == 0


def test_probe_cli(capsys):
    assert main(["probe-phi", "--format", "bf16", "--max", "100"]) == 0
    assert "i*=7" in capsys.readouterr().out


def test_c0_cli(capsys):
    assert main(["c0", "--mode", "denoising", "--d-k", "128", "--N", "65536"]) == 0
    assert "13.3" in capsys.readouterr().out
    assert main(["c0", "--mode", "exact"]) == 2


def test_capacity_cli(capsys):
    code = main(
        ["capacity", "--L", "96", "--d-k", "128", "--d", "12288", "--d-ff", "49152"]
    )
    assert code == 0
    out = capsys.readouterr().out
    assert "r=32" in out and "49 states" in out


def test_scot_cli_end_to_end(tmp_path, capsys):
    from machines import bouncer_machine

    path = tmp_path / "bouncer.json"
    path.write_text(json.dumps(tm_to_json(bouncer_machine(3))))
    model = str(tmp_path / "scot.json")
    assert main(["compile-scot", "--tm", str(path), "--r", "6", "--out", model]) == 0
    assert main(["run-scot", "--model", model, "--word", "xxx"]) == 0
    out = capsys.readouterr().out
    assert "outcome: output" in out
