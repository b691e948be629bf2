import csv
import json

import numpy as np
import pytest

from absorbtk.cli import main, run
from absorbtk.config import (
    ExperimentConfig,
    dump_instance,
    load_config,
    load_instance,
    loads_instance,
    parse_sections,
)
from absorbtk.cstar import builtin_instance
from absorbtk.errors import ConfigError

from conftest import INSTANCES

DIAGONAL = """\
[algebra]
name = diag
d = 2
D0 = matrix
2 2
1,0 0,0
0,0 -1,0
basis = matrix
2 2
1,0 0,0 0,0 0,0
basis = matrix
2 2
0,0 0,0 0,0 1,0

[module]
m = 1
J = 2
generator = matrix
2 2
1,0 0,0
0,0 1,0
generator = matrix
2 2
1,0 {off},0
0,0 1,0
"""


@pytest.mark.parametrize("name", INSTANCES)
def test_instance_round_trip_bit_exact(name, tmp_path):
    ctx, pres = builtin_instance(name)
    path = tmp_path / "inst.txt"
    path.write_text(dump_instance(ctx, pres))
    ctx2, pres2 = load_instance(path)
    assert np.array_equal(ctx2.D0, ctx.D0)
    assert all(np.array_equal(a, b) for a, b in zip(ctx2.basis, ctx.basis))
    assert all(np.array_equal(a, b) for a, b in zip(pres2.generators, pres.generators))
    assert dump_instance(ctx2, pres2) == dump_instance(ctx, pres)


def test_diagonal_instance_loads():
    ctx, pres = loads_instance(DIAGONAL.format(off=0))
    assert ctx.dim == 2
    assert pres.J == 2


def test_not_selfadjoint_generator_rejected():
    text = DIAGONAL.format(off=0).replace("1,0 0,0\n0,0 -1,0", "1,0 1,0\n0,0 -1,0", 1)
    with pytest.raises(ConfigError) as exc:
        loads_instance(text)
    assert exc.value.invariant == "D0 not selfadjoint"


def test_gram_outside_algebra_names_block():
    with pytest.raises(ConfigError) as exc:
        loads_instance(DIAGONAL.format(off=1e-3))
    assert exc.value.invariant == "not-in-algebra"
    assert "(1,2)" in str(exc.value)


@pytest.mark.parametrize("text, line, column", [
    ("key = 1\n", 1, 1),
    ("[run]\n  levels\n", 2, 3),
    ("[run\n", 1, 1),
    ("[a]\nm = matrix\n2 2\n1,0 0,0\n0,0 x,1\n", 5, 5),
    ("[a]\nm = matrix\n2\n", 3, 1),
    ("[a]\nm = matrix\n1 1\n1,0 2,0\n", 4, 5),
])
def test_parse_errors_report_position(text, line, column):
    with pytest.raises(ConfigError) as exc:
        parse_sections(text)
    assert (exc.value.line, exc.value.column) == (line, column)
    assert str(exc.value).startswith(f"line {line}, column {column}:")


def test_parse_comments_and_repeats():
    secs = parse_sections("# top\n[run]\nlevels = 4  # first\nlevels = 8\n")
    assert secs == {"run": {"levels": ["4", "8"]}}


def test_load_config_values():
    cfg = load_config(text="[run]\nlevels = 4, 8\nseed = 3\n[grid]\nL = 12.5\n[tolerances]\nzero = 1e-11\n")
    assert cfg.levels == (4, 8)
    assert cfg.seed == 3
    assert cfg.L == 12.5
    assert cfg.tolerances["zero"] == 1e-11


@pytest.mark.parametrize("text", [
    "[run]\nlevels = 8, 4\n",
    "[run]\nthreads = 0\n",
    "[tolerances]\nzero = -1\n",
    "[tolerances]\nbogus = 1\n",
    "[nope]\nx = 1\n",
    "[instance]\nkind = octonion\n",
    "[run]\nseed = many\n",
])
def test_load_config_rejects(text):
    with pytest.raises(ConfigError):
        load_config(text=text)


def test_output_dir_from_environment(monkeypatch, tmp_path):
    monkeypatch.setenv("ABSORBTK_OUT", str(tmp_path / "envout"))
    assert ExperimentConfig().output_dir == str(tmp_path / "envout")


def test_exit_codes(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2
    assert main(["absorb", "--tolerance", "foo=1", "--out", str(tmp_path)]) == 2
    assert main(["absorb", "--tolerance", "zero", "--out", str(tmp_path)]) == 2
    assert main(["absorb", "--instance", "nonsense", "--out", str(tmp_path)]) == 2
    assert main(["absorb", "--instance", "scalar", "--out", str(tmp_path)]) == 0
    # an impossible tolerance turns a passing run into a failing one
    assert main(["absorb", "--instance", "pauli", "--tolerance", "telescoping=1e-30",
                 "--out", str(tmp_path)]) == 1


def _rows(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("#schema=absorbtk.")
    return list(csv.DictReader(lines[1:]))


def test_absorb_single_level(tmp_path):
    cfg_file = tmp_path / "cfg.txt"
    cfg_file.write_text(f"[instance]\nkind = pauli\n[run]\nlevels = 4\noutput_dir = {tmp_path}\n")
    assert main(["absorb", "--config", str(cfg_file)]) == 0
    rows = [r for r in _rows(tmp_path / "absorb.csv") if r["metric"] == "dfct"]
    assert len(rows) == 1
    assert rows[0]["N"] == "4"
    assert float(rows[0]["value"]) <= 0.25


def test_decay_scalar_exact_zero(tmp_path):
    cfg = ExperimentConfig(instances=["scalar"], output_dir=str(tmp_path))
    rep = run("decay", cfg)
    assert rep.passed
    assert any(m.name == "exact_zero" for m in rep.metrics)
    assert not any(m.name == "slope" for m in rep.metrics)


def test_csv_deterministic(tmp_path):
    outs = []
    for k in range(2):
        cfg = ExperimentConfig(instances=["pauli", "scalar"], levels=(4, 8), seed=5,
                               output_dir=str(tmp_path / str(k)))
        run("connection", cfg)
        outs.append((tmp_path / str(k) / "connection.csv").read_bytes())
    assert outs[0] == outs[1]


def test_threads_do_not_change_results(tmp_path):
    out = []
    for threads in (1, 3):
        cfg = ExperimentConfig(instances=list(INSTANCES), levels=(4, 8), threads=threads,
                               output_dir=str(tmp_path / str(threads)))
        run("absorb", cfg)
        out.append((tmp_path / str(threads) / "absorb.csv").read_bytes())
    assert out[0] == out[1]


def test_json_pass_is_conjunction(tmp_path):
    cfg = ExperimentConfig(instances=["pauli"], levels=(4, 8), output_dir=str(tmp_path))
    cfg.set_tolerance("commutator", 1e-30)
    run("absorb", cfg)
    doc = json.loads((tmp_path / "absorb.json").read_text())
    assert doc["pass"] == all(m["pass"] for m in doc["metrics"])
    assert doc["pass"] is False
    assert doc["parameters"]["levels"] == [4, 8]


def test_file_instance(tmp_path):
    path = tmp_path / "diag.txt"
    path.write_text(DIAGONAL.format(off=0))
    cfg = ExperimentConfig(instances=[f"file:{path}"], levels=(4, 8), output_dir=str(tmp_path))
    rep = run("absorb", cfg)
    assert rep.passed
    assert {dict(m.keys)["instance"] for m in rep.metrics} == {"diag"}
