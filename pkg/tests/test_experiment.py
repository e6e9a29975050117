import csv
import math

import pytest

from gmconsensus.cli import main
from gmconsensus.errors import ConfigError, DegenerateInputError
from gmconsensus.experiment import (
    ResultTable,
    emit_reports,
    parse_config,
    read_aggregate_csv,
    run_experiment,
)
from gmconsensus.gm import MergeScheme, ThresholdRule
from gmconsensus.network import Protocol

SMALL = """
[experiment]
steps = 12
runs = 2
seed = 7
[protocols]
names = {names}
t = {t}
"""


def small(names="CGMM", t="0, 1", **env):
    return parse_config(SMALL.format(names=names, t=t), env)


def test_defaults():
    cfg = parse_config("[protocols]\nnames = CGMM, GCI\n", {})
    assert cfg.protocols == (Protocol.CGMM, Protocol.GCI)
    assert cfg.t_values == (0, 1, 2)
    assert cfg.reduction.max_components == 50
    assert cfg.params(Protocol.CGMM).cgmm_scheme == MergeScheme.OMR
    assert cfg.params(Protocol.GCI).gci_w_c == 0.005


def test_multi_default_cap():
    cfg = parse_config("[experiment]\nscenario = multi\n[protocols]\nnames = CGMA\n", {})
    assert cfg.reduction.max_components == 100


def test_threshold_rule():
    cfg = parse_config("[protocols]\nnames = CGMA\n[CGMA]\ntgm = threshold\nw_s = 0.4\n", {})
    assert cfg.params(Protocol.CGMA).tgm_rule == ThresholdRule(0.4)


@pytest.mark.parametrize("text", [
    "[experiment]\nruns = 1\n",                                       # no protocols
    "[protocols]\nnames = Gossip\n",
    "[protocols]\nnames = CGMM\nt = 13\n",
    "[experiment]\nruns = 0\n[protocols]\nnames = CGMM\n",
    "[protocols]\nnames = CGMA\n[CGMA]\ngate = 0\n",
    "[protocols]\nnames = CGMA\n[CGMA]\ntgm = threshold\n",
    "[protocols]\nnames = GCI\n[GCI]\nnormalize = arithmetic\n",
    "[experiment]\nsteps = ten\n[protocols]\nnames = CGMM\n",
    "not an ini file",
])
def test_invalid_configs(text):
    with pytest.raises(ConfigError):
        parse_config(text, {})


def test_env_overrides(tmp_path):
    cfg = small(GMCONSENSUS_OUT=str(tmp_path), GMCONSENSUS_THREADS="3")
    assert cfg.output_dir == str(tmp_path) and cfg.threads == 3


def test_baseline_only():
    table = run_experiment(parse_config("[experiment]\nsteps = 5\nruns = 1\n[protocols]\nnames = None\nt = 0\n", {}))
    assert {(r.protocol, r.t) for r in table.raw} == {("None", 0)}
    assert len(table.raw) == 5
    assert all(r.tuples == 0 for r in table.raw)


def test_row_count_arithmetic():
    cfg = parse_config("[experiment]\nsteps = 3\nruns = 1\n[protocols]\nnames = CGMM, CGMA, GCI, CCA, CCF\n"
                       "t = 0, 1, 2, 3, 4, 5, 6\n", {})
    agg = run_experiment(cfg).aggregate()
    assert len(agg) == 5 * 7


def test_same_data_and_shared_baseline():
    table = run_experiment(small("CGMM, GCI"))
    assert len(table.checksums) == 2
    for run in (0, 1):
        a = [r.network_ospa for r in table.rows("CGMM", 0) if r.run == run]
        b = [r.network_ospa for r in table.rows("GCI", 0) if r.run == run]
        assert a == b


def test_aggregate_recomputable():
    table = run_experiment(small("CGMM, CCA"))
    for a in table.aggregate():
        rows = table.rows(a.protocol, a.t)
        runs = sorted({r.run for r in rows})
        per_run = [math.fsum(r.network_ospa for r in rows if r.run == k) / 12 for k in runs]
        assert a.time_avg_ospa == pytest.approx(sum(per_run) / len(per_run), abs=1e-9)
        assert a.tuples_per_step == pytest.approx(sum(r.tuples for r in rows) / len(rows), abs=1e-9)
        if a.t == 0:
            assert a.ce is None


def test_reports_and_round_trip(tmp_path):
    table = run_experiment(small("CGMM, CGMA"))
    emit_reports(table, tmp_path)
    names = {p.name for p in tmp_path.iterdir()}
    assert {"raw.csv", "aggregate.csv", "summary.txt", "ospa_vs_step.csv", "ospa_vs_t.csv",
            "cost_vs_t.csv", "ce_vs_t.csv"} <= names
    back = read_aggregate_csv(tmp_path / "aggregate.csv")
    assert back == table.aggregate()
    with open(tmp_path / "ospa_vs_t.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row, a in zip(rows, table.aggregate()):
        assert float(row["time_avg_ospa"]) == a.time_avg_ospa


def test_one_aggregate_row(tmp_path):
    table = run_experiment(parse_config("[experiment]\nsteps = 4\nruns = 1\n[protocols]\nnames = CCA\nt = 1\n", {}))
    emit_reports(table, tmp_path)
    assert len((tmp_path / "aggregate.csv").read_text().splitlines()) == 2


def test_empty_table_writes_nothing(tmp_path):
    out = tmp_path / "out"
    with pytest.raises(DegenerateInputError):
        emit_reports(ResultTable(), out)
    assert not out.exists()


def test_deterministic_bytes(tmp_path):
    cfg = small("CGMM, GCI")
    emit_reports(run_experiment(cfg), tmp_path / "a")
    emit_reports(run_experiment(cfg), tmp_path / "b")
    for name in ("raw.csv", "aggregate.csv", "ospa_vs_step.csv", "ospa_vs_t.csv", "cost_vs_t.csv",
                 "ce_vs_t.csv", "summary.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_cli_validate(tmp_path, capsys):
    p = tmp_path / "c.ini"
    p.write_text(SMALL.format(names="CGMM", t="0, 1"))
    assert main(["validate", "--config", str(p)]) == 0
    p.write_text("[protocols]\nnames = Nope\n")
    assert main(["validate", "--config", str(p)]) == 2
    assert main(["validate", "--config", str(tmp_path / "missing.ini")]) == 2
    assert main(["frobnicate"]) == 2


def test_cli_run(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text(SMALL.format(names="CCA", t="0, 1"))
    assert main(["run", "--config", str(p), "--out", str(tmp_path / "o"), "--seed", "3", "--threads", "1"]) == 0
    assert (tmp_path / "o" / "aggregate.csv").exists()
    assert main(["run", "--config", str(p), "--threads", "0"]) == 2


def test_cli_runtime_error(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text(SMALL.format(names="CCA", t="1"))
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["run", "--config", str(p), "--out", str(blocker / "sub")]) == 1


def test_shipped_configs_validate():
    from pathlib import Path

    for p in sorted((Path(__file__).parent.parent / "configs").glob("*.ini")):
        assert main(["validate", "--config", str(p)]) == 0, p
