"""Monte-Carlo experiment orchestration and report emission.

An experiment is described by an INI file.  Every section and key is
optional except ``[protocols] names``; the defaults reproduce the
single-target ring set-up::

    [experiment]
    scenario = single          ; single | multi
    truth = scripted           ; scripted | simulated
    steps = 100
    runs = 50
    seed = 0
    output_dir = results
    threads = 1

    [network]
    topology = ring            ; ring | random
    nodes = 4
    seed = 0                   ; random topology only
    comm_radius = 650
    diameter =                 ; empty: any connected graph

    [filter]
    birth_rate = 0.03
    spawn_weight = 0.05
    survival_prob = 0.99
    prune_threshold = 1e-4
    merge_gate = 5
    max_components =           ; empty: 50 single, 100 multi
    ut_kappa =                 ; empty: 3 - d
    linear_clutter =           ; empty: scenario default
    rb_clutter = 5

    [protocols]
    names = CGMM, CGMA, GCI    ; from None, CCA, CCF, CGMM, CGMA, GCI
    t = 0, 1, 2                ; each in 0..12

    [CGMM]
    scheme = OMR
    tgm = rank                 ; rank | threshold
    w_s = 0.5                  ; threshold rule only

    [CGMA]
    gate = 5
    tgm = rank

    [GCI]
    w_c = 0.005
    scheme = SMR
    normalize = geometric      ; geometric | none
    pair_gate_sq = 100

    [metrics]
    cutoff = 1000
    order = 2
    burn_in = 0

``GMCONSENSUS_OUT`` and ``GMCONSENSUS_THREADS`` override the output
directory and thread count.

Per-run seeds come from ``numpy.random.SeedSequence(seed).spawn(runs)``;
run ``i`` then spawns one child for the truth and one per sensor.
"""
from __future__ import annotations

import configparser
import csv
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import ConfigError, DegenerateInputError
from .gm import MergeScheme, RankRule, ReductionConfig, ThresholdRule
from .metrics import OspaConfig
from .network import ConsensusParams, NetworkGraph, Protocol, generate_network, ring_network, run_tracking
from .phd import GMPHDFilter, UTParams, cv_motion, default_birth_model
from .scenario import Scenario, generate_measurements, network_sensors, scripted_truth, simulate_truth

ENV_OUT = "GMCONSENSUS_OUT"
ENV_THREADS = "GMCONSENSUS_THREADS"
MAX_T = 12

RAW_HEADER = ["protocol", "t", "run", "step", "network_ospa", "mean_cardinality", "true_cardinality", "tuples"]
AGG_HEADER = ["protocol", "t", "runs", "time_avg_ospa", "ospa_se", "mean_cardinality",
              "tuples_per_step", "tuples_per_round", "ce"]
TIMING_HEADER = ["protocol", "t", "run", "step", "fusion_seconds", "filter_seconds"]


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: Scenario = Scenario.SINGLE
    truth: str = "scripted"
    steps: int = 100
    runs: int = 50
    seed: int = 0
    output_dir: str = "results"
    threads: int = 1
    topology: str = "ring"
    nodes: int = 4
    network_seed: int = 0
    comm_radius: float = 650.0
    diameter: int | None = None
    birth_rate: float = 0.03
    spawn_weight: float = 0.05
    survival_prob: float = 0.99
    reduction: ReductionConfig = ReductionConfig()
    ut_kappa: float | None = None
    linear_clutter: float | None = None
    rb_clutter: float = 5.0
    protocols: tuple[Protocol, ...] = (Protocol.CGMM, Protocol.CGMA, Protocol.GCI)
    t_values: tuple[int, ...] = (0, 1, 2)
    cgmm: ConsensusParams = ConsensusParams()
    cgma: ConsensusParams = ConsensusParams()
    gci: ConsensusParams = ConsensusParams()
    ospa: OspaConfig = OspaConfig()
    burn_in: int = 0

    def validate(self) -> None:
        if self.runs < 1:
            raise ConfigError("runs must be >= 1")
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if self.nodes < 1:
            raise ConfigError("nodes must be >= 1")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if self.truth not in ("scripted", "simulated"):
            raise ConfigError(f"unknown truth kind {self.truth!r}")
        if self.topology not in ("ring", "random"):
            raise ConfigError(f"unknown topology {self.topology!r}")
        if not self.protocols:
            raise ConfigError("no protocols configured")
        if not self.t_values or any(not 0 <= t <= MAX_T for t in self.t_values):
            raise ConfigError(f"t values must lie in 0..{MAX_T}")
        if not 0 <= self.burn_in < self.steps:
            raise ConfigError("burn_in must be in [0, steps)")
        if not 0 <= self.survival_prob <= 1:
            raise ConfigError("survival_prob must be in [0, 1]")
        for p in self.protocols:
            self.params(p).validate(p)

    def params(self, protocol: Protocol) -> ConsensusParams:
        base = {Protocol.CGMM: self.cgmm, Protocol.CGMA: self.cgma, Protocol.GCI: self.gci}.get(protocol)
        return replace(base or ConsensusParams(), reduction=self.reduction)

    def build_graph(self) -> NetworkGraph:
        if self.topology == "ring":
            return ring_network(self.nodes)
        return generate_network(self.nodes, self.comm_radius, target_diameter=self.diameter,
                                seed=self.network_seed)

    def build_filters(self, graph: NetworkGraph) -> list[GMPHDFilter]:
        sensors = network_sensors(graph, self.scenario, self.linear_clutter, self.rb_clutter)
        motion = cv_motion(survival_prob=self.survival_prob)
        birth = default_birth_model(self.birth_rate, self.spawn_weight)
        ut = UTParams(self.ut_kappa)
        return [GMPHDFilter(motion, birth, s, self.reduction, ut=ut) for s in sensors]


def _get(sec: Mapping[str, str], key: str, conv, default):
    raw = sec.get(key, "").strip()
    if raw == "":
        return default
    try:
        return conv(raw)
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from exc


def _int_list(raw: str) -> tuple[int, ...]:
    return tuple(int(x) for x in raw.replace(",", " ").split())


def _protocols(raw: str) -> tuple[Protocol, ...]:
    out = []
    for name in raw.replace(",", " ").split():
        match = [p for p in Protocol if p.value.lower() == name.lower()]
        if not match:
            raise ConfigError(f"unknown protocol {name!r}")
        out.append(match[0])
    return tuple(dict.fromkeys(out))


def _tgm_rule(sec) -> RankRule | ThresholdRule:
    kind = sec.get("tgm", "rank").strip().lower()
    if kind == "rank":
        return RankRule(_get(sec, "count", int, None))
    if kind == "threshold":
        if "w_s" not in sec:
            raise ConfigError("threshold T-GM rule needs w_s")
        return ThresholdRule(_get(sec, "w_s", float, None))
    raise ConfigError(f"unknown T-GM rule {kind!r}")


def _scheme(sec, default: MergeScheme) -> MergeScheme:
    return _get(sec, "scheme", lambda s: MergeScheme(s.upper()), default)


def parse_config(text: str, env: Mapping[str, str] | None = None) -> ExperimentConfig:
    """Parse INI text into a validated :class:`ExperimentConfig`."""
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"unreadable config: {exc}") from exc
    sec = {s: dict(cp[s]) if cp.has_section(s) else {} for s in
           ("experiment", "network", "filter", "protocols", "CGMM", "CGMA", "GCI", "metrics")}
    ex, nw, fl, pr, me = sec["experiment"], sec["network"], sec["filter"], sec["protocols"], sec["metrics"]
    if "names" not in pr:
        raise ConfigError("[protocols] names is required")
    try:
        scenario = Scenario(ex.get("scenario", "single").strip().lower())
    except ValueError as exc:
        raise ConfigError(f"unknown scenario {ex.get('scenario')!r}") from exc
    default_cap = 50 if scenario == Scenario.SINGLE else 100
    try:
        reduction = ReductionConfig(
            _get(fl, "prune_threshold", float, 1e-4),
            _get(fl, "merge_gate", float, 5.0),
            _get(fl, "max_components", int, default_cap),
        )
        ospa_cfg = OspaConfig(_get(me, "cutoff", float, 1000.0), _get(me, "order", float, 2.0))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    cg, ca, gc = sec["CGMM"], sec["CGMA"], sec["GCI"]
    cfg = ExperimentConfig(
        scenario=scenario,
        truth=ex.get("truth", "scripted").strip().lower(),
        steps=_get(ex, "steps", int, 100),
        runs=_get(ex, "runs", int, 50),
        seed=_get(ex, "seed", int, 0),
        output_dir=ex.get("output_dir", "results").strip() or "results",
        threads=_get(ex, "threads", int, 1),
        topology=nw.get("topology", "ring").strip().lower(),
        nodes=_get(nw, "nodes", int, 4),
        network_seed=_get(nw, "seed", int, 0),
        comm_radius=_get(nw, "comm_radius", float, 650.0),
        diameter=_get(nw, "diameter", int, None),
        birth_rate=_get(fl, "birth_rate", float, 0.03),
        spawn_weight=_get(fl, "spawn_weight", float, 0.05),
        survival_prob=_get(fl, "survival_prob", float, 0.99),
        reduction=reduction,
        ut_kappa=_get(fl, "ut_kappa", float, None),
        linear_clutter=_get(fl, "linear_clutter", float, None),
        rb_clutter=_get(fl, "rb_clutter", float, 5.0),
        protocols=_protocols(pr["names"]),
        t_values=tuple(sorted(set(_get(pr, "t", _int_list, (0, 1, 2))))),
        cgmm=ConsensusParams(cgmm_scheme=_scheme(cg, MergeScheme.OMR), tgm_rule=_tgm_rule(cg)),
        cgma=ConsensusParams(tgm_rule=_tgm_rule(ca), cgma_gate=_get(ca, "gate", float, 5.0)),
        gci=ConsensusParams(
            gci_w_c=_get(gc, "w_c", float, 0.005),
            gci_scheme=_scheme(gc, MergeScheme.SMR),
            gci_normalize=gc.get("normalize", "geometric").strip().lower(),
            gci_pair_gate_sq=_get(gc, "pair_gate_sq", float, 100.0),
        ),
        ospa=ospa_cfg,
        burn_in=_get(me, "burn_in", int, 0),
    )
    env = os.environ if env is None else env
    if env.get(ENV_OUT):
        cfg = replace(cfg, output_dir=env[ENV_OUT])
    if env.get(ENV_THREADS):
        try:
            cfg = replace(cfg, threads=int(env[ENV_THREADS]))
        except ValueError as exc:
            raise ConfigError(f"{ENV_THREADS} must be an integer") from exc
    cfg.validate()
    return cfg


def load_config(path, env: Mapping[str, str] | None = None) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, env)


# ---------------------------------------------------------------------------
# results


@dataclass(frozen=True)
class RawRow:
    protocol: str
    t: int
    run: int
    step: int
    network_ospa: float
    mean_cardinality: float
    true_cardinality: int
    tuples: int
    fusion_seconds: float = field(default=0.0, compare=False)
    filter_seconds: float = field(default=0.0, compare=False)


@dataclass(frozen=True)
class AggregateRow:
    protocol: str
    t: int
    runs: int
    time_avg_ospa: float
    ospa_se: float
    mean_cardinality: float
    tuples_per_step: float
    tuples_per_round: float | None
    ce: float | None


@dataclass
class ResultTable:
    raw: list[RawRow] = field(default_factory=list)
    checksums: dict[int, tuple[str, ...]] = field(default_factory=dict)
    burn_in: int = 0

    def keys(self) -> list[tuple[str, int]]:
        return sorted({(r.protocol, r.t) for r in self.raw}, key=lambda k: (_proto_rank(k[0]), k[1]))

    def rows(self, protocol: str, t: int) -> list[RawRow]:
        return [r for r in self.raw if r.protocol == protocol and r.t == t]

    def run_averages(self, protocol: str, t: int) -> dict[int, float]:
        """Time-average network OSPA per MC run (after burn-in)."""
        per_run: dict[int, list[float]] = {}
        for r in self.rows(protocol, t):
            if r.step >= self.burn_in:
                per_run.setdefault(r.run, []).append(r.network_ospa)
        return {run: math.fsum(v) / len(v) for run, v in sorted(per_run.items())}

    def aggregate(self) -> list[AggregateRow]:
        out = []
        base = {}
        for proto, t in self.keys():
            rows = self.rows(proto, t)
            avgs = list(self.run_averages(proto, t).values())
            n = len(avgs)
            mean = math.fsum(avgs) / n
            se = float(np.std(avgs, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
            card = math.fsum(r.mean_cardinality for r in rows) / len(rows)
            tps = math.fsum(r.tuples for r in rows) / len(rows)
            if t == 0:
                base[proto] = mean
            ref = base.get(proto, base.get(Protocol.NONE.value))
            ce = None if ref is None or tps == 0 else (ref - mean) / tps
            out.append(AggregateRow(proto, t, n, mean, se, card, tps, tps / t if t else None, ce))
        return out


def _proto_rank(name: str) -> int:
    names = [p.value for p in Protocol]
    return names.index(name) if name in names else len(names)


# ---------------------------------------------------------------------------
# running


def run_seeds(master: int, runs: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(master).spawn(runs)


def _run_one(args) -> tuple[int, list[RawRow], tuple[str, ...]]:
    cfg, graph, run = args
    seq = run_seeds(cfg.seed, cfg.runs)[run]
    truth_seq, *sensor_seqs = seq.spawn(1 + graph.n)
    if cfg.truth == "scripted":
        truth = scripted_truth(cfg.scenario, cfg.steps)
    else:
        truth = simulate_truth(cfg.scenario, cfg.steps, truth_seq)
    filters = cfg.build_filters(graph)
    frames = [generate_measurements(truth, f.sensor, s, a) for a, (f, s) in enumerate(zip(filters, sensor_seqs))]
    scans = [fr.scans for fr in frames]
    checks = tuple(fr.checksum() for fr in frames)

    rows: list[RawRow] = []

    def collect(label: str, t: int, tr):
        for k, rep in enumerate(tr.reports):
            last = rep[-1]
            rows.append(RawRow(
                label, t, run, k, last.network_ospa,
                math.fsum(last.cardinality) / len(last.cardinality), truth.count(k),
                sum(r.total_tuples for r in rep),
                math.fsum(sum(r.compute_seconds) for r in rep), tr.filter_seconds[k],
            ))

    baseline = None
    if 0 in cfg.t_values:
        baseline = run_tracking(graph, filters, scans, Protocol.NONE, 0, truth=truth, ospa_cfg=cfg.ospa)
    for proto in cfg.protocols:
        for t in cfg.t_values:
            if t == 0 or proto == Protocol.NONE:
                if t == 0:
                    collect(proto.value, 0, baseline)
                continue
            if [fr.checksum() for fr in frames] != list(checks):
                raise RuntimeError("measurement frames changed between evaluations")
            tr = run_tracking(graph, filters, scans, proto, t, cfg.params(proto), truth=truth, ospa_cfg=cfg.ospa)
            collect(proto.value, t, tr)
    return run, rows, checks


def run_experiment(cfg: ExperimentConfig) -> ResultTable:
    """Run every (protocol, t) on identical truths, frames and network per MC run.

    The t = 0 evaluation (independent filters) is computed once per run and
    reported under every protocol.  ``None`` only contributes t = 0 rows.
    """
    cfg.validate()
    graph = cfg.build_graph()
    jobs = [(cfg, graph, r) for r in range(cfg.runs)]
    if cfg.threads > 1 and cfg.runs > 1:
        with ProcessPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    table = ResultTable(burn_in=cfg.burn_in)
    for run, rows, checks in sorted(results, key=lambda x: x[0]):
        table.raw.extend(rows)
        table.checksums[run] = checks
    return table


# ---------------------------------------------------------------------------
# reports


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def render_reports(table: ResultTable) -> dict[str, str]:
    """File name -> contents for every report; nothing touches the disk."""
    if not table.raw:
        raise DegenerateInputError("result table is empty")
    agg = table.aggregate()
    files = {}
    files["raw.csv"] = _csv(RAW_HEADER, (
        (r.protocol, r.t, r.run, r.step, r.network_ospa, r.mean_cardinality, r.true_cardinality, r.tuples)
        for r in table.raw))
    files["aggregate.csv"] = _csv(AGG_HEADER, (
        (a.protocol, a.t, a.runs, a.time_avg_ospa, a.ospa_se, a.mean_cardinality,
         a.tuples_per_step, a.tuples_per_round, a.ce) for a in agg))
    files["timing.csv"] = _csv(TIMING_HEADER, (
        (r.protocol, r.t, r.run, r.step, r.fusion_seconds, r.filter_seconds) for r in table.raw))

    step_rows = []
    for proto, t in table.keys():
        by_step: dict[int, list[float]] = {}
        for r in table.rows(proto, t):
            by_step.setdefault(r.step, []).append(r.network_ospa)
        step_rows.extend((proto, t, k, math.fsum(v) / len(v)) for k, v in sorted(by_step.items()))
    files["ospa_vs_step.csv"] = _csv(["protocol", "t", "step", "network_ospa"], step_rows)
    files["ospa_vs_t.csv"] = _csv(["protocol", "t", "time_avg_ospa", "ospa_se"],
                                  ((a.protocol, a.t, a.time_avg_ospa, a.ospa_se) for a in agg))
    files["cost_vs_t.csv"] = _csv(["protocol", "t", "tuples_per_step", "tuples_per_round"],
                                  ((a.protocol, a.t, a.tuples_per_step, a.tuples_per_round) for a in agg))
    files["ce_vs_t.csv"] = _csv(["protocol", "t", "ce"], ((a.protocol, a.t, a.ce) for a in agg))

    lines = [f"runs: {len(table.checksums)}", f"burn-in steps: {table.burn_in}", ""]
    lines.append(f"{'protocol':<9}{'t':>3}{'OSPA':>12}{'se':>9}{'card':>8}{'tuples/step':>13}{'CE':>12}")
    for a in agg:
        ce = "-" if a.ce is None else f"{a.ce:.5f}"
        lines.append(f"{a.protocol:<9}{a.t:>3}{a.time_avg_ospa:>12.3f}{a.ospa_se:>9.3f}"
                     f"{a.mean_cardinality:>8.3f}{a.tuples_per_step:>13.2f}{ce:>12}")
    lines.append("")
    lines.append("measurement-frame checksums (sha256, first 16 hex digits per sensor):")
    for run, checks in sorted(table.checksums.items()):
        lines.append(f"  run {run}: " + " ".join(c[:16] for c in checks))
    files["summary.txt"] = "\n".join(lines) + "\n"
    return files


def emit_reports(table: ResultTable, directory) -> list[Path]:
    """Write all reports to ``directory``; renders everything before writing any file."""
    files = render_reports(table)
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, text in files.items():
        p = out / name
        p.write_text(text, encoding="utf-8")
        paths.append(p)
    return paths


def read_aggregate_csv(path) -> list[AggregateRow]:
    def opt(s, conv):
        return None if s == "" else conv(s)

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        return [AggregateRow(r["protocol"], int(r["t"]), int(r["runs"]), float(r["time_avg_ospa"]),
                             float(r["ospa_se"]), float(r["mean_cardinality"]), float(r["tuples_per_step"]),
                             opt(r["tuples_per_round"], float), opt(r["ce"], float)) for r in reader]
