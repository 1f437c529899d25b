"""Command-line experiment runner: ``lipi-sim run | compare | sweep``.

Every run is fully determined by an :class:`ExperimentConfig`.  Times are in
abstract sub-slot units.  Output never contains timestamps and keys are
sorted, so equal configs give byte-identical output.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import random
import statistics
import sys
from dataclasses import asdict, dataclass, field, fields, replace

from .aggspec import AggregationSpec, Family, aggregate_value
from .baselines import (
    DEFAULT_FIELD_PRIME,
    PROTOCOLS,
    nsss_round,
    ppmp_round,
    sss_round,
)
from .dfke import RefreshPolicy, dfke_round
from .errors import ConfigError, LipiError
from .lipi import events_for_round, run_periodic, setup_config, with_setup
from .modmath import DEFAULT_DH_PRIME, TAG_FAILURES, TAG_SECRETS, ModParams, derive_key
from .stnet import FailureEvent, FailurePhase, SimConfig, Topology, topology_from_spec
from .trace import AggregateResult

OUTPUT_DIR_ENV = "LIPI_OUTPUT_DIR"
FORMATS = ("jsonl", "csv")
SWEEP_AXES = ("n", "area", "failures", "ntx")


@dataclass
class ExperimentConfig:
    protocol: str = "lipi"
    topology: str = "complete:8"
    n: int | None = None
    ntx: int | str = "auto"
    aggregation: str = "sum"
    secrets: str = "ids"
    failures: list[str] = field(default_factory=list)
    rounds: int = 1
    seed: int = 0
    output_format: str = "jsonl"
    field_prime: int = DEFAULT_FIELD_PRIME
    degree: int | None = None
    hop_limit: int = 2
    dh_prime: int = DEFAULT_DH_PRIME
    refresh_threshold: int = 100

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise ConfigError(f"unknown protocol {self.protocol!r}; choose from {', '.join(PROTOCOLS)}")
        if self.output_format not in FORMATS:
            raise ConfigError(f"unknown output format {self.output_format!r}")
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        if self.ntx != "auto":
            try:
                self.ntx = int(self.ntx)
            except ValueError:
                raise ConfigError(f"ntx must be a positive integer or 'auto', got {self.ntx!r}") from None
            if self.ntx < 1:
                raise ConfigError("ntx must be >= 1")
        self.failures = list(self.failures)
        for f in self.failures:
            FailureEvent.parse(f)

    # serialisation

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        extra = sorted(set(data) - known)
        if extra:
            raise ConfigError(f"unknown config keys: {', '.join(extra)}")
        return cls(**data)

    @classmethod
    def load(cls, path: str) -> "ExperimentConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                return cls.from_dict(json.load(fh))
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None

    # derived pieces

    def build_topology(self) -> Topology:
        topo = topology_from_spec(self.topology, seed=self.seed)
        if self.n is not None and self.n != topo.n:
            raise ConfigError(f"n={self.n} does not match topology with {topo.n} nodes")
        return topo

    def failure_events(self) -> list[FailureEvent]:
        return [FailureEvent.parse(f) for f in self.failures]

    def sim_config(self, topo: Topology) -> SimConfig:
        if self.ntx == "auto":
            # twice the diameter leaves slack for detours once nodes fail
            ntx = 2 * max(1, topo.diameter()) if topo.is_connected() else topo.n
        else:
            ntx = self.ntx
        return SimConfig(ntx=ntx, rng_seed=self.seed, max_hops=max(64, topo.n),
                         failure_plan=tuple(self.failure_events()))

    def secrets_for(self, topo: Topology, rnd: int) -> dict[int, int]:
        mode, _, arg = self.secrets.partition(":")
        if mode == "ids":
            return {v: v for v in topo.nodes}
        if mode == "random":
            try:
                lo, hi = (int(x) for x in arg.split(":"))
            except ValueError:
                raise ConfigError("random secrets take 'random:LO:HI'") from None
            if lo > hi:
                raise ConfigError("random secrets need LO <= HI")
            rng = random.Random(derive_key(self.seed, rnd, TAG_SECRETS))
            return {v: rng.randint(lo, hi) for v in topo.nodes}
        if mode == "list":
            try:
                vals = [int(x) for x in arg.split(",")]
            except ValueError:
                raise ConfigError("list secrets take 'list:a,b,c'") from None
            if len(vals) != topo.n:
                raise ConfigError(f"{len(vals)} secrets listed for {topo.n} nodes")
            return dict(zip(topo.nodes, vals))
        raise ConfigError(f"unknown secrets mode {self.secrets!r}")


# execution

def execute(cfg: ExperimentConfig) -> list[AggregateResult]:
    topo = cfg.build_topology()
    sim = cfg.sim_config(topo)
    if cfg.protocol == "lipi":
        spec = AggregationSpec.parse(cfg.aggregation)
        params = ModParams.for_prime(cfg.dh_prime)
        return run_periodic(topo, sim, spec, lambda r: cfg.secrets_for(topo, r), cfg.rounds,
                            RefreshPolicy(cfg.refresh_threshold), params)
    if AggregationSpec.parse(cfg.aggregation).family is not Family.SUM:
        raise ConfigError(f"{cfg.protocol} only computes sums")
    setup = None
    if cfg.protocol in ("sss", "nsss"):
        first = setup_config(sim.with_failures(events_for_round(sim.failure_plan, 0)))
        setup = dfke_round(topo, first, ModParams.for_prime(cfg.dh_prime), rng_seed=cfg.seed)
    out = []
    for rnd in range(cfg.rounds):
        rsim = sim.with_failures(events_for_round(sim.failure_plan, rnd))
        secrets = cfg.secrets_for(topo, rnd)
        if cfg.protocol == "ppmp":
            res = ppmp_round(topo, rsim, secrets, rng_seed=cfg.seed, seq_no=rnd)
        elif cfg.protocol == "sss":
            res = sss_round(topo, rsim, secrets, setup.tables, q=cfg.field_prime, degree=cfg.degree,
                            seq_no=rnd, rng_seed=cfg.seed)
        else:
            res = nsss_round(topo, rsim, secrets, setup.tables, q=cfg.field_prime, degree=cfg.degree or 2,
                             hop_limit=cfg.hop_limit, seq_no=rnd, rng_seed=cfg.seed)
        if setup is not None and rnd == 0:
            res = with_setup(res, setup.timeline)
        out.append(res)
    return out


def _num(x):
    return x if isinstance(x, int) else float(x)


def result_record(res: AggregateResult, rnd: int) -> dict:
    lat = res.round_latency()
    radio = res.round_radio_on()
    nodes = [{"node": v, "latency": lat[v], "radio_on": radio.get(v, 0)}
             for v in sorted(lat) if v != res.initiator]
    init = None
    if res.initiator in lat:
        init = {"node": res.initiator, "latency": lat[res.initiator], "radio_on": radio.get(res.initiator, 0)}
    val = res.value
    return {
        "protocol": res.protocol,
        "round": rnd,
        "seq_no": res.seq_no,
        "status": res.status.value,
        "aggregate": None if val is None else _num(aggregate_value(val)),
        "recovery_used": res.recovery_used,
        "comm_rounds": res.comm_rounds,
        "survivors": sorted(res.survivors),
        "included": sorted(res.included),
        "initiator": init,
        "nodes": nodes,
        "phases": [{"name": p.name, "start": p.start - res.setup_duration, "end": p.end - res.setup_duration,
                    "kind": p.kind} for p in res.phases[len(res.setup_phases):]],
        "setup": {"duration": res.setup_duration, "radio_on": sum(res.setup_radio_on.values())},
    }


def _mean(xs):
    return statistics.fmean(xs) if xs else None


def _std(xs):
    return statistics.pstdev(xs) if xs else None


def emit(rows: list[dict], fmt: str, columns: list[str] | None = None) -> str:
    if fmt == "jsonl":
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows)
    buf = io.StringIO()
    cols = columns or sorted({k for r in rows for k in r})
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: ("" if r.get(k) is None else r.get(k)) for k in cols})
    return buf.getvalue()


NODE_COLUMNS = ["protocol", "round", "node", "role", "latency", "radio_on", "aggregate", "status", "recovery_used"]


def node_rows(record: dict) -> list[dict]:
    rows = []
    base = {k: record[k] for k in ("protocol", "round", "aggregate", "status", "recovery_used")}
    if record["initiator"]:
        rows.append({**base, **record["initiator"], "role": "initiator"})
    rows += [{**base, **n, "role": "other"} for n in record["nodes"]]
    return rows


def cmd_run(cfg: ExperimentConfig) -> str:
    records = [result_record(r, i) for i, r in enumerate(execute(cfg))]
    if cfg.output_format == "csv":
        return emit([row for rec in records for row in node_rows(rec)], "csv", NODE_COLUMNS)
    return emit(records, "jsonl")


COMPARE_COLUMNS = ["protocol", "samples", "mean_latency", "std_latency", "mean_radio_on", "std_radio_on",
                   "lipi_latency_savings_pct", "lipi_radio_on_savings_pct"]


def compare_rows(configs: list[ExperimentConfig], seeds: int = 1) -> list[dict]:
    if len(configs) < 2:
        raise ConfigError("compare needs at least two protocols")
    if len({(c.topology, c.seed, c.n) for c in configs}) > 1:
        raise ConfigError("all compared entries must share one topology")
    if seeds < 1:
        raise ConfigError("seeds must be >= 1")
    stats = []
    for cfg in configs:
        lat, radio = [], []
        for s in range(seeds):
            for res in execute(replace(cfg, seed=cfg.seed + s)):
                lat += res.round_latency().values()
                radio += res.round_radio_on().values()
        stats.append({"protocol": cfg.protocol, "samples": len(lat), "mean_latency": _mean(lat),
                      "std_latency": _std(lat), "mean_radio_on": _mean(radio), "std_radio_on": _std(radio)})
    ref = next((s for s in stats if s["protocol"] == "lipi"), None)
    for s in stats:
        for metric in ("latency", "radio_on"):
            key = f"lipi_{metric}_savings_pct"
            mine = s[f"mean_{metric}"]
            s[key] = None if ref is None or not mine else 100.0 * (mine - ref[f"mean_{metric}"]) / mine
    return stats


def cmd_compare(configs: list[ExperimentConfig], seeds: int = 1, fmt: str = "csv") -> str:
    return emit(compare_rows(configs, seeds), fmt, COMPARE_COLUMNS)


def failure_order(topo: Topology, count: int, seed: int, keep: int = 1) -> list[int]:
    """Nodes to fail, in order, such that every prefix leaves the rest connected.

    Nodes whose loss keeps the diameter unchanged are taken first; others
    only once those run out.  ``keep`` (the initiator) is never chosen.
    """
    rng = random.Random(derive_key(seed, TAG_FAILURES))
    candidates = [v for v in topo.nodes if v != keep]
    rng.shuffle(candidates)
    chosen: list[int] = []
    alive = set(topo.nodes)
    width = topo.diameter() if topo.is_connected() else None
    while len(chosen) < count:
        ok = [v for v in candidates if v not in chosen and topo.is_connected(alive - {v})]
        if not ok:
            raise ConfigError(f"cannot fail {count} nodes and keep the rest connected")
        flat = [v for v in ok if width is None or topo.diameter(alive - {v}) <= width]
        v = (flat or ok)[0]
        chosen.append(v)
        alive.discard(v)
    return chosen


def _with_n(spec: str, n: int) -> str:
    kind, _, rest = spec.partition(":")
    if kind == "file":
        raise ConfigError("cannot sweep n over a topology file")
    parts = rest.split(":")
    return ":".join([kind, str(n)] + parts[1:])


def _with_side(spec: str, side: float) -> str:
    parts = spec.split(":")
    if parts[0] != "rgg":
        raise ConfigError("the area axis needs an rgg topology")
    parts[2] = f"{side:g}"
    return ":".join(parts)


SWEEP_COLUMNS = ["axis", "value", "round", "node_class", "nodes", "mean_latency", "mean_radio_on",
                 "aggregate", "status", "recovery_used"]


def sweep_rows(base: ExperimentConfig, axis: str, values: list) -> list[dict]:
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; choose from {', '.join(SWEEP_AXES)}")
    if not values:
        raise ConfigError("sweep needs at least one value")
    order = None
    if axis == "failures":
        counts = [int(v) for v in values]
        order = failure_order(base.build_topology(), max(counts), base.seed)
    rows = []
    for value in values:
        if axis == "n":
            cfg = replace(base, topology=_with_n(base.topology, int(value)), n=None, secrets=_sweep_secrets(base))
        elif axis == "area":
            cfg = replace(base, topology=_with_side(base.topology, float(value)))
        elif axis == "ntx":
            cfg = replace(base, ntx=int(value))
        else:
            phase = FailurePhase.AFTER_DFKE_SILENT if base.protocol == "lipi" else FailurePhase.BEFORE_DFKE
            fails = [FailureEvent(v, phase).format() for v in order[:int(value)]]
            cfg = replace(base, failures=list(base.failures) + fails)
        for rnd, res in enumerate(execute(cfg)):
            lat, radio = res.round_latency(), res.round_radio_on()
            groups = {"initiator": [v for v in lat if v == res.initiator],
                      "other": [v for v in lat if v != res.initiator]}
            val = res.value
            for cls_name, members in groups.items():
                rows.append({
                    "axis": axis, "value": value, "round": rnd, "node_class": cls_name, "nodes": len(members),
                    "mean_latency": _mean([lat[v] for v in members]),
                    "mean_radio_on": _mean([radio[v] for v in members]),
                    "aggregate": None if val is None else _num(aggregate_value(val)),
                    "status": res.status.value, "recovery_used": res.recovery_used,
                })
    return rows


def _sweep_secrets(base):
    # an explicit list is tied to one n
    return "ids" if base.secrets.startswith("list:") else base.secrets


def cmd_sweep(base: ExperimentConfig, axis: str, values: list, fmt: str = "csv") -> str:
    return emit(sweep_rows(base, axis, values), fmt, SWEEP_COLUMNS)


# CLI

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with ExperimentConfig keys; flags override it")
    p.add_argument("--protocol", choices=PROTOCOLS)
    p.add_argument("--topology", help="line:N, ring:N, complete:N, rgg:N:SIDE[:RADIUS] or file:PATH")
    p.add_argument("--n", type=int)
    p.add_argument("--ntx", help="transmissions per node, or 'auto' (twice the diameter)")
    p.add_argument("--aggregation", help="sum, am, gm[:Q], harmonic, log or power:E")
    p.add_argument("--secrets", help="ids, random:LO:HI or list:A,B,...")
    p.add_argument("--failure", action="append", dest="failures", metavar="NODE:PHASE[:K][@ROUND]")
    p.add_argument("--rounds", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--format", dest="output_format", choices=FORMATS)
    p.add_argument("--field", dest="field_prime", type=int)
    p.add_argument("--degree", type=int)
    p.add_argument("--hop-limit", dest="hop_limit", type=int)
    p.add_argument("--dh-prime", dest="dh_prime", type=int)
    p.add_argument("--refresh", dest="refresh_threshold", type=int, help="rounds between key refreshes")
    p.add_argument("--output", help="also write the output to this file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lipi-sim", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one protocol for some rounds")
    _add_common(run)
    cmp_ = sub.add_parser("compare", help="compare protocols on one topology")
    _add_common(cmp_)
    cmp_.add_argument("--protocols", required=True, help="comma-separated, e.g. lipi,ppmp,sss")
    cmp_.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds to average over")
    sw = sub.add_parser("sweep", help="vary one parameter")
    _add_common(sw)
    sw.add_argument("--axis", required=True, choices=SWEEP_AXES)
    sw.add_argument("--values", required=True, help="comma-separated axis values")
    return parser


_CONFIG_KEYS = [f.name for f in fields(ExperimentConfig)]


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    data = ExperimentConfig.load(args.config).to_dict() if args.config else {}
    for key in _CONFIG_KEYS:
        val = getattr(args, key, None)
        if val is not None:
            data[key] = val
    if args.command != "run" and "output_format" not in data:
        data["output_format"] = "csv"
    return ExperimentConfig.from_dict(data)


def _parse_values(text: str) -> list:
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        if not tok:
            continue
        try:
            out.append(int(tok))
        except ValueError:
            try:
                out.append(float(tok))
            except ValueError:
                raise ConfigError(f"bad sweep value {tok!r}") from None
    return out


def _write(text: str, target: str | None, default_name: str) -> None:
    sys.stdout.write(text)
    out_dir = os.environ.get(OUTPUT_DIR_ENV)
    path = target
    if path is None and out_dir:
        path = default_name
    if path is None:
        return
    if out_dir and not os.path.isabs(path):
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = config_from_args(args)
        ext = cfg.output_format
        if args.command == "run":
            text = cmd_run(cfg)
            name = f"run-{cfg.protocol}.{ext}"
        elif args.command == "compare":
            protos = [p.strip() for p in args.protocols.split(",") if p.strip()]
            text = cmd_compare([replace(cfg, protocol=p) for p in protos], args.seeds, ext)
            name = f"compare.{ext}"
        else:
            text = cmd_sweep(cfg, args.axis, _parse_values(args.values), ext)
            name = f"sweep-{args.axis}.{ext}"
        _write(text, args.output, name)
    except (LipiError, ValueError) as exc:
        print(f"lipi-sim: error: {exc}", file=sys.stderr)
        return 2
    return 0


def run_cli() -> None:
    sys.exit(main())
