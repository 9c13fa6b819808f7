"""Batch command-line front end.

Settings resolve in order: built-in defaults, ``--config`` JSON file,
``FLOWCORR_*`` environment variables, command-line flags.  Every command
that writes a run directory stores the resolved settings in
``config.json`` next to its outputs.

Exit codes: 0 success, 1 invariant failure, 2 I/O or configuration error.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from . import __version__
from .cache import CacheConfig, SimulationResult, simulate
from .features import FEATURE_NAMES, SELECTED_FEATURES, parse_feature_list
from .flow import InvariantViolation
from .metrics import (InfluenceAccumulator, LifecycleRecord, accuracy, bias_series, f1,
                      feature_report, lifecycle_stats, mcc)
from .perceptron import PredictorConfig
from .ranking import ig_iterate, sweep
from .trace_io import (TraceFormatError, generate_synthetic, load_trace,
                       scan_and_bursty_spec, spec_from_dict, trace_stats, write_native,
                       write_pcap)

ENV_PREFIX = "FLOWCORR_"
SCHEMA_VERSION = 1
BUILTIN_TRACES = {"scan_bursty": scan_and_bursty_spec}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    trace: str = "builtin:scan_bursty"
    policy: str = "hp"
    entries: int = 4096
    assoc: int = 8
    features: str = ",".join(map(str, SELECTED_FEATURES))
    seed: int = 0
    epoch_len: int = 10_000
    warmup: int = 0
    counter_bits: int = 5
    history_depth: int = 8
    initial_threshold: int = 8
    threshold_saturation: int = 64
    index_bits: int = 16
    allow_bypass: bool = True
    sizes: str = "64,128,256,512,1024,2048,4096"
    candidates: str = ",".join(str(i) for i in range(1, 29) if i != 26)
    ranking: str = ""
    max_iters: int = 3
    epsilon: float = 0.0
    jobs: int = 1
    out: str = "run"

    def cache_config(self, policy: str | None = None) -> CacheConfig:
        try:
            pred = PredictorConfig(
                features=parse_feature_list(self.features),
                counter_bits=self.counter_bits,
                history_depth=self.history_depth,
                initial_threshold=self.initial_threshold,
                threshold_saturation=self.threshold_saturation,
                index_bits=self.index_bits,
            )
            return CacheConfig(self.entries, self.assoc, policy or self.policy, pred,
                               self.seed, self.allow_bypass, self.epoch_len)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def policies(self) -> list[str]:
        return [p.strip() for p in self.policy.split(",") if p.strip()]


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(name: str, value):
    kind = _FIELD_TYPES[name]
    try:
        if kind == "bool":
            if isinstance(value, bool):
                return value
            v = str(value).strip().lower()
            if v in ("1", "true", "yes", "on"):
                return True
            if v in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
        if isinstance(value, (list, tuple)):
            return ",".join(str(v) for v in value)
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"bad value for {name}: {value!r}") from None


def resolve_config(args: argparse.Namespace, environ=None) -> RunConfig:
    environ = os.environ if environ is None else environ
    values = asdict(RunConfig())
    if getattr(args, "config", None):
        try:
            with open(args.config, encoding="utf-8") as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        data = data.get("config", data)
        for k, v in data.items():
            if k not in values:
                raise ConfigError(f"unknown config key {k!r}")
            values[k] = _coerce(k, v)
    for k in values:
        env = environ.get(ENV_PREFIX + k.upper())
        if env is not None:
            values[k] = _coerce(k, env)
    for k in values:
        v = getattr(args, k, None)
        if v is not None:
            values[k] = _coerce(k, v)
    return RunConfig(**values)


def _load(cfg: RunConfig):
    src = cfg.trace
    if src.startswith("builtin:"):
        name = src.split(":", 1)[1]
        if name not in BUILTIN_TRACES:
            raise ConfigError(f"unknown builtin trace {name!r}")
        return generate_synthetic(BUILTIN_TRACES[name]())
    path = Path(src)
    if path.suffix == ".json":
        try:
            spec = spec_from_dict(json.loads(path.read_text(encoding="utf-8")))
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"bad synthetic spec {src}: {exc}") from None
        return generate_synthetic(spec)
    return load_trace(path)


# --------------------------------------------------------------------------
# output helpers

def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow(["" if v is None else v for v in r])


def _fmt(x):
    return None if x is None else repr(float(x))


def _prepare_out(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.json", {"config": asdict(cfg)})
    return out


def _check(res: SimulationResult) -> None:
    if res.hits + res.compulsory + res.capacity != res.packets:
        raise InvariantViolation(f"{res.policy}: hit/miss accounting does not sum to packets")
    if res.flow_table_violations:
        raise InvariantViolation(f"{res.policy}: {res.flow_table_violations} flow table violations")


def _print_table(rows, file=None) -> None:
    file = file or sys.stdout
    print(f"{'policy':<8}{'size':>8}{'hits':>10}{'compulsory':>12}{'capacity':>10}{'hit_rate':>10}",
          file=file)
    for r in rows:
        print(f"{r['policy']:<8}{r['size']:>8}{r['hits']:>10}{r['compulsory']:>12}"
              f"{r['capacity']:>10}{r['hit_rate']:>10.4f}", file=file)


def write_hp_details(out: Path, res: SimulationResult) -> None:
    feats = res.config.predictor.features
    rows = []
    for fam, acc in res.influence.items():
        cm = acc.system
        rows.append([fam, cm.tp, cm.fn_, cm.fp, cm.tn, _fmt(accuracy(cm)), _fmt(f1(cm)),
                     _fmt(mcc(cm))])
    _write_csv(out / "hp_confusion.csv",
               ["family", "tp", "fn", "fp", "tn", "accuracy", "f1", "mcc"], rows)
    bias = bias_series(res.inference_weights, res.config.epoch_len)
    _write_csv(out / "hp_bias.csv", ["epoch", "feature_id", "bias"],
               ([e, fid, _fmt(b[k])] for e, b in enumerate(bias) for k, fid in enumerate(feats)))
    _write_csv(out / "hp_threshold.csv",
               ["packet", "phi", "correct_updates", "incorrect_updates"],
               ([t["packet"], t["phi"], t["correct_updates"], t["incorrect_updates"]]
                for t in res.threshold_trace))
    lo = res.correlator.tables.lo
    _write_csv(out / "hp_weights_hist.csv", ["feature_id", "weight", "count"],
               ([fid, lo + w, int(c)] for k, fid in enumerate(feats)
                for w, c in enumerate(res.weight_hist[k])))
    n = len(res.inference_weights)
    mean_bias = [float(res.inference_weights[:, k].mean()) if n else None for k in range(len(feats))]
    frows = []
    for fam, acc in res.influence.items():
        for r in feature_report(acc, feats, mean_bias if fam == "all" else None):
            frows.append([fam, r["feature_id"], FEATURE_NAMES[r["feature_id"]], _fmt(r["mcc"]),
                          _fmt(r["influence_correct"]), _fmt(r["influence_incorrect"]),
                          _fmt(r["influence_total"]), _fmt(r["bias"]), r["tp"], r["fn"],
                          r["fp"], r["tn"], r["abstain"]])
    _write_csv(out / "hp_features.csv",
               ["family", "feature_id", "name", "mcc", "influence_correct",
                "influence_incorrect", "influence_total", "bias", "tp", "fn", "fp", "tn",
                "abstain"], frows)


def write_lifecycle(out: Path, res: SimulationResult) -> None:
    _write_csv(out / f"lifecycle_{res.policy}.csv",
               ["flow_id", "t0", "t_last", "t_evict", "end_flush", "lifetime", "deadtime",
                "efficiency"],
               ([r.flow_id, r.t0, r.t_last, r.t_evict, int(r.end_flush), r.lifetime,
                 r.deadtime, _fmt(r.efficiency)] for r in res.lifecycle))


# --------------------------------------------------------------------------
# commands

def cmd_simulate(cfg: RunConfig) -> int:
    policies = cfg.policies()
    cache_cfgs = [cfg.cache_config(p) for p in policies]
    trace = _load(cfg)
    out = _prepare_out(cfg)
    summaries, table = [], []
    for cc in cache_cfgs:
        res = simulate(trace, cc)
        _check(res)
        s = res.summary()
        s["hit_rate_after_warmup"] = res.hit_rate_after(cfg.warmup)
        summaries.append(s)
        table.append({"policy": res.policy, "size": cc.total_entries, **s})
        write_lifecycle(out, res)
        if res.policy == "hp":
            write_hp_details(out, res)
    _write_json(out / "summary.json", {
        "schema_version": SCHEMA_VERSION,
        "config": asdict(cfg),
        "trace": asdict(trace_stats(trace)),
        "results": summaries,
    })
    _print_table(table)
    return 0


def cmd_limit(cfg: RunConfig) -> int:
    try:
        sizes = [int(s) for s in cfg.sizes.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"bad size list {cfg.sizes!r}") from None
    if not sizes or min(sizes) < 1:
        raise ConfigError("sizes must be positive")
    trace = _load(cfg)
    out = _prepare_out(cfg)
    rows = []
    for size in sizes:
        for pol in ("min", "lru"):
            cc = CacheConfig(size, 0, pol, seed=cfg.seed)
            res = simulate(trace, cc)
            _check(res)
            rows.append({"policy": pol, "size": size, "hits": res.hits,
                         "compulsory": res.compulsory, "capacity": res.capacity,
                         "hit_rate": res.hit_rate})
    _write_csv(out / "limit.csv", ["size", "policy", "hit_rate", "compulsory", "capacity"],
               ([r["size"], r["policy"], _fmt(r["hit_rate"]), r["compulsory"], r["capacity"]]
                for r in rows))
    _print_table(rows)
    return 0


def _sweep_rows(sw):
    return ([r["prefix_len"], r["feature_id"], _fmt(r["hit_rate"]), _fmt(r["gain"])]
            for r in sw.rows())


SWEEP_HEADER = ["prefix_len", "feature_id", "hit_rate", "gain"]


def cmd_sweep(cfg: RunConfig) -> int:
    ranking = parse_feature_list(cfg.ranking or cfg.features)
    if not ranking:
        raise ConfigError("sweep needs a non-empty ranking")
    cc = cfg.cache_config("hp")
    trace = _load(cfg)
    out = _prepare_out(cfg)
    sw = sweep(trace, ranking, cc, jobs=cfg.jobs, warmup=cfg.warmup)
    _write_csv(out / "sweep.csv", SWEEP_HEADER, _sweep_rows(sw))
    _write_json(out / "sweep.json", {"schema_version": SCHEMA_VERSION,
                                     "baseline_lru": sw.baseline_lru,
                                     "rows": sw.rows()})
    print(f"baseline lru hit_rate {sw.baseline_lru:.4f}")
    for r in sw.rows():
        print(f"{r['prefix_len']:>3} f{r['feature_id']:<3} {r['hit_rate']:.4f} {r['gain']:+.4f}")
    return 0


def cmd_rank(cfg: RunConfig) -> int:
    candidates = parse_feature_list(cfg.candidates)
    if not candidates:
        raise ConfigError("rank needs candidates")
    cc = cfg.cache_config("hp")
    trace = _load(cfg)
    out = _prepare_out(cfg)
    final, log = ig_iterate(trace, candidates, cc, max_iters=cfg.max_iters, jobs=cfg.jobs,
                            warmup=cfg.warmup, epsilon=cfg.epsilon)
    for p in log.passes:
        _write_csv(out / f"sweep_ig{p['iteration']}.csv", SWEEP_HEADER,
                   ([r["prefix_len"], r["feature_id"], _fmt(r["hit_rate"]), _fmt(r["gain"])]
                    for r in p["sweep"]))
    _write_json(out / "rank.json", {"schema_version": SCHEMA_VERSION,
                                    "final_ranking": list(final), **log.to_dict()})
    print("MCC ranking:", ",".join(map(str, log.initial)))
    for p in log.passes:
        print(f"IG{p['iteration']} ranking:", ",".join(map(str, p["output_ranking"])))
    return 0


def cmd_trace(args) -> int:
    if args.trace_cmd == "generate":
        if args.spec:
            try:
                spec = spec_from_dict(json.loads(Path(args.spec).read_text(encoding="utf-8")))
            except OSError as exc:
                raise ConfigError(str(exc)) from None
        else:
            spec = scan_and_bursty_spec()
        if args.seed is not None:
            spec = replace(spec, seed=args.seed)
        _save(generate_synthetic(spec), args.output)
        return 0
    if args.trace_cmd == "stats":
        st = trace_stats(load_trace(args.path))
        print(json.dumps(asdict(st), indent=2, sort_keys=True))
        return 0
    if args.trace_cmd == "convert":
        _save(load_trace(args.input), args.output)
        return 0
    raise ConfigError(f"unknown trace command {args.trace_cmd}")


def _save(packets, path: str) -> None:
    p = Path(path)
    if p.suffix in (".pcap", ".cap"):
        with open(p, "wb") as fh:
            write_pcap(packets, fh)
    else:
        with open(p, "w", encoding="utf-8", newline="\n") as fh:
            write_native(packets, fh)


def _read_csv(path: Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def cmd_report(run_dir: str) -> int:
    run = Path(run_dir)
    summary_path = run / "summary.json"
    if not summary_path.exists():
        raise FileNotFoundError(f"missing {summary_path}")
    summary = json.loads(summary_path.read_text(encoding="utf-8"))
    out = run / "report"
    out.mkdir(exist_ok=True)
    written = []
    for res in summary["results"]:
        pol = res["policy"]
        lpath = run / f"lifecycle_{pol}.csv"
        if not lpath.exists():
            raise FileNotFoundError(f"missing {lpath}")
        recs = [LifecycleRecord(int(r["flow_id"]), int(r["t0"]), int(r["t_last"]),
                                int(r["t_evict"]), r["end_flush"] == "1")
                for r in _read_csv(lpath)]
        st = lifecycle_stats(recs)
        counts, edges = st.efficiency_histogram(10)
        _write_csv(out / f"efficiency_hist_{pol}.csv", ["bin_lo", "bin_hi", "count"],
                   ([_fmt(edges[k]), _fmt(edges[k + 1]), int(c)] for k, c in enumerate(counts)))
        q = st.quantiles()
        _write_csv(out / f"lifecycle_stats_{pol}.csv",
                   ["metric", "q0", "q25", "q50", "q75", "q100"],
                   ([m] + [_fmt(x) for x in q[m]] for m in ("lifetime", "deadtime", "efficiency")))
        written += [f"efficiency_hist_{pol}.csv", f"lifecycle_stats_{pol}.csv"]
        if pol != "hp":
            continue
        for name in ("hp_weights_hist.csv", "hp_bias.csv"):
            if not (run / name).exists():
                raise FileNotFoundError(f"missing {run / name}")
        feats = res["features"]
        bias_rows = _read_csv(run / "hp_bias.csv")
        bias = {}
        for fid in feats:
            vals = [float(r["bias"]) for r in bias_rows if int(r["feature_id"]) == fid and r["bias"]]
            bias[fid] = sum(vals) / len(vals) if vals else None
        rows = []
        for fam, d in res["influence"].items():
            acc = InfluenceAccumulator.from_dict(d)
            for r in feature_report(acc, feats, [bias[f] for f in feats]):
                rows.append([fam, r["feature_id"], _fmt(r["mcc"]), _fmt(r["influence_correct"]),
                             _fmt(r["influence_incorrect"]), _fmt(r["influence_total"]),
                             _fmt(r["bias"])])
        _write_csv(out / "feature_metrics.csv",
                   ["family", "feature_id", "mcc", "influence_correct", "influence_incorrect",
                    "influence_total", "mean_epoch_bias"], rows)
        (out / "weight_hist.csv").write_text(
            (run / "hp_weights_hist.csv").read_text(encoding="utf-8"), encoding="utf-8")
        written += ["feature_metrics.csv", "weight_hist.csv"]
    for w in written:
        print(out / w)
    return 0


# --------------------------------------------------------------------------
# argument parsing

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--trace", help="trace file (capture or native), spec .json, or builtin:NAME")
    p.add_argument("--entries", type=int)
    p.add_argument("--assoc", type=int, help="ways per set; 0 for fully associative")
    p.add_argument("--features", help="comma-separated feature ids")
    p.add_argument("--seed", type=int)
    p.add_argument("--epoch-len", dest="epoch_len", type=int)
    p.add_argument("--warmup", type=int, help="packets excluded from warm hit rates")
    p.add_argument("--counter-bits", dest="counter_bits", type=int)
    p.add_argument("--history-depth", dest="history_depth", type=int)
    p.add_argument("--initial-threshold", dest="initial_threshold", type=int)
    p.add_argument("--threshold-saturation", dest="threshold_saturation", type=int)
    p.add_argument("--index-bits", dest="index_bits", type=int)
    p.add_argument("--no-bypass", dest="allow_bypass", action="store_const", const=False)
    p.add_argument("--jobs", type=int)
    p.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flowcorr", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="replay a trace under one or more policies")
    _common(p)
    p.add_argument("--policy", help="lru, min, hp or a comma-separated list")

    p = sub.add_parser("limit", help="MIN vs LRU across fully associative sizes")
    _common(p)
    p.add_argument("--sizes", help="comma-separated cache sizes")

    p = sub.add_parser("sweep", help="hit rate of each ranked feature prefix")
    _common(p)
    p.add_argument("--ranking", help="comma-separated ranked feature ids")

    p = sub.add_parser("rank", help="MCC ranking refined by differential gain")
    _common(p)
    p.add_argument("--candidates", help="comma-separated candidate feature ids")
    p.add_argument("--max-iters", dest="max_iters", type=int)
    p.add_argument("--epsilon", type=float)

    p = sub.add_parser("trace", help="generate, inspect or convert traces")
    tsub = p.add_subparsers(dest="trace_cmd", required=True)
    g = tsub.add_parser("generate")
    g.add_argument("output")
    g.add_argument("--spec", help="synthetic spec JSON (default: builtin scan/bursty mix)")
    g.add_argument("--seed", type=int)
    s = tsub.add_parser("stats")
    s.add_argument("path")
    c = tsub.add_parser("convert")
    c.add_argument("input")
    c.add_argument("output")

    p = sub.add_parser("report", help="derive metric tables from a simulate run directory")
    p.add_argument("run_dir")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "trace":
            return cmd_trace(args)
        if args.command == "report":
            return cmd_report(args.run_dir)
        cfg = resolve_config(args)
        return {"simulate": cmd_simulate, "limit": cmd_limit, "sweep": cmd_sweep,
                "rank": cmd_rank}[args.command](cfg)
    except InvariantViolation as exc:
        print(f"flowcorr: invariant failure: {exc}", file=sys.stderr)
        return 1
    except (OSError, TraceFormatError, ConfigError, ValueError) as exc:
        print(f"flowcorr: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
