"""Experiment driver.

Resolves a flat key=value configuration (defaults, optional config file,
preset bundle, command line flags, in that order), builds the requested
layers, runs each under the requested schemes with a baseline run first for
normalization, verifies every output against the reference convolution, and
writes report.csv / counters.json / config.echo into the output directory.

Exit status is 0 only if every run completed and every verification passed.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

from . import metrics, workload
from .cachehier import CacheGeometry
from .metrics import EnergyWeights
from .oracle import MemoryImage, compare, reference_convolution
from .smcore import SimParams, run_simulation
from .workload import ConfigError

DEFAULTS = {
    "sm.count": 56,
    "sm.warp_size": 32,
    "sm.simt_width": 8,
    "l1.kb": 16,
    "l1.sets": 32,
    "l1.ways": 4,
    "l2.kb": 64,          # per memory controller slice
    "l2.ways": 8,
    "mem.mcs": 8,
    "noc.mesh_w": 8,
    "noc.mesh_h": 8,
    "noc.channel_bits": 128,
    "noc.flit_bytes": 16,
    "noc.hop_cycles": 1,
    "noc.pipeline_stages": 2,
    "lat.l1": 1,
    "lat.l2": 30,
    "lat.dram": 120,
    "layout.row_pitch": 4096,  # pitched input rows; 0 packs them
    "layout.word_size": 4,
    "intra.enabled": False,
    "intra.table_entries": 256,
    "intra.assist_latency": 4,
    "intra.purge_period": 10000,
    "intra.purge_fraction": 0.25,
    "inter.enabled": False,
    "inter.clusters": 8,
    "inter.table_entries": 512,
    "inter.forward_latency": 8,
    "inter.evict_scope": "owner",
    "workload.name": "lenet5",
    "workload.shrink": 0,      # 0 = pick a sensible factor per workload
    "workload.file": "",
    "workload.passes": "forward",
    "run.seed": 0,
    "run.arith": "int32",
    "run.verify": True,
    "run.schemes": "",
    "run.jobs": 1,
    "run.max_idle": 1000000,
    "run.debug_invariants": False,
    "metrics.probe_availability": True,
    "energy.l1": 1.0,
    "energy.l2": 10.0,
    "energy.dram": 100.0,
    "energy.noc_flit_hop": 2.0,
    "energy.table": 1.0,
    "energy.mac": 1.0,
    "energy.static": 0.01,
}

# bundles matching the two table sizings used throughout the evaluation
PRESETS = {
    "baseline": {"run.schemes": "baseline"},
    "intraSM_C1": {"run.schemes": "intra", "intra.table_entries": 256},
    "intraSM_C2": {"run.schemes": "intra", "intra.table_entries": 512},
    "interSM_C1": {"run.schemes": "inter", "inter.table_entries": 512},
    "interSM_C2": {"run.schemes": "inter", "inter.table_entries": 1024},
    "combined_C1": {"run.schemes": "both",
                    "intra.table_entries": 256, "inter.table_entries": 512},
    "combined_C2": {"run.schemes": "both",
                    "intra.table_entries": 512, "inter.table_entries": 1024},
}

SCHEMES = ("baseline", "intra", "inter", "both")

AUTO_SHRINK = {"lenet5": 2, "alexnet": 8, "custom": 1}


def _coerce(key, text, where=""):
    ref = DEFAULTS[key]
    try:
        if isinstance(ref, bool):
            low = text.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(ref, int):
            return int(text, 0)
        if isinstance(ref, float):
            return float(text)
        return text.strip()
    except ValueError:
        raise ConfigError(f"{where}bad value {text!r} for {key}") from None


def parse_config_file(path):
    """key = value lines; '#' starts a comment; unknown keys are errors."""
    overrides = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, _, text = line.partition("=")
            key = key.strip()
            if key not in DEFAULTS:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            overrides[key] = _coerce(key, text, f"{path}:{lineno}: ")
    return overrides


def resolve_config(args):
    cfg = dict(DEFAULTS)
    if args.config:
        cfg.update(parse_config_file(args.config))
    if args.preset:
        if args.preset not in PRESETS:
            raise ConfigError(f"unknown preset {args.preset!r}; "
                              f"choose from {', '.join(sorted(PRESETS))}")
        cfg.update(PRESETS[args.preset])
    if args.workload:
        cfg["workload.name"] = args.workload
    if args.shrink is not None:
        cfg["workload.shrink"] = args.shrink
    if args.seed is not None:
        cfg["run.seed"] = args.seed
    if args.scheme:
        cfg["run.schemes"] = ("baseline,intra,inter,both"
                              if args.scheme == "all" else args.scheme)
    if args.verify is not None:
        cfg["run.verify"] = args.verify
    validate_config(cfg)
    return cfg


def validate_config(cfg):
    if cfg["noc.channel_bits"] != cfg["noc.flit_bytes"] * 8:
        raise ConfigError("noc.channel_bits must equal noc.flit_bytes * 8")
    if cfg["workload.name"] not in AUTO_SHRINK:
        raise ConfigError(f"unknown workload {cfg['workload.name']!r}")
    if cfg["workload.name"] == "custom" and not cfg["workload.file"]:
        raise ConfigError("workload.file is required for the custom workload")
    if cfg["workload.passes"] not in ("forward", "backward", "all"):
        raise ConfigError("workload.passes must be forward, backward or all")
    if cfg["run.arith"] not in ("int32", "float32"):
        raise ConfigError("run.arith must be int32 or float32")
    if cfg["run.jobs"] < 1:
        raise ConfigError("run.jobs must be >= 1")
    for s in scheme_list(cfg):
        if s not in SCHEMES:
            raise ConfigError(f"unknown scheme {s!r}")


def scheme_list(cfg):
    """Requested schemes, in run order."""
    text = cfg["run.schemes"].strip()
    if not text:
        if cfg["intra.enabled"] and cfg["inter.enabled"]:
            text = "both"
        elif cfg["intra.enabled"]:
            text = "intra"
        elif cfg["inter.enabled"]:
            text = "inter"
        else:
            text = "baseline"
    seen = []
    for s in text.split(","):
        s = s.strip()
        if s and s not in seen:
            seen.append(s)
    return seen


def config_echo(cfg):
    return [f"{k} = {cfg[k]}" for k in sorted(cfg)]


def table_cfg_label(cfg, scheme):
    pc = f"pc{cfg['intra.table_entries']}"
    at = f"at{cfg['inter.table_entries']}"
    return {"baseline": "-", "intra": pc, "inter": at,
            "both": f"{pc}+{at}"}[scheme]


def read_layer_file(path):
    """Custom layer list: CSV with the LayerSpec fields as columns."""
    required = ["name", "pass", "in_channels", "out_channels", "in_height",
                "in_width", "filter_h", "filter_w", "stride", "padding"]
    layers = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in required if c not in (reader.fieldnames or [])]
        if missing:
            raise ConfigError(f"{path}: missing columns {', '.join(missing)}")
        for lineno, row in enumerate(reader, 2):
            try:
                layers.append(workload.LayerSpec(
                    row["name"], int(row["in_channels"]), int(row["out_channels"]),
                    int(row["in_height"]), int(row["in_width"]),
                    int(row["filter_h"]), int(row["filter_w"]),
                    int(row["stride"]), int(row["padding"]),
                    workload.Pass(row["pass"])))
            except (KeyError, ValueError) as exc:
                raise ConfigError(f"{path}:{lineno}: {exc}") from None
    if not layers:
        raise ConfigError(f"{path}: no layers")
    return layers


def build_layers(cfg):
    name = cfg["workload.name"]
    shrink = cfg["workload.shrink"] or AUTO_SHRINK[name]
    if name == "lenet5":
        layers = workload.lenet5_layers(shrink)
    elif name == "alexnet":
        layers = workload.alexnet_conv_layers(shrink)
    else:
        layers = [workload.shrink_layer(l, shrink)
                  for l in read_layer_file(cfg["workload.file"])]
    passes = cfg["workload.passes"]
    if passes == "forward":
        return layers
    out = []
    for layer in layers:
        if passes == "all":
            out.append(layer)
        if layer.pass_kind == workload.Pass.FORWARD:
            out.extend(workload.backward_specs(layer))
    return out


def make_params(cfg, scheme):
    l1 = CacheGeometry(cfg["l1.kb"] * 1024, cfg["l1.sets"], cfg["l1.ways"])
    l2_sets = cfg["l2.kb"] * 1024 // (cfg["l2.ways"] * l1.block_size)
    l2 = CacheGeometry(cfg["l2.kb"] * 1024, l2_sets, cfg["l2.ways"])
    return SimParams(
        sm_count=cfg["sm.count"],
        warp_size=cfg["sm.warp_size"],
        simt_width=cfg["sm.simt_width"],
        l1=l1, l2=l2,
        mc_count=cfg["mem.mcs"],
        mesh_w=cfg["noc.mesh_w"], mesh_h=cfg["noc.mesh_h"],
        flit_bytes=cfg["noc.flit_bytes"],
        hop_cycles=cfg["noc.hop_cycles"],
        pipeline_stages=cfg["noc.pipeline_stages"],
        lat_l1=cfg["lat.l1"], lat_l2=cfg["lat.l2"], lat_dram=cfg["lat.dram"],
        scheme=scheme,
        pc_entries=cfg["intra.table_entries"],
        assist_latency=cfg["intra.assist_latency"],
        purge_period=cfg["intra.purge_period"],
        purge_fraction=cfg["intra.purge_fraction"],
        at_entries=cfg["inter.table_entries"],
        clusters=cfg["inter.clusters"],
        forward_latency=cfg["inter.forward_latency"],
        evict_scope=cfg["inter.evict_scope"],
        probe_availability=cfg["metrics.probe_availability"],
        debug_invariants=cfg["run.debug_invariants"],
        max_idle_cycles=cfg["run.max_idle"],
    )


def energy_weights(cfg):
    return EnergyWeights(cfg["energy.l1"], cfg["energy.l2"], cfg["energy.dram"],
                         cfg["energy.noc_flit_hop"], cfg["energy.table"],
                         cfg["energy.mac"], cfg["energy.static"])


class LayerRun:
    """One layer's shared inputs: geometry, op stream, operand image."""

    def __init__(self, cfg, layer):
        self.layer = layer
        self.geom = workload.make_layouts(layer, cfg["layout.row_pitch"])
        ops = list(workload.enumerate_ops(layer, self.geom))
        self.programs = workload.map_to_warps(ops, cfg["sm.warp_size"],
                                              cfg["sm.count"])
        self.ops = ops
        self.image = MemoryImage(self.geom, cfg["run.seed"], cfg["run.arith"])
        self.expected = (reference_convolution(self.geom, self.image)
                         if cfg["run.verify"] else None)


def run_one(cfg, lr, scheme):
    """Simulate one (layer, scheme) pair; returns (stats, CompareResult|None)."""
    params = make_params(cfg, scheme)
    stats, out = run_simulation(params, lr.programs, lr.image, lr.geom)
    stats.layer = lr.layer.name
    stats.table_cfg = table_cfg_label(cfg, scheme)
    res = None
    if lr.expected is not None:
        res = compare(out.values, lr.expected, cfg["run.arith"])
    return stats, res


def run_experiment(cfg, out_dir, characterize=False, log=print):
    """Run every layer under baseline plus the requested schemes.

    Returns (report_rows, counters, failures)."""
    schemes = scheme_list(cfg)
    if "baseline" not in schemes:
        schemes = ["baseline"] + schemes
    else:
        schemes = ["baseline"] + [s for s in schemes if s != "baseline"]
    layers = build_layers(cfg)
    runs = [LayerRun(cfg, layer) for layer in layers]
    weights = energy_weights(cfg)

    work = [(lr, scheme) for lr in runs for scheme in schemes]
    if cfg["run.jobs"] > 1 and len(work) > 1:
        with ThreadPoolExecutor(max_workers=cfg["run.jobs"]) as pool:
            results = list(pool.map(lambda w: run_one(cfg, w[0], w[1]), work))
    else:
        results = [run_one(cfg, lr, scheme) for lr, scheme in work]

    rows = []
    counters = {}
    failures = []
    avail_rows = []
    by_index = iter(results)
    for lr in runs:
        baseline_stats = None
        for scheme in schemes:
            stats, res = next(by_index)
            if scheme == "baseline":
                baseline_stats = stats
                avail_rows.append((lr.layer.name, stats.probe_misses,
                                   stats.probe_found_elsewhere,
                                   metrics.inter_sm_availability(stats)))
            rows.append(metrics.report_row(stats, baseline_stats, weights))
            record = stats.to_dict()
            record["energy"] = metrics.energy(stats, weights)
            record["ipc"] = metrics.ipc(stats)
            counters[f"{lr.layer.name}/{scheme}"] = record
            if res is None:
                verdict = "verify=skipped"
            elif res.ok:
                verdict = f"verify=OK ({res.checked} outputs)"
            else:
                verdict = f"verify=FAIL {res.message()}"
                failures.append(f"{lr.layer.name}/{scheme}: {res.message()}")
            log(f"{lr.layer.name:>12} {scheme:<8} cycles={stats.total_cycles:<10} "
                f"ipc={metrics.ipc(stats):.3f} {verdict}")

    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        echo = config_echo(cfg)
        with open(os.path.join(out_dir, "report.csv"), "w") as fh:
            fh.write(metrics.format_report(rows, echo))
        with open(os.path.join(out_dir, "counters.json"), "w") as fh:
            json.dump(counters, fh, indent=2, sort_keys=True)
            fh.write("\n")
        with open(os.path.join(out_dir, "config.echo"), "w") as fh:
            fh.write("\n".join(echo) + "\n")
        if characterize:
            block = CacheGeometry(cfg["l1.kb"] * 1024, cfg["l1.sets"],
                                  cfg["l1.ways"]).block_size
            for lr in runs:
                _, buckets = workload.reuse_histogram(lr.ops, block)
                path = os.path.join(out_dir, f"reuse_{lr.layer.name}.csv")
                with open(path, "w", newline="") as fh:
                    w = csv.writer(fh)
                    w.writerow(["computations_per_pair", "pairs"])
                    for bucket, n in buckets.items():
                        w.writerow([bucket, n])
            with open(os.path.join(out_dir, "availability.csv"), "w",
                      newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["layer", "probe_misses", "found_elsewhere",
                            "availability"])
                for name, misses, found, frac in avail_rows:
                    w.writerow([name, misses, found, f"{frac:.6f}"])
    return rows, counters, failures


# keys that define the simulated workload; sweep members must agree on them
_WORKLOAD_KEYS = ("workload.name", "workload.file", "workload.shrink",
                  "workload.passes", "run.seed", "run.arith",
                  "layout.row_pitch", "layout.word_size")


def sweep(configs, out_path, jobs=1, log=print):
    """Run several configs over one shared workload into one merged report.

    Rows are merged in config order, so paired scheme variants land next to
    each other and the merge is deterministic regardless of `jobs`.  Returns
    (merged report rows, verification failures)."""
    configs = list(configs)
    for i, cfg in enumerate(configs[1:], 1):
        diffs = [k for k in _WORKLOAD_KEYS if cfg[k] != configs[0][k]]
        if diffs:
            raise ConfigError(f"sweep config {i} changes the workload: "
                              + ", ".join(diffs))

    logs = [[] for _ in configs]

    def one(i):
        rows, _counters, failures = run_experiment(
            configs[i], out_dir=None, log=logs[i].append)
        return rows, failures

    if jobs > 1 and len(configs) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(one, range(len(configs))))
    else:
        results = [one(i) for i in range(len(configs))]

    merged = []
    failures = []
    echo = []
    for i, (rows, fails) in enumerate(results):
        merged.extend(rows)
        failures.extend(f"config {i}: {f}" for f in fails)
        echo.extend(f"[{i}] {line}" for line in config_echo(configs[i]))
        for line in logs[i]:
            log(f"[{i}] {line}")
    if out_path:
        os.makedirs(os.path.dirname(out_path) or ".", exist_ok=True)
        with open(out_path, "w") as fh:
            fh.write(metrics.format_report(merged, echo))
    return merged, failures


def main(argv=None):
    ap = argparse.ArgumentParser(
        prog="opconv",
        description="Cycle-approximate simulation of opportunistic "
                    "computation reuse and forwarding on a many-core GPU.")
    ap.add_argument("--workload", choices=["lenet5", "alexnet", "custom"],
                    help="layer set to simulate (default lenet5)")
    ap.add_argument("--scheme", choices=list(SCHEMES) + ["all"],
                    help="scheme to evaluate; 'all' runs every scheme")
    ap.add_argument("--preset", help="named bundle: " + ", ".join(sorted(PRESETS)))
    ap.add_argument("--shrink", type=int,
                    help="spatial shrink factor (0 = per-workload default)")
    ap.add_argument("--seed", type=int, help="operand image seed")
    ap.add_argument("--verify", action=argparse.BooleanOptionalAction,
                    help="check outputs against the reference convolution")
    ap.add_argument("--characterize", action="store_true",
                    help="also write per-layer block-pair reuse histograms")
    ap.add_argument("--out", default="results", help="output directory")
    ap.add_argument("--config", help="key = value config file")
    args = ap.parse_args(argv)

    try:
        cfg = resolve_config(args)
        _, _, failures = run_experiment(cfg, args.out,
                                        characterize=args.characterize)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if failures:
        for f in failures:
            print(f"verification failed: {f}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
