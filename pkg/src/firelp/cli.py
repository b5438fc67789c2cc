"""Command-line entry point.

Every run is driven by one YAML config (all keys optional)::

    data:
      panel: panel.csv            # county,period,<series...>
      attributes: attributes.csv  # county,<attribute...>
      adjacency: adjacency.txt    # id_a,id_b edge list
      scale: {burn: 1.0}          # multiply series at ingestion
    model:
      outcome: emp
      shock: burn
      horizons: 36
      outcome_transform: log      # or level
      outcome_lags: 24            # default 24 monthly / 2 annual
      shock_lags: 24
      outcome_lag_form: growth    # or level
      controls: [{series: smoke, lags: 24, log: false}]
      fe: [county, period]
      state: {series: unemp, kind: county_percentile, p: 70, positive_only: false}
      sample: [{kind: region, attribute: region, value: West}]
      spatial: {lags: 24, second_order: true, row_normalize: false}
      clean_controls: {window: 36, treated_threshold: 0.0}
    inference:
      bandwidth: null             # null -> h + 1
      small_sample: true
      ci_level: 0.95
      impulse_size: 13.1
      include_impact: false
      cumulative_horizon: null    # null -> model.horizons
      jackknife: {K: 1000, drop: 0.05, method: auto}
    hei: {L: 36, irf: null, projection: null}
    synth: {n_counties: 500, ...}   # any DgpConfig field except seed
    truth: null                   # truth_irf.csv for a recovery report
    recovery_z: 4.0
    output: out
    seed: 0
    workers: 1

``--set a.b=value`` overrides one key (value parsed as YAML). The state,
spatial and clean-control blocks only take effect with the matching
``irf`` flag. Exit status is 0 on success, 1 for estimation failures and 2
for input or configuration errors; failures print one JSON line on stderr.
"""
from __future__ import annotations

import argparse
import copy
import json
import os
import sys
from dataclasses import replace

import numpy as np
import yaml

from . import hei as hei_mod
from .design import Control, DesignBuilder, ModelSpec, SampleFilter, SpatialRule, StateRule
from .errors import EstimationError, FireLPError, InputError
from .irf import (DEFAULT_IMPULSE, ImpulseResponse, block_jackknife, confidence_band,
                  cumulative_effect, estimate_irfs)
from .panel import (PanelSchema, atomic_write, format_float, format_period, load_attributes,
                    load_panel, write_attributes, write_panel)
from .spatial import load_adjacency, read_edge_list
from .synth import DgpConfig, generate

IRF_HEADER = "horizon,beta,se,scaled_beta,lo,hi"

DEFAULTS = {
    "data": {"panel": None, "attributes": None, "adjacency": None, "scale": {}},
    "model": {"outcome": "emp", "shock": "burn", "horizons": 36},
    "inference": {"bandwidth": None, "small_sample": True, "ci_level": 0.95,
                  "impulse_size": DEFAULT_IMPULSE, "include_impact": False,
                  "cumulative_horizon": None,
                  "jackknife": {"K": 1000, "drop": 0.05, "method": "auto"}},
    "hei": {"L": 36, "irf": None, "projection": None},
    "synth": {},
    "truth": None,
    "recovery_z": 4.0,
    "output": "out",
    "seed": 0,
    "workers": 1,
}


class ConfigError(InputError):
    def __init__(self, message: str, path: str | None = None):
        super().__init__(message)
        self.path = path


# --- config ---------------------------------------------------------------

def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _apply_override(cfg: dict, item: str) -> None:
    key, sep, raw = item.partition("=")
    if not sep or not key:
        raise ConfigError(f"--set expects key=value, got {item!r}")
    node = cfg
    parts = key.split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"--set {key}: {p!r} is not a mapping")
    node[parts[-1]] = yaml.safe_load(raw)


def load_config(path: str | None, overrides=()) -> dict:
    """Defaults, then the YAML file, then ``key=value`` overrides.

    Relative paths in the config resolve against the config file's
    directory (the working directory when there is no file).
    """
    cfg = copy.deepcopy(DEFAULTS)
    base_dir = os.getcwd()
    if path is not None:
        try:
            with open(path) as fh:
                user = yaml.safe_load(fh) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}", path) from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"invalid YAML in {path}: {exc}", path) from None
        if not isinstance(user, dict):
            raise ConfigError(f"config {path} must be a mapping", path)
        unknown = set(user) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}", path)
        cfg = _merge(cfg, user)
        base_dir = os.path.dirname(os.path.abspath(path))
    for item in overrides:
        _apply_override(cfg, item)
    for key in ("panel", "attributes", "adjacency"):
        p = cfg["data"].get(key)
        if p is not None and not os.path.isabs(p):
            cfg["data"][key] = os.path.join(base_dir, p)
    for section, key in (("hei", "irf"), ("hei", "projection")):
        p = cfg[section].get(key)
        if p is not None and not os.path.isabs(p):
            cfg[section][key] = os.path.join(base_dir, p)
    for key in ("truth", "output"):
        if cfg[key] is not None and not os.path.isabs(cfg[key]):
            cfg[key] = os.path.join(base_dir, cfg[key])
    return cfg


def _require(path: str | None, what: str) -> str:
    if path is None:
        raise ConfigError(f"config names no {what} file (data.{what})")
    if not os.path.exists(path):
        raise ConfigError(f"{what} file not found: {path}", path)
    return path


def _read_data(cfg: dict, need_adjacency: bool = False):
    data = cfg["data"]
    panel_path = _require(data.get("panel"), "panel")
    panel = load_panel(panel_path, PanelSchema(scale=data.get("scale") or {}))
    if data.get("attributes") is not None:
        panel = load_attributes(_require(data["attributes"], "attributes"), panel)
    w = None
    if need_adjacency:
        edges = read_edge_list(_require(data.get("adjacency"), "adjacency"))
        w = load_adjacency(edges, panel.counties)
    return panel, w


def _model_spec(cfg: dict, *, state=False, spatial=None, clean=False) -> ModelSpec:
    m = dict(cfg["model"])
    known = {"outcome", "shock", "horizons", "outcome_transform", "outcome_lags", "shock_lags",
             "outcome_lag_form", "controls", "fe", "state", "sample", "spatial", "clean_controls"}
    unknown = set(m) - known
    if unknown:
        raise ConfigError(f"unknown model keys: {sorted(unknown)}")
    try:
        controls = tuple(Control(**c) for c in m.get("controls") or ())
        sample = tuple(SampleFilter(**s) for s in m.get("sample") or ())
        if clean:
            sample += (SampleFilter("clean_control", **(m.get("clean_controls") or {})),)
        rule = StateRule(**(m.get("state") or {"series": "unemp"})) if state else None
        sp = SpatialRule(spatial, **(m.get("spatial") or {})) if spatial is not None else None
    except TypeError as exc:
        raise ConfigError(f"model config: {exc}") from None
    return ModelSpec(
        outcome=m["outcome"], shock=m["shock"], horizons=int(m["horizons"]),
        outcome_transform=m.get("outcome_transform", "log"),
        outcome_lags=m.get("outcome_lags"), shock_lags=m.get("shock_lags"),
        outcome_lag_form=m.get("outcome_lag_form", "growth"), controls=controls,
        fe=tuple(m.get("fe", ("county", "period"))), state=rule, sample=sample, spatial=sp,
    )


# --- output ---------------------------------------------------------------

def irf_table(irf: ImpulseResponse) -> str:
    lo, hi = confidence_band(irf, irf.ci_level)
    lines = [IRF_HEADER]
    for h in range(irf.H + 1):
        vals = (irf.beta[h], irf.se[h], irf.scaled_beta[h], lo[h], hi[h])
        lines.append(f"{h}," + ",".join(format_float(v) for v in vals))
    return "\n".join(lines) + "\n"


def read_irf_table(path: str, impulse_size: float) -> ImpulseResponse:
    """Read a table written by :func:`irf_table`."""
    try:
        arr = np.genfromtxt(path, delimiter=",", names=True, ndmin=1)
    except OSError:
        raise ConfigError(f"IRF file not found: {path}", path) from None
    if arr.dtype.names is None or not {"beta", "se"} <= set(arr.dtype.names):
        raise ConfigError(f"{path} is not an IRF table ({IRF_HEADER})", path)
    return ImpulseResponse("irf", arr["beta"], arr["se"], impulse_size)


def key_value_block(items) -> str:
    lines = []
    for k, v in items:
        if isinstance(v, (float, np.floating)):
            v = format_float(v)
        lines.append(f"{k}: {v}")
    return "\n".join(lines) + "\n"


def _write(outdir: str, name: str, text: str) -> str:
    path = os.path.join(outdir, name)
    os.makedirs(os.path.dirname(path), exist_ok=True)
    atomic_write(path, text)
    return path


def _term_file(term: str) -> str:
    return f"irf_{term}.csv"


def _dump_designs(builder: DesignBuilder, horizons, outdir: str, prefix: str) -> None:
    panel, shock = builder.panel, builder.spec.shock
    raw = panel[shock]
    for h in horizons:
        d = builder.design(h)
        cols = list(d.columns)
        extra = [] if shock in cols else [shock]
        lines = [",".join(["county", "period", "y", *cols, *extra])]
        for r in range(d.n_obs):
            c, t = int(d.county[r]), int(d.period[r])
            cells = [panel.counties[c], format_period(int(panel.periods[t]), panel.frequency),
                     format_float(d.y[r])]
            cells += [format_float(v) for v in d.X[r]]
            cells += [format_float(raw[c, t])] if extra else []
            lines.append(",".join(cells))
        _write(outdir, f"{prefix}designs/h{h}.csv", "\n".join(lines) + "\n")


# --- truth and recovery ---------------------------------------------------

def truth_table(truth, H: int, impulse_size: float) -> str:
    cols = [("truth", truth.irf(H, "base", impulse_size))]
    if truth.high_kernel is not None:
        cols.append(("truth_high", truth.irf(H, "high", impulse_size)))
    if truth.group_kernel is not None:
        cols.append(("truth_group", truth.irf(H, "group", impulse_size)))
    lines = [",".join(["horizon", *(n for n, _ in cols)])]
    for h in range(H + 1):
        lines.append(f"{h}," + ",".join(format_float(v[h]) for _, v in cols))
    return "\n".join(lines) + "\n"


def _read_truth(path: str) -> dict[str, np.ndarray]:
    if not os.path.exists(path):
        raise ConfigError(f"truth file not found: {path}", path)
    arr = np.genfromtxt(path, delimiter=",", names=True, ndmin=1)
    return {n: np.asarray(arr[n], dtype=float) for n in arr.dtype.names if n != "horizon"}


def _truth_column(term: str, shock: str, group: str | None) -> str:
    if term == f"{shock}_high":
        return "truth_high"
    if group == "above":
        return "truth_group"
    return "truth"


def recovery_report(results: dict[str, ImpulseResponse], truth: dict[str, np.ndarray],
                    shock: str, z_max: float, group: str | None = None) -> tuple[str, bool]:
    """PASS when every horizon's estimate is within ``z_max`` standard errors."""
    lines, ok_all = [], True
    for term, irf in results.items():
        if not (term == shock or term.startswith(f"{shock}_")):
            continue
        col = _truth_column(term, shock, group)
        if col not in truth:
            continue
        t = truth[col]
        H = min(irf.H, t.size - 1)
        err = irf.scaled_beta[:H + 1] - t[:H + 1]
        se = irf.scaled_se[:H + 1]
        z = np.abs(err) / np.where(se > 0, se, np.inf)
        z[(se == 0) & (err != 0)] = np.inf
        ok = bool(np.all(z <= z_max))
        ok_all &= ok
        lines.append(f"{term}: {'PASS' if ok else 'FAIL'} against {col}; "
                     f"max |z| {format_float(float(z.max()))} at h={int(z.argmax())}; "
                     f"rmse {format_float(float(np.sqrt(np.mean(err ** 2))))}")
    if not lines:
        return "no comparable paths\n", False
    lines.append(f"overall: {'PASS' if ok_all else 'FAIL'}")
    return "\n".join(lines) + "\n", ok_all


# --- subcommands ----------------------------------------------------------

def _irf_runs(cfg: dict, args):
    """The panel and (output prefix, spec, median group) for each IRF run."""
    need_w = bool(getattr(args, "spatial", False))
    panel, w = _read_data(cfg, need_adjacency=need_w)
    spec = _model_spec(cfg, state=getattr(args, "state", False), spatial=w,
                       clean=getattr(args, "clean_controls", False))
    if getattr(args, "region", None) is not None:
        spec = spec.with_filter(SampleFilter("region", attribute="region", value=args.region))
    if getattr(args, "split", None) is not None:
        if args.split not in panel.attributes:
            raise ConfigError(f"no county attribute {args.split!r} to split on")
        runs = [("above/", spec.with_filter(SampleFilter("above_median", attribute=args.split)), "above"),
                ("below/", spec.with_filter(SampleFilter("below_median", attribute=args.split)), "below")]
    else:
        runs = [("", spec, None)]
    return panel, runs


def cmd_irf(cfg: dict, args) -> int:
    inf = cfg["inference"]
    outdir = cfg["output"]
    panel, runs = _irf_runs(cfg, args)
    truth = _read_truth(cfg["truth"]) if cfg["truth"] else None
    reports, passed = [], True
    for prefix, spec, group in runs:
        builder = DesignBuilder(panel, spec)
        if args.dump_designs is not None:
            _dump_designs(builder, args.dump_designs, outdir, prefix)
        results = estimate_irfs(panel, spec, impulse_size=float(inf["impulse_size"]),
                                bandwidth=inf["bandwidth"], ci_level=float(inf["ci_level"]),
                                workers=int(cfg["workers"]),
                                small_sample=bool(inf["small_sample"]), builder=builder)
        for term, irf in results.items():
            _write(outdir, prefix + _term_file(term), irf_table(irf))
        if truth is not None:
            text, ok = recovery_report(results, truth, spec.shock, float(cfg["recovery_z"]), group)
            reports.append((prefix, text))
            passed &= ok
    if truth is not None:
        body = "".join(f"[{p.rstrip('/') or 'sample'}]\n{t}" if len(reports) > 1 else t
                       for p, t in reports)
        _write(outdir, "recovery.txt", body)
        print(f"recovery: {'PASS' if passed else 'FAIL'}")
    return 0


def _jackknife(cfg: dict, panel, spec: ModelSpec, H: int):
    inf = cfg["inference"]
    jk = inf["jackknife"]
    return block_jackknife(panel, spec, H, drop=float(jk["drop"]), K=int(jk["K"]),
                           seed=int(cfg["seed"]), impulse_size=float(inf["impulse_size"]),
                           method=jk.get("method", "auto"),
                           include_impact=bool(inf["include_impact"]))


def cmd_jackknife(cfg: dict, args) -> int:
    panel, _ = _read_data(cfg)
    spec = _model_spec(cfg)
    res = _jackknife(cfg, panel, spec, spec.horizons)
    H = res.H
    lines = [",".join(["horizon", *(f"h{j}" for j in range(H + 1))])]
    for i in range(H + 1):
        lines.append(f"h{i}," + ",".join(format_float(v) for v in res.cov[i]))
    outdir = cfg["output"]
    _write(outdir, "jackknife_cov.csv", "\n".join(lines) + "\n")
    _write(outdir, "jackknife.txt", key_value_block([
        ("K", res.K), ("drop", res.drop), ("seed", res.seed), ("n_units", res.n_units),
        ("n_drop", res.n_drop), ("failures", res.failures),
        ("sd_phi", res.sd_phi()), ("sd_phi_unscaled", res.sd_phi_raw()),
    ]))
    return 0


def cmd_cumulative(cfg: dict, args) -> int:
    inf = cfg["inference"]
    panel, _ = _read_data(cfg)
    spec = _model_spec(cfg)
    H = spec.horizons if inf["cumulative_horizon"] is None else int(inf["cumulative_horizon"])
    builder = DesignBuilder(panel, spec)
    irf = estimate_irfs(panel, spec, spec.horizons, impulse_size=float(inf["impulse_size"]),
                        bandwidth=inf["bandwidth"], workers=int(cfg["workers"]),
                        small_sample=bool(inf["small_sample"]),
                        builder=builder)[spec.shock]
    ce = cumulative_effect(irf, H, bool(inf["include_impact"]))
    items = [("phi", ce.phi), ("H", ce.H), ("include_impact", str(ce.include_impact).lower())]
    if not args.no_jackknife:
        res = _jackknife(cfg, panel, spec, H)
        items += [("sd", res.sd_phi(H)), ("K", res.K), ("drop", res.drop), ("seed", res.seed),
                  ("n_units", res.n_units), ("n_drop", res.n_drop), ("failures", res.failures)]
    outdir = cfg["output"]
    _write(outdir, _term_file(spec.shock), irf_table(irf))
    _write(outdir, "cumulative.txt", key_value_block(items))
    return 0


def _read_projection(path: str):
    if not os.path.exists(path):
        raise ConfigError(f"projection file not found: {path}", path)
    arr = np.genfromtxt(path, delimiter=",", names=True, ndmin=1, dtype=None, encoding="utf-8")
    if arr.dtype.names is None or "burn" not in arr.dtype.names:
        raise ConfigError(f"{path} needs a 'burn' column", path)
    return np.asarray(arr["burn"], dtype=float), arr["period"] if "period" in arr.dtype.names else None


def cmd_hei(cfg: dict, args) -> int:
    inf, hc = cfg["inference"], cfg["hei"]
    panel, _ = _read_data(cfg)
    L = int(hc["L"])
    impulse = float(inf["impulse_size"])
    if hc.get("irf"):
        irf = read_irf_table(hc["irf"], impulse)
    else:
        spec = _model_spec(cfg)
        H = max(spec.horizons, L)
        irf = estimate_irfs(panel, replace(spec, horizons=H), H, impulse_size=impulse,
                            bandwidth=inf["bandwidth"], workers=int(cfg["workers"]),
                            small_sample=bool(inf["small_sample"]))[spec.shock]
        _write(cfg["output"], _term_file(spec.shock), irf_table(irf))
    for name in ("population", "region"):
        if name not in panel.attributes:
            raise ConfigError(f"hei needs the county attribute {name!r}")
    _, regional = hei_mod.panel_hei(panel, irf, cfg["model"].get("shock", "burn"), L)
    path = os.path.join(cfg["output"], "hei.csv")
    os.makedirs(cfg["output"], exist_ok=True)
    hei_mod.write_hei(regional, panel.periods, panel.frequency, path)
    if hc.get("projection"):
        burns, periods = _read_projection(hc["projection"])
        impact = hei_mod.project_hei(irf, burns, L)
        labels = [str(p) for p in periods] if periods is not None else [str(i) for i in range(burns.size)]
        lines = ["period,impact_pp"] + [f"{p},{format_float(v)}" for p, v in zip(labels, impact)]
        _write(cfg["output"], "hei_projection.csv", "\n".join(lines) + "\n")
    return 0


def cmd_synth(cfg: dict, args) -> int:
    params = dict(cfg["synth"])
    if "seed" in params:
        raise ConfigError("synth.seed is not a key; use the top-level seed")
    params["seed"] = int(cfg["seed"])
    dgp = DgpConfig.from_mapping(params)
    panel, truth = generate(dgp)
    outdir = cfg["output"]
    os.makedirs(outdir, exist_ok=True)
    write_panel(panel, os.path.join(outdir, "panel.csv"))
    write_attributes(panel, os.path.join(outdir, "attributes.csv"))
    w = truth.adjacency.matrix.tocoo()
    edges = sorted((int(i), int(j)) for i, j in zip(w.row, w.col) if i < j)
    lines = ["# rook contiguity on the synthetic grid"]
    lines += [f"{panel.counties[i]},{panel.counties[j]}" for i, j in edges]
    _write(outdir, "adjacency.txt", "\n".join(lines) + "\n")
    H = int(cfg["model"].get("horizons", 36))
    _write(outdir, "truth_irf.csv", truth_table(truth, H, float(cfg["inference"]["impulse_size"])))
    return 0


COMMANDS = {"irf": cmd_irf, "cumulative": cmd_cumulative, "jackknife": cmd_jackknife,
            "hei": cmd_hei, "synth": cmd_synth}


def _horizon_list(text: str) -> list[int]:
    try:
        out = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated horizons, got {text!r}")
    if any(h < 0 for h in out):
        raise argparse.ArgumentTypeError("horizons must be >= 0")
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="firelp", description=__doc__.split("\n")[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", help="YAML run configuration")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key (dotted path, YAML value)")
    common.add_argument("-o", "--output", help="output directory (overrides config)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("irf", parents=[common], help="estimate impulse responses")
    p.add_argument("--state", action="store_true", help="state-dependent responses")
    p.add_argument("--spatial", action="store_true", help="add neighbour shock terms")
    p.add_argument("--clean-controls", action="store_true", help="restrict to clean controls")
    p.add_argument("--split", metavar="ATTR", help="separate responses above/below the median")
    p.add_argument("--region", metavar="TAG", help="restrict to one region")
    p.add_argument("--dump-designs", type=_horizon_list, nargs="?", const=[0], metavar="H,...",
                   help="write the design rows for these horizons (default 0)")
    p.add_argument("--truth", help="truth_irf.csv to compare against")

    p = sub.add_parser("cumulative", parents=[common], help="cumulative effect with jackknife sd")
    p.add_argument("--no-jackknife", action="store_true", help="point value only")
    sub.add_parser("jackknife", parents=[common], help="jackknife covariance of the response path")
    sub.add_parser("hei", parents=[common], help="historical employment impact series")
    sub.add_parser("synth", parents=[common], help="write a synthetic panel and its truth")
    return parser


def _fail(exc: BaseException, code: int) -> int:
    payload = {"error": type(exc).__name__, "message": str(exc)}
    path = getattr(exc, "path", None) or getattr(exc, "filename", None)
    if path:
        payload["path"] = os.fspath(path)
    print(json.dumps(payload), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.set)
        if args.output is not None:
            cfg["output"] = args.output
        if getattr(args, "truth", None):
            cfg["truth"] = os.path.abspath(args.truth)
        if int(cfg["workers"]) < 1:
            raise ConfigError("workers must be >= 1")
        return COMMANDS[args.command](cfg, args)
    except EstimationError as exc:
        return _fail(exc, 1)
    except (InputError, OSError, ValueError, KeyError, TypeError) as exc:
        return _fail(exc, 2)
    except FireLPError as exc:
        return _fail(exc, 1)


if __name__ == "__main__":
    sys.exit(main())
