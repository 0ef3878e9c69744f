"""Experiment harness: run flows and sweeps from config files, plot, re-check.

Subcommands
-----------
run <config>            integrate every (sweep point x seed), write trajectory
                        CSVs, certificates, and a summary table
plot <run_dir>          emit per-run SVG loss curves (with the certified decay
                        envelope overlaid) plus a sweep overlay figure
certify <run_dir>       re-derive certificates from the stored CSVs alone and
                        compare against the stored certificate files
gen-data <config>       generate and persist the configured dataset

Exit codes: 0 success/certified, 1 usage or config error, 2 refusal or
certificate mismatch.  The ``NTKFLOW_OUT`` environment variable overrides the
root under which the configured output directory is created.

Config files are TOML.  Architecture keys: ``layers = [{kind, width}, ...]``,
``activation = "<name>"``, ``activation_params = [..]`` and, for gcn chains,
``graph = {knn_k = k}``.  The ``[dataset]``, ``[flow]``, ``[certificate]``
and ``[experiment]`` tables hold everything else; ``[experiment].sweep``
lists hidden-width vectors (dense/gcn) or layer counts (residual).
"""

from __future__ import annotations

import argparse
import difflib
import hashlib
import os
import sys
from pathlib import Path

import numpy as np

try:
    import tomllib as _toml
except ModuleNotFoundError:  # py3.10
    import tomli as _toml

from .activations import builtin
from .certificates import (certificate, parse_certificate, render_certificate)
from .datasets import (Dataset, gen_synthetic, graph_path_for, knn_graph,
                       load_dataset, save_dataset)
from .flow import (FlowConfig, integrate, load_trajectory_csv,
                   save_thetas, save_trajectory_csv)
from .networks import LayerSpec, build_network, init_params
from .svgplot import line_chart

__all__ = ["main", "main_entry", "ConfigError", "run_experiment",
           "plot_runs", "recheck_runs", "generate_data"]


class ConfigError(Exception):
    """Invalid configuration; message names the offending key or line."""


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _load_config(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, "rb") as fh:
            return _toml.load(fh)
    except _toml.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _require(table, key, where):
    if key not in table:
        raise ConfigError(f"missing key {where}.{key}" if where else f"missing key {key}")
    return table[key]


def _dataset_from_config(cfg, config_dir):
    ds = _require(cfg, "dataset", "")
    if "path" in ds:
        path = Path(ds["path"])
        if not path.is_absolute():
            path = config_dir / path
        data = load_dataset(path)
        dup = data.n - np.unique(data.inputs, axis=0).shape[0]
        if dup > 0:
            print(
                f"warning: dataset has {dup} duplicate input row(s); "
                "the positivity guarantee assumes an absolutely continuous "
                "input distribution",
                file=sys.stderr,
            )
    else:
        data = gen_synthetic(
            n=int(_require(ds, "n", "dataset")),
            N=int(_require(ds, "input_dim", "dataset")),
            M=int(_require(ds, "output_dim", "dataset")),
            radius=float(ds.get("radius", 1.0)),
            label_std=float(ds.get("label_std", 1.0)),
            seed=int(ds.get("seed", 0)),
        )
    if "graph" in cfg:
        k = int(_require(cfg["graph"], "knn_k", "graph"))
        data = Dataset(data.inputs, data.labels, knn_graph(data.inputs, k))
    return data


def _activation_from_config(cfg):
    name = _require(cfg, "activation", "")
    params = cfg.get("activation_params", [])
    try:
        return builtin(name, params)
    except ValueError as exc:
        raise ConfigError(f"activation: {exc}") from None


def _layers_from_config(cfg, data, sweep_point=None):
    """Materialize LayerSpecs; a sweep point replaces hidden widths or depth."""
    base = _require(cfg, "layers", "")
    if not base:
        raise ConfigError("layers must be non-empty")
    kinds = [t.get("kind", "dense") for t in base]
    widths = [int(_require(t, "width", "layers[]")) for t in base]
    kind = kinds[0]
    if any(k != kind for k in kinds):
        raise ConfigError("mixed layer kinds in one chain are not supported")

    if sweep_point is not None:
        if kind == "residual":
            if not isinstance(sweep_point, int):
                raise ConfigError("residual sweep entries must be layer counts")
            depth = sweep_point
            widths = [widths[0]] * depth
            kinds = ["residual"] * depth
        else:
            if not isinstance(sweep_point, (list, tuple)):
                raise ConfigError("dense/gcn sweep entries must be width lists")
            widths = [int(w) for w in sweep_point] + [data.M]
            kinds = [kind] * len(widths)

    specs = []
    if kind == "gcn":
        if data.graph is None:
            raise ConfigError("gcn layers require a graph = {knn_k = ...} table")
        chain = [data.N] + widths
        for i in range(len(widths)):
            specs.append(LayerSpec("gcn", chain[i], chain[i + 1], graph=data.graph))
    elif kind == "residual":
        for w in widths:
            specs.append(LayerSpec("residual", w, w))
    else:
        chain = [data.N] + widths
        for i in range(len(widths)):
            specs.append(LayerSpec("dense", chain[i], chain[i + 1]))
    return specs


def _flow_from_config(cfg):
    fl = cfg.get("flow", {})
    stride = fl.get("log_stride", 1)
    if isinstance(stride, float) and stride.is_integer() and stride >= 1.0:
        pass  # keep float strides as time intervals even when integral
    try:
        return FlowConfig(
            scheme=fl.get("scheme", "rk4"),
            step=float(fl.get("step", 1e-3)),
            horizon=float(fl.get("T", 0.1)),
            log_stride=stride,
            abs_tol=float(fl.get("abs_tol", 1e-9)),
            rel_tol=float(fl.get("rel_tol", 1e-9)),
            kink_refine=bool(fl.get("kink_refine", False)),
            store_thetas=True,
        )
    except ValueError as exc:
        raise ConfigError(f"flow: {exc}") from None


def _sweep_points(cfg):
    exp = cfg.get("experiment", {})
    return exp.get("sweep")


def _seeds(cfg):
    exp = cfg.get("experiment", {})
    seeds = _require(exp, "seeds", "experiment")
    if not seeds:
        raise ConfigError("experiment.seeds must be non-empty")
    return [int(s) for s in seeds]


def _out_root(cfg, config_path):
    exp = cfg.get("experiment", {})
    out = Path(exp.get("output_dir", "runs"))
    env = os.environ.get("NTKFLOW_OUT")
    if env:
        return Path(env) / out.name
    if not out.is_absolute():
        out = Path(config_path).parent / out
    return out


def _point_label(point):
    if point is None:
        return "base"
    if isinstance(point, int):
        return f"depth-{point}"
    return "hidden-" + "-".join(str(int(w)) for w in point)


def run_experiment(config_path):
    """Execute every (sweep point x seed) run; returns the process exit code.

    Nonzero (2) iff any over-parametrized run fails to certify; runs with
    P < nM are expected to be refused and do not affect the exit code.
    """
    config_path = Path(config_path)
    cfg = _load_config(config_path)
    data = _dataset_from_config(cfg, config_path.parent)
    activation = _activation_from_config(cfg)
    flow_cfg = _flow_from_config(cfg)
    tol_rel = float(cfg.get("certificate", {}).get("tol_rel", 1e-3))
    seeds = _seeds(cfg)
    points = _sweep_points(cfg)
    save_th = bool(cfg.get("experiment", {}).get("save_thetas", False))

    out = _out_root(cfg, config_path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.toml").write_bytes(config_path.read_bytes())
        save_dataset(data, out / "dataset.csv")
    except OSError as exc:
        raise ConfigError(f"cannot write to output dir {out}: {exc}") from None
    config_sha = _sha256(out / "config.toml")
    dataset_sha = _sha256(out / "dataset.csv")

    n_constraints = data.n * data.M
    summary = ["point,seed,P,nM,lambda0,status"]
    rows = []
    bad_overparam = False
    for point in (points if points else [None]):
        layers = _layers_from_config(cfg, data, point)
        net = build_network(layers, activation)
        label = _point_label(point)
        for seed in seeds:
            theta0 = init_params(net, seed)
            log = integrate(net, theta0, data, flow_cfg)
            cert = certificate(log, tol_rel, provenance={
                "config_sha256": config_sha,
                "dataset_sha256": dataset_sha,
                "seed": str(seed),
            })
            run_dir = out / "runs" / label / f"seed{seed}"
            run_dir.mkdir(parents=True, exist_ok=True)
            save_trajectory_csv(log, run_dir / "trajectory.csv")
            if save_th:
                save_thetas(log, run_dir / "thetas.txt")
            (run_dir / "certificate.txt").write_text(render_certificate(cert))
            summary.append(
                f"{label},{seed},{net.param_count},{n_constraints},"
                f"{repr(cert.lambda0)},{cert.status}"
            )
            rows.append((label, seed, net.param_count, n_constraints,
                         cert.lambda0, cert.status))
            if net.param_count >= n_constraints and not cert.certified:
                bad_overparam = True
    (out / "summary.csv").write_text("\n".join(summary) + "\n")
    print(f"{'point':<16}{'seed':<6}{'P':<8}{'nM':<8}{'lambda0':<16}status")
    for label, seed, p, nm, lam, status in rows:
        print(f"{label:<16}{seed:<6}{p:<8}{nm:<8}{lam:<16.6g}{status}")
    print(f"artifacts in {out}")
    return 2 if bad_overparam else 0


def _iter_run_dirs(root):
    root = Path(root)
    for traj in sorted(root.glob("runs/*/*/trajectory.csv")):
        yield traj.parent


def _layer_kind(root):
    cfg_path = Path(root) / "config.toml"
    if cfg_path.exists():
        try:
            cfg = _load_config(cfg_path)
            layers = cfg.get("layers", [])
            if layers:
                return layers[0].get("kind", "dense")
        except ConfigError:
            pass
    return "dense"


def plot_runs(root):
    """Per-run loss curves on a log scale plus one sweep overlay figure."""
    root = Path(root)
    run_dirs = list(_iter_run_dirs(root))
    if not run_dirs:
        raise ConfigError(f"no run artifacts under {root}")
    kind = _layer_kind(root)
    overlay = []
    for run_dir in run_dirs:
        log = load_trajectory_csv(run_dir / "trajectory.csv")
        t, l_vals = log.times, log.losses
        if kind == "residual" and len(t) > 2:
            # early transient dwarfs the rest of a residual-chain curve
            keep = max(1, int(0.01 * len(t)))
            t, l_vals = t[keep:], l_vals[keep:]
        series = [{"id": "loss", "x": t, "y": l_vals}]
        cert_path = run_dir / "certificate.txt"
        if cert_path.exists():
            cert = parse_certificate(cert_path.read_text())
            if cert.get("status") == "certified":
                lam = cert["lambda0"]
                env = log.losses[0] * np.exp(-2.0 * lam * log.times)
                e_t, e_v = log.times, env
                if kind == "residual" and len(e_t) > 2:
                    keep = max(1, int(0.01 * len(e_t)))
                    e_t, e_v = e_t[keep:], e_v[keep:]
                series.append({"id": "envelope", "x": e_t, "y": e_v,
                               "dash": "6,3", "color": "#d62728"})
        label = f"{run_dir.parent.name}/{run_dir.name}"
        line_chart(series, run_dir / "loss.svg", title=label,
                   x_label="t", y_label="loss", log_y=True)
        overlay.append({"id": label, "x": t, "y": l_vals})
    line_chart(overlay, root / "sweep.svg", title="loss curves",
               x_label="t", y_label="loss", log_y=True)
    print(f"wrote {len(run_dirs)} run figure(s) and {root / 'sweep.svg'}")
    return 0


def recheck_runs(root, tol=None):
    """Re-derive certificates from stored CSVs; compare against stored ones.

    Without --tol the stored tolerance is reused and the comparison is byte
    exact.  With --tol the rederived status only is compared (certified vs
    not).  Residual/loss consistency (|r|^2 = 2*loss) is validated first, so
    a tampered loss column is caught even though the envelope reads the
    residual column.
    """
    root = Path(root)
    run_dirs = list(_iter_run_dirs(root))
    if not run_dirs:
        raise ConfigError(f"no run artifacts under {root}")
    config_sha = _sha256(root / "config.toml") if (root / "config.toml").exists() else ""
    dataset_sha = _sha256(root / "dataset.csv") if (root / "dataset.csv").exists() else ""
    failures = 0
    for run_dir in run_dirs:
        name = f"{run_dir.parent.name}/{run_dir.name}"
        stored_path = run_dir / "certificate.txt"
        if not stored_path.exists():
            print(f"{name}: MISSING certificate")
            failures += 1
            continue
        stored = stored_path.read_text()
        stored_fields = parse_certificate(stored)
        log = load_trajectory_csv(run_dir / "trajectory.csv")
        # tamper check: the stacked residual norm squares to twice the loss
        gap = np.abs(log.residual_norms ** 2 - 2.0 * log.losses)
        scale = np.maximum(2.0 * np.abs(log.losses), 1e-12)
        if np.any(gap > 1e-9 * scale + 1e-12):
            bad = int(np.argmax(gap - 1e-9 * scale))
            print(f"{name}: MISMATCH loss/residual consistency broken at row {bad}")
            failures += 1
            continue
        use_tol = stored_fields.get("tol_rel", 1e-3) if tol is None else tol
        cert = certificate(log, use_tol, provenance={
            "config_sha256": config_sha,
            "dataset_sha256": dataset_sha,
            "seed": stored_fields.get("seed", ""),
        })
        if tol is None:
            rendered = render_certificate(cert)
            if rendered != stored:
                diff = "\n".join(difflib.unified_diff(
                    stored.splitlines(), rendered.splitlines(),
                    "stored", "rederived", lineterm="", n=1,
                ))
                print(f"{name}: MISMATCH\n{diff}")
                failures += 1
                continue
        else:
            if cert.certified != (stored_fields.get("status") == "certified"):
                print(f"{name}: MISMATCH status {stored_fields.get('status')} "
                      f"vs rederived {cert.status} at tol {use_tol}")
                failures += 1
                continue
        print(f"{name}: ok ({cert.status})")
    return 2 if failures else 0


def generate_data(config_path, out_path=None):
    config_path = Path(config_path)
    cfg = _load_config(config_path)
    data = _dataset_from_config(cfg, config_path.parent)
    if out_path is None:
        out_path = _out_root(cfg, config_path) / "dataset.csv"
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(data, out_path)
    print(f"wrote {out_path} (n={data.n}, N={data.N}, M={data.M}, "
          f"sha256={_sha256(out_path)})")
    if data.graph is not None:
        print(f"wrote {graph_path_for(out_path)} (m={data.graph.m})")
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="ntkflow",
        description="gradient-flow runs with NTK convergence certificates",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="execute a config")
    p_run.add_argument("config")
    p_plot = sub.add_parser("plot", help="draw SVG figures for a run dir")
    p_plot.add_argument("run_dir")
    p_cert = sub.add_parser("certify", help="re-check certificates in a run dir")
    p_cert.add_argument("run_dir")
    p_cert.add_argument("--tol", type=float, default=None)
    p_gen = sub.add_parser("gen-data", help="generate the configured dataset")
    p_gen.add_argument("config")
    p_gen.add_argument("--out", default=None)

    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code else 0
    try:
        if args.command == "run":
            return run_experiment(args.config)
        if args.command == "plot":
            return plot_runs(args.run_dir)
        if args.command == "certify":
            return recheck_runs(args.run_dir, args.tol)
        if args.command == "gen-data":
            return generate_data(args.config, args.out)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def main_entry():
    sys.exit(main())
