"""Command line entry point: train, compare, and plot.

Configs are flat JSON objects.  Every key has a default; an empty config with
just a problem id runs that benchmark at its published parameters.  Unknown
keys are hard errors so a typo never silently falls back to a default.

  mfcscore train   --config cfg.json [--out DIR] [--mode score|fbsde]
  mfcscore compare --config cfg.json [--out DIR] [--seeds K]
  mfcscore plot    report.json [...] [--out DIR]

Exit codes: 0 success, 2 invalid config or missing input, 3 divergence
(partial artifacts are still written).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import replace

import numpy as np

from . import kde, metrics, net, svgplot, training
from .problems import PROBLEM_IDS, build_problem

TRAIN_KEYS = {
    "mode",
    "seed",
    "k_end",
    "learning_rate",
    "batch",
    "n_steps",
    "bandwidth",
    "width",
    "score_detach",
    "validation_size",
    "beta1",
    "beta2",
    "adam_eps",
}
RUN_KEYS = {"problem", "out", "plot", "seeds"}
PROBLEM_KEYS = {
    "entropy1d": {"gamma", "horizon"},
    "entropy2d": {"gamma", "horizon"},
    "lq1d": {"beta", "gamma", "horizon"},
    "lq2d": {"beta", "gamma", "horizon"},
    "systemic": {
        "a",
        "q",
        "eps",
        "c",
        "sigma",
        "horizon",
        "rho0_mean",
        "rho0_std",
        "riccati_steps",
    },
}

# Published per-problem hyperparameters; everything else shares one default.
TABLE_DEFAULTS = {
    "entropy1d": {"learning_rate": 0.02, "bandwidth": 0.35, "batch": 200},
    "entropy2d": {"learning_rate": 0.1, "bandwidth": 0.4, "batch": 1000},
    "lq1d": {"learning_rate": 0.1, "bandwidth": 0.35, "batch": 200},
    "lq2d": {"learning_rate": 0.1, "bandwidth": 0.4, "batch": 1000},
    "systemic": {"learning_rate": 0.02, "bandwidth": 0.3, "batch": 400},
}
SHARED_DEFAULTS = {
    "mode": "score",
    "seed": 0,
    "k_end": 200,
    "n_steps": 10,
    "width": 30,
    "score_detach": False,
    "validation_size": None,
    "beta1": 0.9,
    "beta2": 0.999,
    "adam_eps": 1.0e-8,
    "seeds": 5,
    "plot": False,
    "out": None,
}

_INT_KEYS = {"seed", "k_end", "batch", "n_steps", "width", "seeds", "riccati_steps"}
_BOOL_KEYS = {"plot", "score_detach"}


class ConfigError(Exception):
    pass


def load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise ConfigError("config must be a JSON object")
    for key, val in obj.items():
        if isinstance(val, (dict, list)):
            raise ConfigError(f"config key {key!r} must be a flat scalar value")
    return obj


def resolve_config(raw: dict, mode=None, out=None, seeds=None):
    """Merge defaults, validate keys, and build (problem, TrainConfig, resolved)."""

    cfg = dict(raw)
    if mode is not None:
        cfg["mode"] = mode
    if seeds is not None:
        cfg["seeds"] = seeds
    if out is not None:
        cfg["out"] = out

    problem_id = cfg.get("problem")
    if problem_id is None:
        raise ConfigError("missing problem id (set 'problem' in the config)")
    if problem_id not in PROBLEM_IDS:
        raise ConfigError(
            f"unknown problem id {problem_id!r} (known: {', '.join(PROBLEM_IDS)})"
        )

    allowed = RUN_KEYS | TRAIN_KEYS | PROBLEM_KEYS[problem_id]
    unknown = sorted(set(cfg) - allowed)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")

    resolved = dict(SHARED_DEFAULTS)
    resolved.update(TABLE_DEFAULTS[problem_id])
    resolved["problem"] = problem_id
    resolved.update(cfg)

    for key in _INT_KEYS & set(resolved):
        val = resolved[key]
        if val is not None and (isinstance(val, bool) or not isinstance(val, int)):
            raise ConfigError(f"config key {key!r} must be an integer")
    for key in _BOOL_KEYS:
        if not isinstance(resolved[key], bool):
            raise ConfigError(f"config key {key!r} must be a boolean")
    if resolved["validation_size"] is not None and not isinstance(
        resolved["validation_size"], int
    ):
        raise ConfigError("config key 'validation_size' must be an integer")
    if resolved["seeds"] < 1:
        raise ConfigError("config key 'seeds' must be at least 1")

    overrides = {k: resolved[k] for k in PROBLEM_KEYS[problem_id] if k in cfg}
    try:
        problem = build_problem(problem_id, **overrides)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid problem parameters: {exc}") from exc
    for key in sorted(PROBLEM_KEYS[problem_id]):
        val = getattr(problem, key)
        resolved[key] = val if isinstance(val, int) else float(val)

    try:
        tcfg = training.TrainConfig(
            mode=resolved["mode"],
            k_end=resolved["k_end"],
            learning_rate=resolved["learning_rate"],
            batch=resolved["batch"],
            n_steps=resolved["n_steps"],
            bandwidth=resolved["bandwidth"],
            seed=resolved["seed"],
            width=resolved["width"],
            score_detach=resolved["score_detach"],
            beta1=resolved["beta1"],
            beta2=resolved["beta2"],
            adam_eps=resolved["adam_eps"],
            validation_size=resolved["validation_size"],
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid training parameters: {exc}") from exc
    return problem, tcfg, resolved


def _write_curves(path, report: metrics.RunReport) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss", "err_phi", "err_grad", "err_lap"])
        for k, loss in enumerate(report.loss_curve):
            writer.writerow(
                [k, loss, report.err_phi[k], report.err_grad[k], report.err_lap[k]]
            )


def _write_traj(path, traj) -> None:
    d = traj.x[0].shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["node", "time", "particle"] + [f"x{i}" for i in range(d)] + ["y"]
        )
        for j, t in enumerate(traj.times):
            xj, yj = traj.x[j], traj.y[j]
            for i in range(xj.shape[0]):
                writer.writerow(
                    [j, float(t), i] + [float(v) for v in xj[i]] + [float(yj[i])]
                )


def _read_traj(path):
    """Inverse of _write_traj: (times, [x per node], [y per node])."""

    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        d = sum(1 for h in header if h.startswith("x"))
        nodes: dict[int, list] = {}
        times: dict[int, float] = {}
        for row in reader:
            j = int(row[0])
            times[j] = float(row[1])
            nodes.setdefault(j, []).append([float(v) for v in row[3 : 3 + d + 1]])
    order = sorted(nodes)
    t = np.array([times[j] for j in order])
    xs = [np.array(nodes[j])[:, :d] for j in order]
    ys = [np.array(nodes[j])[:, d] for j in order]
    return t, xs, ys


def _run_dir(resolved: dict) -> str:
    out = resolved.get("out")
    if out is None:
        out = os.path.join(
            "runs", f"{resolved['problem']}-{resolved['mode']}-seed{resolved['seed']}"
        )
    return out


def _write_run_artifacts(out: str, result: training.TrainResult) -> str:
    os.makedirs(out, exist_ok=True)
    report_path = os.path.join(out, "report.json")
    with open(report_path, "w") as fh:
        json.dump(result.report.to_jsonable(), fh, indent=2, sort_keys=True)
    _write_curves(os.path.join(out, "curves.csv"), result.report)
    if result.validation is not None:
        _write_traj(os.path.join(out, "traj.csv"), result.validation)
    training.save_checkpoint(os.path.join(out, "checkpoint.json"), result.params, result.adam)
    return report_path


def cmd_train(args) -> int:
    try:
        raw = load_config(args.config)
        problem, tcfg, resolved = resolve_config(raw, mode=args.mode, out=args.out)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = _run_dir(resolved)
    resolved["out"] = out

    result = training.train(problem, tcfg)
    result.report.config = resolved
    report_path = _write_run_artifacts(out, result)
    if resolved["plot"]:
        emit_plots([report_path], out)

    rep = result.report
    fe = rep.final_errors
    print(
        f"{rep.problem} d={rep.dim} mode={rep.mode} seed={rep.seed} "
        f"status={rep.status} err_phi={fe['phi']:.4f} err_grad={fe['grad']:.4f} "
        f"err_lap={fe['lap']:.4f} w2={rep.w2_terminal:.4e}"
    )
    print(f"artifacts written to {out}")
    return 0 if rep.status == "ok" else 3


def cmd_compare(args) -> int:
    try:
        raw = load_config(args.config)
        problem, tcfg, resolved = resolve_config(raw, out=args.out, seeds=args.seeds)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = resolved.get("out") or os.path.join("runs", f"{resolved['problem']}-compare")
    resolved["out"] = out
    os.makedirs(out, exist_ok=True)

    n_seeds = resolved["seeds"]
    base_seed = resolved["seed"]
    per_mode: dict[str, list[metrics.RunReport]] = {"score": [], "fbsde": []}
    any_diverged = False
    for run_mode in ("score", "fbsde"):
        for i in range(n_seeds):
            seed = base_seed + i
            sub_cfg = replace(tcfg, mode=run_mode, seed=seed)
            result = training.train(problem, sub_cfg)
            sub_resolved = dict(resolved, mode=run_mode, seed=seed)
            sub_out = os.path.join(out, f"{run_mode}_seed{seed}")
            sub_resolved["out"] = sub_out
            result.report.config = sub_resolved
            _write_run_artifacts(sub_out, result)
            per_mode[run_mode].append(result.report)
            if result.report.status != "ok":
                any_diverged = True
            fe = result.report.final_errors
            print(
                f"{run_mode} seed={seed} status={result.report.status} "
                f"err_phi={fe['phi']:.4f} w2={result.report.w2_terminal:.4e}"
            )

    n_floor = resolved["validation_size"] or 1000 * problem.dim
    noise_floor = metrics.systemic_error(problem, n_floor, base_seed)

    summary: dict = {
        "problem": resolved["problem"],
        "seeds": [base_seed + i for i in range(n_seeds)],
        "systemic_error": noise_floor,
        "modes": {},
    }
    for run_mode, reports in per_mode.items():
        finals = {
            key: [r.final_errors[key] for r in reports] for key in ("phi", "grad", "lap")
        }
        w2s = [r.w2_terminal for r in reports]
        summary["modes"][run_mode] = {
            "mean_errors": {k: float(np.mean(v)) for k, v in finals.items()},
            "mean_w2": float(np.mean(w2s)),
            "per_seed_errors": finals,
            "per_seed_w2": w2s,
            "statuses": [r.status for r in reports],
        }

    with open(os.path.join(out, "comparison.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    with open(os.path.join(out, "comparison.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "score", "fbsde"])
        for key in ("phi", "grad", "lap"):
            writer.writerow(
                [
                    f"err_{key}",
                    summary["modes"]["score"]["mean_errors"][key],
                    summary["modes"]["fbsde"]["mean_errors"][key],
                ]
            )
        writer.writerow(
            ["w2", summary["modes"]["score"]["mean_w2"], summary["modes"]["fbsde"]["mean_w2"]]
        )
        writer.writerow(["systemic_error", noise_floor, noise_floor])

    print(f"comparison written to {out}")
    return 3 if any_diverged else 0


def _problem_from_report(report: dict):
    cfg = report.get("config", {})
    problem_id = cfg.get("problem", report["problem"])
    if problem_id not in PROBLEM_IDS:
        if report["problem"] == "entropy":
            problem_id = "entropy1d" if report["dim"] == 1 else "entropy2d"
        elif report["problem"] == "lq":
            problem_id = "lq1d" if report["dim"] == 1 else "lq2d"
        else:
            problem_id = "systemic"
    overrides = {k: cfg[k] for k in PROBLEM_KEYS[problem_id] if k in cfg}
    return build_problem(problem_id, **overrides)


def _grid_1d(mean, cov, half_widths=4.0, n=201):
    lo = float(mean[0] - half_widths * np.sqrt(cov[0, 0]))
    hi = float(mean[0] + half_widths * np.sqrt(cov[0, 0]))
    return np.linspace(lo, hi, n)


def emit_plots(report_paths: list[str], out: str) -> list[str]:
    """Render training curves plus per-problem diagnostics; return file paths."""

    reports = []
    for path in report_paths:
        with open(path) as fh:
            reports.append(json.load(fh))
    os.makedirs(out, exist_ok=True)
    written: list[str] = []

    curves = {
        key: [r[key] for r in reports if r[key]]
        for key in ("loss_curve", "err_phi", "err_grad", "err_lap")
    }
    plot = svgplot.LinePlot(
        title=f"training, {reports[0]['problem']} {reports[0]['dim']}d",
        x_label="step",
        y_label="loss / rel. error",
        log_y=True,
    )
    labels = {
        "loss_curve": "loss",
        "err_phi": "err phi",
        "err_grad": "err grad",
        "err_lap": "err lap",
    }
    for key, series in curves.items():
        if not series:
            continue
        n = min(len(c) for c in series)
        stack = np.array([c[:n] for c in series])
        steps = np.arange(n)
        if stack.shape[0] > 1:
            plot.add_band(steps, stack.min(axis=0), stack.max(axis=0))
        plot.add(steps, stack.mean(axis=0), labels[key])
    path = os.path.join(out, "training_curve.svg")
    plot.save(path)
    written.append(path)

    first = reports[0]
    first_dir = os.path.dirname(os.path.abspath(report_paths[0]))
    problem = _problem_from_report(first)
    bandwidth = first.get("config", {}).get(
        "bandwidth", TABLE_DEFAULTS.get(first.get("config", {}).get("problem", ""), {}).get("bandwidth", 0.35)
    )

    ckpt_path = os.path.join(first_dir, "checkpoint.json")
    traj_path = os.path.join(first_dir, "traj.csv")
    have_ckpt = os.path.exists(ckpt_path)
    have_traj = os.path.exists(traj_path)

    if have_ckpt and problem.dim == 1:
        params, _ = training.load_checkpoint(ckpt_path)
        wrapper = problem.make_wrapper()
        mean0, cov0 = problem.exact_moments(0.0)
        grid = _grid_1d(mean0, cov0)
        pts = grid[:, None]
        plot = svgplot.LinePlot(
            title="phi(0, x)", x_label="x", y_label="phi", log_y=False
        )
        plot.add(grid, problem.exact_phi(0.0, pts), "exact")
        plot.add(grid, net.phi_eval(params, wrapper, 0.0, pts), "net")
        path = os.path.join(out, "phi0.svg")
        plot.save(path)
        written.append(path)

    if have_traj:
        times, xs, ys = _read_traj(traj_path)
        t_end = float(times[-1])
        x_end = xs[-1]
        if problem.dim == 1:
            mean_t, cov_t = problem.exact_moments(t_end)
            grid = _grid_1d(mean_t, cov_t)
            pts = grid[:, None]
            cloud = kde.KdeCloud(x_end, bandwidth)

            plot = svgplot.LinePlot(
                title="density at t=T", x_label="x", y_label="rho", log_y=False
            )
            plot.add(grid, problem.exact_density(t_end, pts), "exact")
            plot.add(grid, kde.density_at(cloud, pts), "kde of particles")
            path = os.path.join(out, "density_T.svg")
            plot.save(path)
            written.append(path)

            plot = svgplot.LinePlot(
                title="score at t=T", x_label="x", y_label="score", log_y=False
            )
            plot.add(grid, problem.exact_score(t_end, pts)[:, 0], "exact")
            plot.add(grid, kde.score_at(cloud, pts)[:, 0], "kde of particles")
            path = os.path.join(out, "score_T.svg")
            plot.save(path)
            written.append(path)

        if problem.name == "lq":
            emp = np.array([float(np.mean(np.var(xj, axis=0, ddof=1))) for xj in xs])
            exact = np.array([problem.exact_moments(float(t))[1][0, 0] for t in times])
            plot = svgplot.LinePlot(
                title="population variance", x_label="t", y_label="var", log_y=False
            )
            plot.add(times, exact, "exact")
            plot.add(times, emp, "particles")
            path = os.path.join(out, "variance.svg")
            plot.save(path)
            written.append(path)

        if problem.dim == 2:
            plot = svgplot.LinePlot(
                title="particles at t=0 and t=T", x_label="x0", y_label="x1"
            )
            plot.add_points(xs[0][:, 0], xs[0][:, 1], "t=0")
            plot.add_points(x_end[:, 0], x_end[:, 1], "t=T")
            path = os.path.join(out, "scatter.svg")
            plot.save(path)
            written.append(path)

            mean_t, cov_t = problem.exact_moments(t_end)
            sd = float(np.sqrt(np.max(np.diag(cov_t))))
            g0 = np.linspace(mean_t[0] - 3.0 * sd, mean_t[0] + 3.0 * sd, 41)
            g1 = np.linspace(mean_t[1] - 3.0 * sd, mean_t[1] + 3.0 * sd, 41)
            mesh = np.stack(np.meshgrid(g0, g1, indexing="ij"), axis=-1).reshape(-1, 2)
            exact_z = problem.exact_density(t_end, mesh).reshape(len(g0), len(g1))
            cloud = kde.KdeCloud(x_end, bandwidth)
            kde_z = kde.density_at(cloud, mesh).reshape(len(g0), len(g1))
            plot = svgplot.LinePlot(
                title="density contours at t=T", x_label="x0", y_label="x1"
            )
            peak = float(exact_z.max())
            for frac in (0.75, 0.4, 0.1):
                plot.add_contour(g0, g1, exact_z, frac * peak, "exact" if frac == 0.75 else "")
            for frac in (0.75, 0.4, 0.1):
                plot.add_contour(g0, g1, kde_z, frac * peak, "kde" if frac == 0.75 else "")
            path = os.path.join(out, "density_contours.svg")
            plot.save(path)
            written.append(path)

    return written


def cmd_plot(args) -> int:
    paths = list(args.reports)
    if not paths and args.config:
        try:
            raw = load_config(args.config)
            _, _, resolved = resolve_config(raw, out=args.out)
        except ConfigError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        paths = [os.path.join(_run_dir(resolved), "report.json")]
    if not paths:
        print("error: no report paths given (pass report.json files or --config)", file=sys.stderr)
        return 2
    for path in paths:
        if not os.path.exists(path):
            print(f"error: missing report {path}", file=sys.stderr)
            return 2
    out = args.out or os.path.dirname(os.path.abspath(paths[0]))
    written = emit_plots(paths, out)
    for path in written:
        print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mfcscore",
        description="Mean field control via a neural HJB approximation "
        "trained on forward-backward score dynamics.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run one training job")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--out", default=None)
    p_train.add_argument("--mode", choices=("score", "fbsde"), default=None)
    p_train.set_defaults(func=cmd_train)

    p_cmp = sub.add_parser("compare", help="score vs fbsde over several seeds")
    p_cmp.add_argument("--config", required=True)
    p_cmp.add_argument("--out", default=None)
    p_cmp.add_argument("--seeds", type=int, default=None)
    p_cmp.set_defaults(func=cmd_compare)

    p_plot = sub.add_parser("plot", help="render SVG diagnostics from reports")
    p_plot.add_argument("reports", nargs="*")
    p_plot.add_argument("--config", default=None)
    p_plot.add_argument("--out", default=None)
    p_plot.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
