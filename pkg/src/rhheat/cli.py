"""Command line entry point: ``rhheat <command> CONFIG``.

Exit status: 0 success, 2 bad usage or configuration (including violated
theorem hypotheses), 3 a verified bound failed, 4 numerical failure.

Every CSV starts with one ``# {json}`` metadata line.  Output contains no
timestamps or run times so reruns are byte-identical.
"""

import argparse
import csv
from dataclasses import dataclass, field
import json
import math
import os
import sys

import numpy as np

from . import bounds, flow, heatkernel, sobolev
from .errors import LabError
from .geometry import CouplingSchedule, ManifoldConfig, Variant, curvature, fourier_profile

EXIT_OK, EXIT_CONFIG, EXIT_VERIFY, EXIT_NUMERIC = 0, 2, 3, 4


@dataclass
class RunConfig:
    manifold: ManifoldConfig
    flow: flow.FlowParams
    samples: list = field(default_factory=list)
    kernel_steps: int = heatkernel.DEFAULT_STEPS
    sobolev_times: list = None
    a_convention: str = "squared"
    override: list = None
    output_dir: str = "."
    seed: int = 42
    source_path: str = ""


def _node(cfg, value):
    if cfg.is_sphere:
        if isinstance(value, (list, tuple)):
            if len(value) != 1:
                raise LabError("BAD_CONFIG", "sphere nodes are single theta indices")
            value = value[0]
        idx = int(value)
        if not 0 <= idx <= cfg.grid:
            raise LabError("BAD_CONFIG", f"theta index {idx} outside 0..{cfg.grid}")
        return idx
    idx = tuple(int(v) for v in value)
    if len(idx) != cfg.dimension or any(not 0 <= i < cfg.grid for i in idx):
        raise LabError("BAD_CONFIG", f"torus node {value} needs {cfg.dimension} indices in 0..{cfg.grid - 1}")
    return idx


def _manifold(raw):
    raw = dict(raw)
    coupling = CouplingSchedule(**raw.pop("coupling", {}))
    variant = Variant(raw.get("variant", ""))
    if variant is Variant.COUPLED_CIRCLE:
        grid = int(raw.get("grid", 64))
        n = int(raw.get("dimension", 3))
        L1 = float(raw.get("torus_lengths", [2 * math.pi] * n)[0])
        for key in ("metric0", "perturbation0"):
            if key in raw and not isinstance(raw[key], list):
                raw[key] = tuple(fourier_profile(grid, L1, raw[key]))
    for key in ("torus_lengths", "metric0", "fiber_metric", "perturbation0"):
        if isinstance(raw.get(key), list):
            raw[key] = tuple(raw[key])
    return ManifoldConfig(coupling=coupling, **raw)


def load_config(path):
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise LabError("BAD_CONFIG", f"cannot read config {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise LabError("BAD_CONFIG", f"config {path} is not valid JSON: {exc}") from exc
    known = {"manifold", "flow", "samples", "kernel", "sobolev", "output_dir", "seed"}
    unknown = set(raw) - known
    if unknown:
        raise LabError("BAD_CONFIG", f"unknown config sections {sorted(unknown)}")
    try:
        cfg = _manifold(raw["manifold"])
        params = flow.FlowParams(**raw["flow"])
    except KeyError as exc:
        raise LabError("BAD_CONFIG", f"config is missing {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise LabError("BAD_CONFIG", str(exc)) from exc
    params.validate(cfg)
    bounds.check_hypotheses(cfg)
    samples = []
    for smp in raw.get("samples", []):
        s, t = float(smp["s"]), float(smp["t"])
        if not 0 <= s < t <= params.t_end:
            raise LabError("BAD_TIME_ORDER", f"sample needs 0 <= s < t <= t_end, got s={s:g}, t={t:g}")
        samples.append((_node(cfg, smp["x"]), t, _node(cfg, smp["y"]), s))
    sob = raw.get("sobolev", {})
    times = sob.get("times")
    if times is not None and any(not 0 <= float(u) <= params.t_end for u in times):
        raise LabError("BAD_TIME_ORDER", "sobolev times must lie in [0, t_end]")
    base = os.path.dirname(os.path.abspath(path))
    out = raw.get("output_dir", "out")
    return RunConfig(
        manifold=cfg,
        flow=params,
        samples=samples,
        kernel_steps=int(raw.get("kernel", {}).get("steps", heatkernel.DEFAULT_STEPS)),
        sobolev_times=None if times is None else [float(u) for u in times],
        a_convention=sob.get("a_convention", "squared"),
        override=sob.get("override"),
        output_dir=os.path.normpath(out if os.path.isabs(out) else os.path.join(base, out)),
        seed=int(raw.get("seed", 42)),
        source_path=path,
    )


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, meta, header, rows):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write("# " + json.dumps(meta, sort_keys=True) + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _meta(rc, kind, **extra):
    meta = {"kind": kind, "variant": rc.manifold.variant.value, "grid": rc.manifold.grid,
            "config": os.path.basename(rc.source_path), "seed": rc.seed}
    meta.update(extra)
    return meta


def _out(rc, args, name):
    return args.out if getattr(args, "out", None) else os.path.join(rc.output_dir, name)


def _sobolev_times(rc):
    if rc.sobolev_times is not None:
        return rc.sobolev_times
    return list(np.linspace(0.0, rc.flow.t_end, 5))


def _constants(rc, traj):
    if rc.override is not None:
        triples = rc.override
        if isinstance(triples, str):
            path = triples if os.path.isabs(triples) else os.path.join(os.path.dirname(rc.source_path), triples)
            with open(path) as fh:
                triples = json.load(fh)
        times = sorted(float(row[0]) for row in triples)
        lam = [sobolev.lambda0_alpha(traj.state_at(u)) for u in times]
        positive = bool(curvature(traj.initial_state()).S.min() > 0)
        return sobolev.constants_from_override(rc.manifold, triples, lam, rc.a_convention, positive)
    return sobolev.estimate_AB(traj, _sobolev_times(rc), rc.a_convention, seed=rc.seed)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_run_flow(rc, args):
    traj = flow.run_flow(rc.manifold, rc.flow)
    rows = flow.trajectory_rows(traj)
    header = list(rows[0])
    path = _out(rc, args, "trajectory.csv")
    write_csv(path, _meta(rc, "trajectory", integrator=rc.flow.integrator), header,
              [[r[k] for k in header] for r in rows])
    for r in rows:
        print(f"t={r['time']:.6g} min_S={r['min_S']:.10g} max_S={r['max_S']:.10g}")
    print(f"wrote {path}")
    return EXIT_OK


def _kernel_lines(cfg, fieldk, target):
    """Rows (axis, index, value) along each coordinate line through ``target``."""
    if cfg.is_sphere:
        return [(0, i, v) for i, v in enumerate(fieldk.factors[0])]
    rows = []
    for j, f in enumerate(fieldk.factors):
        scale = np.prod([g[target[k]] for k, g in enumerate(fieldk.factors) if k != j])
        rows.extend((j, i, v * scale) for i, v in enumerate(f))
    return rows


def cmd_kernel(rc, args):
    cfg = rc.manifold
    if not args.t > args.s:
        raise LabError("BAD_TIME_ORDER", f"--t must exceed --s (got s={args.s:g}, t={args.t:g})")
    if args.s < 0 or args.t > rc.flow.t_end:
        raise LabError("BAD_TIME_ORDER", f"times must lie in [0, {rc.flow.t_end:g}]")
    source = _node(cfg, args.source if args.source else ([0] if cfg.is_sphere else [0] * cfg.dimension))
    target = _node(cfg, args.target) if args.target else source
    if cfg.is_sphere:
        heatkernel.sphere_relative(source, target)
    traj = flow.run_flow(cfg, rc.flow)
    steps = args.steps or rc.kernel_steps
    y = 0 if cfg.is_sphere else source
    fwd = heatkernel.forward_solve(traj, y, args.s, args.t, steps=steps)
    x_eval = heatkernel.sphere_relative(source, target) if cfg.is_sphere else target
    conj = heatkernel.conjugate_solve(traj, 0 if cfg.is_sphere else target, args.t, args.s, steps=steps)
    meta = _meta(rc, "kernel", s=args.s, t=args.t, source=source, target=target, steps=steps,
                 G=fwd.value(x_eval), J=fwd.integral(), Jtilde=conj.integral(),
                 P=fwd.integral_sq(), Q=conj.integral_sq())
    oracle = None
    if cfg.is_sphere:
        oracle = heatkernel.sphere_oracle(traj, y, args.s, args.t)
    elif cfg.variant is Variant.TORUS_LINEAR:
        oracle = heatkernel.theta_oracle(traj, y, args.s, args.t)
    m = 0.5 * (args.s + args.t)
    if oracle is not None:
        meta["max_rel_error_vs_oracle"] = heatkernel.relative_linf_error(fwd, oracle)
        meta["semigroup_residual"] = heatkernel.semigroup_check(traj, x_eval if cfg.is_sphere else target,
                                                                args.t, y, args.s, m, method="oracle")
        meta["semigroup_method"] = "oracle"
    else:
        meta["semigroup_residual"] = heatkernel.semigroup_check(traj, target, args.t, y, args.s, m,
                                                                method="pde", steps=steps)
        meta["semigroup_method"] = "pde"
    rows = _kernel_lines(cfg, fwd, target)
    orows = _kernel_lines(cfg, oracle, target) if oracle is not None else None
    table = [(a, i, v, orows[k][2] if orows else math.nan) for k, (a, i, v) in enumerate(rows)]
    path = _out(rc, args, "kernel.csv")
    write_csv(path, meta, ["axis", "index", "value", "oracle"], table)
    for key in ("G", "J", "Jtilde", "P", "Q", "max_rel_error_vs_oracle", "semigroup_residual"):
        if key in meta:
            print(f"{key}={meta[key]:.10g}")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_estimate_sobolev(rc, args):
    if args.times:
        rc.sobolev_times = [float(u) for u in args.times]
    if args.override:
        rc.override = args.override
    traj = flow.run_flow(rc.manifold, rc.flow)
    consts = _constants(rc, traj)
    path = _out(rc, args, "sobolev.csv")
    meta = _meta(rc, "sobolev", source=consts.source, a_convention=consts.a_convention, K=consts.K,
                 certified=False)
    rows = [(t, a, b, lam, consts.positive_case)
            for t, a, b, lam in zip(consts.times, consts.A_curve, consts.B_curve, consts.lambda0)]
    write_csv(path, meta, ["t", "A", "B", "lambda0", "positive_case"], rows)
    for r in rows:
        print(f"t={r[0]:.6g} A={r[1]:.10g} B={r[2]:.10g} lambda0={r[3]:.10g}")
    if consts.source == "override":
        print("constants source: override (user-supplied curves, used verbatim)")
    else:
        print("constants source: probe-estimate (lower bounds from a finite probe family, not certified)")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_verify(rc, args):
    if not rc.samples:
        raise LabError("BAD_CONFIG", "verify needs a non-empty samples list in the config")
    traj = flow.run_flow(rc.manifold, rc.flow)
    consts = _constants(rc, traj)
    inputs = bounds.ComparisonInputs.from_trajectory(traj, consts)
    report = bounds.verify(inputs, rc.samples, steps=rc.kernel_steps)
    path = _out(rc, args, "report.csv")
    meta = _meta(rc, "bound_report", positive_case=report.positive_case, a_convention=report.a_convention,
                 constants_source=report.constants_source, s_margin=report.s_margin,
                 corollary_convention="linear: (4K/n)^(n/2); squared: (4K^2/n)^(n/2)")
    rows = []
    for r in report.rows:
        rows.append([bounds._fmt(getattr(r, c if c != "pass" else "passed")) for c in bounds.CSV_COLUMNS])
    write_csv(path, meta, bounds.CSV_COLUMNS, rows)
    print(f"positive case: {str(report.positive_case).lower()}  A convention: {report.a_convention}")
    print(f"S comparison margin: {report.s_margin:.6g}")
    print(f"Cauchy-Schwarz chain holds: {str(report.chain_ok).lower()}  J bound holds: {str(report.j_ok).lower()}")
    for r in report.rows:
        print(f"x={bounds._fmt(r.x)} t={r.t:.6g} y={bounds._fmt(r.y)} s={r.s:.6g} "
              f"ratio_theorem={r.ratio_theorem:.6g} ratio_corollary={r.ratio_corollary:.6g} "
              f"ratio_corollary_squared={r.ratio_corollary_squared:.6g} pass={str(r.passed).lower()}")
    print(f"wrote {path}")
    if not report.passed:
        for r in report.failures():
            print(f"FAILED sample x={bounds._fmt(r.x)} t={r.t:.6g} y={bounds._fmt(r.y)} s={r.s:.6g}", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def cmd_report(args):
    directory = args.directory
    names = ["trajectory.csv", "sobolev.csv", "kernel.csv", "report.csv"]
    found = [n for n in names if os.path.exists(os.path.join(directory, n))]
    if not found:
        raise LabError("BAD_CONFIG", f"no outputs found in {directory}")
    out = args.out or os.path.join(directory, "summary.txt")
    with open(out, "w") as fh:
        for name in found:
            fh.write(f"== {name} ==\n")
            with open(os.path.join(directory, name)) as src:
                fh.write(src.read())
            fh.write("\n")
    print(f"wrote {out} ({', '.join(found)})")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="rhheat", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run-flow", help="integrate the flow and export the trajectory")
    p.add_argument("config")
    p.add_argument("--out")

    p = sub.add_parser("kernel", help="heat kernel with oracle and mass diagnostics")
    p.add_argument("config")
    p.add_argument("--source", type=int, nargs="+", help="source node indices")
    p.add_argument("--target", type=int, nargs="+", help="evaluation node (default: the source)")
    p.add_argument("--s", type=float, required=True)
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--steps", type=int)
    p.add_argument("--out")

    p = sub.add_parser("estimate-sobolev", help="probe-based A(t), B(t) curves")
    p.add_argument("config")
    p.add_argument("--times", type=float, nargs="+")
    p.add_argument("--override", help="JSON file with [[t, A, B], ...] used verbatim")
    p.add_argument("--out")

    p = sub.add_parser("verify", help="evaluate the theorem and corollary bounds on config samples")
    p.add_argument("config")
    p.add_argument("--out")

    p = sub.add_parser("report", help="concatenate outputs of earlier commands")
    p.add_argument("directory")
    p.add_argument("--out")
    return parser


COMMANDS = {
    "run-flow": cmd_run_flow,
    "kernel": cmd_kernel,
    "estimate-sobolev": cmd_estimate_sobolev,
    "verify": cmd_verify,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "report":
            return cmd_report(args)
        rc = load_config(args.config)
        return COMMANDS[args.command](rc, args)
    except LabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG if exc.is_config_error else EXIT_NUMERIC
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
