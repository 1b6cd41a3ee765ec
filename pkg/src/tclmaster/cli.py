"""Command-line front end.

Exit codes: 0 success, 1 failed check, 2 plain relaxation only,
3 no relaxation, 4 input error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import asymptotics, dynamics, example_model, modelio, superops
from .errors import ConsistencyError, NoLimit, NonDiagonalizable, StiffnessError, TclError, ValidationError
from .tcl import TclSeries

log = logging.getLogger("tclmaster")

EXIT_OK, EXIT_FAIL, EXIT_PLAIN_ONLY, EXIT_NO_RELAX, EXIT_INPUT = 0, 1, 2, 3, 4


def _workers():
    try:
        return max(1, int(os.environ.get("TCL_NUM_THREADS", "1")))
    except ValueError:
        return 1


def _pmap(fn, items):
    items = list(items)
    n = min(_workers(), len(items)) or 1
    if n == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def parse_grid(spec: str):
    """"start:stop:count" -> linear grid."""
    try:
        start, stop, count = spec.split(":")
        start, stop, count = float(start), float(stop), int(count)
    except ValueError:
        raise ValidationError(f"time grid must be start:stop:count, got {spec!r}") from None
    if count < 1 or not np.isfinite(start) or not np.isfinite(stop) or (count > 1 and stop <= start):
        raise ValidationError(f"bad time grid {spec!r}")
    return np.linspace(start, stop, count)


def _write(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    return str(path)


class Report:
    def __init__(self, command, args):
        self.start = time.perf_counter()
        self.doc = {"command": command, "model_hash": None,
                    "parameters": {k: v for k, v in sorted(vars(args).items()) if k != "func"},
                    "outputs": [], "residuals": {}}

    def emit(self, code):
        self.doc["exit_code"] = code
        self.doc["wall_time"] = time.perf_counter() - self.start
        print(modelio.dumps(self.doc))
        return code


def _load(args, report):
    model, digest = modelio.read_model(args.model)
    report.doc["model_hash"] = digest
    return model


def _state(args, model):
    if getattr(args, "rho0", None):
        return modelio.read_state(args.rho0, model.dim)
    rho = np.zeros((model.dim, model.dim), dtype=complex)
    rho[0, 0] = 1.0
    return rho


def cmd_derive(args, report):
    model = _load(args, report)
    times = parse_grid(args.times)
    series = TclSeries(model, max_order=args.order, backend=args.backend)

    def at(t):
        return [{"time": float(t), "order": n,
                 "K": modelio.matrix_to_pairs(series.K(n, t)),
                 "I": modelio.matrix_to_pairs(series.I(n, t))}
                for n in range(1, args.order + 1)]

    rows = [row for block in _pmap(at, times) for row in block]
    report.doc["outputs"].append(_write(args.out, modelio.dumps(rows) + "\n"))
    return EXIT_OK


def _relaxation_code(rep):
    if rep.enhanced_satisfied:
        return EXIT_OK
    return EXIT_PLAIN_ONLY if rep.plain_satisfied else EXIT_NO_RELAX


def cmd_check_relaxation(args, report):
    model = _load(args, report)
    rep = asymptotics.check_relaxation(model, order=args.order, samples=args.samples,
                                       seed=args.seed, tol=args.tol)
    report.doc["residuals"] = {
        "plain_satisfied": rep.plain_satisfied,
        "enhanced_satisfied": rep.enhanced_satisfied,
        "shortcut_used": rep.shortcut_used,
        "max_violation": rep.max_violation,
        "samples": len(rep.samples),
    }
    return _relaxation_code(rep)


def cmd_bvh(args, report):
    model = _load(args, report)
    rho0 = _state(args, model)
    rep = asymptotics.check_relaxation(model)
    bvh = asymptotics.bvh_prepare(model, relaxation=rep)
    vec = superops.vectorize(rho0)
    doc = {
        "lambda": model.lam,
        "K2_inf": modelio.matrix_to_pairs(bvh.K2_inf),
        "I2_inf": modelio.matrix_to_pairs(bvh.I2_inf),
        "R": modelio.matrix_to_pairs(bvh.renorm_map),
        "R_rho0": modelio.matrix_to_pairs(superops.devectorize(bvh.renorm_map @ vec)),
        "residuals": bvh.residuals,
    }
    report.doc["outputs"].append(_write(args.out, modelio.dumps(doc) + "\n"))
    report.doc["residuals"] = dict(bvh.residuals, relaxation_plain=rep.plain_satisfied,
                                   relaxation_enhanced=rep.enhanced_satisfied)
    if not rep.enhanced_satisfied:
        return _relaxation_code(rep)
    return EXIT_OK if bvh.valid else EXIT_FAIL


def cmd_compare(args, report):
    model = _load(args, report)
    rho0 = _state(args, model)
    times = np.linspace(model.t0, args.tmax, args.points)
    orders = sorted({int(x) for x in args.orders.split(",") if x})
    if not orders or min(orders) < 1:
        raise ValidationError(f"bad order list {args.orders!r}")
    exact = dynamics.propagate_exact(model, rho0, times, projected=True)
    series = TclSeries(model, max_order=max(orders))
    p = model.projector

    def run(method):
        try:
            if method == "bvh":
                traj = asymptotics.bvh_trajectory(model, asymptotics.bvh_prepare(model), rho0, times, override=True)
            elif method == "bvh_leading":
                bvh = asymptotics.bvh_prepare(model)
                traj = asymptotics.bvh_trajectory(model, bvh, rho0, times, leading=True)
            else:
                traj = dynamics.propagate_tcl(series, int(method[4:]), rho0, times)
            return method, dynamics.compare(exact, traj, p)["errors"], None
        except (StiffnessError, ConsistencyError, NoLimit) as exc:
            return method, [float("nan")] * len(times), f"{type(exc).__name__}: {exc}"

    methods = [f"tcl-{n}" for n in orders] + ["bvh", "bvh_leading"]
    results = _pmap(run, methods)
    lines = ["time," + ",".join(m for m, _, _ in results)]
    for i, t in enumerate(times):
        lines.append(",".join([modelio.dumps(float(t))] + [modelio.dumps(float(e[i])) if np.isfinite(e[i]) else "nan"
                                                          for _, e, _ in results]))
    report.doc["outputs"].append(_write(args.out, "\n".join(lines) + "\n"))
    report.doc["residuals"] = {
        m: {"max_error": (float(np.max(e)) if err is None else None), "error": err} for m, e, err in results
    }
    return EXIT_OK


def reproduce_checks(gamma=1.0, g=1.0, lam=0.1):
    """Run the three-level pipeline; returns a list of (name, residual, tol) items."""
    model = example_model.model(lam=lam, g=g, gamma=gamma)
    p = model.projector
    items = []

    def check(name, residual, tol):
        items.append({"name": name, "residual": float(residual), "tol": tol, "passed": bool(residual <= tol)})

    lim = superops.limit_superoperator(model.spectrum)
    check("Lambda equals P", np.abs(lim - p).max(), 1e-10)
    rep = asymptotics.check_relaxation(model)
    check("relaxation via P exp(-L0 t) = P", 0.0 if rep.shortcut_used and rep.enhanced_satisfied else 1.0, 0.5)

    series = TclSeries(model, max_order=3)
    grid = np.linspace(0.0, 20.0 / gamma, 20)
    check("K1(t) = 0", max(np.abs(series.K(1, t)).max() for t in grid), 1e-12)
    law = max(np.abs(series.K(2, t) - example_model.k2_closed_form(t, g, gamma) @ p).max()
              for t in (0.0, 0.5, 1.0, 5.0, 50.0))
    check("K2(t) = (4g^2/gamma)(1 - exp(-gamma t/2)) D[|0><1|]", law, 1e-10)

    lims = asymptotics.K_I_limits(series, orders=(1, 2, 3))
    check("K1(inf) = 0", np.abs(lims[1][0]).max(), 1e-8)
    check("I1(inf) = 0", np.abs(lims[1][1]).max(), 1e-8)
    check("K2(inf) = (4g^2/gamma) D[|0><1|]",
          np.abs(lims[2][0] - example_model.decay_superoperator(g, gamma) @ p).max(), 1e-10)
    check("I2(inf) = 0", np.abs(lims[2][1]).max(), 1e-8)
    check("K3(inf) = 0", np.abs(lims[3][0]).max(), 1e-6)
    check("I3(inf) = 0", np.abs(lims[3][1]).max(), 1e-6)
    rate = -lims[2][0][4, 4].real
    check("decay rate 4 g^2 / gamma", abs(rate - 4 * g**2 / gamma), 1e-10)

    r = asymptotics.renormalization_map(model)
    check("renormalization map", np.abs(r - example_model.renormalization_closed_form(lam, g, gamma)).max(), 1e-10)

    times = np.linspace(0.0, 5.0 / gamma, 26)
    rho_c = example_model.excited_state()
    tcl_c = dynamics.propagate_tcl(series, 2, rho_c, times)
    ref = example_model.consistent_rho11_solution(times, 1.0, lam, g, gamma)
    check("order-2 TCL, consistent state, analytic rho_11", np.abs(tcl_c.states[:, 1, 1] - ref).max(), 1e-8)

    rho_i = example_model.inconsistent_state()
    exact = dynamics.propagate_exact(model, rho_i, times, projected=True)
    with_i = dynamics.compare(exact, dynamics.propagate_tcl(series, 2, rho_i, times), p)["max_error"]
    without_i = dynamics.compare(exact, dynamics.propagate_tcl(series, 2, rho_i, times, inhomogeneity=False),
                                 p)["max_error"]
    # the inhomogeneity never hurts; at lam = 0 both errors vanish
    check("inhomogeneity improves early-time error", max(with_i - without_i, 0.0), 1e-12)
    data = {"times": times, "rho11_consistent": tcl_c.states[:, 1, 1].real, "rho11_analytic": ref,
            "error_with_inhomogeneity": with_i, "error_without_inhomogeneity": without_i}
    return items, data


def cmd_reproduce_example(args, report):
    items, data = reproduce_checks(gamma=args.gamma, g=args.g, lam=args.lam)
    out = Path(args.out)
    doc = {"gamma": args.gamma, "g": args.g, "lambda": args.lam, "checks": items,
           "error_with_inhomogeneity": data["error_with_inhomogeneity"],
           "error_without_inhomogeneity": data["error_without_inhomogeneity"]}
    report.doc["outputs"].append(_write(out / "checklist.json", modelio.dumps(doc) + "\n"))
    lines = ["time,rho11_tcl2,rho11_analytic"]
    for t, a, b in zip(data["times"], data["rho11_consistent"], data["rho11_analytic"]):
        lines.append(",".join(modelio.dumps(float(x)) for x in (t, a, b)))
    report.doc["outputs"].append(_write(out / "rho11_consistent.csv", "\n".join(lines) + "\n"))
    failed = [it["name"] for it in items if not it["passed"]]
    report.doc["residuals"] = {it["name"]: it["residual"] for it in items}
    if failed:
        report.doc["failed"] = failed
        return EXIT_FAIL
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="tclmaster", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("derive", help="write K_n(t), I_n(t) on a time grid")
    p.add_argument("model")
    p.add_argument("--order", type=int, default=2)
    p.add_argument("--times", default="0:10:11", help="start:stop:count")
    p.add_argument("--backend", choices=("algebraic", "quadrature"), default="algebraic")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_derive)

    p = sub.add_parser("check-relaxation", help="test the relaxation conditions")
    p.add_argument("model")
    p.add_argument("--order", type=int, default=3)
    p.add_argument("--samples", type=int, default=asymptotics.DEFAULT_SAMPLES)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-9)
    p.set_defaults(func=cmd_check_relaxation)

    p = sub.add_parser("bvh", help="long-time generator and renormalized initial state")
    p.add_argument("model")
    p.add_argument("--rho0")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bvh)

    p = sub.add_parser("compare", help="projected-state errors against exact propagation")
    p.add_argument("model")
    p.add_argument("--rho0")
    p.add_argument("--orders", default="1,2")
    p.add_argument("--tmax", type=float, default=10.0)
    p.add_argument("--points", type=int, default=101)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("reproduce-example", help="run the three-level example end to end")
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--g", type=float, default=1.0)
    p.add_argument("--lambda", dest="lam", type=float, default=0.1)
    p.add_argument("--out", default="example-out")
    p.set_defaults(func=cmd_reproduce_example)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    report = Report(args.command, args)
    try:
        code = args.func(args, report)
    except NonDiagonalizable as exc:
        report.doc["error"] = f"{exc} (the quadrature backend does not need an eigenbasis)"
        code = EXIT_INPUT
    except (ValidationError, OSError) as exc:
        report.doc["error"] = f"{type(exc).__name__}: {exc}"
        code = EXIT_INPUT
    except TclError as exc:
        report.doc["error"] = f"{type(exc).__name__}: {exc}"
        code = EXIT_FAIL
    return report.emit(code)


if __name__ == "__main__":
    sys.exit(main())
