"""Command-line entry point: ``gmmkl <subcommand> [flags]``.

Every run writes ``manifest.json`` into ``--out-dir`` echoing the full
configuration.  Exit codes: 0 when every certificate meets the command's
success semantics, 1 when a certificate fails, 2 for bad input (parse or
validation errors, unknown names) and 3 when a construction is infeasible.
"""

import argparse
import csv
import datetime
import json
import math
import os
import sys

from . import __version__
from .certificates import (CANDIDATES, DIVERGES, FAILS, HOLDS, INFO, LE, LT, REFUTATION_DIVERGES,
                           Certificate, Record, candidate_mixture, cantor_kl_demo, check_ent,
                           check_fssa_scale, necessity_bound, refute_fnatural_cssa, verify_fstar_cssa,
                           write_certificate)
from .densities import catalog, get_density, is_ent_eligible
from .divergence import kl_monte_carlo, kl_quadrature_1d
from .entropy_route import _fmt, entropy_schedule, write_rows
from .errors import (BudgetExceeded, GmmKLError, ParseError, ScheduleInfeasible, ToleranceUnreachable,
                     ValidationError)
from .gmm import read_mixture, write_mixture
from .quadrature import QuadratureBudget
from .support_route import (PIECE_COLUMNS, SUMMAND_NAMES, build_cssa_approximant, fstar_pieces)

EXIT_OK, EXIT_FAIL, EXIT_INPUT, EXIT_INFEASIBLE = 0, 1, 2, 3
DEFAULT_R_GRID = "10,30,100,300,1000,3000,10000"


class Run:
    """Output directory bookkeeping for one invocation."""

    def __init__(self, args):
        self.args = args
        self.dir = args.out_dir
        os.makedirs(self.dir, exist_ok=True)
        self.outputs = []
        self.verdicts = {}

    def path(self, name):
        self.outputs.append(name)
        return os.path.join(self.dir, name)

    def certificate(self, name, cert):
        write_certificate(cert, self.path(name))
        self.verdicts[name] = cert.verdict

    def manifest(self, code, error=None):
        config = {k: v for k, v in sorted(vars(self.args).items()) if k != "func"}
        body = {"command": self.args.command, "config": config, "version": __version__,
                "seed": self.args.seed, "workers": self.args.workers,
                "outputs": sorted(set(self.outputs)), "verdicts": self.verdicts, "exit_code": code}
        if error is not None:
            body["error"] = error
        text = json.dumps(body, indent=2, sort_keys=True)
        stamp = datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")
        # the timestamp sits alone on the second line so reruns differ only there
        text = "{\n" + f'  "created": {json.dumps(stamp)},\n' + text[2:]
        with open(os.path.join(self.dir, "manifest.json"), "w") as fh:
            fh.write(text + "\n")


def _budget(args):
    return QuadratureBudget(tol=args.budget_tol)


def _floats(text, flag):
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ValidationError(f"{flag}: expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise ValidationError(f"{flag}: empty list")
    return vals


def _target(args):
    try:
        return get_density(args.target, fstar_n_max=args.n_max)
    except KeyError as exc:
        raise ValidationError(f"--target: {exc.args[0]}") from None


def _report(cert, name, out=sys.stdout):
    print(f"{name}: {cert.verdict}", file=out)
    bad = cert.failing()
    if bad:
        r = bad[0]
        print(f"  first failing record: {r.name}: {r.lhs!r} {r.rel} {r.rhs!r} (tol {r.tolerance!r})", file=out)


def _code(cert, success=(HOLDS,)):
    return EXIT_OK if cert.verdict in success else EXIT_FAIL


# approximate --------------------------------------------------------------------

def _entropy_certificate(sched, allow_unmet):
    recs = []
    rows = sched.rows
    for a, row in zip(sched.approximants, rows):
        m = a.m
        recs += [Record.make(f"m={m}: {c.name}", c.lhs, LT, c.rhs) for c in a.radius.conditions]
        recs.append(Record.make(f"m={m}: int L_m dF <= proof bound", row["measured_L"], LE,
                                row["proof_bound"], 3.0 * row["measured_L_error"]))
        recs.append(Record.make(f"m={m}: Monte Carlo int L_m dF <= proof bound", row["mc_L"], LE,
                                row["proof_bound"], 3.0 * row["mc_L_se"]))
        recs.append(Record.make(f"m={m}: KL <= int L_m dF", row["measured_KL"], LE, row["measured_L"],
                                row["measured_KL_error"] + row["measured_L_error"]))
        rel = INFO if allow_unmet else LT
        recs.append(Record.make(f"m={m}: sup |h_m - f| on B_R < eta_m", row["sup_error"], rel, row["eta_m"]))
    for prev, row in zip(rows[1:], rows[2:]):
        recs.append(Record.make(f"m={row['m']}: KL nonincreasing", row["measured_KL"], LE, prev["measured_KL"],
                                row["measured_KL_error"] + prev["measured_KL_error"]))
    prov = {"target": sched.target, "route": "entropy", "m_max": len(rows), "seed": sched.seed,
            "strict": sched.strict, "final_kl": rows[-1]["measured_KL"]}
    verdict = HOLDS if all(r.passed for r in recs) else FAILS
    return Certificate("approximation", sched.target, tuple(recs), verdict, prov)


def _cauchy_explanation(run, f, args):
    g = candidate_mixture("normal")
    cert = necessity_bound(f, g, _floats(DEFAULT_R_GRID, "--R-grid"), budget=_budget(args), g_label="normal")
    run.certificate("necessity.json", cert)
    lb = cert.witness.get("lower_bound", math.nan)
    print(f"  necessity: KL({f.name} || N(0,1)) >= {lb:.6g} at R = {cert.witness.get('R_max', math.nan):g} "
          f"and still increasing (verdict {cert.verdict}); the same growth holds for every finite GMM",
          file=sys.stderr)


def cmd_approximate(run, args):
    f = _target(args)
    if args.route == "entropy":
        return _approximate_entropy(run, f, args)
    return _approximate_support(run, f, args)


def _approximate_entropy(run, f, args):
    strict = not args.allow_unmet_tolerance
    try:
        sched = entropy_schedule(f, args.m_max, strict=strict, seed=args.seed, n_mc=args.n_mc,
                                 budget=_budget(args), workers=args.workers)
    except ScheduleInfeasible as exc:
        print(f"approximate: {exc}", file=sys.stderr)
        if f.second_moment_kind == "infinite":
            _cauchy_explanation(run, f, args)
        return EXIT_INFEASIBLE
    sched.write_csv(run.path("schedule.csv"))
    prof = sched.profile
    cols = ["m", "mean_L", "se_L"] + [f"tail_M{M:g}" for M in prof.thresholds] + \
           [f"tail_se_M{M:g}" for M in prof.thresholds]
    prow = []
    for i in range(len(sched.approximants)):
        r = {"m": i + 1, "mean_L": prof.mean_L[i], "se_L": prof.se_L[i]}
        for j, M in enumerate(prof.thresholds):
            r[f"tail_M{M:g}"] = prof.tail[i, j]
            r[f"tail_se_M{M:g}"] = prof.tail_se[i, j]
        prow.append(r)
    write_rows(run.path("profile.csv"), cols, prow)
    for a in sched.approximants:
        write_mixture(a.g, run.path(f"mixture_m{a.m}.json"))
    cert = _entropy_certificate(sched, args.allow_unmet_tolerance)
    run.certificate("report.json", cert)
    for row in sched.rows:
        print(f"m={row['m']} R={row['R_m']:.6g} components={row['components']} "
              f"KL={row['measured_KL']:.6g} bound={row['proof_bound']:.6g}")
    _report(cert, "report")
    return _code(cert)


def _approximate_support(run, f, args):
    if "Z" not in f.params:
        raise ValidationError(f"--route support: target {f.name!r} has no piece decomposition (use fstar)")
    budget = _budget(args)
    pieces = fstar_pieces(f)
    app = build_cssa_approximant(f, pieces, args.L, args.eps, budget)
    kl = kl_quadrature_1d(f, app.G, budget)
    write_rows(run.path("pieces.csv"), PIECE_COLUMNS, app.piece_rows())
    write_mixture(app.G, run.path(f"mixture_L{app.L}.json"))
    t = app.tail
    trow = {"L": t.L, "p_tail": t.p_tail, "total": t.total, "error": t.error}
    trow.update(zip(SUMMAND_NAMES, t.summands))
    write_rows(run.path("tail_terms.csv"), ("L",) + SUMMAND_NAMES + ("total", "p_tail", "error"), [trow])
    tail_part = app.p_tail * app.tail_kl.value if app.tail_kl is not None else 0.0
    tail_err = app.p_tail * app.tail_kl.error if app.tail_kl is not None else 0.0
    recs = [Record.make(f"piece {pc.ell}: KL(f_l || g_l) < eps_l", a.kl.value, LT, e)
            for pc, a, e in zip(app.pieces, app.piece_approx, app.piece_eps)]
    recs.append(Record.make("sum p_l KL(f_l || g_l) <= eps/2", app.first_term, LE, 0.5 * app.eps,
                            app.first_term_error))
    recs.append(Record.make("KL(f || G_L) <= sum p_l KL_l + p_tail KL(nu_L || N(0,1))", kl.value, LE,
                            app.first_term + tail_part, kl.error + app.first_term_error + tail_err))
    if app.tail_kl is not None:
        recs.append(Record.make("p_tail KL(nu_L || N(0,1)) <= tail summands", tail_part, LE, t.total,
                                tail_err + t.error))
    recs.append(Record.make("KL(f || G_L) < eps", kl.value, LT, app.eps))
    prov = {"target": f.name, "route": "support", "L": app.L, "eps": app.eps, "kl": kl.value,
            "kl_error": kl.error, "first_term": app.first_term, "p_tail": app.p_tail,
            "components": app.G.n_components}
    cert = Certificate("approximation", f.name, tuple(recs), HOLDS if all(r.passed for r in recs) else FAILS,
                       prov)
    run.certificate("report.json", cert)
    print(f"L={app.L} components={app.G.n_components} KL={kl.value:.6g} (+/- {kl.error:.2g}) "
          f"first_term={app.first_term:.6g}")
    _report(cert, "report")
    return _code(cert)


# kl ---------------------------------------------------------------------------------

def cmd_kl(run, args):
    f = _target(args)
    g = read_mixture(args.mixture)
    if g.dim != f.dim:
        raise ValidationError(f"--mixture: dimension {g.dim} does not match target dimension {f.dim}")
    ests = []
    if args.method in ("quadrature", "both"):
        ests.append(kl_quadrature_1d(f, g, _budget(args)))
    if args.method in ("mc", "both"):
        ests.append(kl_monte_carlo(f, g, args.n, args.seed, args.workers))
    cols = ("method", "value", "error", "n_evals", "workers", "diagnostic")
    write_rows_text(run.path("kl.csv"), cols, [e.__dict__ for e in ests])
    recs = [Record.make(f"{e.method}: error finite", e.error, LT, math.inf) for e in ests]
    recs += [Record.make(f"{e.method}: value", e.value, INFO, 0.0, e.error) for e in ests]
    if len(ests) == 2:
        q, mc = ests
        recs.append(Record.make("|quadrature - monte carlo| <= 3 combined errors", abs(q.value - mc.value), LE,
                                3.0 * (q.error + mc.error)))
    cert = Certificate("estimate", f.name, tuple(recs), HOLDS if all(r.passed for r in recs) else FAILS,
                       {"target": f.name, "mixture": args.mixture, "method": args.method, "n": args.n,
                        "seed": args.seed})
    run.certificate("kl_certificate.json", cert)
    for e in ests:
        print(f"{e.method}: {e.value!r} +/- {e.error!r}{' ' + e.diagnostic if e.diagnostic else ''}")
    _report(cert, "kl")
    return _code(cert)


def write_rows_text(file, columns, rows):
    """Like :func:`write_rows` but passes strings through unchanged."""
    with open(file, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([r[c] if isinstance(r[c], str) else _fmt(r[c]) for c in columns])


# necessity -----------------------------------------------------------------------

def cmd_necessity(run, args):
    f = _target(args)
    budget = _budget(args)
    if args.mixture:
        g, label = read_mixture(args.mixture), args.mixture
    else:
        g, label = candidate_mixture(args.candidate, budget), args.candidate
    if g.dim != f.dim:
        raise ValidationError(f"mixture dimension {g.dim} does not match target dimension {f.dim}")
    measured = None
    if f.dim == 1:
        est = kl_quadrature_1d(f, g, budget)
        if math.isfinite(est.value):
            measured = (est.value, est.error)
    cert = necessity_bound(f, g, _floats(args.R_grid, "--R-grid"), threshold=args.threshold, t0=args.t0,
                           measured_kl=measured, budget=budget, g_label=label)
    run.certificate("necessity.json", cert)
    for r in cert.statement:
        if r.rel == INFO:
            print(f"{r.name} = {r.lhs!r}")
    _report(cert, "necessity")
    return _code(cert, (HOLDS, DIVERGES))


# class-check ---------------------------------------------------------------------

def cmd_class_check(run, args):
    if args.klass == "cssa":
        if args.target != "fstar":
            raise ValidationError("--class cssa: countable-scale witnesses are available for fstar only")
        cert = verify_fstar_cssa(args.n_max, args.increment_tol, _budget(args))
    else:
        f = _target(args)
        if args.klass == "ent":
            cert = check_ent(f, _budget(args))
            cert.provenance["metadata_eligible"] = is_ent_eligible(f)
        else:
            cert = check_fssa_scale(f, args.r, args.probe_n, args.seed)
    run.certificate(f"class_{args.klass}.json", cert)
    _report(cert, f"class {args.klass}")
    if cert.witness.get("pieces"):
        print(f"  witness pieces: {cert.witness['pieces']}")
    return _code(cert)


# counterexample ----------------------------------------------------------------------

def cmd_counterexample(run, args):
    if args.which == "fstar":
        cert, success = verify_fstar_cssa(args.n_max, args.increment_tol, _budget(args)), (HOLDS,)
    elif args.which == "natural":
        cert, success = refute_fnatural_cssa(args.N), (REFUTATION_DIVERGES,)
    else:
        cert = cantor_kl_demo(args.K, args.m_max, args.eps, budget=_budget(args))
        success = (HOLDS,)
        steps = cert.witness["steps"]
        write_rows(run.path("cantor_steps.csv"), tuple(steps[0]), steps)
    run.certificate(f"counterexample_{args.which}.json", cert)
    _report(cert, f"counterexample {args.which}")
    return _code(cert, success)


# catalog ---------------------------------------------------------------------------

CATALOG_COLUMNS = ("name", "dim", "support", "continuous", "strictly_positive", "sup", "second_moment",
                   "ent_eligible")


def cmd_catalog(run, args):
    rows = []
    for name, f in sorted(catalog(fstar_n_max=args.n_max).items()):
        rows.append({"name": name, "dim": f.dim, "support": f.support.kind, "continuous": f.continuous,
                     "strictly_positive": f.strictly_positive, "sup": f.sup,
                     "second_moment": f.second_moment_kind, "ent_eligible": is_ent_eligible(f)})
    write_rows_text(run.path("catalog.csv"), CATALOG_COLUMNS, rows)
    for r in rows:
        print(f"{r['name']:<14} dim={r['dim']} support={r['support']:<15} second_moment={r['second_moment']}")
    return EXIT_OK


# parser ------------------------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False, allow_abbrev=False)
    common.add_argument("--seed", type=int, default=0, help="master seed for all randomness")
    common.add_argument("--budget-tol", type=float, default=1e-10, help="absolute quadrature tolerance")
    common.add_argument("--out-dir", default="gmmkl-out", help="directory for outputs and manifest.json")
    common.add_argument("--workers", type=int, default=1, help="Monte Carlo worker streams")
    common.add_argument("--n-max", type=int, default=50, help="truncation of the fstar comb")

    parser = argparse.ArgumentParser(prog="gmmkl", description=__doc__.splitlines()[0], allow_abbrev=False)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("approximate", parents=[common], allow_abbrev=False,
                       help="build an approximating mixture sequence")
    p.add_argument("--target", required=True)
    p.add_argument("--route", choices=("entropy", "support"), default="entropy")
    p.add_argument("--m-max", type=int, default=6)
    p.add_argument("--n-mc", type=int, default=100_000, help="Monte Carlo draws for the log-ratio profile")
    p.add_argument("--L", type=int, default=50, help="pieces approximated on the support route")
    p.add_argument("--eps", type=float, default=0.1, help="KL target on the support route")
    p.add_argument("--allow-unmet-tolerance", action="store_true",
                   help="keep the best compact fit when the sup-norm tolerance is missed")
    p.set_defaults(func=cmd_approximate)

    p = sub.add_parser("kl", parents=[common], allow_abbrev=False, help="estimate KL(target || mixture)")
    p.add_argument("--target", required=True)
    p.add_argument("--mixture", required=True, help="mixture JSON file")
    p.add_argument("--method", choices=("quadrature", "mc", "both"), default="both")
    p.add_argument("--n", type=int, default=100_000, help="Monte Carlo draws")
    p.set_defaults(func=cmd_kl)

    p = sub.add_parser("necessity", parents=[common], allow_abbrev=False,
                       help="quadratic-moment lower bounds on KL")
    p.add_argument("--target", required=True)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--mixture", help="mixture JSON file")
    group.add_argument("--candidate", choices=CANDIDATES, default="normal")
    p.add_argument("--R-grid", default=DEFAULT_R_GRID, help="comma-separated radii")
    p.add_argument("--threshold", type=float, default=10.0)
    p.add_argument("--t0", type=float, default=None, help="default 1/(8 lambda_max)")
    p.set_defaults(func=cmd_necessity)

    p = sub.add_parser("class-check", parents=[common], allow_abbrev=False, help="class membership checks")
    p.add_argument("--target", required=True)
    p.add_argument("--class", dest="klass", choices=("ent", "fssa", "cssa"), required=True)
    p.add_argument("--r", type=float, default=0.25, help="scale for the fssa check")
    p.add_argument("--probe-n", type=int, default=4096)
    p.add_argument("--increment-tol", type=float, default=1e-12)
    p.set_defaults(func=cmd_class_check)

    p = sub.add_parser("counterexample", parents=[common], allow_abbrev=False,
                       help="run a counterexample verifier")
    p.add_argument("--which", choices=("fstar", "natural", "cantor"), required=True)
    p.add_argument("--N", type=int, default=100)
    p.add_argument("--K", type=int, default=8)
    p.add_argument("--m-max", type=int, default=6)
    p.add_argument("--eps", type=float, default=0.05)
    p.add_argument("--increment-tol", type=float, default=1e-12)
    p.set_defaults(func=cmd_counterexample)

    p = sub.add_parser("catalog", parents=[common], allow_abbrev=False, help="list catalog densities")
    p.set_defaults(func=cmd_catalog)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    run = Run(args)
    error = None
    try:
        code = args.func(run, args)
    except (ParseError, ValidationError) as exc:
        error = f"{type(exc).__name__}: {exc}"
        code = EXIT_INPUT
    except (ToleranceUnreachable, BudgetExceeded, ScheduleInfeasible) as exc:
        error = f"{type(exc).__name__}: {exc}"
        code = EXIT_INFEASIBLE
    except (GmmKLError, OSError) as exc:
        error = f"{type(exc).__name__}: {exc}"
        code = EXIT_INPUT
    if error:
        print(f"{args.command}: {error}", file=sys.stderr)
    run.manifest(code, error)
    return code


if __name__ == "__main__":
    sys.exit(main())
