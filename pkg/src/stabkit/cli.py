"""Command-line front end.

Exit codes: 0 success, 1 a verdict failed, 2 bad usage or input, 3 numerical
failure.  Every output file is written atomically.
"""

import argparse
import csv
import io
import json
import math
import os
import sys as _sys
import tempfile
import time

import numpy as np

from . import feedback as fb
from .errors import DomainError, InputError, NumericalError, StabkitError
from .gramian import admissible, pi_integral
from .numerics import DEFAULT_QUAD, QuadSpec
from .observability import (
    ObservabilityCertificate,
    certificate_to_json,
    certify_static,
    constants_from_feedback,
    load_certificate,
    static_to_dynamic,
    validate_certificate,
)
from .systems import EXAMPLES, analyze, dump_system, load_system, make_example
from .verify import Tolerances, closed_loop_report, lyapunov_residual, verify_law

CSV_VERSION = "# stabkit-v1"
MUTATED = ("mutated-main", "mutated-general", "rate-targeted-finite", "rate-targeted-infinite")
COMPARE_METHODS = ("main", "rate", "komornik", "urquiza", "lqr")


# --------------------------------------------------------------------------
# io helpers


def write_atomic(path, text):
    """Write ``text`` to ``path`` through a temporary file and a rename."""
    path = os.path.abspath(path)
    directory = os.path.dirname(path)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".stabkit-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def emit(text, out):
    if out:
        write_atomic(out, text)
    else:
        _sys.stdout.write(text)


def read_text(path, what):
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise InputError(f"cannot read {what} file {path!r}: {exc.strerror}") from exc


def dumps(obj):
    return json.dumps(obj, indent=2, allow_nan=False) + "\n"


def csv_text(header, rows):
    buf = io.StringIO()
    buf.write(CSV_VERSION + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(["" if v is None else _cell(v) for v in row])
    return buf.getvalue()


def _cell(v):
    if isinstance(v, float):
        return repr(float(v))
    return v


def parse_grid(text):
    """``a:b:n`` to ``n`` equally spaced values; a single number is a grid of one."""
    parts = text.split(":")
    try:
        if len(parts) == 1:
            return [float(parts[0])]
        if len(parts) != 3:
            raise ValueError
        a, b, n = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise InputError(f"grid {text!r} must have the form a:b:n") from None
    if n < 1:
        raise InputError(f"grid {text!r} needs at least one point")
    return [float(v) for v in np.linspace(a, b, n)]


def _quad(args):
    return QuadSpec(args.rule, args.panels, 3 if args.rule == "simpson" else args.nodes_per_panel)


def _system(args):
    if not args.system:
        raise InputError("--system is required")
    return load_system(read_text(args.system, "system"))


def _certificate(args, required=True):
    if getattr(args, "cert", None):
        return load_certificate(read_text(args.cert, "certificate"))
    given = [args.alpha, args.D, args.C]
    if all(v is not None for v in given):
        return ObservabilityCertificate(args.alpha, args.D, args.C)
    if any(v is not None for v in given) or required:
        raise InputError("a certificate needs --cert or all of --alpha, --D and --C")
    return None


def _require(args, *names):
    missing = [f"--{n.replace('_', '-')}" for n in names if getattr(args, n) is None]
    if missing:
        raise InputError(f"{args.command} needs {', '.join(missing)}")


def auto_certificate(sys):
    """Certificate from an LQ gain at half the best rate (rate 1 if unbounded)."""
    omega_star = analyze(sys).omega_star
    theta = 0.5 * omega_star if math.isfinite(omega_star) else 1.0
    base = fb.lqr_feedback(sys.with_A(sys.A + theta * np.eye(sys.n)))
    return constants_from_feedback(sys, base.K, theta)


def default_T(cert):
    return 1.5 * math.log(cert.C_alpha) / cert.alpha if cert.C_alpha > 1 else 1.0


# --------------------------------------------------------------------------
# subcommands


def cmd_example(args):
    params = {}
    if args.name == "scalar-unstable" and args.a is not None:
        params["a"] = args.a
    if args.name == "stable-diagonal" and args.rates:
        params["rates"] = [float(r) for r in args.rates.split(",")]
    if args.name == "transport-1d":
        if args.n is not None:
            params["n"] = args.n
        if args.speed is not None:
            params["speed"] = args.speed
        if args.window:
            start, _, width = args.window.partition(":")
            params["window"] = (int(start), int(width))
    if args.name == "wave-chain":
        if args.masses is not None:
            params["masses"] = args.masses
        if args.damping is not None:
            params["damping"] = args.damping
    if args.name == "rand-stabilizable":
        for key in ("n", "m", "n_unc", "margin", "seed"):
            if getattr(args, key) is not None:
                params[key] = getattr(args, key)
    emit(dump_system(make_example(args.name, **params)) + "\n", args.out)
    return 0


def cmd_certify(args):
    sys = _system(args)
    quad = _quad(args)
    if args.mode == "static":
        _require(args, "T")
        if args.delta_grid:
            rows, ok = [], False
            for delta in parse_grid(args.delta_grid):
                res = certify_static(sys, args.T, delta, quad)
                if res:
                    ok = True
                    rows.append([args.T, delta, "feasible", res.D, None])
                else:
                    rows.append([args.T, delta, "infeasible", None, res.kernel_excess])
            emit(csv_text(["T", "delta", "status", "D", "kernel_excess"], rows), args.out)
            return 0 if ok else 1
        _require(args, "delta")
        res = certify_static(sys, args.T, args.delta, quad)
        if not res:
            emit(dumps({"feasible": False, "T": args.T, "delta": args.delta, "kernel_excess": res.kernel_excess}), args.out)
            return 1
        emit(dumps({"feasible": True, "T": res.T, "delta": res.delta, "D": res.D}), args.out)
        return 0
    if args.mode == "dynamic":
        _require(args, "T", "delta")
        res = certify_static(sys, args.T, args.delta, quad)
        if not res:
            raise DomainError(f"no static certificate exists at T = {args.T:g}, delta = {args.delta:g}")
        cert = static_to_dynamic(sys, res, validate=False)
        report = validate_certificate(sys, cert, 5.0 * res.T, quad=quad)
    else:
        _require(args, "law", "omega")
        law = fb.load_law(read_text(args.law, "law"))
        cert = constants_from_feedback(sys, law.K, args.omega)
        report = validate_certificate(sys, cert, 20.0 / args.omega, quad=quad)
    emit(certificate_to_json(report.certificate) + "\n", args.out)
    return 0 if report.passed else 1


def synthesize(sys, args):
    quad = _quad(args)
    method = args.method
    if method == "main":
        _require(args, "T")
        return fb.synthesize_main(sys, _certificate(args), args.T, quad)
    if method == "general":
        _require(args, "T", "eps")
        return fb.synthesize_general(sys, _certificate(args), args.eps, args.T, quad)
    if method == "rate":
        _require(args, "mu")
        return fb.synthesize_for_rate(sys, args.mu, quad)
    if method == "komornik":
        _require(args, "omega", "T")
        return fb.komornik_feedback(sys, args.omega, args.T, quad)
    if method == "urquiza":
        _require(args, "omega")
        return fb.urquiza_feedback(sys, args.omega, quad)
    return fb.lqr_feedback(sys)


def cmd_synthesize(args):
    law = synthesize(_system(args), args)
    emit(fb.law_to_json(law) + "\n", args.out)
    return 0


def rebuild_bundle(sys, law):
    if law.method not in MUTATED:
        return None
    p = law.params
    try:
        cert = fb.certificate_from_params(p)
        return pi_integral(sys, cert, float(p["eps"]), float(p["T"]), fb.quad_from_params(p))
    except KeyError as exc:
        raise InputError(f"law parameters are missing {exc}") from exc


def cmd_verify(args):
    sys = _system(args)
    _require(args, "law")
    law = fb.load_law(read_text(args.law, "law"))
    if law.K.shape != (sys.m, sys.n):
        raise InputError(f"law gain has shape {law.K.shape}, system expects ({sys.m}, {sys.n})")
    report = verify_law(sys, law, rebuild_bundle(sys, law), Tolerances.from_env(), horizon=args.horizon, seed=args.seed)
    emit(report.to_json() + "\n", args.out)
    return 0 if report.passed else 1


def cmd_sweep(args):
    sys = _system(args)
    cert = _certificate(args)
    quad = _quad(args)
    tol = Tolerances.from_env()
    _require(args, "T_grid")
    Ts = parse_grid(args.T_grid)
    eps_spec = args.eps_grid or "hat"
    header = ["T", "eps", "status", "predicted_rate", "fitted_rate", "abscissa", "lyapunov_residual", "gain_norm", "reason"]
    rows, any_ok, all_pass = [], False, True
    for T in Ts:
        eps_values = [admissible(cert, 0.0, T).eps_hat] if eps_spec == "hat" else parse_grid(eps_spec)
        for eps in eps_values:
            verdict = admissible(cert, eps, T)
            if not verdict.ok:
                rows.append([T, eps, verdict.status, None, None, None, None, None, verdict.reason])
                continue
            try:
                law = fb.synthesize_general(sys, cert, eps, T, quad)
                decay = closed_loop_report(sys, law, tol=tol)
                res = lyapunov_residual(sys, law.bundle)
            except StabkitError as exc:
                rows.append([T, eps, "error", None, None, None, None, None, str(exc)])
                all_pass = False
                continue
            passed = decay["passed"] and res <= tol.lyapunov
            any_ok = True
            all_pass &= passed
            rows.append(
                [
                    T,
                    eps,
                    "ok" if passed else "fail",
                    law.predicted_rate,
                    decay["fitted_rate"],
                    decay["spectral_abscissa"],
                    res,
                    float(np.linalg.norm(law.K, 2)),
                    "",
                ]
            )
    emit(csv_text(header, rows), args.out)
    return 0 if any_ok and all_pass else 1


def compare_row(sys, method, args, cert, tol):
    quad = _quad(args)
    start = time.perf_counter()
    if method == "main":
        cert = cert or auto_certificate(sys)
        law = fb.synthesize_main(sys, cert, args.T if args.T is not None else default_T(cert), quad)
    elif method == "rate":
        law = fb.synthesize_for_rate(sys, args.mu if args.mu is not None else 0.5 * min(analyze(sys).omega_star, 2.0), quad)
    elif method == "komornik":
        law = fb.komornik_feedback(sys, args.omega or 1.0, args.T or 1.0, quad)
    elif method == "urquiza":
        law = fb.urquiza_feedback(sys, args.omega or 1.0, quad)
    else:
        law = fb.lqr_feedback(sys)
    elapsed = time.perf_counter() - start
    decay = closed_loop_report(sys, law, tol=tol)
    return law, decay, elapsed


def cmd_compare(args):
    sys = _system(args)
    methods = [m.strip() for m in (args.methods or "").split(",") if m.strip()]
    if not methods:
        raise InputError("compare needs at least one method in --methods")
    unknown = sorted(set(methods) - set(COMPARE_METHODS))
    if unknown:
        raise InputError(f"unknown methods {unknown}; choose from {list(COMPARE_METHODS)}")
    cert = _certificate(args, required=False)
    tol = Tolerances.from_env()
    header = ["method", "status", "predicted_rate", "fitted_rate", "abscissa", "gain_norm", "wall_time", "reason"]
    rows, all_pass = [], True
    for method in methods:
        try:
            law, decay, elapsed = compare_row(sys, method, args, cert, tol)
        except StabkitError as exc:
            rows.append([method, "refused" if isinstance(exc, InputError) else "error", None, None, None, None, None, str(exc)])
            if method in ("main", "rate", "lqr"):
                all_pass = False
            continue
        all_pass &= decay["passed"]
        rows.append(
            [
                method,
                "ok" if decay["passed"] else "fail",
                law.predicted_rate,
                decay["fitted_rate"],
                decay["spectral_abscissa"],
                float(np.linalg.norm(law.K, 2)),
                elapsed if args.timing else None,
                "",
            ]
        )
    emit(csv_text(header, rows), args.out)
    return 0 if all_pass else 1


# --------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(_sys.stderr)
        raise InputError(message)


def build_parser():
    parser = _Parser(prog="stabkit", description="Stabilizing feedback from weak observability certificates.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, system=True):
        if system:
            p.add_argument("--system", help="system JSON file")
        p.add_argument("--out", help="output file (default: stdout)")
        p.add_argument("--panels", type=int, default=DEFAULT_QUAD.panels)
        p.add_argument("--rule", choices=("simpson", "gauss"), default="simpson")
        p.add_argument("--nodes-per-panel", type=int, default=4)
        p.add_argument("--seed", type=int, default=0)

    def cert_flags(p):
        p.add_argument("--cert", help="certificate JSON file")
        p.add_argument("--alpha", type=float)
        p.add_argument("--D", type=float)
        p.add_argument("--C", type=float)

    p = sub.add_parser("example", help="write a named example system")
    common(p, system=False)
    p.add_argument("--name", required=True, choices=sorted(EXAMPLES))
    p.add_argument("--a", type=float)
    p.add_argument("--rates")
    p.add_argument("--n", type=int)
    p.add_argument("--m", type=int)
    p.add_argument("--n-unc", type=int)
    p.add_argument("--margin", type=float)
    p.add_argument("--speed", type=float)
    p.add_argument("--window", help="start:width")
    p.add_argument("--masses", type=int)
    p.add_argument("--damping", type=float)

    p = sub.add_parser("certify", help="compute an observability certificate")
    common(p)
    p.add_argument("--mode", choices=("static", "dynamic", "from-feedback"), default="static")
    p.add_argument("--T", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--delta-grid")
    p.add_argument("--law")
    p.add_argument("--omega", type=float, help="decay rate theta of the law (from-feedback)")

    p = sub.add_parser("synthesize", help="synthesize a feedback law")
    common(p)
    cert_flags(p)
    p.add_argument("--method", choices=("main", "general", "rate", "komornik", "urquiza", "lqr"), default="main")
    p.add_argument("--T", type=float)
    p.add_argument("--eps", type=float)
    p.add_argument("--mu", type=float)
    p.add_argument("--omega", type=float)

    p = sub.add_parser("verify", help="verify a feedback law")
    common(p)
    p.add_argument("--law")
    p.add_argument("--horizon", type=float)

    p = sub.add_parser("sweep", help="sweep the mutated family over (T, eps)")
    common(p)
    cert_flags(p)
    p.add_argument("--T-grid")
    p.add_argument("--eps-grid", help="a:b:n, a single value, or 'hat' for ln(C)/T (default)")

    p = sub.add_parser("compare", help="compare synthesis methods")
    common(p)
    cert_flags(p)
    p.add_argument("--methods", default="main,komornik,urquiza,lqr")
    p.add_argument("--T", type=float)
    p.add_argument("--mu", type=float)
    p.add_argument("--omega", type=float)
    p.add_argument("--timing", action="store_true", help="record synthesis wall time (makes output nondeterministic)")
    return parser


COMMANDS = {
    "example": cmd_example,
    "certify": cmd_certify,
    "synthesize": cmd_synthesize,
    "verify": cmd_verify,
    "sweep": cmd_sweep,
    "compare": cmd_compare,
}


def run(argv=None):
    """Execute one subcommand and return its exit code."""
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except StabkitError as exc:
        print(f"stabkit: error: {exc}", file=_sys.stderr)
        return exc.exit_code
    except np.linalg.LinAlgError as exc:
        print(f"stabkit: numerical failure: {exc}", file=_sys.stderr)
        return NumericalError.exit_code
    except SystemExit as exc:
        # --help and friends
        return int(exc.code or 0)


def main():
    _sys.exit(run())


if __name__ == "__main__":
    main()
