"""Command-line interface: ``levy-action <subcommand> ...``.

Exit status is 0 on success, 1 for invalid input and 2 for numerical
failure.  Output goes to ``--out`` (written atomically, never partially) or
to stdout.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile

import jsonschema
import numpy as np

from . import action as act
from .errors import ExpressionSyntaxError, LevyActionError, NumericalError, ValidationError
from .expr import Expression
from .legendre import legendre_transform, mgf_fn
from .levy_core import AtomicMeasure, DensityMeasure, ExponentialTail, LevyTriplet, TemperedStable
from .minimize import BoundaryProblem, minimize_action
from .model import CoefficientSet, ModelSpec
from .montecarlo import EventSpec, equivalence_gap, parse_event, rate_table
from .paths import Path
from .simulate import RngStream, euler_maruyama

_NUM = {"type": "number"}
_COEF = {"oneOf": [{"type": "string", "minLength": 1}, _NUM]}

MODEL_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "triplet": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "a": _NUM,
                "sigma2": {"type": "number", "minimum": 0},
                "nu": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["kind"],
                    "properties": {
                        "kind": {"enum": ["none", "atoms", "tempered_stable", "exponential_tail", "density"]},
                        "params": {"type": "object"},
                    },
                },
            },
        },
        "coefficients": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"b": _COEF, "sigma": _COEF, "eta": _COEF},
        },
        "epsilon": {"type": "number", "exclusiveMinimum": 0},
        "n": {"type": "integer", "minimum": 1},
        "state_interval": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
        "lipschitz": {"type": "number", "exclusiveMinimum": 0},
        "sup_bound": {"type": "number", "exclusiveMinimum": 0},
    },
}

_NU_SCHEMAS = {
    "none": {"type": "object", "maxProperties": 0},
    "atoms": {
        "type": "object",
        "required": ["atoms"],
        "additionalProperties": False,
        "properties": {
            "atoms": {
                "type": "array",
                "items": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
            }
        },
    },
    "tempered_stable": {
        "type": "object",
        "required": ["alpha", "m"],
        "additionalProperties": False,
        "properties": {
            "alpha": {"type": "number", "exclusiveMinimum": 1, "exclusiveMaximum": 2},
            "m": {"type": "number", "exclusiveMinimum": 0},
            "rho": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            "R": {"type": "number", "exclusiveMinimum": 1},
        },
    },
    "exponential_tail": {
        "type": "object",
        "required": ["alpha"],
        "additionalProperties": False,
        "properties": {
            "alpha": {"type": "number", "exclusiveMinimum": 0},
            "rho": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            "R": {"type": "number", "exclusiveMinimum": 1},
        },
    },
    "density": {
        "type": "object",
        "required": ["expression"],
        "additionalProperties": False,
        "properties": {
            "expression": {"type": "string", "minLength": 1},
            "support": {"enum": ["both", "positive", "negative"]},
            "rho": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            "R": {"type": "number", "exclusiveMinimum": 1},
        },
    },
}

LIPSCHITZ_SAMPLES = 2001


def _pointer(path):
    return "/" + "/".join(str(p) for p in path) if path else ""


def _validate(doc, schema, prefix=""):
    err = jsonschema.exceptions.best_match(jsonschema.Draft7Validator(schema).iter_errors(doc))
    if err is not None:
        raise ValidationError(err.message, prefix + _pointer(err.absolute_path))


def _compile(value, pointer, variable="x"):
    if isinstance(value, (int, float)):
        return float(value)
    try:
        e = Expression(value, variable)
    except ExpressionSyntaxError as exc:
        exc.pointer = pointer
        exc.args = (f"{pointer}: {exc.args[0]}",)
        raise
    except ValidationError as exc:
        raise ValidationError(exc.message, pointer) from None
    return e(0.0) if e.is_constant else e


def _measure(nu):
    kind = nu["kind"]
    params = nu.get("params", {})
    _validate(params, _NU_SCHEMAS[kind], "/triplet/nu/params")
    try:
        if kind == "none":
            return AtomicMeasure()
        if kind == "atoms":
            return AtomicMeasure(tuple((float(z), float(w)) for z, w in params["atoms"]))
        if kind == "tempered_stable":
            return TemperedStable(params["alpha"], params["m"], **{k: params[k] for k in ("rho", "R") if k in params})
        if kind == "exponential_tail":
            return ExponentialTail(params["alpha"], **{k: params[k] for k in ("rho", "R") if k in params})
        dens = _compile(params["expression"], "/triplet/nu/params/expression", "y")
        if isinstance(dens, float):
            raise ValidationError("a constant density is not a Lévy measure", "/triplet/nu/params/expression")
        extra = {k: params[k] for k in ("support", "rho", "R") if k in params}
        return DensityMeasure(density=dens, **extra)
    except ValidationError as exc:
        ptr = exc.pointer or ""
        if ptr.startswith("/triplet"):
            raise
        base = "/triplet/nu" if ptr.startswith("/params") else "/triplet/nu/params"
        raise ValidationError(exc.message, base + ptr) from None


def _check_coefficient(name, fn, interval, declared):
    """Sample ``fn`` on the state interval; enforce finiteness and the Lipschitz bound."""
    if isinstance(fn, float):
        if not math.isfinite(fn):
            raise ValidationError(f"coefficient {name} is not finite", f"/coefficients/{name}")
        return 0.0
    x = np.linspace(interval[0], interval[1], LIPSCHITZ_SAMPLES)
    y = fn(x)
    if not np.all(np.isfinite(y)):
        bad = x[~np.isfinite(y)][0]
        raise ValidationError(f"coefficient {name} is not finite at x = {bad:g}", f"/coefficients/{name}")
    lip = float(np.max(np.abs(np.diff(y)) / np.diff(x)))
    if declared is not None and lip > declared * (1 + 1e-9):
        raise ValidationError(
            f"coefficient {name} has sampled Lipschitz constant {lip:.6g} > declared {declared:g}",
            f"/coefficients/{name}",
        )
    return lip


def model_from_document(doc):
    """Validate a model document and build the :class:`ModelSpec`."""
    _validate(doc, MODEL_SCHEMA)
    tdoc = doc.get("triplet", {})
    nu = _measure(tdoc.get("nu", {"kind": "none"}))
    triplet = LevyTriplet(a=tdoc.get("a", 0.0), sigma2=tdoc.get("sigma2", 0.0), nu=nu)
    cdoc = doc.get("coefficients", {})
    defaults = {"b": 0.0, "sigma": 1.0, "eta": 0.0}
    fns = {k: _compile(cdoc.get(k, defaults[k]), f"/coefficients/{k}") for k in defaults}
    interval = tuple(doc.get("state_interval", (-10.0, 10.0)))
    if not interval[0] < interval[1]:
        raise ValidationError("state_interval must be increasing", "/state_interval")
    declared = doc.get("lipschitz")
    lips = [_check_coefficient(k, f, interval, declared) for k, f in fns.items()]
    coeffs = CoefficientSet(
        b=fns["b"], sigma=fns["sigma"], eta=fns["eta"],
        lipschitz=declared if declared is not None else max(lips), sup_bound=doc.get("sup_bound"),
    )
    return ModelSpec(coeffs, triplet, float(doc.get("epsilon", 1.0)))


def _read_json(path, what):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ValidationError(f"{what} file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{what} file {path} is not valid JSON: {exc}") from None


def parse_model(path):
    """Read, validate and build the model in the JSON file ``path``."""
    doc = _read_json(path, "model")
    if not isinstance(doc, dict):
        raise ValidationError("model document must be a JSON object", "")
    return model_from_document(doc), doc


def _read_path(path, index=0):
    doc = _read_json(path, "path")
    if isinstance(doc, dict) and "paths" in doc:
        try:
            doc = doc["paths"][index]
        except (IndexError, TypeError):
            raise ValidationError(f"no path at index {index}", "/paths") from None
    return Path.from_dict(doc)


# -- output --------------------------------------------------------------------


def _emit(text, out):
    if out is None or out == "-":
        sys.stdout.write(text)
        return
    directory = os.path.dirname(os.path.abspath(out))
    fd, tmp = tempfile.mkstemp(prefix=".levy-action-", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, out)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _g(v):
    return "%.17g" % v


def _csv(header, rows):
    lines = [",".join(header)]
    lines += [",".join(c if isinstance(c, str) else _g(c) for c in r) for r in rows]
    return "\n".join(lines) + "\n"


def _dumps(doc):
    return json.dumps(doc, sort_keys=True, indent=1, allow_nan=True) + "\n"


def _grid(lo, hi, points):
    if points < 1:
        raise ValidationError("--points must be >= 1")
    return np.linspace(lo, hi, points)


# -- subcommands ---------------------------------------------------------------


def cmd_symbol(args):
    model, _ = parse_model(args.model)
    t = model.triplet
    rows = []
    for xi in _grid(args.xi_min, args.xi_max, args.points):
        psi = complex(t.psi(xi))
        rows.append((xi, psi.real, psi.imag, t.Psi(xi, 0), t.Psi(xi, 1), t.Psi(xi, 2)))
    return _csv(("xi", "re_psi", "im_psi", "Psi", "dPsi", "d2Psi"), rows)


def cmd_legendre(args):
    model, _ = parse_model(args.model)
    f = mgf_fn(model.triplet)
    rows = []
    for p in _grid(args.p_min, args.p_max, args.points):
        r = legendre_transform(f, p, tol=args.tol)
        rows.append((p, r.value, r.argmax, r.stationarity_residual, r.status))
    return _csv(("p", "Psi_star", "argmax", "residual", "status"), rows)


def cmd_action(args):
    path = _read_path(args.path, args.index)
    if args.model is None:
        if args.functional != "brownian":
            raise ValidationError(f"functional {args.functional!r} needs --model")
        model = None
    else:
        model, _ = parse_model(args.model)
    value = act.evaluate(args.functional, path, model, x0=None if args.any_start else 0.0)
    print(_g(value))
    if args.out:
        return _dumps({"functional": args.functional, "action": value, "n": path.n})
    return None


def cmd_minimize(args):
    model, doc = parse_model(args.model)
    n = args.n if args.n is not None else doc.get("n", 200)
    functional = args.functional or ("general" if model.has_jumps else "sde_brownian")
    res = minimize_action(BoundaryProblem(functional, model, args.x1, n), gtol=args.gtol, maxiter=args.maxiter)
    print(_g(res.action))
    return _dumps(res.to_dict())


def cmd_simulate(args):
    model, doc = parse_model(args.model)
    n = args.n if args.n is not None else doc.get("n", 200)
    rng = RngStream(args.seed)
    paths = [euler_maruyama(model, n, rng.child(i), rho=args.rho) for i in range(args.samples)]
    if args.format == "csv":
        t = paths[0].times
        header = ["t"] + [f"x{i}" for i in range(len(paths))]
        return _csv(header, [[t[k]] + [p.values[k] for p in paths] for k in range(n + 1)])
    docs = [p.to_dict() for p in paths]
    if any(p.aborted for p in paths):
        for d, p in zip(docs, paths):
            d["aborted"] = p.aborted
    return _dumps(docs[0] if len(docs) == 1 else {"paths": docs})


def _floats(text, flag):
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ValidationError(f"{flag} must be a comma-separated list of numbers") from None
    if not vals:
        raise ValidationError(f"{flag} is empty")
    return vals


def cmd_rate_table(args):
    model, doc = parse_model(args.model)
    n = args.n if args.n is not None else doc.get("n", 100)
    reference = _read_path(args.reference) if args.reference else None
    event = parse_event(args.event, reference)
    table = rate_table(
        model, event, _floats(args.eps, "--eps"), args.samples, n, RngStream(args.seed),
        correction=args.correction, minimize_n=args.minimize_n,
    )
    sys.stderr.write(f"extrapolated limit ({table.correction}): {_g(table.extrapolated)}\n")
    return table.to_csv()


def cmd_equivalence(args):
    rng = RngStream(args.seed)
    model, doc = parse_model(args.model)
    rows = []
    if args.variant == "sde":
        n = args.n if args.n is not None else doc.get("n", 64)
        for i, m in enumerate(_floats(args.m, "--m")):
            if m != int(m):
                raise ValidationError("--m must list integers")
            g = equivalence_gap(model, args.samples, args.delta, rng, m=int(m), n=n)
            rows.append((int(m), g.frequency, g.ci95[0], g.ci95[1], g.mean_gap))
        header = ("m", "frequency", "ci_lo", "ci_hi", "mean_gap")
    else:
        for e in _floats(args.eps, "--eps"):
            g = equivalence_gap(model.triplet, args.samples, args.delta, rng, epsilon=e)
            rows.append((e, g.frequency, g.ci95[0], g.ci95[1], g.mean_gap))
        header = ("epsilon", "frequency", "ci_lo", "ci_hi", "mean_gap")
    return _csv(header, rows)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(f"{self.prog}: {message}")


def build_parser():
    p = _Parser(prog="levy-action", description="Action functionals, minimum-action paths and LDP checks.")
    p.add_argument("--threads", type=int, help="worker threads (overrides LEVY_ACTION_THREADS)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, model=True):
        if model:
            sp.add_argument("--model", required=True, help="model JSON document")
        sp.add_argument("--out", help="output file (default: stdout)")

    s = sub.add_parser("symbol", help="tabulate psi and Psi")
    common(s)
    s.add_argument("--xi-min", type=float, default=-5.0)
    s.add_argument("--xi-max", type=float, default=5.0)
    s.add_argument("--points", type=int, default=101)
    s.set_defaults(func=cmd_symbol)

    s = sub.add_parser("legendre", help="tabulate Psi*")
    common(s)
    s.add_argument("--p-min", type=float, default=-2.0)
    s.add_argument("--p-max", type=float, default=2.0)
    s.add_argument("--points", type=int, default=81)
    s.add_argument("--tol", type=float, default=1e-10)
    s.set_defaults(func=cmd_legendre)

    s = sub.add_parser("action", help="evaluate a functional on a path file")
    s.add_argument("--model", help="model JSON (not needed for 'brownian')")
    s.add_argument("--out")
    s.add_argument("--functional", choices=act.FUNCTIONALS, default="brownian")
    s.add_argument("--path", required=True, help="path JSON")
    s.add_argument("--index", type=int, default=0, help="path index in a multi-path file")
    s.add_argument("--any-start", action="store_true", help="do not require phi(0) = 0")
    s.set_defaults(func=cmd_action)

    s = sub.add_parser("minimize", help="minimum-action path from 0 to --x1")
    common(s)
    s.add_argument("--x1", type=float, required=True)
    s.add_argument("--n", type=int)
    s.add_argument("--functional", choices=act.FUNCTIONALS)
    s.add_argument("--gtol", type=float)
    s.add_argument("--maxiter", type=int)
    s.set_defaults(func=cmd_minimize)

    s = sub.add_parser("simulate", help="Euler sample paths of the SDE")
    common(s)
    s.add_argument("--n", type=int)
    s.add_argument("--samples", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--rho", type=float, help="small-jump cutoff")
    s.add_argument("--format", choices=("json", "csv"), default="json")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("rate-table", help="eps log P table against -inf S")
    common(s)
    s.add_argument("--event", required=True, help="terminal>=c, terminal<=c, sup>=c or tube<=d")
    s.add_argument("--reference", help="reference path JSON for tube events")
    s.add_argument("--eps", required=True, help="comma-separated decreasing epsilons")
    s.add_argument("--samples", type=int, default=100000)
    s.add_argument("--n", type=int)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--correction", default="eps_log", choices=("eps_log", "linear", "eps_log_linear", "none"))
    s.add_argument("--minimize-n", type=int, default=400)
    s.set_defaults(func=cmd_rate_table)

    s = sub.add_parser("equivalence", help="approximation-gap tail frequencies")
    common(s)
    s.add_argument("--variant", choices=("levy", "sde"), default="sde")
    s.add_argument("--m", default="1,2,4,8", help="coarse grid sizes (sde variant)")
    s.add_argument("--eps", default="0.5,0.25,0.1", help="epsilons (levy variant)")
    s.add_argument("--n", type=int, help="fine grid (sde variant)")
    s.add_argument("--samples", type=int, default=10000)
    s.add_argument("--delta", type=float, default=0.1)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_equivalence)
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        if args.threads is not None:
            if args.threads < 1:
                raise ValidationError("--threads must be >= 1")
            os.environ["LEVY_ACTION_THREADS"] = str(args.threads)
        with np.errstate(all="ignore"):
            text = args.func(args)
        if text is not None:
            _emit(text, args.out)
        return 0
    except ValidationError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    except NumericalError as exc:
        sys.stderr.write(f"numerical failure: {exc}\n")
        return 2
    except LevyActionError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
