"""Batch front door: read problem files, dispatch analyses, emit
deterministic JSON reports plus a human summary on stderr.

Exit codes separate three situations that CI pipelines must tell apart:

    0   the analysis ran and is certified (a NotMetric verdict is a
        successful analysis, not an error)
    2   the input was rejected (malformed JSON, bad shapes, expression
        parse errors); diagnostics name the offending field
    3   the analysis ran but is not certified (kernel stabilisation not
        reached, or a residual gate failed)

Reports are byte-identical across runs for a fixed problem file and
seed: floats are serialised with 17 significant digits, keys are sorted,
and the timing field is zero unless --timings is passed explicitly.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import expr as ex
from . import symmatrix as sm
from .bundle import (
    ChartDomain,
    Connection,
    GaugeTransform,
    MetricField,
    apply_gauge,
    curvature,
    dual_connection,
    dual_gauge_compatibility_residual,
    identity_metric,
)
from .homsolver import SolveOptions, solve_hom
from .metricity import (
    ToleranceProfile,
    decide_metricity,
    index_report,
)
from .statmodels import alpha_scan, get_family

__all__ = ["main", "run_command", "validate_problem", "canonical_json"]

COMMANDS = (
    "dual",
    "curvature",
    "solve-fe",
    "metricity",
    "index",
    "alpha-scan",
    "gauge-check",
    "validate",
)


class _F:
    """Float carrying its own significant-digit count for serialisation."""

    __slots__ = ("value", "digits")

    def __init__(self, value: float, digits: int = 12):
        self.value = float(value)
        self.digits = digits


def _format_float(v: float, digits: int = 17) -> str:
    if v != v or v in (float("inf"), float("-inf")):
        return "null"
    text = format(v, f".{digits}g")
    return text


def canonical_json(obj, indent: int = 0) -> str:
    """Deterministic JSON: sorted keys, fixed float formatting."""
    pad = " " * indent
    if obj is None:
        return "null"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, _F):
        return _format_float(obj.value, obj.digits)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _format_float(float(obj))
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = []
        for key in sorted(obj):
            items.append(
                f"{pad}  {json.dumps(str(key))}: {canonical_json(obj[key], indent + 2)}"
            )
        return "{\n" + ",\n".join(items) + f"\n{pad}}}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        items = [f"{pad}  {canonical_json(v, indent + 2)}" for v in seq]
        return "[\n" + ",\n".join(items) + f"\n{pad}]"
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _matrix_12(matrix: np.ndarray) -> list:
    return [[_F(float(v), 12) for v in row] for row in np.asarray(matrix)]


# ---------------------------------------------------------------------------
# Problem file loading and validation
# ---------------------------------------------------------------------------


def _diag(path: str, code: str, message: str, offset: int | None = None) -> dict:
    d = {"path": path, "code": code, "message": message}
    if offset is not None:
        d["offset"] = offset
    return d


def _expect_shape(value, dims: tuple[int, ...], path: str, diagnostics: list) -> bool:
    if not dims:
        if not isinstance(value, str):
            diagnostics.append(
                _diag(path, "type", f"expected an expression string, got {type(value).__name__}")
            )
            return False
        return True
    if not isinstance(value, list) or len(value) != dims[0]:
        got = len(value) if isinstance(value, list) else type(value).__name__
        diagnostics.append(
            _diag(path, "shape", f"expected a list of length {dims[0]}, got {got}")
        )
        return False
    ok = True
    for idx, item in enumerate(value):
        ok = _expect_shape(item, dims[1:], f"{path}[{idx}]", diagnostics) and ok
    return ok


def _check_expressions(value, dim: int, path: str, diagnostics: list):
    if isinstance(value, str):
        try:
            e = ex.parse(value)
        except ex.ParseError as err:
            diagnostics.append(_diag(path, "parse", err.message, err.offset))
            return
        bad = sorted(i for i in ex.variables(e) if i > dim)
        if bad:
            diagnostics.append(
                _diag(
                    path,
                    "unknown-variable",
                    f"expression uses x{bad[0]} but the problem has dim {dim}",
                )
            )
        return
    if isinstance(value, list):
        for idx, item in enumerate(value):
            _check_expressions(item, dim, f"{path}[{idx}]", diagnostics)


def validate_problem(data) -> list[dict]:
    """Structural and expression diagnostics, without running analyses."""
    diagnostics: list[dict] = []
    if not isinstance(data, dict):
        return [_diag("$", "type", "problem file must be a JSON object")]
    dim = data.get("dim")
    rank = data.get("rank")
    if not isinstance(dim, int) or not 1 <= dim <= ex.MAX_VARIABLES:
        diagnostics.append(_diag("dim", "value", "dim must be an integer in 1..9"))
        dim = None
    if not isinstance(rank, int) or not 1 <= rank <= sm.MAX_INVERSE_RANK:
        diagnostics.append(
            _diag("rank", "value", f"rank must be an integer in 1..{sm.MAX_INVERSE_RANK}")
        )
        rank = None
    domain = data.get("domain")
    if not isinstance(domain, dict):
        diagnostics.append(_diag("domain", "type", "domain must be an object"))
    elif dim is not None:
        for key in ("lower", "upper"):
            bounds = domain.get(key)
            if (
                not isinstance(bounds, list)
                or len(bounds) != dim
                or not all(isinstance(v, (int, float)) for v in bounds)
            ):
                diagnostics.append(
                    _diag(f"domain.{key}", "shape", f"must be a list of {dim} numbers")
                )
        if (
            isinstance(domain.get("lower"), list)
            and isinstance(domain.get("upper"), list)
            and len(domain["lower"]) == len(domain["upper"]) == dim
        ):
            for i, (lo, hi) in enumerate(zip(domain["lower"], domain["upper"])):
                if isinstance(lo, (int, float)) and isinstance(hi, (int, float)) and not lo < hi:
                    diagnostics.append(
                        _diag(f"domain.lower[{i}]", "value", "need lower < upper")
                    )
        grid = domain.get("gridPerAxis")
        if grid is not None and (not isinstance(grid, int) or grid < 3):
            diagnostics.append(
                _diag("domain.gridPerAxis", "value", "gridPerAxis must be an integer >= 3")
            )
    if "connection" not in data:
        diagnostics.append(_diag("connection", "missing", "connection array is required"))
    if dim is not None and rank is not None:
        if "connection" in data and _expect_shape(
            data["connection"], (dim, rank, rank), "connection", diagnostics
        ):
            _check_expressions(data["connection"], dim, "connection", diagnostics)
        for key, dims in (
            ("metric", (rank, rank)),
            ("gauge", (rank, rank)),
            ("dualConnection", (dim, rank, rank)),
        ):
            if key in data and data[key] is not None:
                if _expect_shape(data[key], dims, key, diagnostics):
                    _check_expressions(data[key], dim, key, diagnostics)
    seed = data.get("seed")
    if seed is not None and not isinstance(seed, int):
        diagnostics.append(_diag("seed", "type", "seed must be an integer"))
    tolerances = data.get("tolerances")
    if tolerances is not None:
        if not isinstance(tolerances, dict):
            diagnostics.append(_diag("tolerances", "type", "tolerances must be an object"))
        else:
            for key, v in tolerances.items():
                if key not in ("transport", "kernel", "substitution"):
                    diagnostics.append(
                        _diag(f"tolerances.{key}", "unknown-key", "unknown tolerance override")
                    )
                elif not isinstance(v, (int, float)) or v <= 0:
                    diagnostics.append(
                        _diag(f"tolerances.{key}", "value", "tolerance must be positive")
                    )
    return diagnostics


def _problem_hash(data) -> str:
    return hashlib.sha256(canonical_json(data).encode("utf-8")).hexdigest()


class ProblemObjects:
    def __init__(self, data: dict, args):
        self.data = data
        m, r = data["dim"], data["rank"]
        dom = data["domain"]
        grid = args.grid or dom.get("gridPerAxis") or 9
        self.domain = ChartDomain(
            tuple(dom["lower"]), tuple(dom["upper"]), (grid,) * m
        )
        self.r = r
        self.connection = Connection(self.domain, r, data["connection"])
        self.metric = (
            MetricField(self.domain, r, data["metric"], declared_rank=r)
            if data.get("metric")
            else None
        )
        self.gauge = (
            GaugeTransform(self.domain, r, data["gauge"]) if data.get("gauge") else None
        )
        self.dual = (
            Connection(self.domain, r, data["dualConnection"])
            if data.get("dualConnection")
            else None
        )
        self.seed = args.seed if args.seed is not None else data.get("seed", 0)
        tolerances = data.get("tolerances") or {}
        self.tol = ToleranceProfile()
        if args.tol_transport is not None:
            self.tol.transport_residual = args.tol_transport
        elif "transport" in tolerances:
            self.tol.transport_residual = float(tolerances["transport"])
        if args.tol_kernel is not None:
            self.tol.kernel_cutoff = args.tol_kernel
        elif "kernel" in tolerances:
            self.tol.kernel_cutoff = float(tolerances["kernel"])
        if "substitution" in tolerances:
            self.tol.substitution_residual = float(tolerances["substitution"])
        self.options = SolveOptions(
            max_order=args.max_order if args.max_order is not None else 3,
            kernel_cutoff=self.tol.kernel_cutoff,
            transport_tol=self.tol.transport_residual,
            seed=self.seed,
        )

    def base_metric(self) -> MetricField:
        return self.metric or identity_metric(self.domain, self.r)


# ---------------------------------------------------------------------------
# Command handlers: each returns (result_dict, certified_bool)
# ---------------------------------------------------------------------------


def _space_summary(space) -> dict:
    return {
        "dimension": space.dimension,
        "constraintDim": space.constraint_dim,
        "certifiedResidual": space.certified_residual,
        "stabilized": space.stabilized,
        "stabilizationOrder": space.stabilization_order,
        "basePoint": [_F(v, 12) for v in space.base_point],
        "basis": [_matrix_12(b) for b in space.basis],
        "flags": list(space.flags),
    }


def _certificate_dict(cert) -> dict:
    witness = None
    if cert.witness_base is not None:
        witness = {
            "basePointMatrix": _matrix_12(cert.witness_base),
            "rank": cert.witness_rank,
            "minAbsDetOnGrid": cert.witness_min_abs_det,
            "transportResidual": cert.witness_transport_residual,
        }
    return {
        "verdict": cert.verdict,
        "maxParallelMetricRank": cert.max_witness_rank,
        "dimS2": cert.dim_s2,
        "dimOmega2": cert.dim_omega2,
        "dimJ": cert.dim_j,
        "exactSequenceHolds": cert.exact_sequence_ok,
        "witness": witness,
        "residuals": {k: v for k, v in cert.residuals.items()},
        "stabilized": cert.stabilized,
        "certified": cert.certified,
        "flags": list(cert.flags),
        "basePoint": [_F(v, 12) for v in cert.base_point],
        "toleranceProfile": cert.tolerances.as_dict(),
    }


def _cmd_metricity(p: ProblemObjects, args):
    # the certificate's dimension bookkeeping always uses the identity
    # base metric; a user metric enters through `index` and `dual`
    cert = decide_metricity(p.connection, options=p.options, tol=p.tol)
    return {"certificate": _certificate_dict(cert)}, cert.certified


def _cmd_index(p: ProblemObjects, args):
    family = []
    if args.metric_family:
        entries = json.loads(Path(args.metric_family).read_text(encoding="utf-8"))
        for k, mat in enumerate(entries):
            family.append(MetricField(p.domain, p.r, mat, declared_rank=p.r))
    cert = decide_metricity(p.connection, options=p.options, tol=p.tol)
    report = index_report(
        p.connection,
        family,
        p.options,
        p.tol,
        primary_metric=p.metric,
        certificate=cert,
    )
    result = {
        "indexReport": {
            "sb_given_g": report.sb_given_g,
            "sb": report.sb,
            "ind_decision": report.ind_decision,
            "maxParallelMetricRank": report.max_parallel_metric_rank,
            "familySize": report.family_size,
            "flags": list(report.flags),
        },
        "certificate": _certificate_dict(cert),
    }
    return result, cert.certified


def _cmd_dual(p: ProblemObjects, args):
    metric = p.base_metric()
    dual = dual_connection(metric, p.connection)
    back = dual_connection(metric, dual)
    pts = p.domain.sample_points()
    residual = 0.0
    for a, b in zip(back.gamma, p.connection.gamma):
        residual = max(residual, sm.max_abs_on_points(sm.mat_sub(a, b), pts))
    result = {
        "dualConnection": [
            [[ex.to_string(e) for e in row] for row in g] for g in dual.gamma
        ],
        "involutionResidual": residual,
        "usedIdentityMetric": p.metric is None,
    }
    return result, residual <= 1e-9


def _cmd_curvature(p: ProblemObjects, args):
    field = curvature(p.connection)
    result = {
        "maxAbsOnGrid": field.max_abs_on_grid(),
        "flat": field.is_flat(),
        "entries": [
            [
                [[ex.to_string(e) for e in row] for row in field.entries[i][j]]
                for j in range(p.domain.m)
            ]
            for i in range(p.domain.m)
        ],
    }
    return result, True


def _cmd_solve_fe(p: ProblemObjects, args):
    dual = p.dual or dual_connection(p.base_metric(), p.connection)
    space = solve_hom(p.connection, dual, p.options)
    return {"solutionSpace": _space_summary(space)}, space.stabilized


def _cmd_gauge_check(p: ProblemObjects, args):
    if p.gauge is None:
        raise _InputError([_diag("gauge", "missing", "gauge-check needs a gauge matrix")])
    phi = p.gauge
    phi.require_invertible()
    inv_entries = sm.inverse_mat(phi.entries)
    phi_inv = GaugeTransform(p.domain, p.r, inv_entries)
    transformed = apply_gauge(phi, p.connection)
    back = apply_gauge(phi_inv, transformed)
    pts = p.domain.sample_points()
    round_trip = 0.0
    for a, b in zip(back.gamma, p.connection.gamma):
        round_trip = max(round_trip, sm.max_abs_on_points(sm.mat_sub(a, b), pts))
    compat = dual_gauge_compatibility_residual(phi, p.base_metric(), p.connection)
    base_curv = curvature(p.connection)
    trans_curv = curvature(transformed)
    conj = 0.0
    for x in pts:
        pm = phi.matrix_at(x)
        pm_inv = np.linalg.inv(pm)
        for i, j in base_curv.pairs():
            expected = pm_inv @ base_curv.matrix_at(x, i, j) @ pm
            conj = max(
                conj, float(np.abs(trans_curv.matrix_at(x, i, j) - expected).max())
            )
    result = {
        "gaugeRoundTripResidual": round_trip,
        "dualGaugeCompatibilityResidual": compat,
        "curvatureConjugationResidual": conj,
        "minAbsDetOnGrid": phi.min_abs_det_on_grid(),
    }
    ok = round_trip <= 1e-9 and compat <= 1e-8 and conj <= 1e-8
    return result, ok


def _cmd_alpha_scan(args):
    family = get_family(args.family)
    alphas = [float(a) for a in args.alphas.split(",") if a.strip() != ""]
    if not alphas:
        raise _InputError([_diag("--alphas", "value", "need at least one alpha")])
    report = alpha_scan(family, alphas)
    per_alpha = []
    certified = True
    for a, cert in zip(report.alphas, report.certificates):
        per_alpha.append({"alpha": a, "certificate": _certificate_dict(cert)})
        certified = certified and cert.certified
    result = {
        "family": report.family,
        "alphas": list(report.alphas),
        "perAlpha": per_alpha,
        "theorem4Consistent": report.theorem_consistent,
        "flags": list(report.flags),
    }
    return result, certified


class _InputError(Exception):
    def __init__(self, diagnostics: list[dict]):
        super().__init__("input rejected")
        self.diagnostics = diagnostics


def _load_json(path: str):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as err:
        raise _InputError([_diag(path, "io", str(err))]) from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as err:
        raise _InputError(
            [
                _diag(
                    path,
                    "json",
                    f"malformed JSON: {err.msg} (line {err.lineno}, column {err.colno})",
                )
            ]
        ) from None


def run_command(args) -> tuple[dict, int]:
    """Execute one CLI command; returns (report, exit_code)."""
    started = time.perf_counter()
    report: dict = {"toolVersion": __version__, "command": args.command, "seed": 0}
    try:
        if args.command == "alpha-scan":
            if not args.family:
                raise _InputError(
                    [_diag("--family", "missing", "alpha-scan needs --family NAME")]
                )
            report["problemEcho"] = {"family": args.family, "alphas": args.alphas}
            result, certified = _cmd_alpha_scan(args)
        else:
            if not args.problem:
                raise _InputError(
                    [_diag("problem", "missing", f"{args.command} needs a problem file")]
                )
            data = _load_json(args.problem)
            diagnostics = validate_problem(data)
            if args.command == "validate":
                report["problemEcho"] = {
                    "sha256": _problem_hash(data),
                }
                report["result"] = {"diagnostics": diagnostics}
                report["timingMs"] = (
                    int((time.perf_counter() - started) * 1000) if args.timings else 0
                )
                return report, 0 if not diagnostics else 2
            if diagnostics:
                raise _InputError(diagnostics)
            problem = ProblemObjects(data, args)
            report["seed"] = problem.seed
            report["problemEcho"] = {
                "sha256": _problem_hash(data),
                "dim": data["dim"],
                "rank": data["rank"],
            }
            handler = {
                "metricity": _cmd_metricity,
                "index": _cmd_index,
                "dual": _cmd_dual,
                "curvature": _cmd_curvature,
                "solve-fe": _cmd_solve_fe,
                "gauge-check": _cmd_gauge_check,
            }[args.command]
            result, certified = handler(problem, args)
    except _InputError as err:
        report["result"] = {"diagnostics": err.diagnostics}
        report["timingMs"] = 0
        return report, 2
    except (ex.DomainError, ValueError, ArithmeticError) as err:
        message = str(err) or type(err).__name__
        report["result"] = {"diagnostics": [_diag("$", "error", message)]}
        report["timingMs"] = 0
        return report, 2
    report["result"] = result
    report["timingMs"] = (
        int((time.perf_counter() - started) * 1000) if args.timings else 0
    )
    return report, 0 if certified else 3


def _human_summary(report: dict, code: int) -> str:
    command = report.get("command")
    lines = [f"metron {command}: exit {code}"]
    result = report.get("result", {})
    if "diagnostics" in result:
        for d in result["diagnostics"]:
            loc = f" @{d['offset']}" if "offset" in d else ""
            lines.append(f"  [{d['code']}] {d['path']}{loc}: {d['message']}")
    if "certificate" in result:
        cert = result["certificate"]
        lines.append(
            f"  verdict={cert['verdict']} dimJ={cert['dimJ']}"
            f" dimS2={cert['dimS2']} dimOmega2={cert['dimOmega2']}"
        )
    if "indexReport" in result:
        rep = result["indexReport"]
        lines.append(
            f"  sb={rep['sb']} sb_given_g={rep['sb_given_g']} ind={rep['ind_decision']}"
        )
    if "perAlpha" in result:
        for item in result["perAlpha"]:
            lines.append(
                f"  alpha={item['alpha']:g}: {item['certificate']['verdict']}"
            )
        lines.append(f"  theorem4Consistent={result['theorem4Consistent']}")
    if "solutionSpace" in result:
        space = result["solutionSpace"]
        lines.append(
            f"  dim={space['dimension']} residual={space['certifiedResidual']:.3e}"
            f" stabilized={space['stabilized']}"
        )
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="metron",
        description="metricity certificates for coordinate-given connections",
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("problem", nargs="?", help="problem JSON file")
    parser.add_argument("--out", help="write the JSON report here instead of stdout")
    parser.add_argument("--quiet", action="store_true", help="suppress the stderr summary")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--grid", type=int, default=None, help="grid nodes per axis")
    parser.add_argument("--tol-transport", type=float, default=None)
    parser.add_argument("--tol-kernel", type=float, default=None)
    parser.add_argument("--max-order", type=int, default=None)
    parser.add_argument("--alphas", default="", help="comma-separated alpha list")
    parser.add_argument("--family", default=None, help="statistical family name")
    parser.add_argument("--metric-family", default=None, help="JSON file with extra metrics")
    parser.add_argument(
        "--timings",
        action="store_true",
        help="record wall time in the JSON (breaks byte-determinism)",
    )
    return parser


def _normalize_argv(argv: list[str]) -> list[str]:
    """Let '--alphas -1,0,1' work even though the value starts with '-'."""
    out = []
    i = 0
    while i < len(argv):
        tok = argv[i]
        if tok == "--alphas" and i + 1 < len(argv):
            out.append(f"--alphas={argv[i + 1]}")
            i += 2
            continue
        out.append(tok)
        i += 1
    return out


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    args = build_parser().parse_args(_normalize_argv(argv))
    report, code = run_command(args)
    text = canonical_json(report) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    if not args.quiet:
        sys.stderr.write(_human_summary(report, code) + "\n")
    return code


if __name__ == "__main__":
    raise SystemExit(main())
