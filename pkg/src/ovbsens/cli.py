"""Command-line client.

Inputs are read locally (a raw data CSV or a covariance CSV), turned into a
request and sent to the service.  By default the service runs in-process;
``--server URL`` targets a running instance instead.  Results are written as
JSON (``{meta, inputs, results}``) or CSV.

Exit codes: 0 success, 2 usage, 3 data, 4 numeric.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import warnings
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .errors import OvbError, UsageError
from .ingest import DatasetSpec, load_covariance, load_dataset, roles_from_columns
from .numfmt import encode_real, format_csv_real

GRID_TOL = 1e-12
DGP_KINDS = {"ma1": "ma1", "ar1": "ar1", "exch": "exchangeable", "factor": "factor", "deltanonconv": "delta-nonconv"}


class CliUsage(UsageError):
    pass


# ---------------------------------------------------------------------------
# argument parsing


def parse_grid(text: str) -> list[float]:
    """Parse ``start:step:stop`` (stop included within 1e-12) or a comma list."""
    text = text.strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise CliUsage(f"grid {text!r} must look like start:step:stop")
        try:
            start, step, stop = (float(p) for p in parts)
        except ValueError as exc:
            raise CliUsage(f"bad grid {text!r}") from exc
        if step <= 0 or stop < start:
            raise CliUsage("grid needs a positive step and stop >= start")
        n = math.floor((stop - start) / step + 1e-9) + 1
        grid = [round(start + i * step, 12) for i in range(n)]
        if abs(grid[-1] - stop) <= GRID_TOL * max(1.0, abs(stop)):
            grid[-1] = stop
        return grid
    grid = parse_floats(text)
    if any(b < a for a, b in zip(grid, grid[1:])):
        raise CliUsage("grid values must be sorted")
    return grid


def parse_floats(text: str) -> list[float]:
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise CliUsage(f"expected a comma list of numbers, got {text!r}") from exc
    if not vals:
        raise CliUsage("empty list")
    return vals


def _labels(text: str | None) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()] if text else []


def _default_threads() -> int:
    env = os.environ.get("OVBSENS_THREADS")
    try:
        return max(1, int(env)) if env else 1
    except ValueError:
        return 1


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    src = common.add_mutually_exclusive_group()
    src.add_argument("--data", help="raw data CSV with a header row")
    src.add_argument("--cov", help="covariance CSV whose header row holds the labels")
    common.add_argument("--y", help="outcome column")
    common.add_argument("--x", help="treatment column")
    common.add_argument("--w1", help="calibration covariates (comma list)")
    common.add_argument("--w0", help="control covariates (comma list)")
    common.add_argument("--out", help="output path (default: standard output)")
    common.add_argument("--format", choices=("json", "csv"), default="json")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=None, help="worker threads (default: OVBSENS_THREADS or 1)")
    common.add_argument("--server", help="base URL of a running service; default runs it in-process")

    budget = argparse.ArgumentParser(add_help=False)
    budget.add_argument("--ry", default="inf", help="bound on r_Y (default inf)")
    budget.add_argument("--clow", type=float, default=0.0)
    budget.add_argument("--chigh", default="1", help="upper endogeneity bound; a comma list for frontier")
    budget.add_argument("--blow", type=float, default=0.0, help="threshold in the conclusion beta_long > blow")

    parser = argparse.ArgumentParser(prog="ovbsens", description="Omitted variable bias sensitivity analysis")
    parser.add_argument("--version", action="version", version=f"ovbsens {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("bounds", parents=[common, budget], help="identified sets over an rx_bar grid")
    p.add_argument("--rx-grid", default="0:0.05:1")
    p.add_argument("--verify", action="store_true", help="append brute-force oracle columns")
    p.add_argument("--samples", type=int, default=100_000)

    p = sub.add_parser("breakdown", parents=[common, budget], help="breakdown points")
    p.add_argument("--d1", type=int, help="also summarize covariate sampling at this d1")
    p.add_argument("--draws", type=int, help="Monte Carlo draws (default: exact enumeration)")

    p = sub.add_parser("frontier", parents=[common, budget], help="breakdown frontier curves")
    p.add_argument("--rx-grid", default="0:0.1:1.5")
    p.add_argument("--restarts", type=int, default=32)

    p = sub.add_parser("calibrate", parents=[common], help="rho_k and c_k diagnostics")
    p.add_argument("--group", action="append", default=[], metavar="NAME=A,B", help="grouped rho (repeatable)")

    p = sub.add_parser("simsel", parents=[common], help="covariate-sampling distributions")
    p.add_argument("--dgp", choices=sorted(DGP_KINDS))
    p.add_argument("--K", type=int)
    p.add_argument("--d1", type=int, required=True)
    p.add_argument("--draws", type=int, help="Monte Carlo draws (default: exact enumeration)")
    p.add_argument("--rho", type=float)
    p.add_argument("--R", type=int, help="number of factors")
    p.add_argument("--sigma-e2", type=float, help="idiosyncratic variance in the factor family")
    p.add_argument("--coef", type=float, help="coefficient bound C")
    p.add_argument("--r", type=float, help="d2/d1 ratio targeted by the delta-nonconv construction")
    p.add_argument("--bins", type=int, default=20)

    p = sub.add_parser("verify", parents=[common, budget], help="compare bounds with the brute-force oracle")
    p.add_argument("--rx", type=float, required=True)
    p.add_argument("--samples", type=int, default=100_000)
    return parser


# ---------------------------------------------------------------------------
# inputs


def _model_payload(args: argparse.Namespace) -> dict:
    if not (args.data or args.cov):
        raise CliUsage("one of --data or --cov is required")
    if not (args.y and args.x and args.w1):
        raise CliUsage("--y, --x and --w1 are required")
    w1, w0 = _labels(args.w1), _labels(args.w0)
    if args.data:
        model, _ = load_dataset(DatasetSpec(args.data, args.y, args.x, w1, w0))
    else:
        model = load_covariance(args.cov, roles_from_columns(args.y, args.x, w1, w0))
    return {"labels": list(model.labels), "sigma": model.sigma.tolist(), "roles": dict(model.roles)}


def _single(values: list[float], flag: str) -> float:
    if len(values) != 1:
        raise CliUsage(f"{flag} takes a single value for this subcommand")
    return values[0]


def _ry(args) -> float:
    try:
        return float(args.ry)
    except ValueError as exc:
        raise CliUsage(f"bad --ry {args.ry!r}") from exc


def build_request(args: argparse.Namespace) -> tuple[str, dict, dict]:
    """Return the endpoint, the request body and the echoed inputs."""
    cmd = args.subcommand
    threads = args.threads if args.threads is not None else _default_threads()
    if threads < 1:
        raise CliUsage("--threads must be at least 1")
    src = {"data": args.data, "cov": args.cov, "y": args.y, "x": args.x, "w1": _labels(args.w1), "w0": _labels(args.w0)}
    if cmd == "simsel":
        inputs: dict[str, Any] = {"d1": args.d1, "draws": args.draws, "seed": args.seed, "bins": args.bins}
        body: dict[str, Any] = {"d1": args.d1, "draws": args.draws, "seed": args.seed, "threads": threads, "bins": args.bins}
        if args.dgp:
            if args.data or args.cov:
                raise CliUsage("give either --dgp or a data source, not both")
            if args.K is None:
                raise CliUsage("--K is required with --dgp")
            params = {}
            for key, val in (("rho", args.rho), ("R", args.R), ("sigma_e2", args.sigma_e2), ("C", args.coef), ("r", args.r)):
                if val is not None:
                    params[key] = float(val)
            body["dgp"] = {"kind": DGP_KINDS[args.dgp], "K": args.K, "params": params, "seed": args.seed}
            inputs.update({"dgp": DGP_KINDS[args.dgp], "K": args.K, "params": params})
        else:
            body["model"] = _model_payload(args)
            inputs.update(src)
        return "/simsel", body, inputs

    body = {"model": _model_payload(args)}
    inputs = dict(src)
    if cmd == "calibrate":
        groups = {}
        for g in args.group:
            name, _, labels = g.partition("=")
            if not name or not labels:
                raise CliUsage(f"--group expects NAME=A,B, got {g!r}")
            groups[name] = _labels(labels)
        body["groups"] = groups
        inputs["groups"] = groups
        return "/calibrate", body, inputs

    ry, clow, chigh = _ry(args), args.clow, parse_floats(args.chigh)
    shared = {"c_low": clow}
    if cmd == "bounds":
        grid = parse_grid(args.rx_grid)
        body.update(shared, rx_grid=grid, ry_bar=ry, c_high=_single(chigh, "--chigh"), verify=args.verify,
                    verify_samples=args.samples, seed=args.seed, threads=threads)
        inputs.update(rx_grid=grid, ry=ry, clow=clow, chigh=chigh[0], verify=args.verify, seed=args.seed)
        if args.verify:
            inputs["samples"] = args.samples
        return "/bounds", body, inputs
    if cmd == "breakdown":
        body.update(shared, b_low=args.blow, c_high=_single(chigh, "--chigh"), sampling_d1=args.d1,
                    draws=args.draws, seed=args.seed, threads=threads)
        inputs.update(blow=args.blow, clow=clow, chigh=chigh[0], d1=args.d1, draws=args.draws, seed=args.seed)
        return "/breakdown", body, inputs
    if cmd == "frontier":
        grid = parse_grid(args.rx_grid)
        body.update(shared, rx_grid=grid, b_low=args.blow, c_high=chigh, restarts=args.restarts, threads=threads)
        inputs.update(rx_grid=grid, blow=args.blow, clow=clow, chigh=chigh, restarts=args.restarts)
        return "/frontier", body, inputs
    if cmd == "verify":
        body.update(shared, rx_bar=args.rx, ry_bar=ry, c_high=_single(chigh, "--chigh"), samples=args.samples,
                    seed=args.seed)
        inputs.update(rx=args.rx, ry=ry, clow=clow, chigh=chigh[0], samples=args.samples, seed=args.seed)
        return "/verify", body, inputs
    raise CliUsage(f"unknown subcommand {cmd!r}")


# ---------------------------------------------------------------------------
# transport


class _Reply:
    def __init__(self, status: int, payload: Any):
        self.status = status
        self.payload = payload


def _jsonable(obj: Any) -> Any:
    """Encode infinities in a request body so that strict JSON encoders accept it."""
    if isinstance(obj, float):
        return encode_real(obj) if obj != obj or obj in (float("inf"), float("-inf")) else obj
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_jsonable(v) for v in obj]
    return obj


def send(endpoint: str, body: dict, server: str | None = None) -> _Reply:
    payload = _jsonable(body)
    if server:
        import httpx

        resp = httpx.post(server.rstrip("/") + endpoint, json=payload, timeout=None)
    else:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            from fastapi.testclient import TestClient

        from .service.app import app

        with TestClient(app, raise_server_exceptions=True) as client:
            resp = client.post(endpoint, json=payload)
    return _Reply(resp.status_code, resp.json())


# ---------------------------------------------------------------------------
# output


def _canon(obj: Any) -> Any:
    if isinstance(obj, float):
        return encode_real(obj)
    if isinstance(obj, dict):
        return {k: _canon(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_canon(v) for v in obj]
    return obj


def render_json(cmd: str, inputs: dict, results: dict) -> str:
    doc = {"meta": {"tool": "ovbsens", "version": __version__, "subcommand": cmd}, "inputs": _canon(inputs),
           "results": _canon(results)}
    return json.dumps(doc, indent=2, ensure_ascii=False) + "\n"


def _cell(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None:
        return ""
    if isinstance(v, float):
        return format_csv_real(v)
    if isinstance(v, int):
        return str(v)
    return str(v)


def _csv(header: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_cell(v) for v in r])
    return buf.getvalue()


def _num(v: Any) -> Any:
    return float(v) if isinstance(v, str) and v in ("inf", "-inf", "nan") else v


def render_csv(cmd: str, results: dict) -> list[tuple[str | None, str]]:
    """CSV documents as ``(suffix, text)`` pairs; frontier sweeps give several."""
    if cmd == "bounds":
        cols = ["rx_bar", "lower", "upper", "finite"]
        if results["rows"] and results["rows"][0].get("oracle_lower") is not None:
            cols += ["oracle_lower", "oracle_upper", "oracle_contained"]
        rows = [[_num(r[c]) for c in cols] for r in results["rows"]]
        return [(None, _csv(cols, rows))]
    if cmd == "frontier":
        docs = []
        curves = results["curves"]
        for cur in curves:
            rows = [[_num(p["rx_bar"]), _num(p["ry_bf"]), p["case_tag"]] for p in cur["points"]]
            suffix = None if len(curves) == 1 else "chigh" + format_csv_real(float(_num(cur["c_high"])))
            docs.append((suffix, _csv(["rx_bar", "ry_bf", "case_tag"], rows)))
        return docs
    if cmd == "calibrate":
        rows = [[k, _num(results["rho"][k]), _num(results["c"][k]), _num(results["c_sq"][k])] for k in results["rho"]]
        return [(None, _csv(["label", "rho", "c", "c_sq"], rows))]
    if cmd == "simsel":
        cols = ["n", "mode", "prob_le_1", "min", "p25", "median", "p75", "max", "mean", "sd", "n_degenerate"]
        rows = [[name] + [_num(m["summary"][c]) for c in cols] for name, m in results["metrics"].items()]
        return [(None, _csv(["metric"] + cols, rows))]
    flat = _flatten(results)
    return [(None, _csv(["quantity", "value"], [[k, _num(v)] for k, v in flat]))]


def _flatten(obj: Any, prefix: str = "") -> list[tuple[str, Any]]:
    if isinstance(obj, dict):
        out = []
        for k, v in obj.items():
            out += _flatten(v, f"{prefix}.{k}" if prefix else k)
        return out
    return [(prefix, obj)]


def _suffixed(path: Path, suffix: str | None) -> Path:
    if suffix is None:
        return path
    return path.with_name(f"{path.stem}_{suffix}{path.suffix}")


def write_outputs(args: argparse.Namespace, inputs: dict, results: dict) -> list[Path]:
    if args.format == "json":
        docs = [(None, render_json(args.subcommand, inputs, results))]
    else:
        docs = render_csv(args.subcommand, results)
    if not args.out:
        if len(docs) > 1:
            raise CliUsage("several CSV files are produced; give --out")
        sys.stdout.write(docs[0][1])
        return []
    written = []
    for suffix, text in docs:
        path = _suffixed(Path(args.out), suffix)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        written.append(path)
    return written


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        endpoint, body, inputs = build_request(args)
        reply = send(endpoint, body, args.server)
        if reply.status != 200:
            payload = reply.payload if isinstance(reply.payload, dict) else {}
            if "exit_code" in payload:
                print(f"ovbsens: {payload['error']}: {payload['message']}", file=sys.stderr)
                return int(payload["exit_code"])
            print(f"ovbsens: invalid request: {json.dumps(payload.get('detail', payload))}", file=sys.stderr)
            return 2
        write_outputs(args, inputs, reply.payload)
    except OvbError as exc:
        print(f"ovbsens: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"ovbsens: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
