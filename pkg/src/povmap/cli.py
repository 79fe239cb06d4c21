"""Thin-client CLI over the service.

Subcommands mirror the pipeline stages (validate, simulate, fit, qmatrix,
report, diagnose).  By default each command talks to an in-process instance
of the FastAPI app, so nothing has to be running; pass ``--server URL`` to
use a live service instead.  ``serve`` starts one.

Exit codes: 0 ok, 1 validation problem, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys

from .config import load_config
from .errors import ConfigError
from .service.client import request

STAGES = ("validate", "simulate", "fit", "qmatrix", "report", "diagnose")


def _payload(args) -> dict:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out = args.out
    return cfg.as_payload()


def _fail(detail, code: int) -> int:
    print(json.dumps({"error": detail}, default=str), file=sys.stderr)
    return code


def _post(args, stage: str) -> tuple[int, dict]:
    try:
        payload = _payload(args)
    except ConfigError as exc:
        return _fail(str(exc), 1), {}
    try:
        status, body = request(stage, payload, server=args.server)
    except Exception as exc:  # transport failures and service bugs alike
        return _fail(f"{type(exc).__name__}: {exc}", 2), {}
    if status == 422:
        return _fail(body.get("detail"), 1), {}
    if status != 200:
        return _fail(body.get("detail", body), 2), {}
    return 0, body


def cmd_validate(args) -> int:
    code, body = _post(args, "validate")
    if code:
        return code
    print(json.dumps(body, indent=2))
    return 0 if body["ok"] else 1


def cmd_simulate(args) -> int:
    code, body = _post(args, "simulate")
    if code:
        return code
    print(f"population: {body['population']} ({body['households']} households, "
          f"{body['comunas']} comunas)")
    print(f"sample:     {body['sample']} ({body['sampled_households']} households)")
    print(f"covariates: {body['covariates']}")
    print(f"truth:      {body['truth']}")
    print(f"config:     {body['run_config']}")
    print(f"poverty lines: urban {body['line_urban']:.6g}, rural {body['line_rural']:.6g}")
    return 0


def cmd_fit(args) -> int:
    code, body = _post(args, "fit")
    if code:
        return code
    print(f"draws: {body['draws']} ({body['chains']} chains x {body['draws_per_chain']} draws)")
    print(f"psrf:  {body['psrf']} ({body['parameters']} parameters)")
    if body["max_rhat"] is not None:
        print(f"max split-Rhat: {body['max_rhat']:.4f}")
    if body["rhat_warnings"]:
        print(f"warning: {body['rhat_warnings']} parameters with split-Rhat >= 1.1",
              file=sys.stderr)
    return 0


def cmd_qmatrix(args) -> int:
    code, body = _post(args, "qmatrix")
    if code:
        return code
    for label, path in body["files"].items():
        print(f"alpha={label}: {path}")
    print(f"{body['comunas']} comunas x {body['draws']} draws")
    return 0


def cmd_report(args) -> int:
    code, body = _post(args, "report")
    if code:
        return code
    for rep in body["reports"]:
        print(f"alpha={rep['alpha']:g}: regional direct {rep['regional_direct']:.6g}, "
              f"thresholds {', '.join(format(t, '.6g') for t in rep['thresholds'])}")
        print(f"  point:    {rep['point']}")
        print(f"  flags:    {rep['flags']}")
        print(f"  extremes: {rep['extremes']}")
        print(f"  worst comuna {rep['worst_comuna']} (prob {rep['worst_prob']:.4f}), "
              f"best comuna {rep['best_comuna']} (prob {rep['best_prob']:.4f})")
    return 0


def cmd_diagnose(args) -> int:
    code, body = _post(args, "diagnose")
    if code:
        return code
    print(f"psrf: {body['psrf']} ({body['parameters']} parameters)")
    if body["max_rhat"] is not None:
        print(f"max split-Rhat: {body['max_rhat']:.4f}")
    if body["rhat_warnings"]:
        print(f"warning: {body['rhat_warnings']} parameters with split-Rhat >= 1.1",
              file=sys.stderr)
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    uvicorn.run("povmap.service.app:app", host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="povmap",
        description="Small-area poverty estimation: validate, fit, build the Q-matrix, report.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    handlers = {
        "validate": cmd_validate,
        "simulate": cmd_simulate,
        "fit": cmd_fit,
        "qmatrix": cmd_qmatrix,
        "report": cmd_report,
        "diagnose": cmd_diagnose,
    }
    for stage in STAGES:
        p = sub.add_parser(stage, help=f"run the {stage} stage")
        p.add_argument("--config", required=True, help="path to the flat key-value config file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="override the output directory")
        p.add_argument("--server", default=None,
                       help="base URL of a running service (default: in-process)")
        p.set_defaults(handler=handlers[stage])
    serve = sub.add_parser("serve", help="start the HTTP service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    serve.set_defaults(handler=cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.handler(args)


if __name__ == "__main__":
    sys.exit(main())
