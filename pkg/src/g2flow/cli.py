"""Command-line client for the run verbs.

Subcommands: verify, evolve, energy, spectrum, symbol, dump-tables, serve.
With --server URL the CLI is a thin HTTP client of a running service and the
run artifacts land on the service host; otherwise the same orchestration runs
in-process and writes locally.  Exit codes: 0 success, 1 check failure,
2 config error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import json
import os
import sys


def _set_threads(n: int | None) -> None:
    # must happen before numpy is imported anywhere in the process
    if n is None:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS"):
        os.environ[var] = str(n)


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="g2flow",
                                description="isometric G2-structure flow toolkit")
    p.add_argument("--server", metavar="URL", default=None,
                   help="run against a remote service instead of in-process")
    p.add_argument("--threads", type=int, default=None, metavar="N",
                   help="cap the numerical thread pools")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("verify", help="run the algebra/dictionary identity suite")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", default=None, help="optional report directory")

    for name, blurb in (("evolve", "integrate the flow"),
                        ("energy", "gradient-check tables"),
                        ("spectrum", "second-variation eigenreport"),
                        ("symbol", "ellipticity sampling report")):
        sp = sub.add_parser(name, help=blurb)
        sp.add_argument("--config", required=True, metavar="PATH")
        sp.add_argument("--out", required=True, metavar="DIR")
        sp.add_argument("--seed", type=int, default=None,
                        help="override the [run] seed")

    sub.add_parser("dump-tables", help="print the structure tables as JSON")

    sp = sub.add_parser("serve", help="start the HTTP service")
    sp.add_argument("--host", default="127.0.0.1")
    sp.add_argument("--port", type=int, default=8707)
    return p


def _print(obj) -> None:
    print(json.dumps(obj, sort_keys=True, indent=2))


def _run_local(args) -> int:
    from . import config as cf
    from . import runs

    if args.command == "verify":
        summary = runs.run_verify(seed=args.seed, out_dir=args.out)
        _print(summary["report"])
        return summary["exit_code"]

    if args.command == "dump-tables":
        _print(runs.dump_tables())
        return 0

    text = _read_config(args.config)
    if text is None:
        return runs.EXIT_CONFIG_ERROR
    if args.seed is not None:
        from .service.app import _apply_seed_override
        text = _apply_seed_override(text, args.seed)
    try:
        cfg = cf.parse_config(text, args.command)
    except cf.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return runs.EXIT_CONFIG_ERROR
    runner = {"evolve": runs.run_evolve, "energy": runs.run_energy,
              "spectrum": runs.run_spectrum, "symbol": runs.run_symbol}[args.command]
    summary = runner(cfg, args.out)
    _print({k: v for k, v in summary.items() if k != "manifest"})
    return summary["exit_code"]


def _read_config(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        print(f"config error: cannot read {path}: {exc}", file=sys.stderr)
        return None


def _run_remote(args) -> int:
    import httpx

    base = args.server.rstrip("/")
    with httpx.Client(base_url=base, timeout=3600.0) as client:
        if args.command == "verify":
            resp = client.post("/verify", json={"seed": args.seed})
            body = resp.json()
            _print(body.get("report", body))
            return int(body.get("exit_code", 1))
        if args.command == "dump-tables":
            resp = client.get("/tables")
            _print(resp.json().get("tables", {}))
            return 0
        text = _read_config(args.config)
        if text is None:
            return 2
        payload = {"config_text": text, "out_dir": args.out}
        if args.seed is not None:
            payload["seed"] = args.seed
        resp = client.post(f"/{args.command}", json=payload)
        body = resp.json()
        if "error" in body and body.get("error"):
            print(f"config error: {body['error']}", file=sys.stderr)
        _print({k: v for k, v in body.get("summary", {}).items() if k != "manifest"}
               or {"status": body.get("status")})
        return int(body.get("exit_code", 1))


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    _set_threads(args.threads)

    if args.command == "serve":
        import uvicorn
        uvicorn.run("g2flow.service.app:app", host=args.host, port=args.port)
        return 0

    if args.server:
        return _run_remote(args)
    return _run_local(args)


if __name__ == "__main__":
    sys.exit(main())
