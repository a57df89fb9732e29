"""Command line entry point: serve the HTTP gateway, chat in a REPL, or run
the analytics report."""

from __future__ import annotations

import argparse
from pathlib import Path

from . import analytics
from .config import EngineConfig
from .gateway import run_repl, serve


def _engine_config(args: argparse.Namespace) -> EngineConfig:
    config = EngineConfig.from_file(args.config) if args.config else EngineConfig()
    config = config.with_env_overrides()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.mode is not None:
        overrides["mode"] = args.mode
    if args.assets_dir is not None:
        overrides["assets_dir"] = Path(args.assets_dir)
    if args.store_dir is not None:
        overrides["store_dir"] = Path(args.store_dir)
    if args.today is not None:
        from datetime import date

        overrides["today"] = date.fromisoformat(args.today)
    if overrides:
        from dataclasses import replace

        config = replace(config, **overrides)
    return config


def main(argv: list[str] | None = None) -> int:
    import sys

    argv = list(sys.argv[1:] if argv is None else argv)
    if argv and argv[0] == "report":
        return analytics.main(argv[1:])

    parser = argparse.ArgumentParser(prog="tapestry")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", type=Path, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--mode", choices=["auto", "personalized", "heuristic"], default=None)
        p.add_argument("--assets-dir", default=None)
        p.add_argument("--store-dir", default=None)
        p.add_argument("--today", default=None, help="override clock date, YYYY-MM-DD")

    p_serve = sub.add_parser("serve", help="run the HTTP gateway")
    common(p_serve)
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8840)

    p_repl = sub.add_parser("repl", help="chat in the terminal")
    common(p_repl)
    p_repl.add_argument("--user", default=None, help="stable user id for personalization")

    sub.add_parser("report", help="analytics over event logs (see report --help)")

    args = parser.parse_args(argv)
    if args.command == "serve":
        serve(_engine_config(args), host=args.host, port=args.port)
        return 0
    if args.command == "repl":
        run_repl(_engine_config(args), user_id=args.user, mode=args.mode)
        return 0
    return 1


if __name__ == "__main__":
    raise SystemExit(main())
