"""Command-line client for the wrapper service.

By default every verb talks HTTP to the endpoint named in the config
file.  ``--local`` instead starts an in-process service for the single
invocation, which is handy for ``submit --run`` and for experiments.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import httpx

from .config import example_config, load_config, parse_config
from .errors import RecapError
from .workflows import bundle, montage, reconall, wordcount

BUILTIN_WORKFLOWS = {
    "wordcount": lambda: wordcount("sleep"),
    "wordcount-compute": lambda: wordcount("compute"),
    "montage": montage,
    "reconall": reconall,
}


def _flavor(value: str) -> str | int:
    return int(value) if value.isdigit() else value


def _load_cfg(args):
    if args.config:
        return load_config(args.config)
    cfg = parse_config(example_config())
    cfg.dburl = "sqlite://"  # no config file: nothing to persist next to
    return cfg


def _client(args, cfg):
    from .client import RecapClient

    if args.local:
        from .core import Recap

        return RecapClient.local(Recap.from_config(cfg), cfg.service_user, cfg.service_password, cfg.base_path)
    return RecapClient.from_config(cfg)


def _emit(args, doc, text: str | None = None) -> None:
    if args.json or text is None:
        print(json.dumps(doc, indent=2, sort_keys=True))
    else:
        print(text)


def _read(path: str | None) -> str | None:
    return Path(path).read_text() if path else None


def cmd_submit(args, cfg) -> int:
    if args.workflow:
        files = bundle(BUILTIN_WORKFLOWS[args.workflow]())
        dag, site, tc, props = files.dag, files.site, files.tc, files.props
    else:
        dag, site, tc, props = (_read(p) for p in (args.dag, args.site, args.tc, args.props))
    with _client(args, cfg) as client:
        wf_id, wms_wfid = client.submit(dag, site, tc, props, instrumented=args.instrumented, strategy=args.strategy)
        doc = {"wf_id": wf_id, "wms_wfid": wms_wfid}
        if args.run:
            client.run()
            doc["status"] = client.status(wf_id)
    text = f"wf_id={wf_id} wms_wfid={wms_wfid}"
    if "status" in doc:
        st = doc["status"]
        text += f" state={st['state']} makespan_s={st['makespan_s']} mapped={st['mapped']}"
    _emit(args, doc, text)
    return 0


def cmd_status(args, cfg) -> int:
    with _client(args, cfg) as client:
        doc = client.status(args.wf_id)
    _emit(args, doc, f"wf_id={doc['wf_id']} state={doc['state']} strategy={doc['strategy']} "
                     f"makespan_s={doc['makespan_s']} mapped={doc['mapped']} unmapped={len(doc['unmapped'])}")
    return 0


def cmd_aggregate(args, cfg) -> int:
    with _client(args, cfg) as client:
        doc = client.aggregate(args.wf_id)
    _emit(args, doc, f"wf_id={doc['wf_id']} mapped={doc['mapped']} inserted={doc['inserted']} "
                     f"unmapped={len(doc['unmapped'])}")
    return 0


def cmd_export(args, cfg) -> int:
    with _client(args, cfg) as client:
        _emit(args, client.export(args.wf_id))
    return 0


def cmd_reproduce(args, cfg) -> int:
    with _client(args, cfg) as client:
        doc = client.reproduce(
            args.wf_id,
            flavor_override=_flavor(args.flavor) if args.flavor else None,
            input_container=args.input_container,
            strategy=args.strategy,
            run=not args.no_run,
        )
    print(json.dumps({"wf_id": doc["wf_id"], "wms_wfid": doc["wms_wfid"]}))
    return 0


def cmd_compare(args, cfg) -> int:
    with _client(args, cfg) as client:
        doc = client.compare(args.wf_a, args.wf_b)
    if args.json:
        print(json.dumps(doc, indent=2, sort_keys=True))
    else:
        for part in ("structure", "infrastructure", "outputs"):
            print(f"{part:15} {doc[part]['status']}")
        print(f"{'verdict':15} {doc['verdict']}")
    return 0 if doc["verdict"] == "REPRODUCED" else 1


def cmd_cpool_mips(args, cfg) -> int:
    with _client(args, cfg) as client:
        doc = client.cpool_mips()
    _emit(args, doc, "\n".join(f"{name} mips={v['mips']} kflops={v['kflops']}" for name, v in sorted(doc.items())))
    return 0


def cmd_advance(args, cfg) -> int:
    with _client(args, cfg) as client:
        now = client.advance(args.seconds) if args.seconds is not None else client.run()
    _emit(args, {"now": now}, f"now={now}")
    return 0


def cmd_experiment(args, cfg) -> int:
    from .experiments import run_experiment

    result, path = run_experiment(args.name, args.out)
    summary = json.dumps(result.summary, indent=2, sort_keys=True, default=str)
    print(summary)
    if path is not None:
        print(f"wrote {path}", file=sys.stderr)
    return 0


def cmd_serve(args, cfg) -> int:
    from .service import serve

    cfg.setup_logging()
    serve(cfg, args.host, args.port)
    return 0


def cmd_example_config(args, cfg) -> int:
    sys.stdout.write(example_config())
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="recap", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="path to recap.conf (default: built-in example, in-memory db)")
    p.add_argument("--json", action="store_true", help="print full JSON responses")
    p.add_argument("--local", action="store_true", help="use an in-process service instead of HTTP")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("submit", help="submit a workflow")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--workflow", choices=sorted(BUILTIN_WORKFLOWS), help="a built-in workflow")
    src.add_argument("--dag", help="DAG file (JSON)")
    s.add_argument("--site", help="site catalog (JSON)")
    s.add_argument("--tc", help="transformation catalog")
    s.add_argument("--props", help="properties file")
    s.add_argument("--instrumented", action="store_true", help="emit host lines for SNoHi mapping")
    s.add_argument("--strategy", help="mapping strategy for this run")
    s.add_argument("--run", action="store_true", help="run the simulation to completion afterwards")
    s.set_defaults(fn=cmd_submit)

    for name, fn, text in (
        ("status", cmd_status, "show a workflow's state"),
        ("aggregate", cmd_aggregate, "map jobs to VMs and record provenance"),
        ("export", cmd_export, "dump a workflow's provenance as JSON"),
    ):
        s = sub.add_parser(name, help=text)
        s.add_argument("wf_id", type=int)
        s.set_defaults(fn=fn)

    s = sub.add_parser("reproduce", help="replay a workflow on matching resources")
    s.add_argument("--wf-id", type=int, required=True)
    s.add_argument("--flavor", help="flavor name or id to use instead of the recorded one")
    s.add_argument("--input-container", help="read inputs from this container")
    s.add_argument("--strategy", help="mapping strategy for the replay")
    s.add_argument("--no-run", action="store_true", help="submit without running the simulation")
    s.set_defaults(fn=cmd_reproduce)

    s = sub.add_parser("compare", help="compare two workflow runs (exit 0 iff reproduced)")
    s.add_argument("--wf-a", type=int, required=True)
    s.add_argument("--wf-b", type=int, required=True)
    s.set_defaults(fn=cmd_compare)

    s = sub.add_parser("cpool-mips", help="show the pool's CPU speeds")
    s.set_defaults(fn=cmd_cpool_mips)

    s = sub.add_parser("advance", help="advance the virtual clock (drain it when no seconds given)")
    s.add_argument("seconds", type=float, nargs="?")
    s.set_defaults(fn=cmd_advance)

    from .experiments import EXPERIMENTS

    s = sub.add_parser("experiment", help="run a named experiment")
    s.add_argument("name", choices=sorted(EXPERIMENTS))
    s.add_argument("--out", help="directory for the CSV")
    s.set_defaults(fn=cmd_experiment)

    s = sub.add_parser("serve", help="run the wrapper service")
    s.add_argument("--host")
    s.add_argument("--port", type=int)
    s.set_defaults(fn=cmd_serve)

    s = sub.add_parser("example-config", help="print an example config file")
    s.set_defaults(fn=cmd_example_config)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "submit" and args.dag and not all((args.site, args.tc, args.props)):
        parser.error("--dag needs --site, --tc and --props")
    try:
        cfg = _load_cfg(args)
        return args.fn(args, cfg)
    except RecapError as exc:
        print(f"recap: {exc.code}: {exc}", file=sys.stderr)
        return 2
    except httpx.TransportError as exc:
        print(f"recap: cannot reach service: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"recap: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
