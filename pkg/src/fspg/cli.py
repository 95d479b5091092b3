"""Command-line entry point: ``fspg gen-data | run | report | serve-client``."""
from __future__ import annotations

import argparse
import json
import logging
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .client import ClientNode
from .datagen import ScenarioSpec, export_clients, generate_scenario, load_client_csv
from .errors import FSPGError
from .harness import RunConfig, convert_report, iter_replicates, run_experiment, write_run
from .transport import ClientServer, parse_address


def _scenario_from_doc(doc) -> ScenarioSpec:
    # a full run config works too: its data.scenario block is used
    if "preset" in doc or "data" in doc:
        return RunConfig.from_dict(doc).scenario_spec()
    return ScenarioSpec.from_dict(doc)


def cmd_gen_data(args):
    spec = _scenario_from_doc(json.loads(Path(args.spec).read_text()))
    datasets, truth = generate_scenario(spec)
    paths = export_clients(datasets, args.out, truth, spec)
    print(f"wrote {len(paths)} client files to {args.out}")


def _run_one(job):
    config_path, out_dir, fmt = job
    cfg = RunConfig.load(config_path)
    if cfg.replicates > 1:
        # one sub-directory per seed
        for result in iter_replicates(cfg):
            write_run(result, Path(out_dir) / f"seed_{result.manifest['seed']}", fmt)
        return f"{config_path}: {cfg.replicates} replicates -> {out_dir}/seed_*"
    result = run_experiment(cfg, out_dir, fmt)
    last = result.records[-1]
    return f"{config_path}: k={last.k} merit={last.merit!r} -> {out_dir}"


def cmd_run(args):
    configs = args.config
    if len(configs) == 1:
        jobs = [(configs[0], args.out, args.format)]
    else:
        jobs = [(c, str(Path(args.out) / Path(c).stem), args.format) for c in configs]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            for line in pool.map(_run_one, jobs):
                print(line)
    else:
        for job in jobs:
            print(_run_one(job))


def cmd_report(args):
    path = convert_report(args.input, args.format)
    print(f"wrote {path}")


def cmd_serve_client(args):
    client_id = args.client_id
    if client_id is None:
        m = re.search(r"(\d+)", Path(args.data).stem)
        if m is None:
            raise SystemExit("cannot infer client id from file name; pass --client-id")
        client_id = int(m.group(1))
    node = ClientNode(load_client_csv(args.data, client_id, args.response_column))
    host, port = parse_address(args.listen)
    server = ClientServer(node, host, port, once=not args.forever)
    print(f"client {client_id} listening on {server.address[0]}:{server.address[1]}", flush=True)
    server.serve_forever()


def build_parser():
    p = argparse.ArgumentParser(prog="fspg", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log solver warnings")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic scenario as per-client CSV files")
    g.add_argument("--spec", required=True, help="scenario JSON (or run config JSON)")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    r = sub.add_parser("run", help="run one or more experiment configs")
    r.add_argument("--config", required=True, nargs="+")
    r.add_argument("--out", required=True)
    r.add_argument("--format", choices=("jsonl", "csv"), default="jsonl")
    r.add_argument("--jobs", type=int, default=1, help="concurrent experiments")
    r.set_defaults(func=cmd_run)

    rep = sub.add_parser("report", help="convert a run directory's metrics")
    rep.add_argument("--in", dest="input", required=True)
    rep.add_argument("--format", choices=("csv", "jsonl"), default="csv")
    rep.set_defaults(func=cmd_report)

    s = sub.add_parser("serve-client", help="serve one client's data over TCP")
    s.add_argument("--data", required=True, help="client CSV with a response column")
    s.add_argument("--listen", required=True, help="host:port (port 0 picks a free one)")
    s.add_argument("--client-id", type=int)
    s.add_argument("--response-column", default="y")
    s.add_argument("--forever", action="store_true", help="keep serving after a session ends")
    s.set_defaults(func=cmd_serve_client)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (FSPGError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
