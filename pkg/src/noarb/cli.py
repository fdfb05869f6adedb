"""Command line entry point: ``noarb run|list|verify``.

Exit codes: 0 success, 2 an experiment check failed, 1 any other error.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import experiments as ex


def _run(args) -> int:
    with open(args.config) as fh:
        cfg = json.load(fh)
    m = ex.run_experiment(cfg, args.output_root)
    for name, ok in sorted(m.checks.items()):
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    print(f"manifest: {m.output_dir}/manifest.json ({m.wall_clock_seconds:.1f}s)")
    return 0 if m.passed else 2


def _list(args) -> int:
    for exp in ex.CATALOG.values():
        print(f"{exp.id:32s} {exp.about}")
    return 0


def _verify(args) -> int:
    ok, problems = ex.verify_manifest(args.manifest)
    for p in problems:
        print(p)
    print("ok" if ok else "FAILED")
    return 0 if ok else 2


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="noarb", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run one experiment from a JSON config")
    r.add_argument("config")
    r.add_argument("--output-root", default=None, help="overrides NOARB_OUTPUT_ROOT")
    r.set_defaults(fn=_run)
    sub.add_parser("list", help="list experiment ids").set_defaults(fn=_list)
    v = sub.add_parser("verify", help="re-check the digests in a manifest")
    v.add_argument("manifest")
    v.set_defaults(fn=_verify)
    args = ap.parse_args(argv)
    try:
        return args.fn(args)
    except (OSError, ValueError, RuntimeError, KeyError, json.JSONDecodeError) as e:
        print(f"noarb: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
