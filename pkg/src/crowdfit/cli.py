"""Command-line driver; a thin client of the in-process service.

Every subcommand reads/writes files and exchanges their JSON content
with the FastAPI app through an in-process test transport, so no server
needs to run and output stays deterministic for a fixed seed. All
output serialization is canonical (sorted keys, fixed separators).
"""
from __future__ import annotations

import argparse
import json
import os
import sys

from . import sceneio
from .errors import CrowdFitError


class ServiceClient:
    """In-process HTTP client against the FastAPI app."""

    def __init__(self):
        from fastapi.testclient import TestClient

        from .service import app
        self._client = TestClient(app, raise_server_exceptions=False)

    def post(self, path: str, payload: dict) -> dict:
        resp = self._client.post(path, json=payload)
        if resp.status_code != 200:
            try:
                detail = resp.json().get("detail", resp.text)
            except ValueError:
                detail = resp.text
            raise CrowdFitError("%s failed (%d): %s"
                                % (path, resp.status_code, detail))
        return resp.json()


def _read_json(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise CrowdFitError("%s: parse error at line %d column %d: %s"
                            % (path, exc.lineno, exc.colno, exc.msg))
    except OSError as exc:
        raise CrowdFitError(str(exc))


def _write_canonical(path: str, data: dict):
    with open(path, "w") as fh:
        fh.write(sceneio.canonical_json(data))


def cmd_generate(args, client: ServiceClient):
    spec = _read_json(args.spec)
    scene = client.post("/v1/generate", {"spec": spec})
    _write_canonical(args.out, scene)
    print("wrote %s (%d persons)" % (args.out, len(scene["persons"])))


def _fit_overrides(args) -> dict:
    overrides = {}
    if args.config:
        overrides.update(_read_json(args.config))
    for key in ("iters", "batch_size", "lr", "threshold", "seed",
                "freeze_normal_every", "stage1_iters", "stage1_lr"):
        value = getattr(args, key)
        if value is not None:
            overrides[key] = value
    for key in ("no_crowd", "raw_pixel_keyp", "detach_normal",
                "per_batch_normal", "literal_init_loss"):
        if getattr(args, key):
            overrides[key] = True
    return overrides


def cmd_fit(args, client: ServiceClient):
    scene = _read_json(args.scene)
    result = client.post("/v1/fit", {"scene": scene,
                                     "config": _fit_overrides(args)})
    _write_canonical(args.out, result)
    print("wrote %s (%d persons)" % (args.out, len(result["persons"])))


def cmd_eval(args, client: ServiceClient):
    report = client.post("/v1/eval", {"scene": _read_json(args.scene),
                                      "result": _read_json(args.result)})
    sys.stdout.write(json.dumps(report, sort_keys=True, indent=1) + "\n")


def cmd_export(args, client: ServiceClient):
    resp = client.post("/v1/export", {"result": _read_json(args.result),
                                      "format": args.format})
    os.makedirs(args.out, exist_ok=True)
    for name, content in sorted(resp["files"].items()):
        with open(os.path.join(args.out, name), "w") as fh:
            fh.write(content)
    print("wrote %d files to %s" % (len(resp["files"]), args.out))


def cmd_serve(args, _client=None):
    import uvicorn

    from .service import app
    uvicorn.run(app, host=args.host, port=args.port)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crowdfit",
        description="3D crowd layout reconstruction from 2D keypoints")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="generate a synthetic scene")
    gen.add_argument("--spec", required=True, help="scene spec JSON file")
    gen.add_argument("--out", required=True, help="output scene file")
    gen.set_defaults(fn=cmd_generate)

    fit = sub.add_parser("fit", help="reconstruct a scene")
    fit.add_argument("--scene", required=True)
    fit.add_argument("--out", required=True)
    fit.add_argument("--config", help="JSON file with config overrides")
    fit.add_argument("--iters", type=int)
    fit.add_argument("--batch-size", dest="batch_size", type=int)
    fit.add_argument("--lr", type=float)
    fit.add_argument("--threshold", type=float)
    fit.add_argument("--seed", type=int)
    fit.add_argument("--stage1-iters", dest="stage1_iters", type=int)
    fit.add_argument("--stage1-lr", dest="stage1_lr", type=float)
    fit.add_argument("--freeze-normal-every", dest="freeze_normal_every",
                     type=int)
    fit.add_argument("--no-crowd", dest="no_crowd", action="store_true",
                     help="stop after the per-person stage")
    fit.add_argument("--raw-pixel-keyp", dest="raw_pixel_keyp",
                     action="store_true",
                     help="verbatim unnormalized 2D fitting term")
    fit.add_argument("--detach-normal", dest="detach_normal",
                     action="store_true",
                     help="stop gradients through the plane normal")
    fit.add_argument("--per-batch-normal", dest="per_batch_normal",
                     action="store_true",
                     help="estimate the normal from the active batch only")
    fit.add_argument("--literal-init-loss", dest="literal_init_loss",
                     action="store_true",
                     help="keep the printed crowd factor on the shape anchor")
    fit.set_defaults(fn=cmd_fit)

    ev = sub.add_parser("eval", help="score a result against a scene")
    ev.add_argument("--result", required=True)
    ev.add_argument("--scene", required=True)
    ev.set_defaults(fn=cmd_eval)

    exp = sub.add_parser("export", help="export result geometry")
    exp.add_argument("--result", required=True)
    exp.add_argument("--format", choices=("obj", "ply"), default="obj")
    exp.add_argument("--out", required=True, help="output directory")
    exp.set_defaults(fn=cmd_export)

    srv = sub.add_parser("serve", help="run the HTTP service")
    srv.add_argument("--host", default="127.0.0.1")
    srv.add_argument("--port", type=int, default=8000)
    srv.set_defaults(fn=cmd_serve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "serve":
            cmd_serve(args)
        else:
            args.fn(args, ServiceClient())
    except CrowdFitError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
