"""Command-line entry points: phantom, centerline, coverage, analyze,
serve."""
from __future__ import annotations

import argparse
import json
import math
import sys

import numpy as np


def phantom_main(argv=None) -> int:
    from . import phantom as ph
    from .meshio import save_mesh
    from .path import attach_frames, reparameterize, save_path

    p = argparse.ArgumentParser(
        prog="phantom", description="Generate a synthetic tubular phantom "
        "with its analytic centerline.")
    p.add_argument("--kind", choices=ph.KINDS, default=ph.STRAIGHT_TUBE)
    p.add_argument("--radius", type=float, default=None, help="tube radius, m")
    p.add_argument("--length", type=float, default=None, help="axis length, m")
    p.add_argument("--arc-radius", type=float, default=None)
    p.add_argument("--arc-angle", type=float, default=None, help="radians")
    p.add_argument("--amplitude", type=float, default=None,
                   help="s-curve lateral amplitude, m")
    p.add_argument("--fold-amplitude", type=float, default=None)
    p.add_argument("--fold-wavelength", type=float, default=None)
    p.add_argument("--rings", type=int, default=None)
    p.add_argument("--segments", type=int, default=None)
    p.add_argument("-o", "--output", required=True, help="mesh file (.ply/.obj)")
    p.add_argument("--centerline", help="also write the ground-truth "
                   "centerline path document here")
    args = p.parse_args(argv)

    overrides = {k: v for k, v in (
        ("radius", args.radius), ("length", args.length),
        ("arc_radius", args.arc_radius), ("arc_angle", args.arc_angle),
        ("amplitude", args.amplitude),
        ("fold_amplitude", args.fold_amplitude),
        ("fold_wavelength", args.fold_wavelength),
        ("rings", args.rings), ("segments", args.segments),
    ) if v is not None}
    spec = ph.default_spec(args.kind, **overrides)
    mesh, centers = ph.generate_phantom(spec)
    save_mesh(mesh, args.output)
    print(f"wrote {args.output}: {mesh.n_vertices} vertices, "
          f"{mesh.n_faces} faces")
    if args.centerline:
        pts, radii = ph.ground_truth_path_points(spec)
        cpath = attach_frames(reparameterize(pts, radii=radii))
        save_path(cpath, args.centerline)
        print(f"wrote {args.centerline}: length {cpath.length:.4f} m")
    return 0


def centerline_main(argv=None) -> int:
    from .meshio import load_mesh
    from .path import make_centerline, save_path
    from .skeleton import ContractionParams, extract_centerline_points

    p = argparse.ArgumentParser(
        prog="centerline",
        description="Extract a centerline path from a tubular mesh.")
    p.add_argument("mesh", help="input mesh (.ply/.obj)")
    p.add_argument("-o", "--output", required=True, help="path document")
    p.add_argument("--spacing", type=float, default=None,
                   help="skeleton node spacing, m")
    p.add_argument("--max-iters", type=int, default=30)
    p.add_argument("--endpoints", help="node index pair i,j overriding the "
                   "longest-geodesic endpoints")
    p.add_argument("--ds", type=float, default=0.005)
    p.add_argument("--smooth-iterations", type=int, default=25)
    p.add_argument("--smooth-lambda", type=float, default=0.5)
    args = p.parse_args(argv)

    mesh = load_mesh(args.mesh)
    endpoints = None
    if args.endpoints:
        i, j = args.endpoints.split(",")
        endpoints = (int(i), int(j))
    params = ContractionParams(max_iterations=args.max_iters)
    pts, radii = extract_centerline_points(
        mesh, params=params, spacing=args.spacing, endpoints=endpoints)
    cpath = make_centerline(pts, radii=radii, ds=args.ds,
                            smooth_iterations=args.smooth_iterations,
                            smooth_lambda=args.smooth_lambda)
    save_path(cpath, args.output)
    print(f"wrote {args.output}: {cpath.n_samples} samples, "
          f"length {cpath.length:.4f} m")
    return 0


def coverage_main(argv=None) -> int:
    from .bvh import build_bvh
    from .meshio import load_mesh
    from .path import load_path
    from .travel import ANTEGRADE, RETROGRADE, TravelPolicy
    from .visibility import HeadModel, load_markers, sweep_coverage

    p = argparse.ArgumentParser(
        prog="coverage",
        description="Sweep a camera policy along a path and report "
        "area-weighted surface coverage.")
    p.add_argument("--mesh", required=True)
    p.add_argument("--path", required=True)
    p.add_argument("--policy", required=True,
                   choices=["fly-through", "fly-over", "elevator"])
    p.add_argument("--phi", type=float, default=0.0,
                   help="fly-over wall azimuth, radians")
    p.add_argument("--head-sweep", type=float, default=None,
                   help="yaw half-angle, degrees (omit for fixed head)")
    p.add_argument("--head-stops", type=int, default=5)
    p.add_argument("--both-directions", action="store_true")
    p.add_argument("--ds", type=float, default=0.005)
    p.add_argument("--grid", type=int, default=256)
    p.add_argument("--fov", type=float, default=110.0)
    p.add_argument("--markers", help="optional markers.json")
    p.add_argument("-o", "--output", required=True)
    args = p.parse_args(argv)

    mesh = load_mesh(args.mesh)
    cpath = load_path(args.path)
    bvh = build_bvh(mesh)
    policy = (TravelPolicy.fly_over(args.phi)
              if args.policy == "fly-over"
              else TravelPolicy(args.policy))
    head = HeadModel()
    if args.head_sweep is not None:
        head = HeadModel("yaw-sweep", math.radians(args.head_sweep),
                         args.head_stops)
    directions = (ANTEGRADE, RETROGRADE) if args.both_directions \
        else (ANTEGRADE,)
    markers = load_markers(args.markers) if args.markers else ()
    report = sweep_coverage(mesh, bvh, cpath, policy, head=head,
                            ds=args.ds, directions=directions,
                            fov_deg=args.fov, grid=args.grid,
                            markers=markers)
    with open(args.output, "w") as fh:
        fh.write(report.to_json())
    print(f"coverage {report.coverage:.4f} "
          f"({policy.kind}, {head.label()}, "
          f"{'both' if args.both_directions else 'antegrade'})")
    return 0


def analyze_main(argv=None) -> int:
    from .analytics import SessionLog, analyze_sessions
    from .visibility import load_markers

    p = argparse.ArgumentParser(
        prog="analyze",
        description="Reduce session logs to study measures and run the "
        "nonparametric comparison battery.")
    p.add_argument("logs", nargs="+", help="session .log files")
    p.add_argument("--markers", required=True)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--alpha", type=float, default=0.05)
    args = p.parse_args(argv)

    markers = load_markers(args.markers)
    logs = []
    for fn in args.logs:
        with open(fn) as fh:
            logs.append(SessionLog.from_text(fh.read()))
    report = analyze_sessions(logs, markers, alpha=args.alpha)
    with open(args.output, "w") as fh:
        json.dump(report, fh, indent=1, sort_keys=True)
    for s in report["sessions"]:
        print(f"{s['subject']} {s['technique']}: "
              f"success {s['success_rate']:.1f}%, "
              f"time {s['completion_time']:.2f}s")
    for name, m in report["measures"].items():
        print(f"{name}: {m['friedman']['string']}")
        for c in m["pairwise"]:
            flag = " *" if c["significant"] else \
                " (boundary)" if c["boundary"] else ""
            print(f"  {c['pair'][0]} vs {c['pair'][1]}: {c['string']}{flag}")
    return 0


def serve_main(argv=None) -> int:
    import uvicorn

    from .server import create_app

    p = argparse.ArgumentParser(
        prog="serve", description="Run the session service.")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--scenes", required=True, help="scene directory")
    p.add_argument("--logs", required=True, help="session log directory")
    p.add_argument("--tick-hz", type=float, default=60.0)
    p.add_argument("--viewer", default=None,
                   help="static viewer build to mount at /viewer")
    args = p.parse_args(argv)

    app = create_app(args.scenes, args.logs, tick_hz=args.tick_hz,
                     viewer_dir=args.viewer)
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


if __name__ == "__main__":
    sys.exit(phantom_main())
