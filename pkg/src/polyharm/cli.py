"""Batch command-line front end.

One command per process: parse the JSON configuration, validate statically,
dispatch, and emit a deterministic columnar artifact.  Exit codes partition
the failure modes:

    0  success
    2  configuration error (includes unknown commands and failed validation)
    3  capability error
    4  chart-domain exit
    5  numerical-contract failure
    6  degenerate input

On failure a machine-readable JSON error record goes to stderr.
"""
from __future__ import annotations

import argparse
import json
import sys
import time

import numpy as np

from . import __version__
from . import reduction as red
from . import variational as va
from .config import COMMANDS, ExperimentConfig, build_domain, build_map, build_target, default_workers, validate
from .errors import (
    CapabilityError,
    ChartDomainError,
    ConfigurationError,
    DegenerateInputError,
    NumericalContractError,
    PolyharmError,
)
from .fields import tension
from .polytension import build_tower, es4_terms, hat_tau4, tau_k, tau4_es
from .serialize import ResultArtifact

EXIT_CODES = {
    ConfigurationError: 2,
    CapabilityError: 3,
    ChartDomainError: 4,
    NumericalContractError: 5,
    DegenerateInputError: 6,
}


def _node_records(gmap, values: np.ndarray):
    """(node index, component, value) rows in C order."""
    flat = values.reshape(values.shape[0], -1)
    rows = []
    for idx in range(flat.shape[1]):
        for comp in range(flat.shape[0]):
            rows.append((idx, comp, flat[comp, idx]))
    return rows


def _order_of(cfg: ExperimentConfig):
    return cfg.order if cfg.order == "es4" else int(cfg.order)


def run(cfg: ExperimentConfig) -> ResultArtifact:
    """Dispatch one validated configuration and build its artifact."""
    diags = validate(cfg)
    if diags:
        if all(d.startswith("capability:") for d in diags):
            raise CapabilityError("; ".join(diags))
        raise ConfigurationError("; ".join(diags))
    np.random.seed(cfg.seed)
    start = time.monotonic()
    command = cfg.command
    columns: list[str]
    records: list[tuple]
    summary: dict[str, object] = {}

    if command == "latitude-search":
        m = int(cfg.latitude["m"])
        order = cfg.latitude.get("order", cfg.order)
        order = order if order == "es4" else int(order)
        roots = va.find_k_harmonic_latitude(m, order)
        columns = ["index", "alpha", "reduction_value"]
        records = [(i, r, va.latitude_reduction(m, order, r)) for i, r in enumerate(roots)]
        summary = {"roots_found": len(roots)}
        if roots:
            summary["alpha_first"] = roots[0]
    else:
        dom = build_domain(cfg.domain)
        tgt = build_target(cfg.target)
        gmap = build_map(cfg, dom, tgt)
        if command == "tension":
            tau = tension(gmap)
            columns = ["node", "component", "value"]
            records = _node_records(gmap, tau.values)
            summary = {"max_abs_tension": tau.max_norm()}
        elif command == "tower":
            tower = build_tower(gmap, int(cfg.order), richardson=gmap.eval_mode == "grid_fd")
            columns = ["level", "node", "component", "value"]
            records = [(i,) + rec for i, sec in enumerate(tower.u)
                       for rec in _node_records(gmap, sec.values)]
            summary = {"levels": len(tower.u)}
            summary.update((f"sup_norm_level_{i}", float(np.max(np.abs(sec.values))))
                           for i, sec in enumerate(tower.u))
            if tower.richardson_error is not None:
                summary["richardson_error"] = tower.richardson_error
        elif command == "tau-k":
            sec = tau_k(gmap, int(cfg.order))
            columns = ["node", "component", "value"]
            records = _node_records(gmap, sec.values)
            summary = {"max_abs": sec.max_norm(), "order": int(cfg.order)}
        elif command == "tau-es4":
            sec = tau4_es(gmap)
            hat = hat_tau4(gmap)
            terms = es4_terms(gmap)
            columns = ["node", "component", "value"]
            records = _node_records(gmap, sec.values)
            summary = {
                "max_abs": sec.max_norm(),
                "max_abs_hat": hat.max_norm(),
                "max_abs_xi1": terms.xi1.max_norm(),
            }
        elif command == "energy":
            rep = va.energy_es4(gmap) if cfg.order == "es4" else va.energy_k(gmap, int(cfg.order))
            columns = ["order", "value"]
            records = [(str(rep.k), rep.value)]
            summary = {"energy": rep.value, "quadrature": rep.quadrature}
        elif command == "variation-check":
            disc = va.first_variation_check(gmap, cfg.variation["exprs"], _order_of(cfg),
                                            t=float(cfg.variation.get("t", 1e-5)))
            columns = ["order", "discrepancy"]
            records = [(str(cfg.order), disc)]
            summary = {"discrepancy": disc}
        elif command == "reduce-residual":
            res = red.residual(gmap, int(cfg.order), cfg.kind)
            columns = ["node", "value"]
            records = [(i, v) for i, v in enumerate(res.reshape(-1))]
            summary = {"sup_residual": float(np.max(res))}
        elif command == "aronszajn":
            mask = red.window_mask(gmap.grid_shape, cfg.window) if cfg.window else None
            rep = red.aronszajn_ratio(gmap, int(cfg.order), cfg.kind, mask)
            columns = ["lemma", "sup_ratio", "masked_fraction", "grid_shape"]
            records = [("aronszajn", rep.ratio, rep.masked_fraction, "x".join(map(str, gmap.grid_shape)))]
            summary = {"sup_ratio": rep.ratio, "masked_fraction": rep.masked_fraction}
        elif command == "pair-bound":
            gmap2 = build_map(cfg, dom, tgt, "map2")
            rep = red.pair_difference_bound(gmap, gmap2, int(cfg.order))
            columns = ["lemma", "sup_ratio", "masked_fraction", "grid_shape"]
            shape = "x".join(map(str, gmap.grid_shape))
            records = [(name, r.ratio, r.masked_fraction, shape) for name, r in rep.as_records()]
            summary = {"full_ratio": rep.full.ratio}
        elif command == "equator-check":
            rep = red.equator_bound(gmap, int(cfg.order), cfg.window)
            columns = ["block", "max_on_window"]
            records = [(name, v) for name, v in sorted(rep.block_max_on_window.items())]
            summary = {
                "max_y_on_window": rep.max_on_window,
                "off_window_ratio": rep.off_window.ratio,
                "off_window_masked_fraction": rep.off_window.masked_fraction,
            }
        elif command == "flow":
            res = va.gradient_flow(gmap, _order_of(cfg), float(cfg.flow["dt"]),
                                   int(cfg.flow["steps"]))
            columns = ["step", "energy", "tau_norm"]
            records = list(res.records)
            summary = {
                "final_energy": res.records[-1][1],
                "final_tau_norm": res.records[-1][2],
                "dt_final": res.dt_final,
                "halvings": res.halvings,
            }
        else:
            raise ConfigurationError(f"unknown command {command!r}")

    wall = time.monotonic() - start
    return ResultArtifact(command, cfg.to_canonical_json(), __version__, columns, records,
                          summary, wall_time=wall)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="polyharm",
        description="higher-order tension fields, reduction witnesses and latitude searches",
    )
    parser.add_argument("command", choices=list(COMMANDS) + ["validate"])
    parser.add_argument("--config", required=True, help="path to a JSON experiment configuration")
    parser.add_argument("--workers", type=int, default=None,
                        help="worker count (default: POLYHARM_WORKERS or 1)")
    parser.add_argument("--out", default=None, help="artifact output path (default: stdout)")
    args = parser.parse_args(argv)

    try:
        cfg = ExperimentConfig.load(args.config)
        if args.command != "validate" and cfg.command != args.command:
            raise ConfigurationError(
                f"command line says {args.command!r} but the config says {cfg.command!r}")
        cfg.workers = args.workers if args.workers is not None else default_workers()
        if args.command == "validate":
            diags = validate(cfg)
            for d in diags:
                print(d)
            return 0 if not diags else 2
        artifact = run(cfg)
    except PolyharmError as exc:
        code = EXIT_CODES.get(type(exc), 2)
        record = {"error_type": type(exc).__name__, "message": str(exc), "exit_code": code}
        print(json.dumps(record, sort_keys=True), file=sys.stderr)
        return code

    out_path = args.out or cfg.out
    if out_path:
        artifact.write(out_path)
        print(f"wrote {out_path} ({len(artifact.records)} records) in {artifact.wall_time:.3f}s",
              file=sys.stderr)
    else:
        sys.stdout.write(artifact.render())
        print(f"completed in {artifact.wall_time:.3f}s", file=sys.stderr)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
