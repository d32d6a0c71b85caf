"""Command line entry point: ``gminfer {train-gan,refine,ablate,verify,report}``.

Every run writes ``manifest-<command>.json`` (config echo, seed, PRNG id)
before any metric output and finalizes it with timings, derived values and a
status marker. Exit codes: 0 success, 2 config error, 3 numerical failure,
4 verification failure, 5 I/O failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, config_dict, effective_ini, load_config
from .errors import GminferError, IoFailure
from .flow import IdentityGenerator
from .nets import load_net, save_net
from .numerics import PRNG_ALGORITHM
from .runs import build_condition, per_term_report, run_ablation, run_refine, train_stage

logger = logging.getLogger("gminfer")

GEN_FILE = "generator.net"
DISC_FILE = "discriminator.net"


# --------------------------------------------------------------------------- file helpers


def _write_text(path: Path, text: str):
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(text, encoding="utf-8")
        os.replace(tmp, path)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def write_json(path: Path, obj):
    _write_text(path, json.dumps(obj, indent=2) + "\n")


def write_jsonl(path: Path, rows, seed):
    _write_text(path, "".join(json.dumps({"seed": seed, **r}) + "\n" for r in rows))


def write_csv(path: Path, header, rows):
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_jsonl(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return [json.loads(line) for line in fh if line.strip()]
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise IoFailure(f"{path} is not valid JSONL: {exc}") from exc


def particle_rows(seed, z, x):
    z = np.atleast_2d(z)
    x = np.atleast_2d(x)
    header = ["seed"] + [f"z{i}" for i in range(z.shape[1])] + [f"x{i}" for i in range(x.shape[1])]
    return header, [[seed, *map(repr, zi.tolist()), *map(repr, xi.tolist())] for zi, xi in zip(z, x)]


class Manifest:
    """Run manifest, written on start and finalized on exit.

    ``Manifest.current`` tracks the open manifest so :func:`main` can stamp a
    failure marker when a command raises.
    """

    current = None

    def __init__(self, out: Path, command: str, cfg: RunConfig, tag: str = ""):
        Manifest.current = self
        self.path = out / f"manifest-{command}{'-' + tag if tag else ''}.json"
        self.start = time.time()
        self.doc = {
            "command": command,
            "seed": cfg.run.seed,
            "prng": PRNG_ALGORITHM,
            "library_version": __version__,
            "status": "running",
            "config": config_dict(cfg),
        }
        write_json(self.path, self.doc)
        _write_text(out / "effective_config.ini", effective_ini(cfg))

    def finish(self, status="ok", **extra):
        self.doc.update(extra)
        self.doc["status"] = status
        self.doc["wall_clock_s"] = round(time.time() - self.start, 3)
        write_json(self.path, self.doc)
        Manifest.current = None


def _mark_failed(exc):
    man = Manifest.current
    if man is not None:
        try:
            man.finish(status=f"failed: {type(exc).__name__}", error=str(exc))
        except IoFailure:
            pass


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.run.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create output directory {out}: {exc}") from exc
    return out


def _load_models(cfg: RunConfig, target):
    """Generator and discriminator per ``run.generator`` and ``run.nets``."""
    nets = Path(cfg.run.nets or cfg.run.out)
    disc = load_net(nets / DISC_FILE) if (nets / DISC_FILE).exists() else None
    if cfg.run.generator == "identity":
        return IdentityGenerator(target.dim), disc
    if disc is None:
        raise IoFailure(f"no {DISC_FILE} in {nets}; run train-gan first or use --generator identity")
    return load_net(nets / GEN_FILE), disc


def _condition(cfg: RunConfig, target, disc):
    c = cfg.condition
    return build_condition(c.variant, target, disc, c.observed, c.values, c.tau, c.index, c.beta)


# --------------------------------------------------------------------------- commands


def cmd_train_gan(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    man = Manifest(out, "train-gan", cfg)
    target = cfg.resolve_target()
    gen, disc, hist = train_stage(target, cfg.gan, cfg.run.seed)
    save_net(gen, out / GEN_FILE)
    save_net(disc, out / DISC_FILE)
    write_csv(out / "history.csv", ["seed", "step", "d_loss", "g_loss", "mmd"],
              [[cfg.run.seed, *r] for r in hist.rows()])
    man.finish(final_mmd=hist.mmd[-1] if hist.mmd else None)
    print(f"wrote {out / GEN_FILE}, {out / DISC_FILE}, {out / 'history.csv'}")
    return 0


def cmd_refine(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    est = cfg.flow.estimator
    man = Manifest(out, "refine", cfg, tag=est)
    target = cfg.resolve_target()
    gen, disc = _load_models(cfg, target)
    res = run_refine(gen, disc, target, cfg.flow, cfg.run.seed, cond=_condition(cfg, target, disc),
                     n_eval=cfg.run.n_eval, oracle_score=cfg.run.oracle_score)
    write_jsonl(out / f"trajectory-{est}.jsonl", res.trajectory, cfg.run.seed)
    header, rows = particle_rows(cfg.run.seed, res.final.z, res.final.x)
    write_csv(out / f"particles-{est}.csv", header, rows)
    traj = res.trajectory
    man.finish(derived=res.metadata, diagnostics={
        "clamp_count_q": sum(r["clamp_count_q"] for r in traj),
        "clamp_count_p": sum(r["clamp_count_p"] for r in traj),
        "clip_count": sum(r["clip_count"] for r in traj),
    })
    first, last = traj[0], traj[-1]
    print(f"mmd {first['mmd']:.6g} -> {last['mmd']:.6g}; modes {first.get('modes_covered')} -> "
          f"{last.get('modes_covered')}; wrote {out / f'trajectory-{est}.jsonl'}")
    return 0


ABLATION_FIELDS = ["seed", "cell", "estimator", "sigma", "terms", "step_size", "steps", "status",
                   "initial_mmd", "final_mmd", "modes_initial", "modes_final", "hq_fraction", "flag"]


def cmd_ablate(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    man = Manifest(out, "ablate", cfg)
    target = cfg.resolve_target()
    gen, disc = _load_models(cfg, target)
    cond = _condition(cfg, target, disc)
    if cond.variant == "none" and disc is not None:
        cond = build_condition("discriminator", disc=disc)
    seed = cfg.run.seed

    def save_cell(i, cell, res):
        if res is not None:
            write_jsonl(out / "cells" / f"{i:03d}" / "trajectory.jsonl", res.trajectory, seed)

    rows = run_ablation(gen, disc, target, cfg.flow, cfg.ablate, seed, cond=cond,
                        n_eval=cfg.run.n_eval, on_cell=save_cell)
    write_csv(out / "ablation.csv", ABLATION_FIELDS, [[seed] + [r[k] for k in ABLATION_FIELDS[1:]] for r in rows])
    write_json(out / "per_term.json", {"seed": seed, "terms": per_term_report(rows)})
    failed = sum(r["status"] != "ok" for r in rows)
    man.finish(cells=len(rows), failed_cells=failed)
    print(f"{len(rows)} cells ({failed} failed); wrote {out / 'ablation.csv'}")
    return 0


def verify_thresholds(smooth, krr, grads):
    """Names of the acceptance checks that failed (empty when all pass)."""
    bad = []
    if not 1.5 <= smooth["slope_median"] <= 2.5:
        bad.append("smoothing slope")
    if not smooth.get("closed_form_within_3se", True):
        bad.append("smoothing closed form")
    if not krr["all_strictly_decreasing"]:
        bad.append("krr limit decay")
    if not grads["passed"]:
        bad.append("gradients: " + ",".join(grads["failed_paths"]))
    return bad


def cmd_verify(cfg: RunConfig) -> int:
    from .verify import random_kernel_matrix, verify_gradients, verify_krr_kde_scores, verify_krr_limit, verify_smoothing

    out = _out_dir(cfg)
    man = Manifest(out, "verify", cfg)
    v, seed = cfg.verify, cfg.run.seed
    smooth = {"seed": seed, **verify_smoothing(v.sigma_grid, v.m, v.probes, seed, v.bandwidth)}
    write_json(out / "smoothing.json", smooth)
    mats = [verify_krr_limit(random_kernel_matrix(v.matrix_size, seed + i), v.eta_grid)
            for i in range(v.n_matrices)]
    krr = {
        "seed": seed,
        "eta_grid": mats[0]["eta_grid"],
        "frobenius_by_eta": [m["frobenius_by_eta"] for m in mats],
        "all_strictly_decreasing": all(m["strictly_decreasing"] for m in mats),
        "all_within_envelope_at_max_eta": all(m["within_envelope"][-1] for m in mats),
        "scalar_check": verify_krr_limit(np.ones((1, 1)), v.eta_grid)["scalar_closed_form"],
        "score_agreement": verify_krr_kde_scores(v.score_n, v.score_ridge, v.probes, seed),
    }
    write_json(out / "krr_limit.json", krr)
    grads = verify_gradients(seed)
    write_json(out / "gradients.json", grads)
    bad = verify_thresholds(smooth, krr, grads)
    man.finish(status="ok" if not bad else "verification failed", failed_checks=bad)
    print(f"slope median {smooth['slope_median']:.3f}; krr decay {krr['all_strictly_decreasing']}; "
          f"gradients {'pass' if grads['passed'] else 'FAIL'}")
    if bad:
        print("failed: " + "; ".join(bad), file=sys.stderr)
        return 4
    return 0


REPORT_COLUMNS = ("t", "mmd", "energy_distance", "modes_covered", "hq_fraction", "clamp_count_q",
                  "clamp_count_p", "grad_norm_mean", "clip_count", "sigma_current")


def format_table(rows, columns=REPORT_COLUMNS):
    cols = [c for c in columns if any(c in r for r in rows)]

    def cell(v):
        if isinstance(v, float):
            return f"{v:.5g}"
        return "" if v is None else str(v)

    body = [[cell(r.get(c)) for c in cols] for r in rows]
    widths = [max(len(c), *(len(b[i]) for b in body)) if body else len(c) for i, c in enumerate(cols)]
    lines = ["  ".join(c.rjust(w) for c, w in zip(cols, widths)),
             "  ".join("-" * w for w in widths)]
    lines += ["  ".join(v.rjust(w) for v, w in zip(b, widths)) for b in body]
    return "\n".join(lines)


def cmd_report(args) -> int:
    from . import plotting

    src = Path(args.trajectory)
    rows = read_jsonl(src)
    if not rows:
        raise IoFailure(f"{src} has no rows")
    out = Path(args.out) if args.out else src.parent
    stem = src.stem
    print(format_table(rows))
    cols = ["seed"] + [c for c in REPORT_COLUMNS if any(c in r for r in rows)]
    write_csv(out / f"{stem}-plot.csv", cols, [[r.get(c, "") for c in cols] for r in rows])
    try:
        plotting.save(plotting.plot_trajectory(rows), out / f"{stem}.png")
        if args.particles:
            data = np.genfromtxt(args.particles, delimiter=",", names=True)
            xcols = [n for n in data.dtype.names if n.startswith("x")][:2]
            pts = np.stack([data[c] for c in xcols], axis=1)
            modes = None
            if args.target:
                from .targets import get_target
                modes = get_target(args.target).means
            plotting.save(plotting.plot_particles(pts, modes, title=Path(args.particles).stem),
                          out / f"{Path(args.particles).stem}.png")
    except OSError as exc:
        raise IoFailure(f"cannot write figures to {out}: {exc}") from exc
    print(f"wrote {out / f'{stem}-plot.csv'} and figures to {out}")
    return 0


# --------------------------------------------------------------------------- entry


def build_parser():
    p = argparse.ArgumentParser(prog="gminfer", description="Latent-space refinement of toy generators.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="INI run configuration")
        sp.add_argument("--seed", type=int, help="override run.seed")
        sp.add_argument("--out", help="override run.out")
        sp.add_argument("--estimator", choices=("krr", "kde"), help="override flow.estimator")
        sp.add_argument("--generator", choices=("mlp", "identity"), help="override run.generator")

    for name, helptext in (("train-gan", "train the toy GAN"),
                           ("refine", "refine generator latents"),
                           ("ablate", "run the ablation grid"),
                           ("verify", "run the numerical verification reports")):
        common(sub.add_parser(name, help=helptext))
    rp = sub.add_parser("report", help="tabulate and plot a trajectory JSONL")
    rp.add_argument("trajectory")
    rp.add_argument("--particles", help="particles CSV to scatter")
    rp.add_argument("--target", help="built-in target name for mode markers")
    rp.add_argument("--out", help="output directory (default: next to the input)")
    return p


COMMANDS = {"train-gan": cmd_train_gan, "refine": cmd_refine, "ablate": cmd_ablate, "verify": cmd_verify}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    Manifest.current = None
    try:
        if args.command == "report":
            return cmd_report(args)
        cfg = load_config(args.config, args.seed, args.out, args.estimator, args.generator)
        return COMMANDS[args.command](cfg)
    except GminferError as exc:
        _mark_failed(exc)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        _mark_failed(exc)
        print(f"error: IoFailure: {exc}", file=sys.stderr)
        return IoFailure.exit_code


if __name__ == "__main__":
    sys.exit(main())
