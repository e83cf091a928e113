"""Command-line entry point: ``glasscav {jmatrix|replicas|analyze|image|randmat|reproduce}``.

Every command writes its outputs plus ``manifest.json`` into ``--out``.
Exit codes: 0 success, 1 invalid input or configuration, 2 runtime or
numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import tempfile
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from . import glass_analysis as ga
from . import persistence as io
from .cavity_optics import symmetry_average
from .config import ExperimentConfig, config_hash, format_errors, load_config
from .coupling import assemble_J, point_source_J
from .errors import ConvergenceError, GlasscavError, IntegratorError, NumericalRangeError
from .holographic_imaging import fit_spins, synthesize_field
from .randmat import sweep_w
from .replica_dynamics import ReplicaEnsemble, generate_ensemble

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    """Bad command-line input; exits with code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_INVALID)


def _duration(text: str) -> float:
    """Parse ``5ms``, ``300us``, ``0.005s`` or a bare number of seconds."""
    units = {"ns": 1e-9, "us": 1e-6, "µs": 1e-6, "ms": 1e-3, "s": 1.0}
    t = text.strip()
    for u in sorted(units, key=len, reverse=True):
        if t.endswith(u):
            try:
                return float(t[: -len(u)]) * units[u]
            except ValueError:
                break
    try:
        return float(t)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad duration {text!r}") from None


def _threads(args) -> int:
    env = os.environ.get("GLASSCAV_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise UsageError(f"GLASSCAV_THREADS must be an integer, got {env!r}") from None
    elif args.threads is not None:
        n = args.threads
    else:
        n = os.cpu_count() or 1
    if n < 1:
        raise UsageError("thread count must be at least 1")
    return n


def _config(args) -> ExperimentConfig:
    return load_config(getattr(args, "config", None))


def _args_hash(args: dict) -> str:
    return hashlib.sha256(json.dumps(args, sort_keys=True).encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# commands; each returns (input paths, output paths, config hash, base seed)


def cmd_jmatrix(args, threads):
    cfg = _config(args)
    if args.group is not None or args.seed is not None:
        sites = cfg.sites.model_dump()
        if args.group is not None:
            sites.update(group=args.group, positions_um=None)
        if args.seed is not None:
            sites["seed"] = args.seed
        cfg = cfg.model_copy(update={"sites": type(cfg.sites).model_validate(sites)})
    geom = cfg.geometry.build()
    sites = cfg.sites.build()
    if cfg.coupling.point_source:
        Jm = point_source_J(sites, geom)
    else:
        Jm = assemble_J(sites, geom, nodes=cfg.coupling.nodes, include_local=cfg.coupling.include_local)
    out = Path(args.out)
    files = io.write_coupling(out / "J.csv", Jm, seed=cfg.sites.seed,
                              extra={"config": cfg.model_dump(mode="json")})
    return [], files, config_hash(cfg), cfg.sites.seed


def cmd_replicas(args, threads):
    cfg = _config(args)
    Jm = io.read_coupling(args.J)
    sched = cfg.schedule.build()
    changes = {}
    if args.t_ramp is not None:
        changes["t_R"] = args.t_ramp
    if args.t_quench is not None:
        changes["t_q"] = args.t_quench
    if changes:
        sched = type(sched)(**{**sched.as_dict(), **changes})
    dyn = cfg.dynamics
    engine = args.engine or dyn.engine
    seed = dyn.base_seed if args.seed is None else args.seed
    n_reps = args.n_reps if args.n_reps is not None else dyn.n_reps
    ens = generate_ensemble(Jm, cfg.physical.build(), sched, n_reps=n_reps, base_seed=seed,
                            engine=engine, epsilon=dyn.epsilon, damping_scale=dyn.damping_scale,
                            descent_init=dyn.descent_init, threads=threads, rtol=dyn.rtol)
    files = io.write_ensemble(Path(args.out) / "ensemble.csv", ens)
    return [Path(args.J)], files, config_hash(cfg), seed


def _load_ensembles(paths) -> list[ReplicaEnsemble]:
    if not paths:
        raise UsageError("at least one --ensemble file is required")
    ens = [io.read_ensemble(p) for p in paths]
    if len({e.n for e in ens}) > 1:
        raise UsageError("ensembles differ in system size")
    return ens


def _overlaps(e: ReplicaEnsemble, binarize: bool) -> np.ndarray:
    return ga.overlap_matrix(e, binarize=binarize)


def cmd_analyze(args, threads):
    cfg = _config(args)
    an = cfg.analysis
    bins = args.bins or an.bins
    binarize = args.binarize or an.binarize
    n_boot = an.n_boot if args.n_boot is None else args.n_boot
    out = Path(args.out)
    sub = args.analysis
    inputs = [Path(p) for p in (args.ensemble or [])]
    files = []

    if sub == "kcorr" and args.paramagnet:
        spins = ga.paramagnet_ensemble(args.n, args.n_reps, args.seed)
        ensembles = [ReplicaEnsemble(spins, np.arange(args.n_reps))]
        inputs = []
    else:
        ensembles = _load_ensembles(args.ensemble)

    if sub == "overlap":
        e = ensembles[0]
        Q = _overlaps(e, binarize)
        h = ga.overlap_distribution(Q, bins=bins, n_boot=n_boot, seed=args.seed)
        files += [io.write_histogram(out / "overlap.csv", h),
                  io.write_text(out / "overlap_matrix.csv", io.matrix_to_csv(Q))]
    elif sub in ("parisi", "qx"):
        hs = [ga.overlap_distribution(_overlaps(e, binarize), bins=bins) for e in ensembles]
        if len(hs) >= 2:
            h = ga.parisi_distribution(hs, n_boot=max(n_boot, 2), seed=args.seed)
        else:
            h = ga.overlap_distribution(_overlaps(ensembles[0], binarize), bins=bins,
                                        n_boot=n_boot, seed=args.seed)
        if sub == "parisi":
            files.append(io.write_histogram(out / "parisi.csv", h))
        else:
            res = ga.parisi_function(h)
            lines = ["x,q"] + [f"{x!r},{q!r}" for x, q in zip(res.x.tolist(), res.q.tolist())]
            files.append(io.write_text(out / "qx.csv", "\n".join(lines) + "\n"))
            fit = res.fit
            files.append(io.write_json(out / "qx_fit.json", {
                "q_EA": fit.q_EA, "a": fit.a, "b": fit.b, "c": fit.c, "x_star": fit.x_star,
                "residual": fit.residual, "degenerate": fit.degenerate, "binarized": binarize,
                "realizations": len(ensembles)}))
    elif sub == "kcorr":
        k = ga.k_correlator(_overlaps(ensembles[0], binarize), bins=bins)
        files.append(io.write_histogram(out / "kcorr.csv", k.histogram))
        files.append(io.write_json(out / "kcorr.json", {
            "mean": k.mean, "fwhm": k.fwhm, "sigma_d": k.sigma_d, "triples": int(k.values.size),
            "paramagnet": bool(args.paramagnet)}))
    elif sub == "cluster":
        d = ga.cluster_replicas(_overlaps(ensembles[0], binarize), linkage=an.linkage, use_abs=an.use_abs)
        files.append(io.write_text(out / "dendrogram.json", d.to_json() + "\n"))
    elif sub == "entropy":
        rows = {}
        for p, e in zip(args.ensemble, ensembles):
            r = ga.shannon_entropy_jackknife(e)
            se = ga.bootstrap_errors(lambda s: ga.shannon_entropy_jackknife(s).plugin, e,
                                     n_boot=max(n_boot, 2), seed=args.seed)
            rows[str(p)] = {"plugin": r.plugin, "jackknife": float(r.jackknife),
                            "plugin_stderr": float(se), "t_R": None if np.isnan(e.t_R) else e.t_R}
        files.append(io.write_json(out / "entropy.json", rows))
    elif sub == "magnetization":
        e = ensembles[0]
        m = ga.magnetization_stats(e)
        files.append(io.write_histogram(out / "magnetization.csv", m.histogram))
        files.append(io.write_json(out / "magnetization.json", {
            "mean": m.mean, "mean_abs": m.mean_abs, "stderr": m.stderr, "std": float(m.m.std())}))
    return inputs, files, config_hash(cfg), args.seed


def _sites_from_J(path):
    Jm = io.read_coupling(path)
    if not Jm.sites:
        raise UsageError(f"{path}: no site list in the sidecar; image commands need positions")
    return Jm


def cmd_image(args, threads):
    cfg = _config(args)
    out = Path(args.out)
    geom = cfg.geometry.build()
    if args.action == "synth":
        Jm = _sites_from_J(args.J)
        ens = io.read_ensemble(args.ensemble)
        if not 0 <= args.row < ens.n_reps:
            raise UsageError(f"row {args.row} outside the {ens.n_reps} replicas")
        if ens.n != Jm.n:
            raise UsageError("ensemble and J differ in system size")
        snr = None if args.noise == "none" else float(args.noise)
        spins = ens.spins[args.row]
        img = synthesize_field(spins, Jm.sites, Jm.geom, noise=snr, seed=args.seed,
                               grid_size=args.grid)
        files = [io.write_field_binary(out / "field.gcf", img),
                 io.write_json(out / "field.json", {"spins": spins.tolist(), "snr_db": snr,
                                                    "seed": args.seed, "row": args.row})]
        return [Path(args.J), Path(args.ensemble)], files, config_hash(cfg), args.seed
    if args.action == "fit":
        Jm = _sites_from_J(args.J)
        img = io.read_field(args.field)
        try:
            fit = fit_spins(img, Jm.sites, Jm.geom)
        except GlasscavError as exc:
            raise type(exc)(f"{args.field}: {exc}") from exc
        report = fit.to_dict()
        truth = Path(args.field).with_suffix(".json")
        inputs = [Path(args.J), Path(args.field)]
        if truth.exists():
            ref = np.asarray(io.read_json(truth).get("spins", []), dtype=float)
            if ref.size == fit.n:
                report["sign_agreement"] = float(np.mean(np.sign(ref) == np.sign(fit.s)))
                inputs.append(truth)
        return inputs, [io.write_json(out / "fit.json", report)], config_hash(cfg), None
    # symmetry average
    img = io.read_field(args.field)
    avg = symmetry_average(img, geom)
    rel = float(np.linalg.norm(avg.grid - img.grid) / np.linalg.norm(img.grid))
    files = [io.write_field_binary(out / "field_symavg.gcf", avg),
             io.write_json(out / "symavg.json", {"relative_change": rel})]
    return [Path(args.field)], files, config_hash(cfg), None


def cmd_randmat(args, threads):
    cfg = _config(args)
    if any(n < 3 for n in args.n):
        raise UsageError("--n values must be at least 3")
    if any(w < 0 for w in args.w):
        raise UsageError("--w values must be non-negative")
    if args.draws < 2:
        raise UsageError("--draws must be at least 2")
    res = sweep_w(args.n, args.w, args.draws, args.seed, cfg.geometry.build(), threads=threads)
    files = [io.write_text(Path(args.out) / "sweep.csv", res.to_csv())]
    return [], files, config_hash(cfg), args.seed


COMMANDS = {"jmatrix": cmd_jmatrix, "replicas": cmd_replicas, "analyze": cmd_analyze,
            "image": cmd_image, "randmat": cmd_randmat}


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="glasscav", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, config=True):
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--threads", type=int, default=None,
                        help="worker threads (GLASSCAV_THREADS overrides; default: all cores)")
        if config:
            sp.add_argument("--config", default=None, help="experiment config JSON")

    sp = sub.add_parser("jmatrix", help="assemble a coupling matrix")
    common(sp)
    sp.add_argument("--group", choices=["A", "B", "C", "D", "J1"], default=None)
    sp.add_argument("--seed", type=int, default=None, help="layout seed for sampled groups")

    sp = sub.add_parser("replicas", help="simulate a replica ensemble")
    common(sp)
    sp.add_argument("--J", required=True, help="J CSV written by jmatrix")
    sp.add_argument("--t-ramp", type=_duration, default=None, help="ramp time, e.g. 5ms")
    sp.add_argument("--t-quench", type=_duration, default=None, help="quench hold, e.g. 300us")
    sp.add_argument("--n-reps", type=int, default=None)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--engine", choices=["semiclassical", "descent"], default=None)

    sp = sub.add_parser("analyze", help="replica statistics")
    sp.add_argument("analysis", choices=["overlap", "parisi", "qx", "kcorr", "cluster", "entropy",
                                         "magnetization"])
    common(sp)
    sp.add_argument("--ensemble", nargs="*", default=None, help="ensemble CSV file(s)")
    sp.add_argument("--bins", type=int, default=None)
    sp.add_argument("--binarize", action="store_true")
    sp.add_argument("--n-boot", type=int, default=None)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--paramagnet", action="store_true",
                    help="kcorr: use i.i.d. random-sign replicas instead of files")
    sp.add_argument("--n", type=int, default=16, help="paramagnet system size")
    sp.add_argument("--n-reps", type=int, default=200, help="paramagnet replica count")

    sp = sub.add_parser("image", help="synthesize, fit or symmetry-average field images")
    sp.add_argument("action", choices=["synth", "fit", "symavg"])
    common(sp)
    sp.add_argument("--J", default=None, help="J CSV whose sidecar lists the sites")
    sp.add_argument("--ensemble", default=None)
    sp.add_argument("--row", type=int, default=0, help="replica row to image")
    sp.add_argument("--noise", default="none", help="SNR in dB or 'none'")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--grid", type=int, default=256)
    sp.add_argument("--field", default=None, help="field image (.gcf or CSV pair)")

    sp = sub.add_parser("randmat", help="random-matrix sweep over disorder width")
    common(sp)
    sp.add_argument("--n", type=int, nargs="+", default=[16])
    sp.add_argument("--w", type=float, nargs="+", required=True, help="widths in waists")
    sp.add_argument("--draws", type=int, default=1000)
    sp.add_argument("--seed", type=int, default=0)

    sp = sub.add_parser("reproduce", help="replay a manifest and compare output digests")
    sp.add_argument("manifest")
    sp.add_argument("--out", default=None, help="replay directory (default: a temporary one)")
    sp.add_argument("--threads", type=int, default=None)
    return p


def _check_required(args):
    if args.command == "image":
        need = {"synth": ("J", "ensemble"), "fit": ("J", "field"), "symavg": ("field",)}[args.action]
        missing = [f"--{k}" for k in need if getattr(args, k) is None]
        if missing:
            raise UsageError(f"image {args.action} requires {', '.join(missing)}")
        if args.noise != "none":
            try:
                float(args.noise)
            except ValueError:
                raise UsageError("--noise must be a number of dB or 'none'") from None


def run(args) -> dict:
    """Execute one command and write its manifest; returns the manifest."""
    _check_required(args)
    threads = _threads(args)
    started = datetime.now(timezone.utc)
    inputs, outputs, chash, seed = COMMANDS[args.command](args, threads)
    if getattr(args, "config", None):
        inputs = [Path(args.config), *inputs]
    recorded = {k: v for k, v in vars(args).items()}
    man = io.build_manifest(args.command, recorded, chash or _args_hash(recorded), seed,
                            inputs, outputs, threads, started)
    io.write_json(Path(args.out) / "manifest.json", man)
    return man


def reproduce(args) -> int:
    man = io.read_json(args.manifest)
    changed = [p for p, d in man["inputs"].items() if not Path(p).exists() or io.file_digest(p) != d]
    if changed:
        raise UsageError(f"inputs changed since the run: {', '.join(changed)}")
    old_out = Path(man["args"]["out"])
    with tempfile.TemporaryDirectory() as tmp:
        new_out = Path(args.out) if args.out else Path(tmp)
        replay = argparse.Namespace(**{**man["args"], "out": str(new_out)})
        replay.threads = man["threads"]
        saved = os.environ.pop("GLASSCAV_THREADS", None)
        try:
            run(replay)
        finally:
            if saved is not None:
                os.environ["GLASSCAV_THREADS"] = saved
        mismatched = []
        for p, d in man["outputs"].items():
            rel = Path(p).relative_to(old_out) if Path(p).is_relative_to(old_out) else Path(p).name
            q = new_out / rel
            if not q.exists() or io.file_digest(q) != d:
                mismatched.append(str(rel))
    if mismatched:
        print(f"reproduce: outputs differ: {', '.join(mismatched)}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"reproduce: {len(man['outputs'])} outputs byte-identical")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "reproduce":
            return reproduce(args)
        man = run(args)
        for p in man["outputs"]:
            print(p)
        return EXIT_OK
    except (ConvergenceError, IntegratorError, NumericalRangeError) as exc:
        # numerical failures first: some also derive from ValueError
        print(f"failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except ValidationError as exc:
        for line in format_errors(exc):
            print(f"config error: {line}", file=sys.stderr)
        return EXIT_INVALID
    except (UsageError, ValueError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (RuntimeError, ArithmeticError, GlasscavError, np.linalg.LinAlgError) as exc:
        print(f"failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
