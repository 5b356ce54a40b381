"""Command-line front end.

Subcommands ``pccd``, ``prepare``, ``qpe``, ``scan`` and ``export-qasm``
write CSV/JSON (and, unless ``--no-plots``, PNG figures) into ``--out``.
Exit status is 0 on success, 1 on a numerical failure and 2 on bad input;
failures print a JSON object ``{"error": {"kind": ..., "message": ...}}``
on stderr.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .circuit import (ORDERINGS, build_upccd, decompose, export_openqasm, gate_metrics, state_to_pairs,
                      terms_from_amplitudes, upccd_state)
from .errors import ConvergenceError, InputError, UpccdError
from .exactref import QubitState
from .integrals import HubbardSpec, hubbard_integrals
from .orbital_opt import OoConfig
from .pairspace import AmplitudeMatrix, pair_overlap, pccd_expand, threshold_amplitudes
from .pipeline import (DEFAULT_THRESHOLD, PccdRun, PreparedState, fidelities, hf_basis, hf_state, load_system,
                       prepare, run_pccd, run_pccd_best)
from .qpe import EvolutionSpec, canonical_qpe, ground_bin, iterative_qpe

log = logging.getLogger("upccd")

DEFAULT_U_VALUES = [0.5 * k for k in range(1, 19)]
DEFAULT_TROTTER = 32


def g10(x):
    """Round to 10 significant digits for output."""
    return float(f"{x:.10g}")


def _write_json(path, obj):
    path.write_text(json.dumps(obj, indent=2) + "\n")
    return path


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([f"{v:.10g}" if isinstance(v, float) else v for v in row])
    return path


# --------------------------------------------------------------------------
# argument handling

def _add_common(p, system=True):
    if system:
        src = p.add_argument_group("system")
        src.add_argument("--fcidump", metavar="PATH", help="integrals in FCIDUMP format (HF orbitals)")
        src.add_argument("--hubbard", metavar="SPEC", help="Hubbard chain, e.g. L=6,t=1,U=8[,pbc]")
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD,
                   help="drop pCCD amplitudes with |t| below this (default %(default)s)")
    p.add_argument("--oo", action="store_true", help="optimize orbitals for the pCCD energy")
    p.add_argument("--active", metavar="i,j,k", help="orbitals allowed to rotate (default: all)")
    p.add_argument("--order", choices=ORDERINGS, default="ascending", help="UpCCD term order")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", metavar="DIR", default="upccd-out")
    p.add_argument("--config", metavar="PATH", help="key=value defaults; command-line flags win")
    p.add_argument("--no-plots", action="store_true", help="skip PNG figures")
    p.add_argument("--max-iter", type=int, default=OoConfig.max_iter, help="orbital-optimization iterations")
    p.add_argument("--learning-rate", type=float, default=OoConfig.learning_rate)
    p.add_argument("--trust-radius", type=float, default=OoConfig.trust_radius)
    p.add_argument("--gradient-tol", type=float, default=OoConfig.gradient_tol)


def _add_amplitude_source(p):
    p.add_argument("--amplitudes", metavar="PATH", help="'i a value' lines instead of solving pCCD")
    p.add_argument("--norb", type=int, help="orbital count for --amplitudes")
    p.add_argument("--nelec", type=int, help="electron count for --amplitudes")


def build_parser():
    parser = argparse.ArgumentParser(prog="upccd", description="oo-pCCD amplitudes to UpCCD circuits and QPE")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pccd", help="solve (oo-)pCCD and write amplitudes")
    _add_common(p)

    p = sub.add_parser("prepare", help="build the UpCCD state and compare with the exact ground state")
    _add_common(p)
    _add_amplitude_source(p)

    p = sub.add_parser("qpe", help="phase estimation from UpCCD and HF initial states")
    _add_common(p)
    p.add_argument("--ancillas", type=int, default=10)
    p.add_argument("--iqpe-bits", type=int, default=0, help="also run iterative QPE with this many bits")
    p.add_argument("--shots", type=int, default=1000)
    p.add_argument("--trotter", type=int, default=DEFAULT_TROTTER, help="product-formula steps per time step")
    p.add_argument("--exact-evolution", action="store_true", help="use the exact propagator")
    p.add_argument("--basis", choices=("auto", "sector", "pairs", "qubit"), default="auto")

    p = sub.add_parser("scan", help="fidelity scan over U values or FCIDUMP files")
    _add_common(p, system=False)
    p.add_argument("--hubbard", metavar="SPEC", help="base chain; U is replaced by each --u-values entry")
    p.add_argument("--u-values", metavar="U1,U2,...", help="default 0.5,1,...,9")
    p.add_argument("--fcidump", metavar="PATH", nargs="+", help="series of FCIDUMP files (one point each)")

    p = sub.add_parser("export-qasm", help="write the decomposed UpCCD circuit as OpenQASM 2.0")
    _add_common(p)
    _add_amplitude_source(p)
    return parser


def _read_config(path):
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


def _apply_config(parser, argv):
    """Re-parse with config-file values as defaults so explicit flags still win."""
    args = parser.parse_args(argv)
    if not getattr(args, "config", None):
        return args
    cfg = _read_config(args.config)
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction)).choices[args.command]
    defaults = {}
    for action in sub._actions:
        if action.dest not in cfg:
            continue
        raw = cfg.pop(action.dest)
        if isinstance(action, argparse._StoreTrueAction):
            defaults[action.dest] = raw.lower() in ("1", "true", "yes", "on")
        elif action.nargs == "+":
            defaults[action.dest] = raw.split()
        else:
            defaults[action.dest] = action.type(raw) if action.type else raw
    if cfg:
        raise InputError(f"unknown config keys: {', '.join(sorted(cfg))}")
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def _validate(args):
    if args.threshold < 0:
        raise InputError("--threshold must be non-negative")
    for name in ("shots", "ancillas", "trotter"):
        if getattr(args, name, 1) < 1:
            raise InputError(f"--{name} must be positive")
    if getattr(args, "iqpe_bits", 0) < 0:
        raise InputError("--iqpe-bits must be non-negative")


def _parse_u_values(text):
    try:
        return [float(x) for x in text.split(",")]
    except ValueError:
        raise InputError(f"--u-values must be comma-separated numbers, got {text!r}") from None


def _oo_config(args):
    active = None
    if args.active:
        active = tuple(int(x) for x in args.active.split(","))
    return OoConfig(learning_rate=args.learning_rate, trust_radius=args.trust_radius,
                    gradient_tol=args.gradient_tol, max_iter=args.max_iter, active=active)


def _system(args):
    if not args.fcidump and not args.hubbard:
        raise InputError("one of --fcidump or --hubbard is required")
    if args.fcidump and args.hubbard:
        raise InputError("--fcidump and --hubbard are mutually exclusive")
    if args.fcidump and not Path(args.fcidump).exists():
        raise FileNotFoundError(f"no such file: {args.fcidump}")
    return load_system(fcidump=args.fcidump, hubbard=args.hubbard)


def _solve(args, ints) -> PccdRun:
    if args.oo:
        return run_pccd_best(ints, _oo_config(args))
    return run_pccd(ints)


def _out(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _metrics_dict(m):
    return {k: int(v) for k, v in m.as_dict().items()}


def _pair_vector(state, norb, npairs):
    if isinstance(state, QubitState):
        return state_to_pairs(state, norb, npairs)
    return state.pair_state()


def _state_json(prepared, norb, npairs):
    vec = _pair_vector(prepared.state, norb, npairs)
    return {
        "norb": norb,
        "npairs": npairs,
        "n_qubits": 2 * norb,
        "terms": [{"i": s.i, "a": s.a, "theta": g10(s.theta)} for s in prepared.terms],
        "coefficients": {k: g10(v) for k, v in sorted(vec.by_ket().items()) if abs(v) > 1e-12},
    }


def _pccd_json(run: PccdRun, prepared):
    sol = run.solution
    out = {
        "energy": g10(sol.energy),
        "residual_norm": g10(sol.residual_norm),
        "iterations": int(sol.iterations),
        "norb": run.integrals.norb,
        "nelec": run.integrals.nelec,
        "threshold": g10(prepared.threshold),
        "survivors": prepared.survivors,
        "gate_metrics": _metrics_dict(prepared.metrics),
        "orbital_optimization": None,
    }
    if run.oo is not None:
        out["orbital_optimization"] = {
            "converged": bool(run.oo.converged),
            "iterations": int(run.oo.iterations),
            "gradient_norm": g10(run.oo.gradient_norm),
        }
    return out


# --------------------------------------------------------------------------
# commands

def cmd_pccd(args):
    out = _out(args)
    ints = _system(args)
    run = _solve(args, ints)
    prepared = prepare(run, args.threshold, args.order)
    (out / "amplitudes.txt").write_text(run.amplitudes.to_text())
    _write_json(out / "pccd.json", _pccd_json(run, prepared))
    written = ["amplitudes.txt", "pccd.json"]
    if run.oo is not None:
        (out / "oo_trace.csv").write_text(run.oo.trace_csv())
        written.append("oo_trace.csv")
        if not args.no_plots and run.oo.trace:
            from .plotting import plot_trace
            plot_trace(run.oo.trace, out / "oo_trace.png")
            written.append("oo_trace.png")
    return written


def _amplitude_file(args):
    if args.norb is None or args.nelec is None:
        raise InputError("--amplitudes needs --norb and --nelec")
    if args.nelec % 2:
        raise InputError("--nelec must be even")
    path = Path(args.amplitudes)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    return AmplitudeMatrix.from_text(path.read_text(), args.norb, args.nelec // 2)


def _prepare_from_file(args, out):
    t = _amplitude_file(args)
    kept = threshold_amplitudes(t, args.threshold)
    terms = terms_from_amplitudes(kept, args.order)
    state = upccd_state(terms, t.norb, t.npairs)
    vec = _pair_vector(state, t.norb, t.npairs)
    circ = build_upccd(terms, t.norb, t.npairs)
    prepared = PreparedState(terms, args.threshold, len(terms), state, gate_metrics(circ))
    report = {
        "source": "amplitudes",
        "pccd_upccd_overlap": g10(pair_overlap(pccd_expand(t), vec)),
        "survivors": len(terms),
        "gate_metrics": _metrics_dict(prepared.metrics),
    }
    _write_json(out / "fidelity.json", report)
    _write_json(out / "state.json", _state_json(prepared, t.norb, t.npairs))
    (out / "circuit.qasm").write_text(export_openqasm(decompose(circ)))
    return ["fidelity.json", "state.json", "circuit.qasm"]


def _point(hf_ints, run, threshold, order):
    prepared = prepare(run, threshold, order)
    fid = fidelities(hf_ints, run, prepared)
    vec = _pair_vector(prepared.state, run.integrals.norb, run.integrals.npairs)
    overlap = pair_overlap(pccd_expand(run.amplitudes), vec)
    return prepared, fid, overlap


def cmd_prepare(args):
    out = _out(args)
    if args.amplitudes:
        return _prepare_from_file(args, out)
    ints = _system(args)
    run = _solve(args, ints)
    prepared, fid, overlap = _point(ints, run, args.threshold, args.order)
    report = {
        "source": "integrals",
        "pccd_energy": g10(run.energy),
        "exact_energy": g10(fid.exact_energy),
        "upccd_fidelity": g10(fid.upccd_fidelity),
        "hf_fidelity": g10(fid.hf_fidelity),
        "pccd_fidelity": g10(fid.pccd_fidelity),
        "pccd_upccd_overlap": g10(overlap),
        "degenerate_ground_state": bool(fid.degenerate),
        "survivors": prepared.survivors,
        "gate_metrics": _metrics_dict(prepared.metrics),
    }
    _write_json(out / "fidelity.json", report)
    _write_json(out / "state.json", _state_json(prepared, run.integrals.norb, run.integrals.npairs))
    circ = build_upccd(prepared.terms, run.integrals.norb, run.integrals.npairs)
    (out / "circuit.qasm").write_text(export_openqasm(decompose(circ)))
    return ["fidelity.json", "state.json", "circuit.qasm"]


def cmd_export_qasm(args):
    out = _out(args)
    if args.amplitudes:
        t = _amplitude_file(args)
        norb, npairs = t.norb, t.npairs
    else:
        ints = _system(args)
        run = _solve(args, ints)
        t, norb, npairs = run.amplitudes, run.integrals.norb, run.integrals.npairs
    terms = terms_from_amplitudes(threshold_amplitudes(t, args.threshold), args.order)
    (out / "circuit.qasm").write_text(export_openqasm(decompose(build_upccd(terms, norb, npairs))))
    return ["circuit.qasm"]


def cmd_qpe(args):
    out = _out(args)
    ints = _system(args)
    run = _solve(args, ints)
    prepared = prepare(run, args.threshold, args.order)
    steps = args.trotter
    # one window and time step for both runs, so their bins line up
    spec_hf = EvolutionSpec.from_integrals(ints, basis=args.basis, trotter_steps=steps, exact=args.exact_evolution)
    spec_up = EvolutionSpec.from_integrals(run.integrals, basis=args.basis, trotter_steps=steps,
                                           exact=args.exact_evolution, window=spec_hf.window, tau=spec_hf.tau)
    inputs = {"upccd": (prepared.state, spec_up), "hf": (hf_state(ints), spec_hf)}
    exact = float(spec_hf.eigensystem()[0][0])
    results, conv = {}, []
    for label, (state, spec) in inputs.items():
        res = canonical_qpe(state, spec, args.ancillas, args.shots, seed=args.seed)
        results[label] = res
        (out / f"histogram_{label}.csv").write_text(res.histogram_csv())
        for m in range(1, args.ancillas + 1):
            r = res if m == args.ancillas else canonical_qpe(state, spec, m, args.shots, seed=args.seed)
            conv.append({"method": "canonical", "initial": label, "bits": m, "modal_bin": r.modal_bin,
                         "energy_estimate": r.energy_estimate})
        for k in range(1, args.iqpe_bits + 1):
            r = iterative_qpe(state, spec, k, max(1, args.shots // max(1, args.iqpe_bits)), seed=args.seed)
            conv.append({"method": "iterative", "initial": label, "bits": k, "modal_bin": r.modal_bin,
                         "energy_estimate": r.energy_estimate})
    _write_csv(out / "convergence.csv", ["method", "initial", "bits", "modal_bin", "energy_estimate", "abs_error"],
               [[r["method"], r["initial"], r["bits"], r["modal_bin"], float(r["energy_estimate"]),
                 float(abs(r["energy_estimate"] - exact))] for r in conv])
    gb = ground_bin(spec_hf, args.ancillas)
    mass = {k: results[k].histogram.get(gb, 0) / args.shots for k in results}
    meta = {
        "seed": args.seed,
        "tau": g10(spec_hf.tau),
        "window": [g10(x) for x in spec_hf.window],
        "trotter_steps": steps,
        "exact_evolution": bool(args.exact_evolution),
        "basis": spec_hf.basis,
        "ancillas": args.ancillas,
        "iqpe_bits": args.iqpe_bits,
        "shots": args.shots,
        "exact_energy": g10(exact),
        "ground_bin": gb,
        "runs": {k: {"modal_bin": r.modal_bin, "modal_phase": g10(r.modal_phase),
                     "energy_estimate": g10(r.energy_estimate), "ground_bin_mass": g10(mass[k])}
                 for k, r in results.items()},
        "ground_bin_mass_ratio": g10(mass["upccd"] / mass["hf"]) if mass["hf"] > 0 else None,
    }
    _write_json(out / "qpe.json", meta)
    written = ["histogram_upccd.csv", "histogram_hf.csv", "convergence.csv", "qpe.json"]
    if not args.no_plots:
        from .plotting import plot_convergence, plot_histograms
        plot_histograms({"UpCCD": results["upccd"], "HF": results["hf"]}, out / "histograms.png", exact)
        plot_convergence(conv, out / "convergence.png", exact)
        written += ["histograms.png", "convergence.png"]
    return written


SCAN_HEADER = ["parameter", "pccd_energy", "exact_energy", "upccd_fidelity", "hf_fidelity", "survivors",
               "native_count", "native_depth", "two_qubit_count", "error"]


def cmd_scan(args):
    out = _out(args)
    if bool(args.hubbard) == bool(args.fcidump):
        raise InputError("scan needs exactly one of --hubbard or --fcidump")
    points = []
    if args.hubbard:
        base = HubbardSpec.parse(args.hubbard)
        values = DEFAULT_U_VALUES if not args.u_values else _parse_u_values(args.u_values)
        for u in values:
            points.append((u, lambda u=u: hf_basis(hubbard_integrals(dataclasses.replace(base, interaction=u)), True)))
    else:
        for path in args.fcidump:
            if not Path(path).exists():
                raise FileNotFoundError(f"no such file: {path}")
            points.append((Path(path).stem, lambda path=path: load_system(fcidump=path)))
    rows = []
    prev = None
    for param, make in points:
        try:
            ints = make()
            if args.oo:
                cfg = _oo_config(args)
                if prev is None:
                    run = run_pccd_best(ints, cfg)
                else:
                    # continuation from the previous point replaces the interaction ramp
                    run = run_pccd_best(ints, cfg, starts=[prev], ramp=())
                prev = run.oo.rotation
            else:
                run = run_pccd(ints)
            prepared, fid, _ = _point(ints, run, args.threshold, args.order)
            m = prepared.metrics
            rows.append([param, float(run.energy), float(fid.exact_energy), float(fid.upccd_fidelity),
                         float(fid.hf_fidelity), prepared.survivors, m.native_count, m.native_depth,
                         m.two_qubit_count, ""])
        except (UpccdError, np.linalg.LinAlgError) as exc:
            log.warning("scan point %s failed: %s", param, exc)
            rows.append([param, "", "", "", "", "", "", "", "", f"{type(exc).__name__}: {exc}"])
    _write_csv(out / "scan.csv", SCAN_HEADER, rows)
    written = ["scan.csv"]
    if not args.no_plots:
        good = [r for r in rows if not r[-1]]
        if good:
            from .plotting import plot_scan
            numeric = all(isinstance(r[0], float) for r in good)
            x = [r[0] for r in good] if numeric else list(range(len(good)))
            plot_scan(x, [r[3] for r in good], [r[4] for r in good], out / "scan.png",
                      xlabel="U / t" if numeric else "point")
            written.append("scan.png")
    return written


COMMANDS = {"pccd": cmd_pccd, "prepare": cmd_prepare, "qpe": cmd_qpe, "scan": cmd_scan,
            "export-qasm": cmd_export_qasm}


def _fail(kind, message, code):
    print(json.dumps({"error": {"kind": kind, "message": str(message)}}), file=sys.stderr)
    return code


def main(argv=None):
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
    except (OSError, UpccdError) as exc:
        return _fail("io" if isinstance(exc, OSError) else exc.kind, exc, 2)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _validate(args)
        written = COMMANDS[args.command](args)
    except ConvergenceError as exc:
        return _fail(exc.kind, exc, 1)
    except OSError as exc:
        return _fail("io", exc, 2)
    except UpccdError as exc:
        return _fail(exc.kind, exc, 2)
    except np.linalg.LinAlgError as exc:
        return _fail("numerical", exc, 1)
    for name in written:
        print(os.path.join(args.out, name))
    return 0


if __name__ == "__main__":
    sys.exit(main())
