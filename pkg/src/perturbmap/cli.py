"""Command-line entry point: ``perturbmap <command> [--config PATH | --preset NAME] ...``."""
from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import sys
from pathlib import Path

from . import __version__, config as cfgmod, dynamics, maps, montecarlo, noise, perturbations
from .errors import PerturbMapError, PreconditionError

EXIT_OK, EXIT_USAGE, EXIT_FAIL, EXIT_UNDETERMINED = 0, 1, 2, 3
DEFAULT_GATES = ("A1", "A2", "lambda")


class UsageError(Exception):
    pass


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


class OutputDir:
    def __init__(self, path: str | None, cfg: dict, command: str, seed: int | None):
        self.path = Path(path) if path else None
        self.cfg, self.command, self.seed = cfg, command, seed
        self.files: list[str] = []
        self.started = _dt.datetime.now(_dt.timezone.utc).isoformat()
        if self.path:
            self.path.mkdir(parents=True, exist_ok=True)

    def write(self, name: str, text: str) -> None:
        if self.path is None:
            return
        (self.path / name).write_text(text)
        self.files.append(name)

    def finish(self) -> None:
        if self.path is None:
            return
        cfg_text = cfgmod.canonical_text(self.cfg)
        (self.path / "config.json").write_text(cfg_text + "\n")
        manifest = {
            "command": self.command,
            "config_file": "config.json",
            "config_sha256": _sha256(cfg_text.encode()),
            "master_seed": self.seed,
            "tool_version": __version__,
            "started": self.started,
            "finished": _dt.datetime.now(_dt.timezone.utc).isoformat(),
            "outputs": [{"path": f, "sha256": _sha256((self.path / f).read_bytes())} for f in self.files],
        }
        (self.path / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")


def _gnuplot(files: list[str], ylabel: str = "x_n") -> str:
    lines = ["set datafile separator ','", "set key off", "set xlabel 'n'", f"set ylabel '{ylabel}'"]
    parts = [f"'{f}' using 1:2 every ::1 with lines" for f in files]
    lines.append("plot " + ", \\\n     ".join(parts))
    return "\n".join(lines) + "\n"


def _load(args) -> dict:
    if bool(args.config) == bool(args.preset):
        raise UsageError("give exactly one of --config or --preset")
    cfg = cfgmod.load_preset(args.preset) if args.preset else cfgmod.load_config(args.config)
    exp = dict(cfg.get("experiment") or {})
    if args.seed is not None:
        exp["seed"] = args.seed
    if args.runs is not None:
        exp["runs"] = args.runs
    if args.horizon is not None:
        if args.command in ("simulate", "ensemble"):
            sim = dict(cfg.get("sim") or {})
            sim["horizon"] = args.horizon
            cfg["sim"] = sim
        else:
            exp["horizon" if args.command == "runs" else "n_max"] = args.horizon
    if exp:
        cfg["experiment"] = exp
    return cfg


def _seed(cfg) -> int:
    seed = cfgmod.experiment_value(cfg, "seed", 0, int)
    if not 0 <= seed < 2**64:
        raise PerturbMapError("experiment.seed must be an unsigned 64-bit integer")
    return seed


# ---------------------------------------------------------------------------

def cmd_certify(cfg: dict, out: OutputDir) -> int:
    m = maps.from_config(cfg.get("map"))
    upper = (cfg.get("experiment") or {}).get("upper")
    rep = maps.certify_assumptions(m, upper=upper)
    gates = cfgmod.experiment_value(cfg, "assumptions", list(DEFAULT_GATES))
    verdicts = [rep.verdicts.get(g, "undetermined") for g in gates]
    conds = []
    s = perturbations.from_config(cfg.get("perturbation")) if cfg.get("perturbation") else None
    for i, req in enumerate(cfgmod.experiment_value(cfg, "conditions", [])):
        conds.append(_condition(m, s, req, f"experiment.conditions[{i}]"))
    results = [c if isinstance(c, dict) else c.to_dict() for c in conds]
    verdicts += [r["verdict"] for r in results]
    doc = {"assumptions": rep.to_dict(), "gated": list(gates), "conditions": results}
    text = json.dumps(doc, sort_keys=True, indent=2) + "\n"
    out.write("report.json", text)
    sys.stdout.write(text)
    if any(v in ("fail", "fails", "not_l2", "absent") for v in verdicts):
        return EXIT_FAIL
    if any(v not in ("pass", "undetermined-pass", "holds", "in_l2", "found") for v in verdicts):
        return EXIT_UNDETERMINED
    return EXIT_OK


def _condition(m, s, req, where):
    if not isinstance(req, dict) or "condition" not in req:
        raise PerturbMapError(f"{where}: expected an object with a 'condition' key")
    kind = req["condition"]
    need_seq = kind in ("sigmaF", "search_M", "beta", "l2")
    if need_seq and s is None:
        raise PerturbMapError(f"{where}: condition {kind!r} needs a perturbation section")
    if kind == "sigmaF":
        return perturbations.check_sigmaF(m, s, float(req["M"]), tuple(req["n_range"]))
    if kind == "search_M":
        found = perturbations.search_M(m, s, [float(v) for v in req["M_grid"]], tuple(req["n_range"]))
        if found is None:
            return {"condition": "search_M", "verdict": "fails",
                    "witness": {"counterexample": "no grid value certifies"}, "scan": dict(req)}
        return {"condition": "search_M", "verdict": "holds", "witness": {"M": found[0], "L": found[1]},
                "scan": dict(req)}
    if kind == "beta":
        red = perturbations.sign_groups(s, int(req.get("horizon", 1000)), int(req.get("start", 1)))
        return perturbations.check_beta_condition(m, red, int(req.get("from_k", 10)))
    if kind == "increment":
        return perturbations.check_increment_condition(m, float(req["delta_bar"]), int(req.get("grid", 200)))
    if kind == "persistence":
        return perturbations.check_persistence_condition(m, float(req["gamma_tilde"]))
    if kind == "l2":
        r = perturbations.l2_classify(s, int(req.get("horizon", 1000)))
        verdict = {"in_l2": "holds", "not_l2": "fails", "undetermined": "undetermined"}[r.verdict]
        return {"condition": "l2", "verdict": verdict,
                "witness": {"partial_sum": r.partial_sum, "counterexample": None if verdict != "fails" else "family"},
                "scan": {"horizon": int(req.get("horizon", 1000))}}
    raise PerturbMapError(f"{where}.condition: unknown condition {kind!r}")


def cmd_simulate(cfg: dict, out: OutputDir) -> int:
    m = maps.from_config(cfg.get("map"))
    seq = perturbations.from_config(cfg.get("perturbation"))
    sim, precision = cfgmod.sim_from_config(cfg.get("sim"))
    K = maps.equilibrium(m)
    if cfg.get("noise") is None:
        t = dynamics.iterate_deterministic(m, seq, sim, K=K, precision=precision)
    else:
        if precision is not None:
            raise PerturbMapError("sim.precision: extended precision is for deterministic orbits only")
        nz = noise.from_config(cfg["noise"])
        stream = noise.RngStream(_seed(cfg), cfgmod.experiment_value(cfg, "stream", 0, int))
        t = dynamics.iterate_stochastic(m, seq, nz, stream, sim, K=K)
    out.write("trajectory.csv", t.to_csv())
    summary = {"classification": t.classification.value, "final_value": t.final_value,
               "clamp_count": t.clamp_count, "K": K, "peak": t.peak}
    out.write("summary.json", json.dumps(summary, sort_keys=True, indent=2) + "\n")
    out.write("plot.gp", _gnuplot(["trajectory.csv"]))
    sys.stdout.write(json.dumps(summary, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_ensemble(cfg: dict, out: OutputDir) -> int:
    m = maps.from_config(cfg.get("map"))
    s = perturbations.from_config(cfg.get("perturbation"))
    nz = noise.from_config(cfg.get("noise"))
    sim, precision = cfgmod.sim_from_config(cfg.get("sim"))
    if precision is not None:
        raise PerturbMapError("sim.precision: extended precision is for deterministic orbits only")
    seed = _seed(cfg)
    runs = cfgmod.experiment_value(cfg, "runs", 10, int)
    rep = montecarlo.run_ensemble(m, s, nz, sim, runs, seed)
    out.write("ensemble.json", rep.to_json() + "\n")
    out.write("runs.csv", rep.to_csv())
    dumped = []
    for i in range(min(runs, cfgmod.experiment_value(cfg, "trajectories", 0, int) or 0)):
        t = dynamics.iterate_stochastic(m, s, nz, noise.RngStream(seed, i), sim, K=rep.K)
        name = f"trajectory_{i:04d}.csv"
        out.write(name, t.to_csv())
        dumped.append(name)
    if dumped:
        out.write("plot.gp", _gnuplot(dumped))
    sys.stdout.write(rep.to_json() + "\n")
    return EXIT_UNDETERMINED if rep.horizon_insufficient else EXIT_OK


def cmd_tnsign(cfg: dict, out: OutputDir) -> int:
    s = perturbations.from_config(cfg.get("perturbation"))
    nz = noise.from_config(cfg.get("noise"))
    st = montecarlo.estimate_TN_sign(s, nz, cfgmod.experiment_value(cfg, "N", 1, int),
                                     cfgmod.experiment_value(cfg, "samples", 100_000, int), _seed(cfg))
    return _emit(out, "tnsign.json", st.to_json())


def cmd_sums(cfg: dict, out: OutputDir) -> int:
    s = perturbations.from_config(cfg.get("perturbation"))
    nz = noise.from_config(cfg.get("noise"))
    hz = cfgmod.experiment_value(cfg, "horizons", [1000, 100_000])
    st = montecarlo.normalized_sums(s, nz, cfgmod.experiment_value(cfg, "n_max", 10_000, int),
                                    cfgmod.experiment_value(cfg, "samples", 10_000, int), _seed(cfg),
                                    horizons=(int(hz[0]), int(hz[1])))
    return _emit(out, "sums.json", st.to_json())


def cmd_runs(cfg: dict, out: OutputDir) -> int:
    nz = noise.from_config(cfg.get("noise"))
    r = montecarlo.run_length_experiment(nz, cfgmod.experiment_value(cfg, "eps", 0.5, float),
                                         cfgmod.experiment_value(cfg, "J", 2, int),
                                         cfgmod.experiment_value(cfg, "horizon", 10_000, int),
                                         cfgmod.experiment_value(cfg, "samples", 1000, int), _seed(cfg))
    return _emit(out, "runs.json", r.to_json())


def _emit(out, name, text):
    out.write(name, text + "\n")
    sys.stdout.write(text + "\n")
    return EXIT_OK


COMMANDS = {
    "certify": cmd_certify,
    "simulate": cmd_simulate,
    "ensemble": cmd_ensemble,
    "tnsign": cmd_tnsign,
    "sums": cmd_sums,
    "runs": cmd_runs,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="perturbmap", description=__doc__)
    p.add_argument("--version", action="version", version=f"perturbmap {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON configuration file")
        sp.add_argument("--preset", help=f"shipped configuration ({', '.join(cfgmod.preset_names())})")
        sp.add_argument("--seed", type=int, help="master seed (overrides the config)")
        sp.add_argument("--out", help="output directory (config, manifest and data files)")
        sp.add_argument("--runs", type=int, help="number of runs (ensemble)")
        sp.add_argument("--horizon", type=int, help="simulation horizon")
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        cfg = _load(args)
        seed = (cfg.get("experiment") or {}).get("seed")
        out = OutputDir(args.out, cfg, args.command, seed)
        code = COMMANDS[args.command](cfg, out)
        out.finish()
        return code
    except UsageError as exc:
        print(f"perturbmap: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except PreconditionError as exc:
        print(f"perturbmap: precondition not met: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PerturbMapError, KeyError, TypeError, ValueError) as exc:
        print(f"perturbmap: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    raise SystemExit(main())
