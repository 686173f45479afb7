"""Command-line entry point: sample, couple, percolation, functional, clt.

Options may come from a key=value config file (``--config``) and from
flags; flags win.  Every CSV starts with '#' comment lines recording the
tool version, the master seed and the effective configuration.
"""
from __future__ import annotations

import argparse
import math
import sys
from dataclasses import dataclass, fields

import numpy as np

from . import __version__
from .coupling import CertificateError, GridAnchor, cluster_coupling, radial_pair
from .functionals import InfiniteScoreError, ScoreSpec, score_sum
from .geometry import Box, PointPattern
from .harness import disagreement_decay_experiment, perturbation_pattern, replicate_functional, variance_scaling
from .models import InteractionModel, ModelError
from .percolation import decay_curve
from .rng import RngStream
from .sampler import BudgetExceeded, RetentionMode, rejection_sample_gibbs, thinning_sample

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_BUDGET = 3
EXIT_INFINITE = 4

COMMANDS = ("sample", "couple", "percolation", "functional", "clt")


class ConfigError(ValueError):
    pass


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in str(text).split(",") if v.strip())


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass
class RunConfig:
    command: str = "sample"
    model: str = "poisson"
    alpha0: float = 1.0
    r0: float = 0.3
    beta: float = 1.0
    gamma: float = 1.0
    grid_resolution: float = 0.0  # 0 selects the model default
    dim: int = 2
    window: float = 1.0
    seed: int = 0
    mode: str = "thinning-exact"
    boundary: str = "none"
    out: str = ""
    algo: str = "radial"
    perturb_box: tuple = ()
    perturbation: str = "lattice"
    reps: int = 1
    distances: tuple = (2.0, 4.0, 6.0, 8.0)
    margin: float = -1.0  # negative selects the default margin
    a_box: tuple = ()
    coupled: bool = False
    spec: str = "knn-length:k=4"
    infile: str = ""
    variant: str = "full"
    n: tuple = (10.0, 20.0, 40.0)
    route: str = "auto"
    report: str = ""
    max_iter: int = 1_000_000
    work_budget: int = 1_000_000

    def interaction_model(self) -> InteractionModel:
        return InteractionModel(self.model, self.alpha0, self.r0, self.beta, self.gamma,
                                self.grid_resolution or None, self.dim)

    def items(self) -> list[tuple[str, str]]:
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(_num(x) for x in v)
            elif isinstance(v, float):
                v = _num(v)
            out.append((f.name, str(v)))
        return out


def _num(v) -> str:
    v = float(v)
    return str(int(v)) if v == int(v) and abs(v) < 1e15 else repr(v)


_TYPES = {f.name: f.type for f in fields(RunConfig)}
_CONVERT = {"float": float, "int": int, "str": str, "tuple": _floats, "bool": _bool}
_FLAG_ALIASES = {"in": "infile", "functional": "spec", "perturb-box": "perturb_box", "a-box": "a_box"}


def _convert(key: str, raw):
    kind = _TYPES[key]
    try:
        return _CONVERT[kind](raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key}: expected {kind}, got {raw!r}") from exc


def read_config_file(path: str) -> dict:
    """Parse key=value lines ('#' starts a comment); unknown keys are errors."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, eq, val = line.partition("=")
            if not eq:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key = key.strip().replace("-", "_")
            key = _FLAG_ALIASES.get(key, key)
            if key not in _TYPES or key == "command":
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            out[key] = _convert(key, val.strip())
    return out


def validate(cfg: RunConfig) -> RunConfig:
    """Check every field before any sampling; raises ConfigError naming the field."""
    def need(cond, key, msg):
        if not cond:
            raise ConfigError(f"{key}: {msg}")

    need(cfg.command in COMMANDS, "command", f"must be one of {COMMANDS}")
    try:
        cfg.interaction_model()
    except ModelError as exc:
        msg = str(exc)
        key = msg.split()[0] if msg.split()[0] in _TYPES else "model"
        raise ConfigError(f"{key}: {msg}") from exc
    need(cfg.window > 0 and math.isfinite(cfg.window), "window", "must be positive")
    need(cfg.seed >= 0, "seed", "must be a non-negative integer")
    need(cfg.reps >= 1, "reps", "must be >= 1")
    need(cfg.max_iter >= 1, "max_iter", "must be >= 1")
    need(cfg.work_budget >= 1, "work_budget", "must be >= 1")
    try:
        RetentionMode.parse(cfg.mode) if cfg.mode != "rejection" else None
    except ValueError as exc:
        raise ConfigError(f"mode: {exc}") from exc
    need(cfg.algo in ("radial", "cluster"), "algo", "must be radial or cluster")
    need(cfg.perturbation in ("lattice", "poisson", "none"), "perturbation", "must be lattice, poisson or none")
    need(cfg.variant in ("full", "restricted"), "variant", "must be full or restricted")
    need(cfg.route.split(":")[0] in ("auto", "rejection", "thinning-exact", "thinning-plugin",
                                     "infinite_volume_approx"), "route", "unknown sampling route")
    need(all(s >= 0 for s in cfg.distances) and len(cfg.distances) > 0, "distances", "need non-negative values")
    need(all(v > 0 for v in cfg.n) and len(cfg.n) > 0, "n", "need positive window sizes")
    for key in ("perturb_box", "a_box"):
        box = getattr(cfg, key)
        need(len(box) in (0, 2 * cfg.dim), key, f"need {2 * cfg.dim} comma-separated numbers")
        if box:
            need(all(box[i] < box[i + cfg.dim] for i in range(cfg.dim)), key, "need lo < hi in every coordinate")
    try:
        ScoreSpec.parse(cfg.spec)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"spec: {exc}") from exc
    if cfg.command == "couple":
        need(len(cfg.perturb_box) > 0, "perturb_box", "required for couple")
        B = _box(cfg.perturb_box, cfg.dim)
        Q = Box.cube(cfg.window, cfg.dim)
        need(not bool(Q.contains(np.array([(B.lo + B.hi) / 2])).any()) and
             (np.any(B.lo >= Q.hi) or np.any(B.hi <= Q.lo)), "perturb_box", "must lie outside the window")
    if cfg.command == "functional":
        need(bool(cfg.infile), "infile", "required for functional (--in)")
    return cfg


def _box(vals: tuple, d: int) -> Box:
    return Box(np.array(vals[:d]), np.array(vals[d:]))


PER_COMMAND = {
    "sample": ["model", "alpha0", "r0", "beta", "gamma", "grid_resolution", "dim", "window", "seed", "mode",
               "boundary", "out", "max_iter", "work_budget"],
    "couple": ["algo", "model", "alpha0", "r0", "beta", "gamma", "grid_resolution", "dim", "window",
               "perturb_box", "perturbation", "boundary", "reps", "seed", "out", "work_budget"],
    "percolation": ["alpha0", "r0", "dim", "distances", "reps", "seed", "margin", "a_box", "out", "coupled",
                    "model", "beta", "gamma", "perturbation"],
    "functional": ["spec", "infile", "window", "variant", "seed", "out"],
    "clt": ["model", "alpha0", "r0", "beta", "gamma", "grid_resolution", "dim", "spec", "n", "reps", "seed",
            "route", "variant", "margin", "out", "report"],
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gibbsdc", description="Gibbs point process disagreement-coupling toolkit")
    p.add_argument("--version", action="version", version=f"gibbsdc {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    flag_name = {"infile": "--in", "spec": "--spec", "perturb_box": "--perturb-box", "a_box": "--a-box"}
    for cmd, keys in PER_COMMAND.items():
        sp = sub.add_parser(cmd)
        sp.add_argument("--config", default=None, help="key=value config file (flags override it)")
        for key in keys:
            names = [flag_name.get(key, "--" + key.replace("_", "-"))]
            if key == "spec":
                names.append("--functional")
            if key == "coupled":
                sp.add_argument(*names, dest=key, action="store_const", const=True, default=None)
            else:
                sp.add_argument(*names, dest=key, default=None)
    return p


def parse_config(argv=None) -> RunConfig:
    args = build_parser().parse_args(argv)
    values: dict = {}
    if args.config:
        for key, val in read_config_file(args.config).items():
            if key not in PER_COMMAND[args.command]:
                raise ConfigError(f"{key}: not an option of the {args.command} command")
            values[key] = val
    for key, raw in vars(args).items():
        if key in ("command", "config") or raw is None:
            continue
        values[key] = _convert(key, raw)
    cfg = RunConfig(command=args.command, **values)
    return validate(cfg)


# ---------------------------------------------------------------------------
# output


def header_lines(cfg: RunConfig) -> list[str]:
    keys = PER_COMMAND[cfg.command]
    lines = [f"# gibbsdc {__version__}", f"# command={cfg.command}", f"# seed={cfg.seed}"]
    lines += [f"# {k}={v}" for k, v in cfg.items() if k in keys and k not in ("seed", "out", "report")]
    return lines


def write_csv(path: str, cfg: RunConfig, body: list[str]) -> None:
    text = "\n".join(header_lines(cfg) + body) + "\n"
    if not path or path == "-":
        sys.stdout.write(text)
        return
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _boundary(cfg: RunConfig):
    if cfg.boundary in ("", "none"):
        return None
    return PointPattern.from_csv(cfg.boundary)


# ---------------------------------------------------------------------------
# commands


def cmd_sample(cfg: RunConfig) -> int:
    model = cfg.interaction_model()
    Q = Box.cube(cfg.window, cfg.dim)
    psi = _boundary(cfg)
    rng = RngStream(cfg.seed).child("sample")
    if cfg.mode == "rejection":
        X = rejection_sample_gibbs(model, Q, psi, rng, max_iter=cfg.max_iter, warn_iter=None)
    else:
        X = thinning_sample(model, Q, psi, rng, RetentionMode.parse(cfg.mode), work_budget=cfg.work_budget)
    write_csv(cfg.out, cfg, X.to_csv_lines())
    return EXIT_OK


def cmd_couple(cfg: RunConfig) -> int:
    model = cfg.interaction_model()
    Q = Box.cube(cfg.window, cfg.dim)
    B = _box(cfg.perturb_box, cfg.dim)
    psi = _boundary(cfg)
    base = RngStream(cfg.seed).child("couple")
    body = ["rep,cluster_id,agrees,dist_to_B"]
    violations = 0
    disagreeing_runs = 0
    from .sampler import sample_marked_poisson
    for rep in range(cfg.reps):
        stream = base.child(rep)
        phi_star = sample_marked_poisson(Q, model.kappa_max, stream.child("carrier"))
        pert = perturbation_pattern(B, model.r0, cfg.perturbation, stream.child("perturb"))
        psi_prime = pert if psi is None else psi.unmarked().union(pert)
        if cfg.algo == "radial":
            tr = radial_pair(model, Q, B, psi, psi_prime, phi_star, GridAnchor.default(model.r0, cfg.dim),
                             rng=stream.child("aux"), work_budget=cfg.work_budget)
        else:
            tr = cluster_coupling(model, Q, B, psi, psi_prime, phi_star, stream.child("aux"),
                                  work_budget=cfg.work_budget)
        violations += tr.violations
        disagreeing_runs += int(len(tr.disagreement) > 0)
        for lab, agrees in tr.cluster_agreement().items():
            body.append(f"{rep},{lab},{int(agrees)},{_num(tr.dist_to_B[lab]) if math.isfinite(tr.dist_to_B[lab]) else 'inf'}")
    write_csv(cfg.out, cfg, body)
    print(f"couple: {cfg.reps} runs, {disagreeing_runs} with disagreement, {violations} confinement violations",
          file=sys.stderr)
    return EXIT_OK


def cmd_percolation(cfg: RunConfig) -> int:
    A = _box(cfg.a_box, cfg.dim) if cfg.a_box else Box.cube(1.0, cfg.dim)
    margin = None if cfg.margin < 0 else cfg.margin
    if cfg.coupled:
        model = cfg.interaction_model()
        rows = disagreement_decay_experiment(model, A, cfg.distances, margin, cfg.reps, cfg.seed,
                                             cfg.perturbation)
        body = ["s,p_disagree,p_connect,se_disagree,se_connect,reps,dominance_violations"]
        body += [f"{_num(r.s)},{_num(r.p_disagree)},{_num(r.p_connect)},{_num(r.se_disagree)},"
                 f"{_num(r.se_connect)},{r.reps},{r.dominance_violations}" for r in rows]
    else:
        rows = decay_curve(cfg.alpha0, cfg.r0, A, cfg.distances, margin, cfg.reps, RngStream(cfg.seed).child("decay"))
        body = ["s,p_hat,stderr,reps"] + [f"{_num(r.s)},{_num(r.p_hat)},{_num(r.stderr)},{r.reps}" for r in rows]
    write_csv(cfg.out, cfg, body)
    return EXIT_OK


def cmd_functional(cfg: RunConfig) -> int:
    spec = ScoreSpec.parse(cfg.spec)
    phi = PointPattern.from_csv(cfg.infile)
    Q = Box.cube(cfg.window, phi.dim)
    value = score_sum(phi.unmarked() if phi.is_marked else phi, spec, Q, cfg.variant)
    write_csv(cfg.out, cfg, ["functional,window,variant,value", f"{cfg.spec.replace(',', ';')},{_num(cfg.window)},"
                                                                   f"{cfg.variant},{_num(value)}"])
    return EXIT_OK


def clt_report(cfg: RunConfig, table) -> list[str]:
    lines = [f"functional {cfg.spec} on model {cfg.model}, route {cfg.route}, variant {cfg.variant}"]
    lines.append("n,count,excluded,mean,var,norm_var,ks")
    for a in table.aggregates():
        lines.append(f"{_num(a['n'])},{a['count']},{a['excluded']},{_num(a['mean'])},{_num(a['var'])},"
                     f"{_num(a['norm_var'])},{_num(a['ks'])}")
    if len(table.sizes()) >= 2:
        lines.append("n,norm_var,relative_change")
        for n, nv, rel in variance_scaling(table):
            lines.append(f"{_num(n)},{_num(nv)},{'nan' if math.isnan(rel) else _num(rel)}")
    return lines


def cmd_clt(cfg: RunConfig) -> int:
    model = cfg.interaction_model()
    spec = ScoreSpec.parse(cfg.spec)
    margin = None if cfg.margin < 0 else cfg.margin
    table = replicate_functional(model, spec, cfg.n, cfg.reps, cfg.seed, cfg.route, cfg.variant, margin)
    write_csv(cfg.out, cfg, table.to_csv_lines())
    report = clt_report(cfg, table)
    if cfg.report:
        write_csv(cfg.report, cfg, report)
    else:
        print("\n".join(report), file=sys.stderr)
    return EXIT_OK


DISPATCH = {"sample": cmd_sample, "couple": cmd_couple, "percolation": cmd_percolation,
            "functional": cmd_functional, "clt": cmd_clt}


def run(cfg: RunConfig) -> int:
    try:
        return DISPATCH[cfg.command](cfg)
    except (BudgetExceeded, CertificateError) as exc:
        print(f"gibbsdc: budget exceeded: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except InfiniteScoreError as exc:
        print(f"gibbsdc: {exc}", file=sys.stderr)
        return EXIT_INFINITE


def main(argv=None) -> int:
    try:
        cfg = parse_config(argv)
    except ConfigError as exc:
        print(f"gibbsdc: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (OSError, ValueError) as exc:
        print(f"gibbsdc: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
