"""Command-line entry point: ``gmelab {train|oracle|verify|emit-plots}``.

Exit codes: 0 success, 1 oracle failure or missing artifacts, 2 bad
configuration or unreadable input, 3 training aborted.
"""
from __future__ import annotations

import argparse
import configparser
import hashlib
import itertools
import json
import logging
import math
import os
import shutil
import sys
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .gmegan import (
    NetworkBundle,
    TrainConfig,
    TrainingAborted,
    generate,
    init_bundle,
    train,
)
from .measures import (
    DatasetFormatError,
    EmpiricalMeasure,
    GaussianMixtureSpec,
    assign_mode,
    load_dataset,
    rng_stream,
    sample_mixture,
    save_dataset,
    scenario,
    write_points_csv,
)
from .ndcore import CheckpointError, ContractError, Mlp, MlpSpec, NumericError, load_networks
from .otcore import (
    BACKEND,
    ccm_check,
    exact_ot_uniform,
    gm_cost,
    gme_minibatch,
    linear_assignment,
    pairwise_cost,
    quadratic_p,
)
from .verify import (
    bilip_scatter,
    ccm_trained,
    class_counts,
    gk_pushforward_demo,
    jsonable,
    kset_check,
    lemma41_equality,
    monotone_fraction,
    prop21_sandwich,
    relative_std_counts,
    thm42_pushforward,
)

log = logging.getLogger("gmelab")

SEED_ENV = "GMEGAN_SEED"
EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_ABORT = 0, 1, 2, 3
PLOT_CSVS = ("history.csv", "data.csv", "generated.csv", "bilip.csv", "latent.csv",
             "generated_radius.csv")
MONOTONE_GATE = 0.95
CCM_GATE = 0.95


class ConfigError(ValueError):
    pass


# -- configuration -----------------------------------------------------------------------

@dataclass
class DataSection:
    scenario: int = 1
    n: int = 1000
    path: str = ""


@dataclass
class VerifySection:
    num_generated: int = 10000
    bilip_pairs: int = 2000
    n_probe: int = 1000
    ccm_cycles: int = 1000
    radius_multiplier: float = 3.0


@dataclass
class RunConfig:
    data: DataSection = field(default_factory=DataSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    verify: VerifySection = field(default_factory=VerifySection)
    seed: int = 0
    out: str = "runs/default"

    def to_dict(self) -> dict:
        return {
            "data": jsonable(vars(self.data)),
            "train": self.train.to_dict(),
            "verify": jsonable(vars(self.verify)),
            "seed": self.seed,
            "out": self.out,
        }

    def to_ini(self) -> str:
        lines = []
        for name, section in (("data", self.data), ("train", self.train),
                              ("verify", self.verify)):
            lines.append(f"[{name}]")
            for f in fields(section):
                v = getattr(section, f.name)
                if isinstance(v, tuple):
                    v = ", ".join(str(x) for x in v)
                lines.append(f"{f.name} = {v}")
            lines.append("")
        lines += ["[run]", f"seed = {self.seed}", f"out = {self.out}", ""]
        return "\n".join(lines)


def _coerce(cls, section: configparser.SectionProxy | dict, where: str) -> dict:
    known = {f.name: f for f in fields(cls)}
    out = {}
    for key, raw in section.items():
        if key not in known:
            raise ConfigError(f"[{where}] unknown key {key!r}")
        default = getattr(cls(), key)
        try:
            if isinstance(default, tuple):
                out[key] = tuple(int(p) if key.startswith("hidden") else p.strip()
                                 for p in raw.split(",") if p.strip())
            elif isinstance(default, bool):
                out[key] = raw.strip().lower() in ("1", "true", "yes", "on")
            elif isinstance(default, int):
                out[key] = int(raw)
            elif isinstance(default, float):
                out[key] = float(raw)
            else:
                out[key] = raw.strip()
        except ValueError as exc:
            raise ConfigError(f"[{where}] {key}: {exc}") from None
    return out


def parse_config(text: str) -> RunConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    unknown = set(parser.sections()) - {"data", "train", "verify", "run"}
    if unknown:
        raise ConfigError(f"unknown sections {sorted(unknown)}")
    cfg = RunConfig()
    try:
        if parser.has_section("data"):
            cfg.data = DataSection(**_coerce(DataSection, parser["data"], "data"))
        if parser.has_section("verify"):
            cfg.verify = VerifySection(**_coerce(VerifySection, parser["verify"], "verify"))
        if parser.has_section("train"):
            cfg.train = TrainConfig(**_coerce(TrainConfig, parser["train"], "train"))
        if parser.has_section("run"):
            run = _coerce(_RunKeys, parser["run"], "run")
            cfg.seed = run.get("seed", cfg.seed)
            cfg.out = run.get("out", cfg.out)
    except ContractError as exc:
        raise ConfigError(str(exc)) from None
    if cfg.data.scenario not in (1, 2) and not cfg.data.path:
        raise ConfigError("[data] scenario must be 1 or 2 unless a path is given")
    if cfg.data.n < cfg.train.batch:
        raise ConfigError("[data] n must be at least the batch size")
    return cfg


@dataclass
class _RunKeys:
    seed: int = 0
    out: str = ""


def bundled_config(name: str) -> str:
    return resources.files("gmelab").joinpath("configs", name).read_text()


def load_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig()
    p = Path(path)
    if not p.exists():
        try:
            return parse_config(bundled_config(p.name))
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
    return parse_config(p.read_text())


def resolve_seed(cfg: RunConfig, cli_seed: int | None) -> int:
    """Command line beats the environment, which beats the file."""
    if cli_seed is not None:
        return cli_seed
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"{SEED_ENV}={env!r} is not an integer") from None
    return cfg.seed


def mixture_for(cfg: RunConfig, ambient_dim: int | None = None) -> GaussianMixtureSpec:
    spec = scenario(cfg.data.scenario)
    if ambient_dim is not None and spec.ambient_dim != ambient_dim:
        for which in (1, 2):
            if scenario(which).ambient_dim == ambient_dim:
                return scenario(which)
        raise ConfigError(f"no mixture scenario with ambient dimension {ambient_dim}")
    return spec


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(jsonable(obj), indent=2, sort_keys=True) + "\n", newline="\n")


def _mode_summary(points: np.ndarray, spec: GaussianMixtureSpec, radius: float) -> dict:
    labels = assign_mode(points, spec, radius)
    counts, unassigned = class_counts(labels, spec.num_modes)
    return {
        "labels": labels,
        "counts": counts.tolist(),
        "unassigned": unassigned,
        "relative_std": relative_std_counts(counts) if counts.sum() else float("nan"),
        "min_fraction": float(counts.min() / max(len(points), 1)),
    }


# -- train -------------------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = load_config(args.config)
    seed = resolve_seed(cfg, args.seed)
    tc = replace(cfg.train, seed=seed)
    if args.iterations is not None:
        if args.iterations < 0:
            raise ConfigError("--iterations must be >= 0")
        tc = replace(tc, iterations=args.iterations)
    if args.ablate:
        try:
            tc = tc.ablate(*args.ablate)
        except ContractError as exc:
            raise ConfigError(str(exc)) from None
    cfg = replace(cfg, train=tc, seed=seed, out=args.out or cfg.out)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)

    spec = None
    if cfg.data.path:
        try:
            data, labels = load_dataset(cfg.data.path)
        except (OSError, DatasetFormatError) as exc:
            raise ConfigError(f"cannot read dataset: {exc}") from None
    else:
        spec = mixture_for(cfg)
        data, labels = sample_mixture(spec, cfg.data.n, rng_stream(seed, "data"))
    save_dataset(out / "data.gmds", data, labels)
    (out / "run_config.cfg").write_text(cfg.to_ini(), newline="\n")
    _write_json(out / "run_config.json", cfg.to_dict())

    if tc.iterations == 0:
        init_bundle(tc, data.dim).save(out / "model.gmeg")
        print(f"wrote initial checkpoint to {out / 'model.gmeg'}")
        return EXIT_OK

    write_points_csv(out / "data.csv", data.points, labels)
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)
    try:
        result = train(data, tc, checkpoint_dir=ckpt_dir, log_every=args.log_every)
    except TrainingAborted as exc:
        if exc.history is not None:
            exc.history.write_csv(out / "history.csv")
            _write_json(out / "summary.json", {"aborted": str(exc), **exc.history.metadata})
        print(f"training aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT
    result.history.write_csv(out / "history.csv")
    result.bundle.save(out / "model.gmeg")

    gen = generate(result.bundle, cfg.verify.num_generated, rng_stream(seed, "eval"))
    summary = {
        "iterations": tc.iterations,
        "seed": seed,
        "ablations": list(tc.ablations),
        "lambdas": list(tc.effective_lambdas),
        "final_losses": dict(zip(("ot", "gme", "disc", "gp", "recon", "total"),
                                 result.history.losses[-1].values())),
        "metadata": result.history.metadata,
        "checkpoints": result.history.checkpoints,
    }
    if spec is None and data.dim in (100, 500):
        spec = mixture_for(cfg, data.dim)
    if spec is not None:
        modes = _mode_summary(gen.points, spec, cfg.verify.radius_multiplier)
        write_points_csv(out / "generated.csv", gen.points, modes.pop("labels"))
        summary["modes"] = modes
    else:
        write_points_csv(out / "generated.csv", gen.points)
    _write_json(out / "summary.json", summary)
    print(json.dumps(jsonable({k: summary[k] for k in ("final_losses", "modes") if k in summary}),
                     sort_keys=True))
    return EXIT_OK


# -- oracle suites --------------------------------------------------------------------------

SUITES = ("ot", "gme", "kset", "lemma41", "thm42", "ccm", "sandwich", "gk")
DEFAULT_COUNTS = {"ot": 100, "kset": 50}


def instance_rng(seed: int, suite: str, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, SUITES.index(suite), index])


def _cloud(rng, n, d=2):
    return EmpiricalMeasure.uniform(rng.normal(size=(n, d)))


def _invertible(rng, d=2):
    while True:
        a = rng.normal(size=(d, d))
        if abs(np.linalg.det(a)) > 0.1:
            return a


def _oracle_ot(rng):
    n = int(rng.integers(1, 9))
    c = rng.random((n, n))
    sigma = linear_assignment(c)
    got = float(c[np.arange(n), sigma].sum())
    brute = min(float(c[np.arange(n), list(p)].sum())
                for p in itertools.permutations(range(n)))
    return abs(got - brute) <= 1e-12, {"n": n, "hungarian": got, "brute_force": brute,
                                       "cost": c}


def _oracle_gme(rng):
    d = int(rng.integers(2, 5))
    mu = _cloud(rng, int(rng.integers(3, 12)), d)
    q, _ = np.linalg.qr(rng.normal(size=(d, d)))
    ident = gm_cost(lambda x: x, mu)
    ortho = gm_cost(lambda x: x @ q, mu)
    s = float(rng.uniform(0.5, 3.0))
    net = Mlp(MlpSpec((1, 1)), np.array([s, 0.0]))
    pair = gme_minibatch(net, np.array([[0.0], [1.0]])).item()
    expected = math.log((1 + s * s) / 2) ** 2
    ok = ident <= 1e-12 and ortho <= 1e-12 and abs(pair - expected) <= 1e-12
    return ok, {"identity": ident, "orthogonal": ortho, "scale": s, "pair_value": pair,
                "pair_expected": expected}


def _oracle_kset(rng):
    a = np.eye(2) + 0.4 * rng.normal(size=(2, 2))
    mu = _cloud(rng, 20)
    rep = kset_check(lambda x: x @ a, mu, 0.8, 0.5)
    return rep.passed, {**rep.to_dict(), "map": a, "points": mu.points}


def _oracle_lemma41(rng):
    n = int(rng.integers(2, 17))
    a = _invertible(rng)
    mu, nu = _cloud(rng, n), _cloud(rng, n)
    rep = lemma41_equality(lambda x: x @ a, mu, nu)
    return rep.passed, {**rep.to_dict(), "map": a, "mu": mu.points, "nu": nu.points}


def _oracle_thm42(rng):
    n = int(rng.integers(2, 17))
    a = _invertible(rng)
    mu, nu = _cloud(rng, n), _cloud(rng, n)
    rep = thm42_pushforward(lambda x: x @ a, mu, nu)
    return rep.passed, {**rep.to_dict(), "map": a, "mu": mu.points, "nu": nu.points}


def _oracle_ccm(rng):
    n = int(rng.integers(2, 9))
    xs, ys = rng.normal(size=(n, 2)), rng.normal(size=(n, 2))
    sigma = exact_ot_uniform(pairwise_cost(quadratic_p(2.0), xs, ys)).assignment
    rep = ccm_check(xs, ys[sigma], quadratic_p(2.0), max_cycle_len=4)
    return rep.is_ccm, {**rep.to_dict(), "xs": xs, "ys": ys[sigma]}


def _oracle_sandwich(rng):
    n = int(rng.integers(2, 9))
    a, b = _cloud(rng, n), _cloud(rng, n)
    m = _invertible(rng)
    p = float(rng.choice([1.0, 2.0, 3.0]))
    rep = prop21_sandwich(lambda x: x @ m, a, b, p=p)
    return rep.passed, {**rep.to_dict(), "map": m, "a": a.points, "b": b.points}


ORACLES = {
    "ot": _oracle_ot,
    "gme": _oracle_gme,
    "kset": _oracle_kset,
    "lemma41": _oracle_lemma41,
    "thm42": _oracle_thm42,
    "ccm": _oracle_ccm,
    "sandwich": _oracle_sandwich,
}


def run_suite(suite: str, count: int | None = None, seed: int = 0,
              ks: tuple[int, ...] = (0, 2, 5), n: int = 10_000) -> dict:
    """Run one oracle suite; the report's ``pass`` is true iff every instance passed."""
    if suite == "gk":
        values = {str(k): gk_pushforward_demo(k, n) for k in ks}
        failed = [k for k, v in values.items() if v > 0.02]
        return {"suite": suite, "n": n, "ks": values, "gate": 0.02, "pass": not failed,
                "failures": [{"k": k, "ks": values[k]} for k in failed]}
    if suite not in ORACLES:
        raise ConfigError(f"unknown suite {suite!r}; choose from {list(SUITES)}")
    count = count if count is not None else DEFAULT_COUNTS.get(suite, 30)
    failures = []
    for i in range(count):
        ok, detail = ORACLES[suite](instance_rng(seed, suite, i))
        if not ok:
            failures.append({"instance": i, **detail})
    return {"suite": suite, "seed": seed, "count": count, "passed": count - len(failures),
            "pass": not failures, "failures": failures}


def cmd_oracle(args) -> int:
    seed = args.seed if args.seed is not None else int(os.environ.get(SEED_ENV, 0))
    ks = tuple(args.k) if args.k else (0, 2, 5)
    report = run_suite(args.suite, args.count, seed, ks, args.n)
    out = Path(args.out) if args.out else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / f"oracle_{args.suite}.json", report)
    brief = {k: v for k, v in report.items() if k != "failures"}
    print(json.dumps(jsonable(brief), sort_keys=True))
    if not report["pass"]:
        witness = report["failures"][0]
        dest = (out or Path(".")) / f"witness_{args.suite}.json"
        _write_json(dest, {"suite": args.suite, "seed": seed, **witness})
        print(f"oracle {args.suite} FAILED; witness written to {dest}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


# -- verify --------------------------------------------------------------------------------

def verify_bundle(bundle: NetworkBundle, data: EmpiricalMeasure, labels, spec: GaussianMixtureSpec,
                  vcfg: VerifySection, seed: int, out: Path | None = None) -> dict:
    """Diagnostics on a trained bundle; CSVs are written when ``out`` is given."""
    eval_rng = rng_stream(seed, "eval")
    bilip = bilip_scatter(bundle.T, data, vcfg.bilip_pairs, eval_rng)
    ccm = ccm_trained(bundle, vcfg.n_probe, 3, eval_rng, num_cycles=vcfg.ccm_cycles)
    y = eval_rng.standard_normal((vcfg.n_probe, bundle.latent_dim))
    mono = monotone_fraction(y, bundle.T.numpy(bundle.G.numpy(y)))
    gen, latent = generate(bundle, vcfg.num_generated, eval_rng, return_latent=True)
    modes = _mode_summary(gen.points, spec, vcfg.radius_multiplier)
    gen_labels = modes.pop("labels")
    if out is not None:
        bilip.write_csv(out / "bilip.csv")
        write_points_csv(out / "latent.csv", bundle.T.numpy(data.points), labels)
        write_points_csv(out / "generated_radius.csv", gen.points, gen_labels,
                         extra={"radius": np.linalg.norm(latent, axis=1)})
    return {
        "bilip": bilip.summary(),
        "ccm": {**ccm.to_dict(), "gate": CCM_GATE, "pass": ccm.fraction_passing >= CCM_GATE},
        "monotone2d": {"fraction": mono, "gate": MONOTONE_GATE, "pass": mono >= MONOTONE_GATE},
        "modes": modes,
    }


def cmd_verify(args) -> int:
    cfg = load_config(args.config)
    seed = resolve_seed(cfg, args.seed)
    run = Path(args.run) if args.run else None
    ckpt = Path(args.checkpoint) if args.checkpoint else (run / "model.gmeg" if run else None)
    dpath = Path(args.dataset) if args.dataset else (run / "data.gmds" if run else None)
    if ckpt is None or dpath is None:
        raise ConfigError("need --checkpoint and --dataset (or --run DIR)")
    try:
        bundle = NetworkBundle(*load_networks(ckpt))
        data, labels = load_dataset(dpath)
    except (OSError, CheckpointError, DatasetFormatError, TypeError) as exc:
        raise ConfigError(f"cannot load inputs: {exc}") from None
    out = Path(args.out) if args.out else (run or Path(cfg.out))
    out.mkdir(parents=True, exist_ok=True)
    spec = mixture_for(cfg, data.dim)
    report = verify_bundle(bundle, data, labels, spec, cfg.verify, seed, out)
    _write_json(out / "verify.json", report)
    print(json.dumps(jsonable({"monotone2d": report["monotone2d"],
                               "relative_std": report["modes"]["relative_std"],
                               "ccm_fraction": report["ccm"]["fraction_passing"],
                               "bilip_median": report["bilip"]["median"]}), sort_keys=True))
    return EXIT_OK


# -- emit-plots -----------------------------------------------------------------------------

def _csv_entry(path: Path) -> dict:
    raw = path.read_bytes()
    lines = raw.decode().splitlines()
    header = lines[0] if lines else ""
    return {"name": path.name, "present": True, "header": header,
            "num_columns": len(header.split(",")) if header else 0,
            "rows": max(len(lines) - 1, 0), "sha256": hashlib.sha256(raw).hexdigest()}


def cmd_emit_plots(args) -> int:
    run = Path(args.run)
    dest = Path(args.out) if args.out else run / "plots"
    dest.mkdir(parents=True, exist_ok=True)
    entries, missing = [], []
    for name in PLOT_CSVS:
        src = run / name
        if src.is_file():
            if src.resolve() != (dest / name).resolve():
                shutil.copyfile(src, dest / name)
            entries.append(_csv_entry(dest / name))
        else:
            missing.append(name)
            entries.append({"name": name, "present": False})
    manifest = {"files": entries, "missing": missing, "complete": not missing}
    _write_json(dest / "manifest.json", manifest)
    if missing:
        print(f"missing artifacts: {', '.join(missing)}", file=sys.stderr)
        return EXIT_FAIL
    print(f"wrote {len(entries)} CSVs and manifest.json to {dest}")
    return EXIT_OK


# -- entry point ------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file (or a bundled name like synthetic9.cfg)")
    common.add_argument("--seed", type=int, help=f"root seed (overrides ${SEED_ENV} and the config)")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="gmelab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {_version()}")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", parents=[common], help="train a GMEGAN bundle")
    t.add_argument("--iterations", type=int)
    t.add_argument("--ablate", action="append", choices=("gme", "gp", "recon"),
                   help="zero one regularizer weight (repeatable)")
    t.add_argument("--log-every", type=int, default=1000)
    t.set_defaults(func=cmd_train)

    o = sub.add_parser("oracle", parents=[common], help="run a brute-force theorem oracle suite")
    o.add_argument("suite", choices=SUITES)
    o.add_argument("--count", type=int)
    o.add_argument("--k", type=int, action="append", help="sawtooth teeth for the gk suite")
    o.add_argument("--n", type=int, default=10_000, help="grid size for the gk suite")
    o.set_defaults(func=cmd_oracle)

    v = sub.add_parser("verify", parents=[common], help="diagnostics for a trained checkpoint")
    v.add_argument("--checkpoint")
    v.add_argument("--dataset")
    v.add_argument("--run", help="run directory holding model.gmeg and data.gmds")
    v.set_defaults(func=cmd_verify)

    e = sub.add_parser("emit-plots", parents=[common], help="collect plot CSVs and a manifest")
    e.add_argument("run", help="run directory")
    e.set_defaults(func=cmd_emit_plots)
    return p


def _version() -> str:
    from . import __version__
    return __version__


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    log.debug("assignment backend: %s", BACKEND)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, TrainingAborted) as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT


if __name__ == "__main__":
    sys.exit(main())
