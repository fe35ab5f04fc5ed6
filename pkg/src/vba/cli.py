"""Command line driver: ``vba <command> [options]``.

Commands: gen-data, train, finetune, eval, sweep, pitfall, discrete-check.
Every option can also come from a JSON file passed with ``--config``; flags
given on the command line override the file.

Exit codes: 0 success, 1 check failed, 2 usage or invalid argument, 3 I/O error.
"""

import argparse
import csv
import io
import json
import logging
import shutil
import sys
from dataclasses import dataclass, fields
from pathlib import Path

from . import _rng, engine, experiments, scm_discrete, scm_gaussian
from .nn import checkpoint

log = logging.getLogger("vba")

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3

CONFIG_FILE = "config.json"
OBS_FILE = "observational.vbad"
OOD_FILE = "ood.vbad"
MANIFEST_FILE = "model.json"
METRICS_COLUMNS = ("dataset",) + engine.Metrics.KEYS


class CheckFailed(Exception):
    pass


@dataclass
class RunConfig:
    dim: int = 15
    n: int = 10_000
    n_eval: int = 2_000
    seed: int = 0
    epochs: int = 100
    finetune_epochs: int = 100
    batch_size: int = 256
    k: int = 1
    k_eval: int = 100
    lr: float = 1e-3
    hidden: tuple = (64, 64)
    skip: bool = True
    dims: tuple = experiments.DEFAULT_SWEEP_DIMS
    repeats: int = 10
    data_dir: str = "data"
    ckpt_dir: tuple = ("checkpoints",)
    out_ckpt_dir: str = None
    out_dir: str = "results"
    csv: bool = False
    out: str = None
    p_z: float = 0.5
    p_x_given_z: tuple = (0.5, 0.75)
    p_y_given_xz: tuple = (0.75, 0.5, 0.5, 0.5)
    expect: str = "greater"

    def validate(self):
        for name in ("dim", "n", "n_eval", "batch_size", "k", "k_eval", "repeats"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        for name in ("epochs", "finetune_epochs"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        _rng.check_seed(self.seed)
        return self

    def settings(self):
        return experiments.ExperimentSettings(
            n_train=self.n,
            n_eval=self.n_eval,
            epochs=self.epochs,
            finetune_epochs=self.finetune_epochs,
            batch_size=self.batch_size,
            lr=self.lr,
            k_train=self.k,
            k_eval=self.k_eval,
            hidden=tuple(self.hidden),
            skip=self.skip,
        )


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _coerce(name, value):
    default = _FIELDS[name].default
    if isinstance(default, tuple):
        return tuple(value) if isinstance(value, (list, tuple)) else (value,)
    return value


def load_run_config(args):
    """Merge dataclass defaults, then the optional JSON file, then explicit flags."""
    values = {}
    if getattr(args, "config", None):
        with open(args.config) as fh:
            doc = json.load(fh)
        unknown = set(doc) - set(_FIELDS)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        values.update({k: _coerce(k, v) for k, v in doc.items()})
    for name in _FIELDS:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = _coerce(name, v)
    return RunConfig(**values).validate()


# ---------------------------------------------------------------------------
# file helpers


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def _ensure_dir(path):
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _load_config(data_dir):
    return scm_gaussian.ScmConfig.from_json(Path(data_dir, CONFIG_FILE).read_text())


def _save_model(model, ckpt_dir, dataset):
    d = _ensure_dir(ckpt_dir)
    for name in engine.COMPONENTS:
        checkpoint.save(d / f"{name}.ckpt", name, model.component(name))
    _write_manifest(model, d, dataset)


def _write_manifest(model, d, dataset):
    manifest = {
        "mode": model.mode,
        "dim": model.dim,
        "frozen": sorted(model.frozen),
        "dataset_fingerprint": dataset.config_fingerprint.hex(),
        "fingerprints": model.fingerprints(),
    }
    (d / MANIFEST_FILE).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _load_model(ckpt_dir):
    d = Path(ckpt_dir)
    manifest = json.loads((d / MANIFEST_FILE).read_text())
    parts = {}
    for name in engine.COMPONENTS:
        component, module, _ = checkpoint.load(d / f"{name}.ckpt")
        if component != name:
            raise ValueError(f"{d / (name + '.ckpt')} holds a {component} checkpoint")
        parts[name] = module
    model = engine.VbaModel(parts["prior"], parts["decoder"], parts["encoder"], mode=manifest["mode"])
    return model, manifest


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(cfg):
    out = _ensure_dir(cfg.out_dir)
    config = scm_gaussian.sample_config(cfg.dim, _rng.derive_seed(cfg.seed, 0))
    obs = scm_gaussian.generate(config, cfg.n, _rng.derive_seed(cfg.seed, 1))
    ood = scm_gaussian.generate_ood(config, cfg.n_eval, _rng.derive_seed(cfg.seed, 2))
    (out / CONFIG_FILE).write_text(config.to_json())
    scm_gaussian.save_dataset(out / OBS_FILE, obs)
    scm_gaussian.save_dataset(out / OOD_FILE, ood)
    if cfg.csv:
        (out / "observational.csv").write_text(scm_gaussian.dataset_to_csv(obs))
        (out / "ood.csv").write_text(scm_gaussian.dataset_to_csv(ood))
    print(f"wrote {out / CONFIG_FILE}, {out / OBS_FILE} ({obs.n} rows), {out / OOD_FILE} ({ood.n} rows)")
    return EXIT_OK


def cmd_train(cfg):
    data = scm_gaussian.load_dataset(Path(cfg.data_dir, OBS_FILE))
    model = engine.VbaModel.initialize(
        data.dim, _rng.derive_seed(cfg.seed, 10), tuple(cfg.hidden), skip=cfg.skip, data=data
    )
    report = engine.train_separate(
        model, data, cfg.epochs, cfg.batch_size, _rng.derive_seed(cfg.seed, 11), cfg.lr
    )
    ckpt_dir = cfg.ckpt_dir[0]
    _save_model(model, ckpt_dir, data)
    Path(ckpt_dir, "train_loss.csv").write_text(report.to_csv())
    log.info("separate training took %.1fs", report.wall_clock)
    print(f"wrote checkpoints to {ckpt_dir} after {cfg.epochs} epochs")
    return EXIT_OK


def cmd_finetune(cfg):
    src = Path(cfg.ckpt_dir[0])
    dst = _ensure_dir(cfg.out_ckpt_dir or src / "finetuned")
    data = scm_gaussian.load_dataset(Path(cfg.data_dir, OBS_FILE))
    model, _ = _load_model(src)
    model.freeze("prior", "decoder")
    report = engine.finetune_encoder(
        model, data, cfg.finetune_epochs, cfg.batch_size, cfg.k, _rng.derive_seed(cfg.seed, 12), cfg.lr
    )
    # frozen components are carried over byte for byte
    for name in ("prior", "decoder"):
        shutil.copyfile(src / f"{name}.ckpt", dst / f"{name}.ckpt")
    checkpoint.save(dst / "encoder.ckpt", "encoder", model.encoder)
    _write_manifest(model, dst, data)
    (dst / "finetune_elbo.csv").write_text(report.to_csv())
    print(f"wrote finetuned checkpoints to {dst} after {cfg.finetune_epochs} epochs")
    return EXIT_OK


def cmd_eval(cfg):
    config = _load_config(cfg.data_dir)
    out = _ensure_dir(cfg.out_dir)
    datasets = {
        "in_distribution": scm_gaussian.load_dataset(Path(cfg.data_dir, OBS_FILE)),
        "out_of_distribution": scm_gaussian.load_dataset(Path(cfg.data_dir, OOD_FILE)),
    }
    rows = []
    for ckpt_dir in cfg.ckpt_dir:
        model, _ = _load_model(ckpt_dir)
        for name, data in datasets.items():
            m = engine.evaluate(model, data, config, cfg.k_eval, cfg.seed)
            stem = f"metrics_{m.mode}_{name}"
            (out / f"{stem}.txt").write_text(m.to_text())
            (out / f"{stem}.json").write_text(m.to_json())
            rows.append((name, *m.to_dict().values()))
            print(f"{m.mode:>11} {name:<20} elbo {m.elbo_mean:.4f} MAE {m.ground_truth_mae:.4f}")
    write_csv(out / "metrics.csv", METRICS_COLUMNS, rows)
    return EXIT_OK


def cmd_sweep(cfg):
    out = _ensure_dir(cfg.out_dir)
    rows = experiments.sweep(tuple(cfg.dims), cfg.repeats, cfg.seed, cfg.settings())
    write_csv(out / "sweep.csv", experiments.SWEEP_COLUMNS, rows)
    print(f"wrote {len(rows)} rows to {out / 'sweep.csv'}")
    return EXIT_OK


def cmd_pitfall(cfg):
    out = _ensure_dir(cfg.out_dir)
    result = experiments.pitfall(cfg.dim, cfg.seed, cfg.settings())
    write_csv(out / "pitfall.csv", experiments.PITFALL_COLUMNS, result.rows)
    f = result.final
    print(
        f"joint {f['joint_estimate']:.4f}  finetuned {f['finetuned_estimate']:.4f}  "
        f"E log p(y|x) {f['analytic_observational']:.4f}  "
        f"E log p(y|do(x)) {f['analytic_interventional']:.4f}"
    )
    return EXIT_OK


def cmd_discrete_check(cfg):
    p_y = tuple(cfg.p_y_given_xz)
    scm = scm_discrete.DiscreteScm(cfg.p_z, tuple(cfg.p_x_given_z), (p_y[:2], p_y[2:]))
    obs = scm_discrete.expected_log_observational(scm)
    do = scm_discrete.expected_log_interventional(scm)
    lines = [f"E log p(y|x)     = {obs!r}", f"E log p(y|do(x)) = {do!r}"]
    ok = True
    if scm == scm_discrete.DiscreteScm():
        obs_cf, do_cf = scm_discrete.default_closed_forms()
        match = abs(obs - obs_cf) < 1e-12 and abs(do - do_cf) < 1e-12
        lines.append(f"closed forms     : {'match' if match else 'MISMATCH'} (tol 1e-12)")
        ok &= match
    relation = "equal" if abs(obs - do) < 1e-12 else ("greater" if obs > do else "less")
    lines.append(f"relation         : observational {relation} interventional")
    ok &= relation == cfg.expect
    lines.append("PASS" if ok else f"FAIL (expected {cfg.expect})")
    report = "\n".join(lines) + "\n"
    print(report, end="")
    if cfg.out:
        Path(cfg.out).write_text(report)
    if not ok:
        raise CheckFailed(report)
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "finetune": cmd_finetune,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "pitfall": cmd_pitfall,
    "discrete-check": cmd_discrete_check,
}

# flags accepted by each command (all default to None so file values survive)
_FLAGS = {
    "gen-data": ("dim", "n", "n_eval", "seed", "out_dir", "csv"),
    "train": ("data_dir", "ckpt_dir", "seed", "epochs", "batch_size", "lr", "hidden", "skip"),
    "finetune": (
        "data_dir", "ckpt_dir", "out_ckpt_dir", "seed", "finetune_epochs", "batch_size", "k", "lr",
    ),
    "eval": ("data_dir", "ckpt_dir", "out_dir", "seed", "k_eval"),
    "sweep": (
        "dims", "repeats", "seed", "n", "n_eval", "epochs", "finetune_epochs",
        "batch_size", "k", "k_eval", "lr", "hidden", "skip", "out_dir",
    ),
    "pitfall": (
        "dim", "seed", "n", "n_eval", "epochs", "finetune_epochs", "batch_size",
        "k", "k_eval", "lr", "hidden", "skip", "out_dir",
    ),
    "discrete-check": ("out", "p_z", "p_x_given_z", "p_y_given_xz", "expect"),
}

_FLAG_SPECS = {
    "dim": dict(type=int),
    "n": dict(type=int, help="observational (training) rows"),
    "n_eval": dict(type=int, help="evaluation / out-of-distribution rows"),
    "seed": dict(type=int, help="master seed"),
    "epochs": dict(type=int, help="separate-training (or joint) epochs"),
    "finetune_epochs": dict(type=int),
    "batch_size": dict(type=int),
    "k": dict(type=int, help="encoder samples per row while finetuning"),
    "k_eval": dict(type=int, help="samples per row when evaluating"),
    "lr": dict(type=float),
    "hidden": dict(type=int, nargs="+"),
    "skip": dict(action=argparse.BooleanOptionalAction, default=None),
    "dims": dict(type=int, nargs="+"),
    "repeats": dict(type=int),
    "data_dir": dict(),
    "ckpt_dir": dict(action="append", help="repeat to evaluate several checkpoints"),
    "out_ckpt_dir": dict(),
    "out_dir": dict(),
    "csv": dict(action="store_true", default=None, help="also write text exports"),
    "out": dict(help="write the report to this path"),
    "p_z": dict(type=float),
    "p_x_given_z": dict(type=float, nargs=2, metavar=("P0", "P1")),
    "p_y_given_xz": dict(type=float, nargs=4, metavar=("X0Z0", "X0Z1", "X1Z0", "X1Z1")),
    "expect": dict(choices=("greater", "equal", "less")),
}


def build_parser():
    parser = argparse.ArgumentParser(prog="vba", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, flags in _FLAGS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON file with option values")
        for flag in flags:
            spec = dict(_FLAG_SPECS[flag])
            spec.setdefault("default", None)
            p.add_argument("--" + flag.replace("_", "-"), dest=flag, **spec)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        cfg = load_run_config(args)
        return COMMANDS[args.command](cfg)
    except CheckFailed:
        return EXIT_CHECK
    except OSError as exc:
        print(f"vba: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, KeyError, TypeError) as exc:
        print(f"vba: invalid argument: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
