"""Command-line surface: ingest, train, grid, assess, multiclass, simulate, verify.

Every subcommand prints its resolved configuration (including the seed)
before doing any work, writes output files atomically, and is reproducible:
identical arguments and input files give byte-identical outputs.

Exit codes: 0 success, 1 user error or failed verification, 2 internal error.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import data as data_mod
from . import ensemble as ens
from . import training as train_mod
from . import verify as verify_mod
from .core import NON_SUBORDINATE, SUBORDINATE, Hyperparameters
from .errors import PsbcError
from .pca import basis_from_pca, pca_basis
from .propagation import (
    allen_cahn_simulate,
    cell_centers,
    new_model,
    predict_batch,
    write_trajectory_csv,
)

DATA_DIR_ENV = "PSBC_DATA_DIR"


class _UserError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UserError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="psbc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_ingest = sub.add_parser("ingest", help="validate the digit corpus")
    _add_data_dir(p_ingest)

    p_train = sub.add_parser("train", help="train one binary classifier")
    _add_data_dir(p_train)
    p_train.add_argument("--digits", required=True, help="pair, e.g. 0,1")
    _add_model_flags(p_train)
    p_train.add_argument("--lr-u", type=float, default=0.1)
    p_train.add_argument("--lr-p", type=float, default=0.1)
    p_train.add_argument("--epochs", type=int, default=20)
    p_train.add_argument("--batch-size", type=int, default=32)
    p_train.add_argument("--patience", type=int, default=10)
    p_train.add_argument("--seed", type=int, default=0)
    p_train.add_argument("--out", required=True, help="model file to write")
    p_train.add_argument("--history", default=None, help="epoch history CSV")

    p_grid = sub.add_parser("grid", help="k-fold grid search from a config file")
    _add_data_dir(p_grid)
    p_grid.add_argument("--config", required=True)

    p_assess = sub.add_parser("assess", help="repeated refits scored on the test set")
    _add_data_dir(p_assess)
    p_assess.add_argument("--digits", required=True)
    _add_model_flags(p_assess)
    p_assess.add_argument("--lr-u", type=float, default=0.1)
    p_assess.add_argument("--lr-p", type=float, default=0.1)
    p_assess.add_argument("--epochs", type=int, default=20)
    p_assess.add_argument("--repeats", type=int, default=5)
    p_assess.add_argument("--seed", type=int, default=0)

    p_multi = sub.add_parser("multiclass", help="one-vs-one prediction from saved models")
    _add_data_dir(p_multi)
    p_multi.add_argument("--models", required=True, help="directory of pair model files")
    p_multi.add_argument("--limit", type=int, default=0, help="evaluate at most N test samples")
    p_multi.add_argument("--seed", type=int, default=0)
    p_multi.add_argument("--report", default=None, help="write the structured report here")
    p_multi.add_argument("--confusion", default=None, help="write the confusion matrix CSV here")

    p_sim = sub.add_parser("simulate", help="fixed-threshold reaction-diffusion run")
    p_sim.add_argument("--alpha", required=True, help="const:V | step | parabola")
    p_sim.add_argument("--nu", type=int, default=20)
    p_sim.add_argument("--nt", type=int, default=300)
    p_sim.add_argument("--dt", type=float, default=0.1)
    p_sim.add_argument("--eps", type=float, default=0.3)
    p_sim.add_argument("--bc", choices=["neumann", "periodic"], default="neumann")
    p_sim.add_argument("--out", required=True, help="trajectory CSV to write")

    p_verify = sub.add_parser("verify", help="run the property suites")
    p_verify.add_argument("--fast", action="store_true", help="trimmed sweep sizes")
    return parser


def _add_data_dir(p):
    p.add_argument(
        "--data-dir",
        default=os.environ.get(DATA_DIR_ENV),
        help=f"digit corpus directory (default ${DATA_DIR_ENV})",
    )


def _add_model_flags(p):
    p.add_argument("--nt", type=int, default=2)
    p.add_argument("--npt", type=int, default=196)
    p.add_argument("--eps", type=float, default=0.0)
    p.add_argument("--bc", choices=["neumann", "periodic"], default="neumann")
    p.add_argument("--shared", type=int, default=None, help="layers sharing one group (default nt)")
    p.add_argument("--subordinate", choices=["true", "false"], default="true")
    p.add_argument("--dt", type=float, default=0.1, help="initial (ceiling) time step")
    p.add_argument("--pca-basis", choices=["true", "false"], default="false")


def _print_config(args: argparse.Namespace) -> None:
    resolved = {k: v for k, v in sorted(vars(args).items()) if k != "command"}
    print(f"command: {args.command}")
    for key, value in resolved.items():
        print(f"  {key}: {value}")


def _require_data_dir(args) -> str:
    if not args.data_dir:
        raise _UserError(f"no data directory: pass --data-dir or set ${DATA_DIR_ENV}")
    if not os.path.isdir(args.data_dir):
        raise _UserError(f"data directory {args.data_dir!r} does not exist")
    return args.data_dir


def _parse_digits(text: str) -> tuple[int, int]:
    try:
        a, b = (int(t) for t in text.split(","))
    except ValueError as exc:
        raise _UserError(f"cannot parse digit pair {text!r}: expected e.g. 0,1") from exc
    if a == b or not (0 <= a <= 9 and 0 <= b <= 9):
        raise _UserError(f"invalid digit pair {text!r}")
    return min(a, b), max(a, b)


def _hp_from_args(args) -> Hyperparameters:
    shared = args.shared if args.shared is not None else args.nt
    return Hyperparameters(
        n_t=args.nt,
        n_u=784,
        n_pt=args.npt,
        eps=args.eps,
        dt_u=args.dt,
        dt_p=args.dt,
        dt_star=args.dt,
        shared_k=shared,
        bc=args.bc,
        subordination=SUBORDINATE if args.subordinate == "true" else NON_SUBORDINATE,
    )


def _load_pair(args, digits):
    train_all, test_all = data_mod.load_mnist(_require_data_dir(args))
    train = data_mod.select_pair(train_all, *digits)
    test = data_mod.select_pair(test_all, *digits)
    nmap = data_mod.fit_normalization(train)
    return data_mod.normalize_dataset(nmap, train), data_mod.normalize_dataset(nmap, test), nmap


def _cmd_ingest(args) -> int:
    train, test = data_mod.load_mnist(_require_data_dir(args))
    print(f"train-development: {len(train)} samples, {train.features.shape[1]} features")
    print(f"test: {len(test)} samples, {test.features.shape[1]} features")
    for d in range(10):
        print(f"  digit {d}: {int(np.sum(train.labels == d))} train, {int(np.sum(test.labels == d))} test")
    return 0


def _cmd_train(args) -> int:
    digits = _parse_digits(args.digits)
    hp = _hp_from_args(args)
    train, test, nmap = _load_pair(args, digits)
    basis_u = None
    if args.pca_basis == "true":
        basis_u = basis_from_pca(pca_basis(train.features, hp.n_pt))
    weights = train_mod.init_weights(hp, args.seed)
    model = new_model(hp, weights, basis_u=basis_u)
    config = train_mod.TrainConfig(
        lr_u=args.lr_u,
        lr_p=args.lr_p,
        epochs=args.epochs,
        seed=args.seed,
        batch_size=args.batch_size,
        patience=args.patience,
    )
    report = train_mod.fit(model, train, train, config)
    fitted = train_mod.best_model(model, report)
    data_mod.save_model(fitted, args.out, normalization=nmap)
    if args.history:
        train_mod.write_history_csv(report.history, args.history)
    test_acc = float(np.mean(predict_batch(fitted, test.features) == test.labels))
    print(f"best epoch {report.best_epoch}, stopped_early={report.stopped_early}")
    print(f"test accuracy {test_acc:.4f}")
    print(f"wrote {args.out}")
    return 0


def _cmd_grid(args) -> int:
    cfg = train_mod.parse_grid_config(args.config)
    if "digits" not in cfg:
        raise _UserError("config must name the digit pair, e.g. `digits 0,1`")
    digits = _parse_digits(cfg["digits"].replace(" ", ","))
    ns = argparse.Namespace(
        nt=int(cfg.get("nt", 2)),
        npt=int(cfg.get("npt", 196)),
        eps=float(cfg.get("eps", 0.0)),
        bc=cfg.get("bc", "neumann"),
        shared=int(cfg["shared"]) if "shared" in cfg else None,
        subordinate=cfg.get("subordinate", "true"),
        dt=0.1,
    )
    hp = _hp_from_args(ns)
    train, _, _ = _load_pair(args, digits)
    candidates = train_mod.candidates_from_config(cfg)
    best, table = train_mod.grid_search(
        candidates,
        train,
        hp,
        k=int(cfg.get("folds", 5)),
        seed=int(cfg.get("seed", 0)),
        epochs=int(cfg.get("epochs_grid", 10)),
        batch_size=int(cfg.get("batch_size", 32)),
        patience=int(cfg.get("patience", 10)),
    )
    for row in table:
        c = row["candidate"]
        print(
            f"lr_u={c.lr_u} lr_p={c.lr_p} dt_u={c.dt_star_u} dt_p={c.dt_star_p} "
            f"mean_accuracy={row['mean_accuracy']:.4f}"
        )
    print(
        f"best: lr_u={best.lr_u} lr_p={best.lr_p} dt_u={best.dt_star_u} dt_p={best.dt_star_p}"
    )
    return 0


def _cmd_assess(args) -> int:
    digits = _parse_digits(args.digits)
    hp = _hp_from_args(args)
    train, test, _ = _load_pair(args, digits)
    candidate = train_mod.Candidate(args.lr_u, args.lr_p, args.dt, args.dt)
    stats = train_mod.assess(
        hp, candidate, train, test, repeats=args.repeats, seed=args.seed, epochs=args.epochs
    )
    print(f"test accuracy mean {stats['mean_accuracy']:.4f} sd {stats['sd_accuracy']:.4f}")
    for i, acc in enumerate(stats["accuracies"]):
        print(f"  repeat {i}: {acc:.4f}")
    return 0


def _cmd_multiclass(args) -> int:
    directory = args.models
    if not os.path.isdir(directory):
        raise _UserError(f"model directory {directory!r} does not exist")
    committees = _load_committees(directory)
    _, test = data_mod.load_mnist(_require_data_dir(args))
    features, labels = test.features, test.labels
    if args.limit:
        features, labels = features[: args.limit], labels[: args.limit]
    rng = np.random.default_rng(args.seed)
    preds = ens.ovo_predict_batch(committees, features, rng)
    cm = ens.confusion(preds, labels, n_classes=10)
    accuracy, _ = ens.metrics(cm)
    pair_acc = {}
    for committee in committees:
        a, b = committee.pair
        mask = (labels == a) | (labels == b)
        if not mask.any():
            continue
        sub_x = data_mod.apply_normalization(committee.normalization, features[mask])
        sub_y = (labels[mask] == b).astype(np.int64)
        votes = ens._hard_vote_batch(committee, sub_x)
        pair_acc[(a, b)] = float(np.mean(votes == sub_y))
    report = ens.format_multiclass_report(pair_acc, accuracy)
    print(report, end="")
    if args.report:
        data_mod._atomic_write_bytes(args.report, report.encode("utf-8"))
    if args.confusion:
        ens.write_confusion_csv(cm, args.confusion)
    print(f"overall accuracy {accuracy:.4f}")
    return 0


def _load_committees(directory: str) -> list[ens.Committee]:
    by_pair: dict[tuple[int, int], list] = {}
    maps: dict[tuple[int, int], data_mod.NormalizationMap] = {}
    for name in sorted(os.listdir(directory)):
        if not name.endswith(".psbc"):
            continue
        stem = name[: -len(".psbc")]
        parts = stem.split("_")
        digits = [p for p in parts if p.isdigit() and len(p) == 1]
        if len(digits) < 2:
            raise _UserError(f"cannot infer digit pair from file name {name!r}")
        pair = (int(digits[0]), int(digits[1]))
        model, nmap = data_mod.load_model(os.path.join(directory, name))
        if nmap is None:
            raise _UserError(f"model {name!r} carries no normalization map")
        by_pair.setdefault(pair, []).append(model)
        maps[pair] = nmap
    return [
        ens.Committee(tuple(models), pair, maps[pair]) for pair, models in sorted(by_pair.items())
    ]


def _alpha_profile(spec: str):
    if spec.startswith("const:"):
        try:
            value = float(spec.split(":", 1)[1])
        except ValueError as exc:
            raise _UserError(f"bad constant threshold {spec!r}") from exc
        return lambda x: np.full_like(np.asarray(x, dtype=np.float64), value)
    if spec == "step":
        return lambda x: np.where(np.asarray(x) < 0.5, -2.0, 2.0)
    if spec == "parabola":
        return lambda x: 4.0 - 8.0 * (np.asarray(x) + 0.2) ** 2
    raise _UserError(f"unknown threshold profile {spec!r} (const:V | step | parabola)")


def _cmd_simulate(args) -> int:
    profile = _alpha_profile(args.alpha)
    hp = Hyperparameters(
        n_t=args.nt,
        n_u=args.nu,
        n_pt=args.nu,
        eps=args.eps,
        dt_u=args.dt,
        dt_p=args.dt,
        dt_star=args.dt,
        shared_k=args.nt,
        bc=args.bc,
    )
    x = cell_centers(args.nu)
    u0 = 0.5 - 0.5 * np.sin(np.pi * (2.0 * x - 1.0))
    traj = allen_cahn_simulate(profile, u0, hp)
    write_trajectory_csv(traj, args.out)
    print(f"wrote {traj.u_layers.shape[0]} x {traj.u_layers.shape[1]} trajectory to {args.out}")
    return 0


def _cmd_verify(args) -> int:
    results = verify_mod.run_all(fast=args.fast)
    failed = 0
    for res in results:
        status = "PASS" if res.passed else "FAIL"
        failed += 0 if res.passed else 1
        print(f"{status} {res.name}: {res.detail}")
    print(f"{len(results) - failed}/{len(results)} property suites passed")
    return 0 if failed == 0 else 1


def run(argv: list[str]) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        seed = getattr(args, "seed", None)
        _print_config(args)
        if seed is not None:
            print(f"  (seeded run: {seed})")
        handler = {
            "ingest": _cmd_ingest,
            "train": _cmd_train,
            "grid": _cmd_grid,
            "assess": _cmd_assess,
            "multiclass": _cmd_multiclass,
            "simulate": _cmd_simulate,
            "verify": _cmd_verify,
        }[args.command]
        return handler(args)
    except _UserError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FileNotFoundError, PsbcError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # pragma: no cover - internal faults
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
