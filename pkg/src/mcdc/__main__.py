import argparse
import logging
import os
import sys
import typing as t
from pathlib import Path

import numpy as np

from . import __version__
from ._analysis import class_pca_profile, first_component_share, interpolation_grid, mixing_side_score, project_2d
from ._checkpoint import load_checkpoint, save_checkpoint
from ._cluster import cluster_latents, evaluate_clustering
from ._config import ARGV, RunConfig, resolve_config
from ._data import LabeledDataset, load_dataset
from ._errors import ConfigError, ConsistencyError, FormatError, McdcError, SpecError
from ._export import (
    tile_grid,
    write_grid_pgm,
    write_key_values,
    write_metrics_csv,
    write_pgm,
    write_profile_csv,
    write_projection_csv,
)
from ._manifest import RunManifest, write_manifest
from ._model import ModelParams, build_model, decode, encode
from ._train import TrainState, train
from ._util import make_rng, split_rng

logger = logging.getLogger(__name__)

EXIT_RUNTIME, EXIT_CONFIG, EXIT_DATA = 1, 2, 3
CHECKPOINT_NAME = "checkpoint.mcdc"

common = argparse.ArgumentParser(add_help=False)
common.add_argument("-v", "--verbose", action="count", default=0, help="INFO with -v, DEBUG with -vv")
common.add_argument("-c", "--config", metavar="PATH", help="a config file or the name of a shipped preset")
common.add_argument("-o", "--out", metavar="DIR", default="out", help="directory for the artifacts (default: out)")
common.add_argument("--seed", type=int, metavar="U64")
common.add_argument("--deterministic", choices=("on", "off"))
common.add_argument("--dataset", choices=("mnist", "mnist2", "blobs"))
common.add_argument("--split", choices=("train", "test"))

parser = argparse.ArgumentParser(prog=os.path.basename(sys.executable) + " -m mcdc")
parser.add_argument("--version", action="version", version=__version__)
subparsers = parser.add_subparsers(dest="command", required=True)

train_parser = subparsers.add_parser("train", parents=[common], help="train an autoencoder")
train_parser.add_argument("--variant", choices=("baseline", "acai", "mcdc"))
train_parser.add_argument("--epochs", type=int)

eval_parser = subparsers.add_parser("eval", parents=[common], help="cluster the latents of a checkpoint")
eval_parser.add_argument("--checkpoint", metavar="PATH")
eval_parser.add_argument("--k", type=int)
eval_parser.add_argument("--kmeans-restarts", type=int, metavar="N")

analyze_parser = subparsers.add_parser("analyze", parents=[common], help="per-class PCA profile and 2D projection")
analyze_parser.add_argument("--checkpoint", metavar="PATH")
analyze_parser.add_argument("--cutoff", type=int)

interpolate_parser = subparsers.add_parser("interpolate", parents=[common], help="decode interpolations")
interpolate_parser.add_argument("--checkpoint", metavar="PATH")
interpolate_parser.add_argument("--pairs", type=int)
interpolate_parser.add_argument("--steps", type=int)
interpolate_parser.add_argument("--recon-check", action="store_true", help="also write the plain reconstructions")


def _overrides(args: argparse.Namespace) -> t.Dict[str, t.Any]:
    names = ["seed", "deterministic", "dataset", "split", "variant", "epochs", "k", "cutoff", "pairs", "steps"]
    overrides = {name: getattr(args, name, None) for name in names}
    overrides["kmeans_restarts"] = getattr(args, "kmeans_restarts", None)
    return overrides


def _rngs(cfg: RunConfig) -> t.Dict[str, np.random.Generator]:
    """Independent generators per purpose, all derived from the run seed."""

    names = ("data", "model", "train", "kmeans", "pairs")
    return dict(zip(names, split_rng(make_rng(cfg.train.seed), len(names))))


def _load_model(args: argparse.Namespace) -> ModelParams:
    path = Path(args.checkpoint or Path(args.out) / CHECKPOINT_NAME)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint {path} does not exist")
    return load_checkpoint(path)


def _check_dataset(model: ModelParams, ds: LabeledDataset) -> None:
    if ds.item_shape != tuple(model.spec.input_shape):
        raise ConsistencyError(
            f"the dataset has items of shape {ds.item_shape}, the model expects {model.spec.input_shape}"
        )


def _encode_all(model: ModelParams, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
    return np.concatenate([encode(model, images[i : i + batch_size]) for i in range(0, len(images), batch_size)])


def _require(cfg: RunConfig, key: str, flag: str) -> None:
    if key not in cfg.explicit_keys:
        raise ConfigError(f"{key!r} must be set with {flag} or in the config file", ARGV, 0, 0, "")


def cmd_train(args: argparse.Namespace, cfg: RunConfig, manifest: RunManifest) -> int:
    _require(cfg, "variant", "--variant")
    rngs = _rngs(cfg)
    ds = load_dataset(cfg.data, rngs["data"])
    cfg.model.input_shape = ds.item_shape
    cfg.model.validate()
    model = build_model(cfg.model, rngs["model"])
    state = TrainState.create(model, cfg.train.lr)
    history = train(state, ds, cfg.train, rng=rngs["train"])

    out = Path(args.out)
    save_checkpoint(state.model, out / CHECKPOINT_NAME)
    write_metrics_csv(out / "metrics.csv", history)
    manifest.add_artifact("checkpoint", out / CHECKPOINT_NAME)
    manifest.add_artifact("metrics", out / "metrics.csv")
    return 0


def cmd_eval(args: argparse.Namespace, cfg: RunConfig, manifest: RunManifest) -> int:
    model = _load_model(args)
    rngs = _rngs(cfg)
    ds = load_dataset(cfg.data, rngs["data"])
    _check_dataset(model, ds)
    k = cfg.eval.k or ds.class_count
    result = cluster_latents(
        _encode_all(model, ds.images),
        k,
        cfg.eval.kmeans_restarts,
        cfg.eval.kmeans_max_iter,
        rngs["kmeans"],
        cfg.eval.whiten_eps,
        cfg.eval.whiten_components or None,
        n_jobs=1 if cfg.eval.deterministic else (os.cpu_count() or 1),
    )
    metrics = evaluate_clustering(ds.labels, result.assignments, result.inertia)
    print(f"acc={metrics.acc:.6f} nmi={metrics.nmi:.6f} inertia={metrics.inertia:.6f}")

    path = Path(args.out) / "eval.txt"
    write_key_values(
        path,
        {
            "acc": repr(metrics.acc),
            "nmi": repr(metrics.nmi),
            "mutual_information": repr(metrics.mutual_information),
            "entropy_y": repr(metrics.entropy_y),
            "entropy_c": repr(metrics.entropy_c),
            "inertia": repr(metrics.inertia),
            "k": k,
            "restarts": result.restarts_run,
        },
    )
    manifest.add_artifact("eval", path)
    return 0


def cmd_analyze(args: argparse.Namespace, cfg: RunConfig, manifest: RunManifest) -> int:
    _require(cfg, "split", "--split")
    model = _load_model(args)
    ds = load_dataset(cfg.data, _rngs(cfg)["data"])
    _check_dataset(model, ds)
    latents = _encode_all(model, ds.images)
    profile = class_pca_profile(latents, ds.labels, cfg.eval.cutoff)
    logger.info("first component share: %.6f", first_component_share(profile))

    out = Path(args.out)
    write_profile_csv(out / "profile.csv", profile)
    write_projection_csv(out / "projection.csv", project_2d(latents), ds.labels)
    manifest.add_artifact("profile", out / "profile.csv")
    manifest.add_artifact("projection", out / "projection.csv")
    return 0


def cmd_interpolate(args: argparse.Namespace, cfg: RunConfig, manifest: RunManifest) -> int:
    model = _load_model(args)
    rngs = _rngs(cfg)
    ds = load_dataset(cfg.data, rngs["data"])
    _check_dataset(model, ds)
    count = 2 * cfg.eval.pairs
    chosen = rngs["pairs"].choice(len(ds), size=count, replace=count > len(ds))
    pairs = [(ds.images[chosen[2 * r]], ds.images[chosen[2 * r + 1]]) for r in range(cfg.eval.pairs)]

    grid = interpolation_grid(model, pairs, np.linspace(0.0, 1.0, cfg.eval.steps))
    out = Path(args.out)
    if len(ds.item_shape) != 3:
        logger.warning("items of shape %s are not images, no grid image is written", ds.item_shape)
    else:
        write_grid_pgm(out / "interpolation.pgm", grid)
        manifest.add_artifact("interpolation", out / "interpolation.pgm")
    if args.recon_check and len(ds.item_shape) == 3:
        recon = decode(model, encode(model, np.stack([x_i for x_i, _ in pairs])))
        write_pgm(out / "recon.pgm", tile_grid(recon[:, None]))
        manifest.add_artifact("recon", out / "recon.pgm")

    score = mixing_side_score(model, pairs, cfg.eval.side_alpha)
    print(f"side_score(alpha={cfg.eval.side_alpha})={score:.6f}")
    return 0


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "analyze": cmd_analyze, "interpolate": cmd_interpolate}


def main(argv: t.Optional[t.Sequence[str]] = None) -> int:
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=[logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)],
        format="%(levelname)s %(name)s: %(message)s",
    )

    try:
        cfg = resolve_config(args.config, _overrides(args))
    except (ConfigError, SpecError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    Path(args.out).mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(args.command, cfg)
    try:
        code = COMMANDS[args.command](args, cfg, manifest)
    except (ConfigError, SpecError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, ConsistencyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except McdcError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception:
        logger.exception("%s failed", args.command)
        return EXIT_RUNTIME

    manifest.finish()
    path = write_manifest(manifest, args.out)
    logger.info("wrote %s", path)
    return code


if __name__ == "__main__":
    sys.exit(main())
