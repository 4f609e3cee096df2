"""Command-line entry point for reproducible experiments.

Subcommands: gen-data, train, eval, histogram, ablate, mixing. Every run
validates its config first, then writes all outputs under a fresh
timestamped directory inside the output root (--out, config out_dir, or
$RADAUG_OUT_DIR, in that order) and finishes with a run_manifest.json
inventory. Exit codes: 0 success, 2 config error, 3 numeric failure,
4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .analysis import compare_methods
from .config import (ConfigError, RunManifest, config_hash, eval_result_schema,
                     load_config, make_run_dir, mix_from, perturber_from,
                     resolve_out_root, scene_spec_from, train_config_from,
                     trajectory_spec_from, validate_document,
                     weather_table_from)
from .core import Dataset
from .dataio import dataset_hash, load_dataset, save_dataset
from .evaluate import evaluate, export_trajectory, format_table, save_eval_json
from .loss import LossParams
from .model import NonFiniteLossError, load_checkpoint
from .perturb import PerturberConfig
from .synth import generate_dataset
from .train import (model_for_dataset, run_ablation, run_mixing_study,
                    run_training, write_ablation_csv, write_mixing_csv)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4


def _say(msg: str) -> None:
    print(msg, flush=True)


def _train_dataset(cfg: dict) -> Dataset:
    """Training dataset: a pre-generated directory if configured, else fresh."""
    if cfg["dataset_dir"]:
        return load_dataset(cfg["dataset_dir"])
    return generate_dataset(scene_spec_from(cfg), trajectory_spec_from(cfg),
                            mix_from(cfg["train_mix"]), cfg["tuple_len"],
                            weather_table=weather_table_from(cfg))


def _test_dataset(cfg: dict, dataset_dir=None) -> Dataset:
    """Held-out dataset: a directory if given, else the config's test split.

    The test trajectory uses a different phase seed than training, so its
    viewpoints never coincide with training frames.
    """
    if dataset_dir:
        return load_dataset(dataset_dir)
    return generate_dataset(scene_spec_from(cfg), trajectory_spec_from(cfg),
                            mix_from(cfg["test_mix"]), cfg["tuple_len"],
                            weather_table=weather_table_from(cfg),
                            n_frames=cfg["test_frames"], phase_seed=1)


def _finish(run_dir, command: str, cfg: dict, *, ds_hash=None) -> None:
    manifest = RunManifest(command=command, config_hash=config_hash(cfg),
                           seed=cfg["seed"], dataset_hash=ds_hash)
    manifest.inventory(run_dir)
    manifest.write(run_dir)
    _say(f"run manifest: {os.path.join(run_dir, 'run_manifest.json')}")


def _load_model(args, cfg):
    ckpt = getattr(args, "checkpoint", None) or cfg["eval"]["checkpoint"]
    if not ckpt:
        raise ConfigError("no checkpoint given: pass --checkpoint or set "
                          "eval.checkpoint in the config")
    return load_checkpoint(ckpt)


def cmd_gen_data(args, cfg: dict) -> int:
    run_dir = make_run_dir(resolve_out_root(cfg), "gen-data", config_hash(cfg))
    ds = generate_dataset(scene_spec_from(cfg), trajectory_spec_from(cfg),
                          mix_from(cfg["train_mix"]), cfg["tuple_len"],
                          weather_table=weather_table_from(cfg))
    ds_dir = os.path.join(run_dir, "dataset")
    save_dataset(ds, ds_dir)
    _say(f"dataset: {len(ds.frames())} frames, {len(ds.tuples)} tuples, "
         f"dims {ds.dims} -> {ds_dir}")
    _finish(run_dir, "gen-data", cfg, ds_hash=dataset_hash(ds_dir))
    return EXIT_OK


def cmd_train(args, cfg: dict) -> int:
    run_dir = make_run_dir(resolve_out_root(cfg), "train", config_hash(cfg))
    ds = _train_dataset(cfg)
    ds_hash = dataset_hash(cfg["dataset_dir"]) if cfg["dataset_dir"] else None
    tc = train_config_from(cfg)
    model = model_for_dataset(ds, tc.seed)
    _say(f"training: {len(ds.tuples)} tuples, {tc.epochs} epochs, "
         f"perturber {tc.perturber.method}, mix_mode {tc.mix_mode}")
    try:
        trained, params, report = run_training(ds, model, tc, out_dir=run_dir)
    except NonFiniteLossError as e:
        # last good checkpoint is already on disk next to the audit log
        with open(os.path.join(run_dir, "train_report.json"), "w") as f:
            json.dump(e.report.to_dict(), f, indent=2, sort_keys=True)
        _finish(run_dir, "train", cfg, ds_hash=ds_hash)
        raise
    with open(os.path.join(run_dir, "train_report.json"), "w") as f:
        json.dump(report.to_dict(), f, indent=2, sort_keys=True)
    _say(f"final epoch loss: {report.loss_curve[-1]:.6g} "
         f"({report.steps} steps)")
    _say(f"checkpoint: {report.checkpoint_path}")
    _finish(run_dir, "train", cfg, ds_hash=ds_hash)
    return EXIT_OK


def cmd_eval(args, cfg: dict) -> int:
    model, _ = _load_model(args, cfg)
    ds = _test_dataset(cfg, getattr(args, "dataset", None)
                       or cfg["eval"]["dataset_dir"])
    run_dir = make_run_dir(resolve_out_root(cfg), "eval", config_hash(cfg))
    result = evaluate(model, ds)
    _say(format_table(result))
    doc = result.to_dict()
    validate_document(doc, eval_result_schema(), label="eval result")
    save_eval_json(result, os.path.join(run_dir, "eval.json"))
    plot = os.path.join(run_dir, "trajectory.png") if cfg["eval"]["plot"] else None
    export_trajectory(model, ds, os.path.join(run_dir, "trajectory.csv"),
                      plot_path=plot)
    src = getattr(args, "dataset", None) or cfg["eval"]["dataset_dir"]
    _finish(run_dir, "eval", cfg, ds_hash=dataset_hash(src) if src else None)
    return EXIT_OK


def cmd_histogram(args, cfg: dict) -> int:
    model, params = _load_model(args, cfg)
    ds = _test_dataset(cfg, getattr(args, "dataset", None)
                       or cfg["eval"]["dataset_dir"])
    masks = ds.metadata.get("masks", {})
    if not masks:
        raise ConfigError("dataset has no landmark masks; histogram analysis "
                          "needs mask files")
    h = cfg["histogram"]
    run_dir = make_run_dir(resolve_out_root(cfg), "histogram", config_hash(cfg))
    methods = []
    for name in h["methods"]:
        fields = {"method": name}
        if name == "fgsm":
            fields["epsilon"] = 0.3
        fields.update(h["overrides"].get(name, {}))
        try:
            methods.append(PerturberConfig(**fields))
        except ValueError as e:
            raise ConfigError(f"histogram.overrides.{name}: {e}") from e
    tuples = list(ds.tuples)[:h["frames"]]
    out = compare_methods(model, tuples, masks, methods, params,
                          out_dir=run_dir, strip_frames=h["frames"],
                          threshold_abs=h["threshold_abs"])
    for m in out:
        ratios = [r.concentration_ratio for r in m.reports if not r.undefined]
        mean_ratio = sum(ratios) / len(ratios) if ratios else float("nan")
        _say(f"{m.method:<10s} mean entropy {m.mean_entropy:.4f}  "
             f"mean concentration ratio {mean_ratio:.3f}")
    src = getattr(args, "dataset", None) or cfg["eval"]["dataset_dir"]
    _finish(run_dir, "histogram", cfg, ds_hash=dataset_hash(src) if src else None)
    return EXIT_OK


def cmd_ablate(args, cfg: dict) -> int:
    run_dir = make_run_dir(resolve_out_root(cfg), "ablate", config_hash(cfg))
    ds = _train_dataset(cfg)
    test_ds = _test_dataset(cfg)
    tc = train_config_from(cfg)
    entries = run_ablation(ds, tc, test_ds, out_dir=run_dir, progress=_say)
    csv_path = os.path.join(run_dir, "ablation.csv")
    write_ablation_csv(entries, csv_path)
    for variant, entry in entries.items():
        o = entry.eval_result.overall
        _say(f"{variant:<22s} t_err {o.mean_t_err:.4f}  r_err {o.mean_r_err:.3f}")
    _say(f"ablation table: {csv_path}")
    _finish(run_dir, "ablate", cfg,
            ds_hash=dataset_hash(cfg["dataset_dir"]) if cfg["dataset_dir"] else None)
    return EXIT_OK


def cmd_mixing(args, cfg: dict) -> int:
    run_dir = make_run_dir(resolve_out_root(cfg), "mixing", config_hash(cfg))
    m = cfg["mixing"]
    tc = train_config_from(cfg)
    rows = run_mixing_study(
        scene_spec_from(cfg), m["fractions"], tc,
        traj_spec=trajectory_spec_from(cfg),
        source_weather=m["source_weather"], target_weather=m["target_weather"],
        tuple_len=cfg["tuple_len"], test_frames=m["test_frames"], progress=_say)
    csv_path = os.path.join(run_dir, "mixing.csv")
    write_mixing_csv(rows, csv_path)
    for r in rows:
        _say(f"fraction {r.fraction:.2f}: target t_err base {r.base_target_t:.4f}"
             f" vs rada {r.rada_target_t:.4f} | source t_err base "
             f"{r.base_source_t:.4f} vs rada {r.rada_source_t:.4f}")
    _say(f"mixing table: {csv_path}")
    _finish(run_dir, "mixing", cfg)
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "histogram": cmd_histogram,
    "ablate": cmd_ablate,
    "mixing": cmd_mixing,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="radaug",
        description="Adversarial data augmentation experiments for camera "
                    "pose regression on synthetic cross-weather scenes.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in [
            ("gen-data", "render a dataset to disk"),
            ("train", "train a pose regressor with augmentation"),
            ("eval", "evaluate a checkpoint per weather condition"),
            ("histogram", "perturbation distribution analysis per method"),
            ("ablate", "train the four threshold/clip variants"),
            ("mixing", "vary the target-weather share of the training set")]:
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", default=None, help="experiment config JSON")
        p.add_argument("--seed", type=int, default=None,
                       help="override the experiment seed")
        p.add_argument("--out", default=None, help="output root directory")
        p.add_argument("--perturber", default=None,
                       choices=["rada", "fgsm", "fgm", "gaussian", "none"],
                       help="override train.perturber.method")
        p.add_argument("--override", action="append", default=[],
                       metavar="KEY.PATH=VALUE",
                       help="dotted-path config override, repeatable")
        if name in ("eval", "histogram"):
            p.add_argument("--checkpoint", default=None,
                           help="model checkpoint to load")
            p.add_argument("--dataset", default=None,
                           help="dataset directory to evaluate on")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, overrides=args.override, seed=args.seed,
                          out=args.out, perturber=args.perturber)
        return COMMANDS[args.command](args, cfg)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NonFiniteLossError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
