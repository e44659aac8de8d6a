"""Command line for reproducible runs: gen, train, eval, gradcheck, ablate.

Every command reads one INI config (see :mod:`runconfig`), writes only inside
its output directory, and leaves a manifest there (config echo, seed, library
version, content digests) so a run can be reproduced bit-exactly.

Flags: ``--config PATH``, ``--out DIR``, ``--seed U64``, ``--threads N``.
Each flag has an environment mirror with the ``SINCPULSE_`` prefix
(``SINCPULSE_CONFIG``, ``SINCPULSE_OUT``, ``SINCPULSE_SEED``,
``SINCPULSE_THREADS``); an explicit flag wins over its environment mirror.

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import os
import sys
from pathlib import Path

from .errors import (
    ChecksumError,
    FileFormatError,
    InvalidConfigError,
    InvalidInputError,
    NumericError,
    VersionError,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4

ENV_PREFIX = "SINCPULSE_"

CLIP_SUFFIX = ".sincv"


def _env(name: str) -> str | None:
    return os.environ.get(ENV_PREFIX + name)


def _apply_threads(threads: int | None) -> None:
    """Pin BLAS/OpenMP pools; must run before numpy is first imported."""
    if threads is None:
        return
    if threads < 1:
        raise InvalidConfigError(f"--threads must be >= 1, got {threads}")
    for var in (
        "OMP_NUM_THREADS",
        "OPENBLAS_NUM_THREADS",
        "MKL_NUM_THREADS",
        "NUMEXPR_NUM_THREADS",
    ):
        os.environ[var] = str(threads)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sincpulse",
        description="Unsupervised pulse-signal discovery: data generation, "
        "training, evaluation, gradient checking and ablations.",
    )
    parser.add_argument("--config", help="run configuration file (INI)")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--threads", type=int, help="BLAS/OpenMP thread cap")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen", help="generate a synthetic labeled corpus")
    sub.add_parser("train", help="train a model from a config")
    sub.add_parser("eval", help="score a checkpoint on a labeled corpus")
    sub.add_parser("gradcheck", help="verify every gradient path")
    ablate = sub.add_parser("ablate", help="run an ablation study")
    ablate.add_argument(
        "kind", choices=("losses", "batch", "augment"), help="which ablation"
    )
    return parser


def _resolve_common(args):
    config_path = args.config or _env("CONFIG")
    out = args.out or _env("OUT")
    seed = args.seed
    if seed is None and _env("SEED") is not None:
        try:
            seed = int(_env("SEED"))
        except ValueError:
            raise InvalidConfigError(
                f"SINCPULSE_SEED must be an integer, got {_env('SEED')!r}"
            ) from None
    threads = args.threads
    if threads is None and _env("THREADS") is not None:
        try:
            threads = int(_env("THREADS"))
        except ValueError:
            raise InvalidConfigError(
                f"SINCPULSE_THREADS must be an integer, got {_env('THREADS')!r}"
            ) from None
    return config_path, out, seed, threads


def _require_config(config_path):
    from .runconfig import load_config

    if not config_path:
        raise InvalidConfigError("this command needs --config (or SINCPULSE_CONFIG)")
    return load_config(config_path)


def _require_out(out) -> Path:
    if not out:
        raise InvalidConfigError("this command needs --out (or SINCPULSE_OUT)")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    probe = path / ".write_probe"
    probe.write_bytes(b"")
    probe.unlink()
    return path


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out: Path, cfg, seed, files: list[Path]) -> None:
    from . import __version__
    from .runconfig import render_echo

    lines = [
        f"sincpulse-version: {__version__}",
        f"seed: {seed if seed is not None else 'config'}",
        "",
        "[files]",
    ]
    for f in sorted(files):
        lines.append(f"{f.name}  sha256:{_sha256(f)}")
    lines += ["", "[config-echo]", render_echo(cfg).rstrip()]
    (out / "manifest.txt").write_text("\n".join(lines) + "\n")


def _corpus_paths(data_dir) -> list[Path]:
    root = Path(data_dir)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {root}")
    paths = sorted(root.glob(f"*{CLIP_SUFFIX}"))
    if not paths:
        raise FileNotFoundError(f"no {CLIP_SUFFIX} clips in {root}")
    return paths


def cmd_gen(config_path, out, seed) -> int:
    from .runconfig import build_gen_config
    from .synthdata import generate, save_clip

    cfg = _require_config(config_path)
    out_dir = _require_out(out)
    gen_cfg = build_gen_config(cfg, seed_override=seed)
    clips = generate(gen_cfg)
    files = []
    for i, lc in enumerate(clips):
        path = out_dir / f"clip_{i:04d}{CLIP_SUFFIX}"
        save_clip(lc, path)
        files.append(path)
        files.append(Path(f"{path}.meta"))
    _write_manifest(out_dir, cfg, seed if seed is not None else gen_cfg.seed, files)
    print(f"wrote {len(clips)} clips to {out_dir}")
    return EXIT_OK


def _load_split(cfg, mode: str):
    from .runconfig import split_fractions
    from .synthdata import load_clip, load_labeled_clip, split

    data_dir = cfg.get("train", "data_dir")
    if not data_dir:
        raise InvalidConfigError("[train] data_dir is required")
    fractions = split_fractions(cfg.get("train", "split_fractions", "0.6,0.2,0.2"))
    split_seed = cfg.get("train", "split_seed", 0)
    paths = _corpus_paths(data_dir)
    if mode == "sinc":
        dataset = [load_clip(p) for p in paths]  # labels never leave the disk
    else:
        dataset = [load_labeled_clip(p) for p in paths]
    return split(dataset, fractions, seed=split_seed)


def cmd_train(config_path, out, seed) -> int:
    from .model import save_params
    from .report import training_curves_png
    from .runconfig import build_train_config
    from .train import train

    cfg = _require_config(config_path)
    out_dir = _require_out(out)
    t_cfg = build_train_config(cfg, seed_override=seed)
    train_set, val_set, _ = _load_split(cfg, t_cfg.mode)
    params, log = train(train_set, val_set, t_cfg)
    ckpt = out_dir / "model.params"
    save_params(params, ckpt)
    log_path = out_dir / "train_log.jsonl"
    log.save_jsonl(log_path)
    files = [ckpt, log_path]
    if log.epoch_records():
        curves = out_dir / "train_curves.png"
        training_curves_png(log, curves)
        files.append(curves)
    _write_manifest(out_dir, cfg, seed, files)
    aborted = [r for r in log.records if r.get("event") == "aborted"]
    if aborted:
        print(f"training aborted at epoch {aborted[0]['epoch']}: " f"{aborted[0]['error']}")
        return EXIT_NUMERIC
    print(
        f"trained {t_cfg.epochs} epochs; best validation selection "
        f"{min(r['val_selection'] for r in log.epoch_records() if 'val_selection' in r):.4f}; "
        f"checkpoint {ckpt}"
    )
    return EXIT_OK


def cmd_eval(config_path, out, seed) -> int:
    from .evaluate import evaluate_model, write_metrics_csv
    from .model import load_params
    from .report import agreement_png
    from .runconfig import build_model_config
    from .synthdata import load_labeled_clip

    cfg = _require_config(config_path)
    out_dir = _require_out(out)
    ckpt = cfg.get("eval", "checkpoint")
    data_dir = cfg.get("eval", "data_dir")
    if not ckpt or not data_dir:
        raise InvalidConfigError("[eval] needs checkpoint and data_dir")
    params = load_params(ckpt, build_model_config(cfg))
    labeled = [load_labeled_clip(p) for p in _corpus_paths(data_dir)]
    report = evaluate_model(
        params,
        labeled,
        window_len_s=cfg.get("eval", "window_len_s", 10.0),
        stride_s=cfg.get("eval", "stride_s", 1.0),
        include_second_harmonic_snr=cfg.get("eval", "include_second_harmonic", False),
    )
    csv_path = out_dir / "metrics.csv"
    write_metrics_csv(report, csv_path)
    fig_path = out_dir / "agreement.png"
    agreement_png(params, labeled, fig_path)
    _write_manifest(out_dir, cfg, seed, [csv_path, fig_path])
    r_text = "undefined" if report.pearson_r is None else f"{report.pearson_r:.4f}"
    print(
        f"evaluated {len(labeled)} clips / {report.n_windows} windows: "
        f"MAE {report.mae_bpm:.3f} bpm, RMSE {report.rmse_bpm:.3f} bpm, "
        f"r {r_text}"
    )
    return EXIT_OK


def cmd_gradcheck(out) -> int:
    from .gradcheck import format_table, run_all

    rows = run_all()
    table = format_table(rows)
    print(table)
    if out:
        out_dir = _require_out(out)
        (out_dir / "gradcheck.txt").write_text(table + "\n")
    return EXIT_OK if all(r.passed for r in rows) else EXIT_NUMERIC


def cmd_ablate(kind, config_path, out, seed) -> int:
    from .report import ablation_bars_png
    from .runconfig import build_train_config
    from .train import (
        ablate_augmentations,
        ablate_batch_size,
        ablate_losses,
        write_ablation_csv,
    )

    cfg = _require_config(config_path)
    out_dir = _require_out(out)
    base = build_train_config(cfg, seed_override=seed)
    epochs = cfg.get("ablate", "epochs", None)
    if epochs is not None:
        base = dataclasses.replace(base, epochs=epochs)
    train_lab, val_lab, test_lab = _load_split(cfg, "supervised")
    seeds = cfg.get("ablate", "seeds", (0, 1, 2))
    if kind == "losses":
        rows = ablate_losses(train_lab, val_lab, test_lab, base, seeds=seeds)
        group_key = "components"
    elif kind == "batch":
        sizes = cfg.get("ablate", "batch_sizes", (5, 10, 15, 20))
        rows = ablate_batch_size(
            train_lab, val_lab, test_lab, base, sizes=sizes, seeds=seeds
        )
        group_key = "batch_size"
    else:
        rows = ablate_augmentations(train_lab, val_lab, test_lab, base, seeds=seeds)
        group_key = "augmentations"
    csv_path = out_dir / f"ablate_{kind}.csv"
    write_ablation_csv(rows, csv_path)
    fig_path = out_dir / f"ablate_{kind}.png"
    ablation_bars_png(rows, group_key, fig_path)
    _write_manifest(out_dir, cfg, seed, [csv_path, fig_path])
    print(f"wrote {len(rows)} ablation rows to {csv_path}")
    return EXIT_OK


def entry(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        config_path, out, seed, threads = _resolve_common(args)
        _apply_threads(threads)
        if args.command == "gen":
            return cmd_gen(config_path, out, seed)
        if args.command == "train":
            return cmd_train(config_path, out, seed)
        if args.command == "eval":
            return cmd_eval(config_path, out, seed)
        if args.command == "gradcheck":
            return cmd_gradcheck(out)
        return cmd_ablate(args.kind, config_path, out, seed)
    except InvalidConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileFormatError, ChecksumError, VersionError) as exc:
        print(f"file error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (FileNotFoundError, PermissionError, IsADirectoryError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NumericError, InvalidInputError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def main() -> None:  # console_scripts hook
    raise SystemExit(entry())


if __name__ == "__main__":
    main()
