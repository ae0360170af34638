"""Command-line interface: ``hybrid-ar <subcommand> [flags]``.

Every invocation writes into its own run directory (timestamp + seed) under
the run root (``--run-root``, else ``$HYBRID_AR_RUN_ROOT``, else ``runs``)
and echoes its fully resolved configuration there as ``config.json``.
Exit codes: 0 success, 1 user error, 2 internal error.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
import time
import traceback
import zlib
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from . import data as data_mod
from .errors import HybridARError

log = logging.getLogger("hybrid_ar")

RUN_ROOT_ENV = "HYBRID_AR_RUN_ROOT"
MODEL_PRESETS = ("small", "desk", "full")


class UserError(Exception):
    """Bad invocation or input; reported without a traceback, exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UserError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# configuration

# Section name -> allowed keys of the optional JSON config file.
CONFIG_SCHEMA = {
    "seed": None,
    "corpus": {f.name for f in dataclasses.fields(data_mod.SyntheticCorpusSpec)}
    - {"accent_shift_table", "speaker_timbre"},
    "model": {"preset", "fusion"},
    "train": {"regime", "lam", "fusion_mode", "lr", "batch_size", "max_epochs", "seed",
              "patience", "select_best", "spec_augment"},
    "degradation": {"theta", "mode", "seed", "hierarchy"},
    "probe": {"epochs", "lr", "batch_size", "val_fraction"},
    "experiment": None,  # checked against ExperimentConfig below
    "paths": {"manifest", "val_manifest", "lexicon", "hierarchy", "checkpoint", "reference",
              "init_acoustic", "out"},
}


def load_config_file(path: Optional[str]) -> dict:
    if not path:
        return {}
    try:
        cfg = json.loads(Path(path).read_text("utf-8"))
    except FileNotFoundError:
        raise UserError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise UserError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise UserError("config file must hold a JSON object")
    from .experiments import ExperimentConfig

    for section, value in cfg.items():
        if section not in CONFIG_SCHEMA:
            raise UserError(f"unknown config section {section!r}")
        allowed = CONFIG_SCHEMA[section]
        if section == "experiment":
            allowed = {f.name for f in dataclasses.fields(ExperimentConfig)}
        if allowed is None:
            continue
        if not isinstance(value, dict):
            raise UserError(f"config section {section!r} must be an object")
        unknown = sorted(set(value) - allowed)
        if unknown:
            raise UserError(f"unknown keys in config section {section!r}: {unknown}")
    return cfg


def derive_seed(seed: int, name: str) -> int:
    """Per-module seed derived deterministically from the global seed."""
    return int(np.random.SeedSequence([seed, zlib.crc32(name.encode())]).generate_state(1)[0] >> 1)


def _pick(flag, section: dict, key: str, default=None):
    """Explicit flag beats config file beats default."""
    if flag is not None:
        return flag
    return section.get(key, default)


def _jsonable(obj):
    if dataclasses.is_dataclass(obj):
        return {k: _jsonable(v) for k, v in dataclasses.asdict(obj).items()}
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, Path):
        return str(obj)
    if hasattr(obj, "value") and not isinstance(obj, (int, float)):
        return obj.value
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


class Run:
    def __init__(self, args, config: dict):
        self.args = args
        self.config = config
        self.seed = args.seed if args.seed is not None else int(config.get("seed", 0))
        root = Path(args.run_root or os.environ.get(RUN_ROOT_ENV) or "runs")
        stamp = time.strftime("%Y%m%d-%H%M%S")
        base = root / f"{stamp}-seed{self.seed}-{args.command}"
        path, n = base, 1
        while path.exists():
            path, n = Path(f"{base}-{n}"), n + 1
        path.mkdir(parents=True)
        self.dir = path
        self.resolved: dict[str, Any] = {"command": args.command, "seed": self.seed}

    def echo(self, **entries):
        self.resolved.update(entries)
        (self.dir / "config.json").write_text(json.dumps(_jsonable(self.resolved), indent=2, sort_keys=True))

    def section(self, name: str) -> dict:
        return self.config.get(name, {})


# ---------------------------------------------------------------------------
# shared loaders

def _corpus(path, accents=None, required=True):
    if path is None:
        if required:
            raise UserError("--manifest is required")
        return None
    if not Path(path).exists():
        raise UserError(f"manifest not found: {path}")
    return data_mod.load_manifest(path, accents=accents)


def _train_val(run: Run, args):
    paths = run.section("paths")
    train_c = _corpus(_pick(args.manifest, paths, "manifest"))
    val_path = _pick(args.val_manifest, paths, "val_manifest")
    if val_path:
        val_c = _corpus(val_path, accents=train_c.accents)
    elif args.val_speakers:
        train_c, val_c = data_mod.speaker_disjoint_split(train_c, args.val_speakers,
                                                         derive_seed(run.seed, "split"))
    else:
        val_c = None
    if len(train_c) == 0:
        raise UserError("training manifest is empty")
    return train_c, val_c


def _model_config(preset: str, fusion, n_accents: int):
    from .model import ModelConfig

    if preset not in MODEL_PRESETS:
        raise UserError(f"unknown model preset {preset!r}; choose from {MODEL_PRESETS}")
    return getattr(ModelConfig, preset)(fusion, n_accents=n_accents)


def _train_config(run: Run, args, regime=None):
    from .training import TrainConfig

    sec = run.section("train")
    return TrainConfig(
        regime=_pick(regime or getattr(args, "regime", None), sec, "regime", "mtl"),
        lam=_pick(getattr(args, "lam", None), sec, "lam", 0.1),
        fusion_mode=_pick(getattr(args, "fusion", None), sec, "fusion_mode", "concat_ca"),
        lr=_pick(args.lr, sec, "lr", 1e-4),
        batch_size=_pick(args.batch_size, sec, "batch_size", 16),
        max_epochs=_pick(args.epochs, sec, "max_epochs", 20),
        seed=_pick(None, sec, "seed", derive_seed(run.seed, "train")),
        patience=_pick(getattr(args, "patience", None), sec, "patience", None),
        select_best=sec.get("select_best", True),
    )


def _degradation(run: Run, args):
    from .degradation import DegradationConfig, DegradationMode, PhonemeHierarchy

    sec = run.section("degradation")
    random_mode = bool(getattr(args, "random", False)) or sec.get("mode") == "random"
    theta = _pick(getattr(args, "theta", None), sec, "theta", None)
    hpath = _pick(getattr(args, "hierarchy", None), sec, "hierarchy", None) \
        or run.section("paths").get("hierarchy")
    hierarchy = PhonemeHierarchy.load(hpath)
    if not random_mode and theta is None:
        return None, hierarchy
    cfg = DegradationConfig(theta=float(theta or 0.0),
                            mode=DegradationMode.RANDOM if random_mode else DegradationMode.HIERARCHY,
                            seed=sec.get("seed", derive_seed(run.seed, "degradation")))
    return cfg, hierarchy


def _load_recognizer(path):
    from .model import load_model

    if path is None:
        raise UserError("--checkpoint is required")
    if not Path(path).exists():
        raise UserError(f"checkpoint not found: {path}")
    return load_model(path)


def _acoustic_checkpoint(path):
    from .acoustic import load_acoustic

    if not Path(path).exists():
        raise UserError(f"acoustic checkpoint not found: {path}")
    return load_acoustic(path)


def _eval_corpus(model, path):
    accents = getattr(model, "extra", {}).get("accents")
    corpus = _corpus(path, accents=accents)
    if len(corpus) == 0:
        raise UserError(f"manifest {path} has no utterances; nothing to evaluate")
    return corpus


# ---------------------------------------------------------------------------
# subcommands

def cmd_synth(run: Run, args) -> None:
    sec = dict(run.section("corpus"))
    overrides = {"n_accents": args.n_accents, "n_speakers_per_accent": args.speakers_per_accent,
                 "n_utts_per_speaker": args.utts_per_speaker, "timbre_scale": args.timbre_scale,
                 "substitution_prob": args.substitution_prob}
    sec.update({k: v for k, v in overrides.items() if v is not None})
    sec.setdefault("seed", derive_seed(run.seed, "corpus"))
    if args.native:
        sec["substitution_prob"] = 0.0
    for key in ("words_per_utt", "frames_per_phoneme"):
        if key in sec:
            sec[key] = tuple(sec[key])
    spec = data_mod.SyntheticCorpusSpec(**sec)
    corpus = data_mod.generate_synthetic_corpus(spec)
    out = Path(args.out) if args.out else run.dir / "corpus"
    manifest = data_mod.write_corpus(corpus, out)
    run.echo(corpus=spec, out=out, manifest=manifest)
    print(manifest)


def cmd_features(run: Run, args) -> None:
    from .features import extract_fbank, read_wav, write_feature_file

    out = Path(args.out) if args.out else run.dir / "features"
    if not args.wav:
        raise UserError("give at least one WAV file")
    for wav in args.wav:
        if not Path(wav).exists():
            raise UserError(f"audio file not found: {wav}")
        pcm, rate = read_wav(wav)
        feats = extract_fbank(pcm, rate, utt_id=Path(wav).stem, normalize=args.normalize)
        write_feature_file(out / f"{Path(wav).stem}.fbk", feats)
    run.echo(out=out, wav=args.wav, normalize=args.normalize)
    print(out)


def cmd_pretrain_asr(run: Run, args) -> None:
    import torch

    from .acoustic import AcousticModel, save_acoustic
    from .training import pretrain_asr

    train_c, val_c = _train_val(run, args)
    preset = _pick(args.preset, run.section("model"), "preset", "small")
    mc = _model_config(preset, None, train_c.n_accents)
    cfg = _train_config(run, args, regime="asr_init")
    torch.manual_seed(cfg.seed)
    res = pretrain_asr(AcousticModel(mc.acoustic), train_c, val_c, cfg)
    ckpt = run.dir / "acoustic.pt"
    save_acoustic(ckpt, res.model, extra={"best_epoch": res.best_epoch, "best_per": res.best_per})
    with (run.dir / "pretrain_history.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_ctc", "val_per"])
        for i, (loss, per) in enumerate(res.history):
            w.writerow([i, repr(loss), repr(per)])
    run.echo(model_preset=preset, acoustic=mc.acoustic, train=cfg, manifest=args.manifest,
             val_manifest=args.val_manifest, val_speakers=args.val_speakers)
    print(ckpt)


def cmd_train(run: Run, args) -> None:
    from .degradation import degrade_corpus
    from .model import build_model, save_model
    from .training import Regime, train, write_accuracy_table

    paths = run.section("paths")
    train_c, val_c = _train_val(run, args)
    cfg = _train_config(run, args)
    degr, hierarchy = _degradation(run, args)
    if degr is not None:
        train_c = degrade_corpus(train_c, hierarchy, degr)
        val_c = degrade_corpus(val_c, hierarchy, degr) if val_c is not None else None
    preset = _pick(args.preset, run.section("model"), "preset", "small")
    hybrid = cfg.regime is Regime.HYBRID
    mc = _model_config(preset, cfg.fusion_mode if hybrid else None, train_c.n_accents)
    ref_path = _pick(args.reference, paths, "reference")
    init_path = _pick(args.init_acoustic, paths, "init_acoustic")
    if hybrid and not ref_path:
        raise UserError("--regime hybrid needs --reference (frozen acoustic checkpoint)")
    if cfg.regime in (Regime.ASR_INIT,) and not init_path:
        raise UserError("--regime asr_init needs --init-acoustic")
    reference = _acoustic_checkpoint(ref_path) if hybrid else None
    init = _acoustic_checkpoint(init_path) if init_path else None
    for name, am in (("reference", reference), ("init", init)):
        if am is not None and am.config.d_emb != mc.acoustic.d_emb:
            raise UserError(f"{name} checkpoint has d_emb {am.config.d_emb}, preset {preset!r} needs "
                            f"{mc.acoustic.d_emb}")
    model = build_model(mc, reference=reference, init_acoustic=init, seed=cfg.seed)
    if degr is not None and degr.mode.value == "hierarchy":
        model.am_t.reset_head(hierarchy.n_labels)
    metrics = train(model, train_c, val_c, cfg, metrics_csv=run.dir / "metrics.csv",
                    report_csv=run.dir / "epoch_report.csv" if val_c is not None else None)
    ckpt = run.dir / "model.pt"
    save_model(ckpt, model, extra={"accents": list(train_c.accents), "best_epoch": metrics.best_epoch})
    if metrics.epochs:
        write_accuracy_table(run.dir / "accuracy.csv",
                             [(cfg.regime.value, metrics.epochs[metrics.best_epoch])], train_c.accents)
    run.echo(model_preset=preset, model=mc, train=cfg, degradation=degr, manifest=args.manifest,
             val_manifest=args.val_manifest, val_speakers=args.val_speakers,
             reference=ref_path, init_acoustic=init_path)
    print(ckpt)


def cmd_evaluate(run: Run, args) -> None:
    from .training import evaluate, write_accuracy_table

    model = _load_recognizer(args.checkpoint)
    corpus = _eval_corpus(model, args.manifest)
    report = evaluate(model, corpus)
    out = run.dir / "accuracy.csv"
    write_accuracy_table(out, [(Path(args.checkpoint).stem, report)], corpus.accents)
    run.echo(checkpoint=args.checkpoint, manifest=args.manifest)
    print(f"accuracy {report.accuracy:.4f}  PER {report.per:.4f}  ({report.n} utterances)")
    print(out)


def cmd_degrade(run: Run, args) -> None:
    from .degradation import degrade_corpus, write_degraded_manifest

    corpus = _corpus(args.manifest)
    degr, hierarchy = _degradation(run, args)
    if degr is None:
        raise UserError("give --theta or --random")
    out = Path(args.out) if args.out else run.dir / "degraded.jsonl"
    # keep feature paths valid relative to the new manifest location
    for r in corpus.records:
        p = Path(r.features_path)
        if not p.is_absolute() and corpus.root is not None:
            r.features_path = str((corpus.root / p).resolve())
    write_degraded_manifest(degrade_corpus(corpus, hierarchy, degr), out, degr)
    run.echo(manifest=args.manifest, degradation=degr, out=out)
    print(out)


def _experiment_config(run: Run, args):
    from .experiments import ExperimentConfig

    sec = dict(run.section("experiment"))
    sec.setdefault("seed", run.seed)
    if getattr(args, "epochs", None) is not None:
        sec["epochs"] = args.epochs
    if getattr(args, "lr", None) is not None:
        sec["lr"] = args.lr
    return ExperimentConfig(**sec)


def cmd_robustness(run: Run, args) -> None:
    from .degradation import run_robustness_suite, write_robustness_table
    from .experiments import build_world, robustness_cell

    thetas = [float(t) for t in args.theta.split(",")] if args.theta else []
    if not thetas and not args.random:
        raise UserError("give --theta and/or --random")
    cfg = _experiment_config(run, args)
    world = build_world(cfg)
    rows = run_robustness_suite(robustness_cell(world), thetas, args.regimes.split(","),
                                include_random=args.random, seed=derive_seed(run.seed, "degradation"))
    out = run.dir / "robustness.csv"
    write_robustness_table(out, rows, list(world.val.accents))
    run.echo(experiment=cfg, thetas=thetas, random=args.random, regimes=args.regimes)
    for r in rows:
        status = "FAILED " + r.error if r.failed else f"{100 * r.accuracy:.1f}"
        print(f"{r.condition:>10} {r.regime:>7} {status}")
    print(out)


def cmd_probe_speaker(run: Run, args) -> None:
    from .probes import speaker_probe

    model = _load_recognizer(args.checkpoint)
    corpus = _eval_corpus(model, args.manifest)
    sec = run.section("probe")
    kw = dict(epochs=_pick(args.epochs, sec, "epochs", 20), lr=_pick(args.lr, sec, "lr", 1e-4),
              batch_size=sec.get("batch_size", 16), val_fraction=sec.get("val_fraction", 0.2),
              seed=derive_seed(run.seed, "probe"))
    res = speaker_probe(model, corpus, **kw)
    with (run.dir / "probe_loss.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "ce"])
        w.writerows([s, repr(v)] for s, v in res.loss_curve)
    with (run.dir / "probe_accuracy.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "accuracy"])
        w.writerows([e, repr(a)] for e, a in res.accuracy_curve)
    run.echo(checkpoint=args.checkpoint, manifest=args.manifest, probe=kw)
    print(f"speaker probe accuracy {res.final_accuracy:.4f} over {res.n_speakers} speakers")


def cmd_attention_report(run: Run, args) -> None:
    from .probes import attention_ratio, write_attention_report

    model = _load_recognizer(args.checkpoint)
    corpus = _eval_corpus(model, args.manifest)
    rep = attention_ratio(model, corpus)
    out = run.dir / "attention.csv"
    write_attention_report(out, rep)
    run.echo(checkpoint=args.checkpoint, manifest=args.manifest)
    print(f"rho {rep.ratio:.4f}")
    print(out)


def cmd_export_embeddings(run: Run, args) -> None:
    from .probes import export_embeddings

    model = _load_recognizer(args.checkpoint)
    corpus = _eval_corpus(model, args.manifest)
    out = run.dir / "embeddings.csv"
    export_embeddings(model, corpus, out)
    run.echo(checkpoint=args.checkpoint, manifest=args.manifest)
    print(out)


def cmd_report(run: Run, args) -> None:
    """Desk-scale trend experiments over several seeds on the synthetic corpus."""
    from .experiments import run_trends

    seeds = [int(s) for s in args.seeds.split(",")]
    cfg = _experiment_config(run, args)
    out = run.dir / "trends.csv"
    fields = None
    with out.open("w", newline="") as fh:
        w = csv.writer(fh)

        def on_seed(result):
            nonlocal fields
            row = dataclasses.asdict(result)
            if fields is None:
                fields = list(row)
                w.writerow(fields)
            w.writerow([repr(row[k]) if isinstance(row[k], float) else row[k] for k in fields])
            fh.flush()

        report = run_trends(seeds, cfg, on_seed)
    run.echo(experiment=cfg, seeds=seeds)
    keys = ["ar_only", "mtl", "probe_ar_only", "probe_mtl", "mtl_random", "hybrid_random",
            "rho_normal", "rho_random"]
    for k in keys:
        print(f"median {k:>14}: {report.median(k):.4f}")
    for name, ok in (("A", report.trend_a), ("B", report.trend_b), ("C", report.trend_c)):
        print(f"trend {name}: {'PASS' if ok else 'FAIL'}")
    print(out)


COMMANDS = {
    "synth": cmd_synth,
    "features": cmd_features,
    "pretrain-asr": cmd_pretrain_asr,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "degrade": cmd_degrade,
    "robustness": cmd_robustness,
    "probe-speaker": cmd_probe_speaker,
    "attention-report": cmd_attention_report,
    "export-embeddings": cmd_export_embeddings,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="global seed (default 0)")
    common.add_argument("--run-root", default=None, help=f"run directory root (default ${RUN_ROOT_ENV} or ./runs)")
    common.add_argument("--config", default=None, help="JSON config file; explicit flags win")
    common.add_argument("--log-level", default="INFO")

    parser = _Parser(prog="hybrid-ar", description="Hybrid phonetic-feature accent recognition.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help_):
        return sub.add_parser(name, help=help_, parents=[common])

    def data_flags(p, val=True):
        p.add_argument("--manifest", default=None)
        if val:
            p.add_argument("--val-manifest", default=None)
            p.add_argument("--val-speakers", type=int, default=None,
                           help="hold out N speakers per accent instead of --val-manifest")

    def optim_flags(p):
        p.add_argument("--epochs", type=int, default=None)
        p.add_argument("--lr", type=float, default=None)
        p.add_argument("--batch-size", type=int, default=None)
        p.add_argument("--preset", choices=MODEL_PRESETS, default=None)

    p = add("synth", "generate a synthetic accented corpus")
    p.add_argument("--out", default=None)
    p.add_argument("--n-accents", type=int, default=None)
    p.add_argument("--speakers-per-accent", type=int, default=None)
    p.add_argument("--utts-per-speaker", type=int, default=None)
    p.add_argument("--timbre-scale", type=float, default=None)
    p.add_argument("--substitution-prob", type=float, default=None)
    p.add_argument("--native", action="store_true", help="no accent substitutions")

    p = add("features", "extract log-mel filterbanks from 16 kHz WAV files")
    p.add_argument("wav", nargs="*")
    p.add_argument("--out", default=None)
    p.add_argument("--normalize", action="store_true")

    p = add("pretrain-asr", "CTC-pretrain an acoustic model")
    data_flags(p)
    optim_flags(p)
    p.add_argument("--patience", type=int, default=None)

    p = add("train", "train an accent recognizer")
    data_flags(p)
    optim_flags(p)
    p.add_argument("--regime", choices=["ar_only", "asr_init", "mtl", "hybrid"], default=None)
    p.add_argument("--fusion", choices=["add", "concat", "concat_ca"], default=None)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--reference", default=None, help="frozen reference acoustic checkpoint")
    p.add_argument("--init-acoustic", default=None, help="acoustic checkpoint to initialise from")
    p.add_argument("--theta", type=float, default=None, help="degrade CTC targets")
    p.add_argument("--random", action="store_true", help="random CTC targets")
    p.add_argument("--hierarchy", default=None)

    p = add("evaluate", "per-accent validation accuracy of a checkpoint")
    p.add_argument("--checkpoint", default=None)
    data_flags(p, val=False)

    p = add("degrade", "write a manifest with degraded CTC targets")
    data_flags(p, val=False)
    p.add_argument("--theta", type=float, default=None)
    p.add_argument("--random", action="store_true")
    p.add_argument("--hierarchy", default=None)
    p.add_argument("--out", default=None)

    p = add("robustness", "transcription-robustness table on the synthetic corpus")
    p.add_argument("--theta", default="", help="comma-separated, e.g. 0,0.5,1")
    p.add_argument("--random", action="store_true")
    p.add_argument("--regimes", default="mtl,hybrid")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)

    p = add("probe-speaker", "linear speaker probe on a frozen recognizer")
    p.add_argument("--checkpoint", default=None)
    data_flags(p, val=False)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)

    for name, help_ in (("attention-report", "channel-attention ratio of a hybrid model"),
                        ("export-embeddings", "dump pooled utterance embeddings")):
        p = add(name, help_)
        p.add_argument("--checkpoint", default=None)
        data_flags(p, val=False)

    p = add("report", "desk-scale trend experiments over several seeds")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO),
                            format="%(asctime)s %(name)s %(levelname)s %(message)s")
        config = load_config_file(args.config)
        run = Run(args, config)
        run.echo(argv=argv, config_file=args.config, run_dir=run.dir)
        COMMANDS[args.command](run, args)
        return 0
    except UserError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except (HybridARError, FileNotFoundError, ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception:  # noqa: BLE001 - last-resort handler maps bugs to exit code 2
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
