"""Command line: hop-gesture {synth-data|train|generate|evaluate|inspect} --config PATH [--out DIR] [--seed N] [--quiet]

Experiments are defined by JSON config files; flags only carry paths, the
seed override and verbosity.  Exit codes: 0 ok, 2 usage/config error,
3 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import tensor as T
from .audio import AudioError
from .checkpoint import CheckpointError, config_hash, directory_hash
from .data import (DatasetError, SyntheticCorpusSpec, corpus_hash, load_clips, load_pose_json, read_manifest,
                   save_pose_csv, save_pose_json, synthesize_corpus, write_corpus)
from .graph import TopologyError
from .metrics import (BeatConfig, ExtractorConfig, FeatureExtractor, MetricError, diversity, fgd,
                      fit_feature_extractor, mean_beat_consistency)
from .model import ConfigError, ModelConfig, clip_features
from .reprogram import EmbeddingFileError
from .tensor import NonFiniteError, ShapeError
from .train import (TrainingConfig, TrainingDivergedError, alignment_score, generate_clips, load_checkpoint,
                    prepare_features, train)

log = logging.getLogger("hop_gesture")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3
INSPECT_KEYS = ("adjacency", "attention", "alignment", "mel")
USAGE_ERRORS = (ConfigError, DatasetError, CheckpointError, TopologyError, AudioError, ShapeError,
                EmbeddingFileError, MetricError, KeyError, OSError, json.JSONDecodeError)


class UsageError(ValueError):
    pass


def _load_config(path) -> tuple[dict, Path, str]:
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"config file not found: {path}")
    try:
        cfg = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    if not isinstance(cfg, dict):
        raise UsageError(f"{path}: top level must be a JSON object")
    return cfg, path.parent, config_hash(cfg)


def _resolve(base: Path, p) -> Path | None:
    if p is None:
        return None
    p = Path(p)
    return p if p.is_absolute() else base / p


def _out_dir(args, cfg: dict, base: Path, default: str) -> Path:
    out = Path(args.out) if args.out else _resolve(base, cfg.get("out", default))
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise UsageError(f"output directory {out} is not writable ({exc.strerror})") from None
    return out


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_synth_data(args) -> int:
    cfg, base, chash = _load_config(args.config)
    spec_dict = dict(cfg.get("synthetic", cfg))
    spec_dict.pop("out", None)
    if args.seed is not None:
        spec_dict["seed"] = args.seed
    try:
        spec = SyntheticCorpusSpec(**spec_dict)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid corpus spec: {exc}") from None
    out = _out_dir(args, cfg, base, "corpus")
    corpus = synthesize_corpus(spec)
    manifest = write_corpus(corpus, out)
    info = json.loads((out / "corpus.json").read_text())
    info["config_hash"] = chash
    _write_json(out / "corpus.json", info)
    log.info("wrote %d clips to %s", len(corpus.clips), manifest)
    print(corpus.hash)
    return EXIT_OK


def _run_configs(cfg: dict, seed: int | None) -> tuple[ModelConfig, TrainingConfig]:
    model_cfg = ModelConfig.from_dict(cfg.get("model", {"preset": "toy"}))
    tdict = dict(cfg.get("training", {}))
    if seed is not None:
        tdict["seed"] = seed
    return model_cfg, TrainingConfig.from_dict(tdict)


def cmd_train(args) -> int:
    cfg, base, chash = _load_config(args.config)
    model_cfg, train_cfg = _run_configs(cfg, args.seed)
    manifest = _resolve(base, cfg.get("data", {}).get("manifest"))
    if manifest is None:
        raise UsageError("train config needs data.manifest")
    load_clips(manifest, check_only=True)
    out = _out_dir(args, cfg, base, "run")
    clips = load_clips(manifest, train_cfg.window_frames, train_cfg.window_stride, model_cfg.sample_rate)
    resume = _resolve(base, cfg.get("resume"))
    result = train(model_cfg, train_cfg, clips, out, resume_from=resume, quiet=args.quiet)
    summary = dict(result.summary)
    summary["run_config_hash"] = chash
    _write_json(out / "train_summary.json", summary)
    print(summary["final_checkpoint"])
    return EXIT_OK


def cmd_generate(args) -> int:
    cfg, base, chash = _load_config(args.config)
    ckpt = _resolve(base, cfg.get("checkpoint"))
    manifest = _resolve(base, cfg.get("manifest"))
    if ckpt is None or manifest is None:
        raise UsageError("generate config needs 'checkpoint' and 'manifest'")
    model, meta, _ = load_checkpoint(ckpt)
    mode = cfg.get("seed_mode", meta["training"].get("inference_seed", "previous"))
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    formats = cfg.get("formats", ["json", "csv"])
    load_clips(manifest, check_only=True)
    out = _out_dir(args, cfg, base, "generated")
    clips = load_clips(manifest, model.cfg.frames, meta["training"].get("window_stride", 10), model.cfg.sample_rate)
    for c in clips:
        if not c.tokens:
            log.warning("clip %s has no transcript; generating from audio only", c.id)
        if c.speaker not in model.style.index:
            raise UsageError(f"clip {c.id}: speaker {c.speaker!r} unknown to the checkpoint "
                             f"(known: {model.style.speakers})")
        if c.poses.shape[1] != model.cfg.joints:
            raise UsageError(f"clip {c.id}: {c.poses.shape[1]} joints, checkpoint expects {model.cfg.joints}")
    feats = [clip_features(c, model.cfg, model.vocab) for c in clips]
    poses = generate_clips(model, feats, seed, mode)
    names = model.cfg.topology().names
    for c, p in zip(clips, poses):
        if "json" in formats:
            save_pose_json(out / f"{c.id}.json", p, c.fps, names)
        if "csv" in formats:
            save_pose_csv(out / f"{c.id}.csv", p, names)
    _write_json(out / "generation.json", {"config_hash": chash, "checkpoint_hash": directory_hash(ckpt),
                                          "clips": [c.id for c in clips], "seed": seed, "seed_mode": mode})
    log.info("generated %d clips into %s", len(clips), out)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg, base, chash = _load_config(args.config)
    manifest = _resolve(base, cfg.get("real_manifest"))
    gen_dir = _resolve(base, cfg.get("generated"))
    if manifest is None or gen_dir is None:
        raise UsageError("evaluate config needs 'real_manifest' and 'generated'")
    real_clips = load_clips(manifest, int(cfg.get("frames", 34)), int(cfg.get("stride", 10)))
    missing = [c.id for c in real_clips if not (gen_dir / f"{c.id}.json").is_file()]
    if missing:
        raise UsageError(f"generated poses missing for {len(missing)} clip ids: {missing}")
    gen = [load_pose_json(gen_dir / f"{c.id}.json")[0] for c in real_clips]
    real = [c.poses for c in real_clips]
    fx_path = _resolve(base, cfg.get("extractor", "extractor"))
    if (fx_path / "manifest.json").is_file():
        fx = FeatureExtractor.load(fx_path)
    else:
        ecfg = dict(cfg.get("extractor_config", {}))
        ecfg.setdefault("joints", real[0].shape[1])
        fx, hist = fit_feature_extractor(real, ExtractorConfig(**ecfg))
        fx.save(fx_path)
        log.info("fitted feature extractor (loss %.5f -> %.5f)", hist[0], hist[-1])
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    beat_cfg = BeatConfig(**cfg.get("beat", {}))
    fps = real_clips[0].fps
    report = {
        "fgd": fgd(real, gen, fx),
        "bc": mean_beat_consistency([c.waveform for c in real_clips], gen, fps, beat_cfg),
        "diversity": diversity(gen, int(cfg.get("diversity_pairs", 500)), seed),
        "config": cfg, "config_hash": chash,
        "corpus_hash": corpus_hash(real_clips), "extractor_hash": directory_hash(fx_path),
    }
    out = _resolve(base, cfg.get("report")) if cfg.get("report") else _out_dir(args, cfg, base, "eval") / "report.json"
    if args.out and not cfg.get("report"):
        out = Path(args.out) / "report.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_json(out, report)
    print(json.dumps({k: report[k] for k in ("fgd", "bc", "diversity")}))
    return EXIT_OK


def cmd_inspect(args) -> int:
    cfg, base, chash = _load_config(args.config)
    what = cfg.get("what")
    if what not in INSPECT_KEYS:
        raise UsageError(f"unknown dump key {what!r}; valid keys: {', '.join(INSPECT_KEYS)}")
    ckpt = _resolve(base, cfg.get("checkpoint"))
    if ckpt is None:
        raise UsageError("inspect config needs 'checkpoint'")
    model, meta, _ = load_checkpoint(ckpt)
    dump = {"what": what, "config_hash": chash, "checkpoint_hash": directory_hash(ckpt), "epoch": meta["epoch"]}
    if what == "adjacency":
        with T.no_grad():
            a = model.encoder.adjacency().data
        dump.update(shape=list(a.shape), values=a.tolist(), joints=model.cfg.topology().names)
    else:
        manifest = _resolve(base, cfg.get("manifest"))
        if manifest is None:
            raise UsageError(f"inspect {what} needs 'manifest'")
        clips = load_clips(manifest, model.cfg.frames, 10, model.cfg.sample_rate)
        if what == "alignment":
            feats = prepare_features(clips, model.cfg, model.vocab)
            dump.update(mean_cosine=alignment_score(model, feats), clips=len(feats))
        else:
            cid = cfg.get("clip", clips[0].id)
            match = [c for c in clips if c.id == cid]
            if not match:
                raise UsageError(f"clip {cid!r} not in {manifest}")
            f = clip_features(match[0], model.cfg, model.vocab)
            if what == "mel":
                dump.update(clip=cid, shape=list(f.mel.shape), values=f.mel.reshape(-1).tolist())
            else:
                with T.no_grad():
                    attn, _ = model.reprogram.attention(f.mel[None], model.prototypes())
                a = attn.data[0]                              # (heads, P, V')
                dump.update(clip=cid, shape=list(a.shape), values=a.reshape(-1).tolist())
    out = _out_dir(args, cfg, base, "inspect") / f"inspect_{what}.json"
    _write_json(out, dump)
    print(out)
    return EXIT_OK


COMMANDS = {"synth-data": cmd_synth_data, "train": cmd_train, "generate": cmd_generate,
            "evaluate": cmd_evaluate, "inspect": cmd_inspect}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hop-gesture", description="co-speech gesture toolkit")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="JSON config file")
    p.add_argument("--out", help="output directory (overrides the config's 'out')")
    p.add_argument("--seed", type=int, help="seed override")
    p.add_argument("--quiet", action="store_true", help="only print warnings and errors")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (TrainingDivergedError, NonFiniteError, FloatingPointError) as exc:
        op = getattr(exc, "op", None)
        print(f"error: numeric failure{f' in op {op!r}' if op else ''}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
