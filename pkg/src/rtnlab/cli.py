"""Command-line entry point: ``rtnlab <subcommand> [options]``.

Exit codes: 0 success, 1 verification failure, 2 configuration error,
3 data error, 4 checkpoint error.  Human-readable tables go to stdout,
machine-readable JSON goes to files, and diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import audiofeat, textfeat
from .dataio import (SegmentRecord, SynthConfig, VideoSequence, feature_dims, gen_synthetic,
                     load_dataset, write_dataset)
from .errors import CheckpointError, ConfigError, DataError, DimensionError
from .evalmetrics import evaluate_model, fmt, format_table, majority_baseline
from .fusion import MODALITIES
from .models import ModelConfig, build_model, load_checkpoint, save_checkpoint
from .trainer import GRADCHECK_TOL, TrainConfig, gradcheck_suite, train

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_DATA, EXIT_CHECKPOINT = 0, 1, 2, 3, 4

MODEL_KEYS = ("variant", "modality_input_dims", "modality_embed_dims", "lstm_hidden", "head_hidden")


def default_config():
    """The full configuration document with every default filled in."""
    model = ModelConfig()
    return {
        "seed": 0,
        "synth": {k: v for k, v in SynthConfig().to_dict().items() if k != "seed"},
        "model": {k: getattr(model, k) for k in MODEL_KEYS},
        "train": {k: v for k, v in TrainConfig().to_dict().items() if k != "seed"},
        "compare": {"variants": ["early_fusion", "tfn", "rtn"], "seeds": [0, 1, 2, 3, 4]},
        "features": {
            "lexicon": False, "rule_score": False, "contextual": False,
            "word_vectors": None, "lexicon_path": None, "valence": None,
            "boosters": None, "negators": None,
        },
        "audio": {"ubm_components": 8, "ubm_iters": 20, "ivector_rank": 10, "tv_iters": 10},
    }


# -- configuration document ---------------------------------------------------------

def _merge(base, override, path=""):
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(where, "unknown key")
        if isinstance(base[key], dict) and key not in ("modality_input_dims", "modality_embed_dims", "dims"):
            if not isinstance(value, dict):
                raise ConfigError(where, "expected an object")
            _merge(base[key], value, where)
        else:
            base[key] = value


def _parse_override(text):
    key, sep, raw = text.partition("=")
    if not sep or not key:
        raise ConfigError(text, "--set expects KEY=VALUE")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    doc = value
    for part in reversed(key.split(".")):
        doc = {part: doc}
    return doc


def load_config(path=None, overrides=(), seed=None):
    """Defaults, then the JSON file at ``path``, then ``--set`` overrides, then ``--seed``."""
    cfg = default_config()
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
        except FileNotFoundError:
            raise ConfigError("--config", f"file not found: {path}") from None
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError("--config", f"cannot read {path}: {e}") from None
        if not isinstance(doc, dict):
            raise ConfigError("--config", "top level must be an object")
        _merge(cfg, doc)
    for text in overrides:
        _merge(cfg, _parse_override(text))
    if seed is not None:
        cfg["seed"] = seed
    validate_config(cfg)
    return cfg


def _section(fn, doc, prefix):
    try:
        return fn(doc)
    except TypeError as e:
        raise ConfigError(prefix, str(e)) from None
    except ConfigError as e:
        if e.field.startswith(prefix + "."):
            raise
        raise ConfigError(f"{prefix}.{e.field}", str(e).partition(": ")[2]) from None


def synth_config(cfg):
    return _section(lambda d: SynthConfig(**d, seed=cfg["seed"]).validate(), cfg["synth"], "synth")


def train_config(cfg, seed=None):
    s = cfg["seed"] if seed is None else seed
    return _section(lambda d: TrainConfig(**d, seed=s).validate(), cfg["train"], "train")


def model_config(cfg, input_dims, variant=None, seed=None):
    doc = dict(cfg["model"])
    declared = doc.get("modality_input_dims") or {}
    for m, d in declared.items():
        if m in input_dims and input_dims[m] != d:
            raise DimensionError(f"model.modality_input_dims.{m} is {d} but the dataset has {input_dims[m]}")
    doc["modality_input_dims"] = {**input_dims, **declared}
    if variant is not None:
        doc["variant"] = variant
    s = cfg["seed"] if seed is None else seed
    return _section(lambda d: ModelConfig(**d, seed=s).validate(), doc, "model")


def validate_config(cfg):
    if not isinstance(cfg["seed"], int) or isinstance(cfg["seed"], bool) or cfg["seed"] < 0:
        raise ConfigError("seed", f"must be a non-negative integer, got {cfg['seed']!r}")
    synth_config(cfg)
    train_config(cfg)
    # input sizes usually come from the dataset, so only check the rest here
    placeholder = {m: 1 for m in MODALITIES}
    _section(lambda d: ModelConfig(**{**d, "modality_input_dims": {**placeholder, **(d["modality_input_dims"] or {})}})
             .validate(), cfg["model"], "model")
    cmp_ = cfg["compare"]
    if not isinstance(cmp_["variants"], list) or len(cmp_["variants"]) < 2:
        raise ConfigError("compare.variants", "need at least 2 variants")
    if not isinstance(cmp_["seeds"], list) or not cmp_["seeds"] or not all(
            isinstance(s, int) and not isinstance(s, bool) for s in cmp_["seeds"]):
        raise ConfigError("compare.seeds", "must be a non-empty list of integers")
    feats = cfg["features"]
    for flag in ("lexicon", "rule_score", "contextual"):
        if not isinstance(feats[flag], bool):
            raise ConfigError(f"features.{flag}", "must be true or false")
    for key in ("word_vectors", "lexicon_path", "valence", "boosters", "negators"):
        p = feats[key]
        if p is not None and not os.path.isfile(p):
            raise ConfigError(f"features.{key}", f"file not found: {p}")
    if feats["lexicon"] and feats["lexicon_path"] is None:
        raise ConfigError("features.lexicon_path", "required when features.lexicon is true")
    for key, value in cfg["audio"].items():
        if not isinstance(value, int) or isinstance(value, bool) or value < 1:
            raise ConfigError(f"audio.{key}", f"must be a positive integer, got {value!r}")


def config_hash(doc) -> str:
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(doc, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def _dataset_files(path):
    """(train, val) file paths for a dataset directory."""
    p = Path(path)
    if not p.is_dir():
        raise DataError(f"dataset directory not found: {path}")
    return p / "train.jsonl", p / "val.jsonl"


def _load_eval_set(path, lenient):
    p = Path(path)
    if p.is_dir():
        p = p / "val.jsonl"
    videos = load_dataset(p, lenient)
    if not videos:
        raise DataError(f"dataset {p} is empty")
    return videos


# -- subcommands ----------------------------------------------------------------------

def cmd_gen_data(cfg, args):
    scfg = synth_config(cfg)
    train_v, val_v = gen_synthetic(scfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    for name, videos in (("train.jsonl", train_v), ("val.jsonl", val_v)):
        write_dataset(videos, out / name)
        files[name] = {"records": sum(len(v) for v in videos), "videos": len(videos),
                       "sha256": file_sha256(out / name)}
    manifest = {"seed": cfg["seed"], "config_hash": config_hash(scfg.to_dict()),
                "synth": scfg.to_dict(), "files": files}
    _write_json(manifest, out / "manifest.json")
    print(f"wrote {files['train.jsonl']['records']} train and {files['val.jsonl']['records']} "
          f"val segments to {out}")
    return EXIT_OK


def _train_one(cfg, train_v, val_v, variant=None, seed=None):
    mcfg = model_config(cfg, feature_dims(train_v + val_v), variant, seed)
    model = build_model(mcfg)
    best, tlog = train(model, train_v, val_v, train_config(cfg, seed))
    return best, tlog


def cmd_train(cfg, args):
    tr_path, va_path = _dataset_files(args.data)
    train_v = load_dataset(tr_path, args.lenient)
    val_v = load_dataset(va_path, args.lenient)
    if not train_v or not val_v:
        raise DataError(f"dataset {args.data} has an empty split")
    best, tlog = _train_one(cfg, train_v, val_v)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(best, out)
    with open(out.with_suffix(".trainlog.json"), "w", encoding="utf-8") as fh:
        fh.write(tlog.to_json() + "\n")
    report = evaluate_model(best, val_v)
    print(format_table([(best.cfg.variant, report)]))
    print(f"\nbest epoch {tlog.best_epoch}, stopped: {tlog.stop_reason}; checkpoint {out}")
    return EXIT_OK


def cmd_eval(cfg, args):
    model = load_checkpoint(args.checkpoint)
    videos = _load_eval_set(args.data, args.lenient)
    dims = feature_dims(videos)
    for m in model.cfg.modalities:
        want = model.cfg.modality_input_dims[m]
        if dims[m] != want:
            raise DimensionError(f"checkpoint expects {m} size {want}, dataset has {dims[m]}")
    report = evaluate_model(model, videos)
    ckpt = Path(args.checkpoint)
    out = ckpt.with_name(f"{ckpt.stem}.{Path(args.data).stem}.metrics.json")
    _write_json(report.to_dict(), out)
    print(format_table([(model.cfg.variant, report)]))
    return EXIT_OK


def _compare_cell(job):
    cfg, train_v, val_v, variant, seed = job
    best, _ = _train_one(cfg, train_v, val_v, variant, seed)
    return evaluate_model(best, val_v)


def summarize(reports):
    """Mean and spread (population std) of every metric over ``reports``."""
    fields = ("binary_acc", "binary_f1", "acc7", "f1_7_weighted", "sentiment_mae")
    mean = {f: float(np.mean([getattr(r, f) for r in reports])) for f in fields}
    spread = {f: float(np.std([getattr(r, f) for r in reports])) for f in fields}
    emo = np.array([r.emotion_mae for r in reports])
    mean["emotion_mae"] = emo.mean(axis=0).tolist()
    spread["emotion_mae"] = emo.std(axis=0).tolist()
    return mean, spread


def format_comparison(rows, show_spread):
    headers = ("Bin Acc", "Bin F1", "7cl Acc", "7cl F1", "MAE")
    fields = ("binary_acc", "binary_f1", "acc7", "f1_7_weighted", "sentiment_mae")
    cell = 17 if show_spread else 8
    width = max([len("Variant")] + [len(r[0]) for r in rows])
    lines = ["Variant".ljust(width) + "  " + "  ".join(h.rjust(cell) for h in headers)]
    for label, mean, spread in rows:
        vals = []
        for f in fields:
            text = fmt(mean[f])
            if show_spread and spread is not None:
                text += " ± " + fmt(spread[f])
            vals.append(text.rjust(cell))
        lines.append(label.ljust(width) + "  " + "  ".join(vals))
    return "\n".join(lines)


def cmd_compare(cfg, args):
    variants = args.variants.split(",") if args.variants else cfg["compare"]["variants"]
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else cfg["compare"]["seeds"]
    if len(variants) < 2:
        raise ConfigError("compare.variants", "need at least 2 variants")
    tr_path, va_path = _dataset_files(args.data)
    train_v = load_dataset(tr_path, args.lenient)
    val_v = load_dataset(va_path, args.lenient)
    if not train_v or not val_v:
        raise DataError(f"dataset {args.data} has an empty split")
    # validate every cell's configuration before spending time on training
    for v in variants:
        model_config(cfg, feature_dims(train_v + val_v), v)
    jobs = [(cfg, train_v, val_v, v, s) for v in variants for s in seeds]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            reports = list(pool.map(_compare_cell, jobs))
    else:
        reports = [_compare_cell(j) for j in jobs]
    rows, doc = [], {"variants": {}, "seeds": seeds}
    for i, v in enumerate(variants):
        cell = reports[i * len(seeds):(i + 1) * len(seeds)]
        mean, spread = summarize(cell)
        rows.append((v, mean, spread))
        doc["variants"][v] = {"mean": mean, "spread": spread, "runs": [r.to_dict() for r in cell]}
    base = majority_baseline(train_v, val_v).to_dict()
    rows.append(("majority", base, None))
    doc["majority"] = base
    print(format_comparison(rows, show_spread=len(seeds) > 1))
    if args.out:
        _write_json(doc, args.out)
    return EXIT_OK


def _write_features(features, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for utt in sorted(features):
            fh.write(json.dumps({"utt": utt, "features": features[utt].tolist()}, allow_nan=False) + "\n")


def _require_file(path, flag):
    if path is None:
        raise ConfigError(flag, "required for this mode")
    if not os.path.isfile(path):
        raise ConfigError(flag, f"file not found: {path}")


def _check_nonempty(utts):
    for utt, mat in utts.items():
        if mat.shape[0] == 0:
            raise DataError(f"utterance {utt!r} has no frames")


def cmd_extract_audio(cfg, args):
    acfg = cfg["audio"]
    if args.mode == "phoneme":
        _require_file(args.posteriors, "--posteriors")
        _require_file(args.state_map, "--state-map")
        posts = audiofeat.dnn_posterior_ingest(args.posteriors)
        _check_nonempty(posts)
        smap = audiofeat.read_state_map(args.state_map, args.n_phones)
        feats = {utt: audiofeat.phoneme_features(P, smap) for utt, P in posts.items()}
    else:
        _require_file(args.frames, "--frames")
        frames = audiofeat.read_frames(args.frames)
        _check_nonempty(frames)
        if args.posteriors is not None:
            _require_file(args.posteriors, "--posteriors")
            posts = audiofeat.dnn_posterior_ingest(args.posteriors)
            missing = sorted(set(frames) - set(posts))
            if missing:
                raise DataError(f"no posteriors for utterance {missing[0]!r}")
        else:
            posts = None
        if args.fit:
            stacked = np.vstack([frames[u] for u in sorted(frames)])
            if posts is not None:
                ubm = audiofeat.ubm_from_posteriors(stacked, np.vstack([posts[u] for u in sorted(frames)]))
            else:
                ubm = audiofeat.ubm_fit(stacked, acfg["ubm_components"], acfg["ubm_iters"], cfg["seed"]).ubm
        else:
            _require_file(args.ubm, "--ubm")
            ubm = audiofeat.load_ubm(args.ubm)

        def occupancy(utt):
            return posts[utt] if posts is not None else audiofeat.gmm_posteriors(ubm, frames[utt])
        stats = {u: audiofeat.bw_stats(occupancy(u), frames[u], ubm) for u in sorted(frames)}
        if args.fit:
            rank = args.rank or acfg["ivector_rank"]
            if rank > ubm.n_components * ubm.dim:
                raise ConfigError("audio.ivector_rank", f"{rank} exceeds C*D = {ubm.n_components * ubm.dim}")
            tv = audiofeat.tv_train([stats[u] for u in sorted(stats)], ubm, rank,
                                    acfg["tv_iters"], cfg["seed"]).model
            if args.ubm:
                audiofeat.save_json(ubm, args.ubm)
            if args.tv:
                audiofeat.save_json(tv, args.tv)
        else:
            _require_file(args.tv, "--tv")
            tv = audiofeat.load_tv(args.tv)
        feats = {u: audiofeat.extract_ivector(stats[u], tv, ubm) for u in stats}
    _write_features(feats, args.out)
    print(f"wrote {len(feats)} {args.mode} vectors of length "
          f"{len(next(iter(feats.values()))) if feats else 0} to {args.out}")
    return EXIT_OK


def _read_keyed_jsonl(path, field):
    """JSON Lines keyed by (video_id, segment_index) -> the value of ``field``."""
    out = {}
    try:
        fh = open(path, encoding="utf-8")
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e
    with fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
                out[(doc["video_id"], doc["segment_index"])] = doc[field]
            except (json.JSONDecodeError, KeyError, TypeError):
                raise DataError(f"{path} line {lineno}: expected video_id, segment_index and {field}") from None
    return out


def cmd_extract_text(cfg, args):
    feats = cfg["features"]
    wv_path = args.word_vectors or feats["word_vectors"]
    _require_file(wv_path, "--word-vectors")
    _require_file(args.tokens, "--tokens")
    word_vectors = textfeat.load_word_vectors(wv_path)
    tokens = _read_keyed_jsonl(args.tokens, "tokens")
    lex = textfeat.load_lexicon(feats["lexicon_path"]) if feats["lexicon"] else None
    contextual = None
    if feats["contextual"]:
        _require_file(args.contextual, "--contextual")
        contextual = _read_keyed_jsonl(args.contextual, "vectors")
    rule_cfg = None
    if feats["rule_score"]:
        kwargs = {}
        if feats["valence"]:
            kwargs["valence"] = textfeat.load_valence(feats["valence"])
        if feats["boosters"]:
            kwargs["boosters"] = textfeat.load_word_list(feats["boosters"])
        if feats["negators"]:
            kwargs["negators"] = textfeat.load_word_list(feats["negators"])
        rule_cfg = textfeat.RuleScorerConfig(**kwargs)
    videos = load_dataset(args.data, args.lenient)
    out = []
    for v in videos:
        segs = []
        for s in v.segments:
            key = (v.video_id, s.segment_index)
            if key not in tokens:
                raise DataError(f"no tokens for video {v.video_id!r} segment {s.segment_index}")
            try:
                text = textfeat.segment_text_vector(tokens[key], word_vectors, lex,
                                                    contextual[key] if contextual is not None else None,
                                                    rule_cfg)
            except (DataError, KeyError) as e:
                raise DataError(f"video {v.video_id!r} segment {s.segment_index}: {e}") from None
            segs.append(SegmentRecord(s.video_id, s.segment_index, s.audio, s.video, text,
                                      s.sentiment, s.emotions))
        out.append(VideoSequence(v.video_id, segs))
    write_dataset(out, args.out)
    print(f"wrote {sum(len(v) for v in out)} segments with text vectors of length "
          f"{out[0].segments[0].text.size if out else 0} to {args.out}")
    return EXIT_OK


def cmd_gradcheck(cfg, args):
    results = gradcheck_suite(draws=args.draws, seed=cfg["seed"], corrupt=args.inject_fault)
    width = max(len(k) for k in results)
    print("Component".ljust(width) + "  " + "worst rel err".rjust(13) + "  result")
    failing = []
    for name, err in results.items():
        ok = err < GRADCHECK_TOL
        if not ok:
            failing.append(name)
        print(name.ljust(width) + "  " + f"{err:13.3e}" + "  " + ("pass" if ok else "FAIL"))
    if failing:
        print(f"gradient check failed for: {', '.join(failing)}", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


# -- argument parsing --------------------------------------------------------------------

def _add_global_flags(parser, suppress):
    # Subparsers repeat the global flags so they work after the subcommand too;
    # there they default to SUPPRESS so they cannot reset a value given earlier.
    def default(value):
        return argparse.SUPPRESS if suppress else value
    parser.add_argument("--config", metavar="PATH", default=default(None), help="JSON configuration document")
    parser.add_argument("--seed", type=int, default=default(None), help="base seed (overrides the config)")
    parser.add_argument("--set", dest="late_overrides" if suppress else "overrides", action="append",
                        default=default([]), metavar="K=V",
                        help="override a config value by dotted key; repeatable")
    parser.add_argument("--lenient", action="store_true", default=default(False),
                        help="ignore unknown fields in dataset files")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    _add_global_flags(common, suppress=True)

    parser = argparse.ArgumentParser(prog="rtnlab",
                                     description="Multimodal sentiment models and feature extraction.")
    _add_global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="write a planted synthetic dataset")
    p.add_argument("--out", required=True, metavar="DIR")

    p = sub.add_parser("train", parents=[common], help="train one model")
    p.add_argument("--data", required=True, metavar="DIR", help="directory with train.jsonl and val.jsonl")
    p.add_argument("--out", required=True, metavar="CHECKPOINT")

    p = sub.add_parser("eval", parents=[common], help="score a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="dataset file, or a directory (uses val.jsonl)")

    p = sub.add_parser("compare", parents=[common], help="train several variants over several seeds")
    p.add_argument("--data", required=True, metavar="DIR")
    p.add_argument("--variants", help="comma-separated variant names")
    p.add_argument("--seeds", help="comma-separated seeds")
    p.add_argument("--jobs", type=int, default=1, help="parallel training processes")
    p.add_argument("--out", metavar="JSON", help="write per-run and summary metrics here")

    p = sub.add_parser("extract-audio", parents=[common], help="phoneme or i-vector features per utterance")
    p.add_argument("--mode", choices=("phoneme", "ivector"), required=True)
    p.add_argument("--frames", help="frame features, JSON Lines {utt, frames}")
    p.add_argument("--posteriors", help="DNN state posteriors, JSON Lines {utt, posteriors}")
    p.add_argument("--state-map", help="one monophone index per line, one line per state")
    p.add_argument("--n-phones", type=int, help="number of monophones (default: max index + 1)")
    p.add_argument("--ubm", help="UBM JSON (read, or written with --fit)")
    p.add_argument("--tv", help="total-variability JSON (read, or written with --fit)")
    p.add_argument("--fit", action="store_true", help="fit UBM and T on the input utterances")
    p.add_argument("--rank", type=int, help="i-vector rank when fitting")
    p.add_argument("--out", required=True)

    p = sub.add_parser("extract-text", parents=[common], help="rebuild the text modality of a dataset")
    p.add_argument("--data", required=True, help="dataset JSON Lines file")
    p.add_argument("--tokens", required=True, help="JSON Lines {video_id, segment_index, tokens}")
    p.add_argument("--word-vectors", help="word<TAB>v1,v2,... file")
    p.add_argument("--contextual", help="JSON Lines {video_id, segment_index, vectors}")
    p.add_argument("--out", required=True)

    p = sub.add_parser("gradcheck", parents=[common], help="run the gradient-check suite")
    p.add_argument("--draws", type=int, default=20)
    p.add_argument("--inject-fault", metavar="COMPONENT", help=argparse.SUPPRESS)
    return parser


COMMANDS = {
    "gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval, "compare": cmd_compare,
    "extract-audio": cmd_extract_audio, "extract-text": cmd_extract_text, "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        overrides = args.overrides + getattr(args, "late_overrides", [])
        cfg = load_config(args.config, overrides, args.seed)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointError as e:
        print(f"checkpoint error: {e}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except (DataError, DimensionError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
