"""Command-line entry point: ``odt-asr <command>`` or ``python -m odt_asr <command>``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import corpus as corpus_mod
from .corpus import PRESETS, SPEAKERS, SessionCache, SpeakerProfile, build_session, load_cache, write_cache
from .device import ONEPLUS_7T, DeviceProfile, load_profiles
from .errors import OdtError, ParseError
from .net import NetConfig, init_model
from .session import SessionConfig, evaluate, prepare, run_rounds, simulate_stopping
from .topology import (SelectionThresholds, format_millions, format_percent, load_manifest, paper_mirror,
                       submodel_table, total_params)

log = logging.getLogger("odt_asr")

DEVICES = {p.name: p for p in (
    ONEPLUS_7T,
    DeviceProfile("mid_ram", 8192, ((0, 3277),)),       # ratio 0.40 -> Medium
    DeviceProfile("low_ram", 8192, ((0, 1638),)),       # ratio 0.20 -> Light
    DeviceProfile("exhausted", 8192, ((0, 819),)),      # ratio 0.10 -> no training
    DeviceProfile("draining", 8192, ((0, 5427),), 100.0, 30.0),
)}


@dataclass
class ExperimentConfig:
    """Everything one experiment needs, loadable from a single JSON file.

    Defaults are the desk-scale setup: a random-init toy model on 80-utterance
    sessions at lr 1e-3, with patience equal to the epoch budget so the CTC
    warm-up plateau does not end training.
    """

    seed: int = 42
    corpus_dir: str = "runs/corpus"
    cache_dir: str = "runs/cache"
    checkpoint_dir: str = "runs/checkpoints"
    log_path: str = "runs/epochs.csv"
    summary_path: str = "runs/summary.json"
    n: int = 80
    rounds: int = 1
    preset: str = "short"
    speakers: list = field(default_factory=lambda: ["us_male"])
    words: list | None = None
    device: str = "oneplus7t"
    devices_file: str | None = None
    baseline: str | None = None
    session: dict = field(default_factory=lambda: {
        "max_epochs": 40, "batch_size": 1, "learning_rate": 1e-3, "patience": 40})
    net: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path: str | Path | None) -> "ExperimentConfig":
        if path is None:
            return cls()
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: {exc}") from exc
        unknown = set(raw) - set(cls.__dataclass_fields__)
        if unknown:
            raise ParseError(f"{path}: unknown keys {sorted(unknown)}")
        base = cls()
        for key in ("session", "net"):
            if key in raw:
                merged = dict(getattr(base, key))
                merged.update(raw[key])
                raw[key] = merged
        return replace(base, **raw)

    def speaker_profiles(self) -> list[SpeakerProfile]:
        out = []
        for s in self.speakers:
            if isinstance(s, str):
                if s not in SPEAKERS:
                    raise ParseError(f"unknown speaker {s!r}; known: {sorted(SPEAKERS)}")
                out.append(SPEAKERS[s])
            else:
                out.append(SpeakerProfile.from_dict(s))
        return out

    def word_list(self):
        return tuple(self.words) if self.words else corpus_mod.DEFAULT_WORDS

    def corpus_preset(self):
        if self.preset not in PRESETS:
            raise ParseError(f"unknown preset {self.preset!r}; known: {sorted(PRESETS)}")
        return PRESETS[self.preset]

    def device_profile(self) -> DeviceProfile:
        known = dict(DEVICES)
        if self.devices_file:
            known.update(load_profiles(self.devices_file))
        if self.device not in known:
            raise ParseError(f"unknown device {self.device!r}; known: {sorted(known)}")
        return known[self.device]

    def session_config(self) -> SessionConfig:
        d = dict(self.session)
        d.setdefault("shuffle_seed", self.seed)
        d["rounds"] = self.rounds
        return SessionConfig.from_dict(d)

    def net_config(self) -> NetConfig:
        d = dict(self.net)
        d.setdefault("seed", self.seed)
        return NetConfig.from_dict(d)


def _session_dir(root: Path, speaker: str, r: int) -> Path:
    return root / speaker / f"session_{r}"


def cmd_gen_corpus(cfg: ExperimentConfig, out_dir: str | Path | None = None) -> Path:
    """Write one session of ``cfg.n`` utterances per speaker and round; returns the top manifest."""
    root = Path(out_dir or cfg.corpus_dir)
    root.mkdir(parents=True, exist_ok=True)
    lines = []
    for k, speaker in enumerate(cfg.speaker_profiles()):
        for r in range(1, cfg.rounds + 1):
            session_seed = cfg.seed + 1000 * k + r - 1
            cache = build_session(speaker, cfg.word_list(), rng_seed=session_seed, n=cfg.n,
                                  preset=cfg.corpus_preset())
            sdir = _session_dir(root, speaker.speaker_id, r)
            write_cache(cache, sdir)
            for u in cache.utterances:
                lines.append(json.dumps({
                    "id": u.id, "audio": str(Path(speaker.speaker_id) / f"session_{r}" / f"{u.id}.wav"),
                    "transcript": u.transcript, "split": u.split, "speaker_id": u.speaker_id,
                    "session": r}, sort_keys=True))
            print(f"{speaker.speaker_id} session {r}: {len(cache.train)} train / "
                  f"{len(cache.validation)} validation -> {sdir}")
    manifest = root / corpus_mod.MANIFEST_NAME
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


def cmd_inspect_topology(manifest_path: str | None, thresholds: SelectionThresholds,
                         toy: NetConfig | None = None, out=None) -> list:
    out = out or sys.stdout
    if toy is not None:
        topo = init_model(toy).topology()
        title = "toy model"
    elif manifest_path:
        topo = load_manifest(manifest_path)
        title = manifest_path
    else:
        topo = paper_mirror()
        title = "paper_mirror.manifest"
    total = total_params(topo)
    print(f"{title}: {len(topo.layers)} layers, {total:,} parameters", file=out)
    print(f"{'sub-model':<10} {'layers':<28} {'params':>12} {'count':>9} {'share':>7}", file=out)
    rows = submodel_table(topo, thresholds)
    for category, spec in rows:
        if isinstance(spec, Exception):
            print(f"{category.name:<10} NoFeasibleSubModel: {spec}", file=out)
            continue
        window = f"{spec.layer_names[0]}..{spec.layer_names[-1]}" if len(spec.layer_names) > 1 \
            else spec.layer_names[0]
        print(f"{category.name:<10} {window:<28} {spec.trainable_params:>12,} "
              f"{format_millions(spec.trainable_params):>9} {format_percent(spec.param_fraction):>7}",
              file=out)
    return rows


def _corpus_cache_factory(cfg: ExperimentConfig, speaker: SpeakerProfile):
    corpus_root = Path(cfg.corpus_dir)
    cache_root = Path(cfg.cache_dir)

    def factory(r: int) -> SessionCache:
        src = _session_dir(corpus_root, speaker.speaker_id, r)
        if not (src / corpus_mod.MANIFEST_NAME).exists():
            raise FileNotFoundError(f"no recorded session at {src}; run gen-corpus with --rounds >= {r}")
        recorded = load_cache(src)
        # train on a working copy so clearing the cache leaves the recordings intact
        cache = SessionCache(recorded.utterances, capacity=len(recorded))
        write_cache(cache, cache_root / speaker.speaker_id / f"round_{r}")
        return cache

    return factory


def cmd_train(cfg: ExperimentConfig, out=None) -> list:
    out = out or sys.stdout
    session_cfg = cfg.session_config()
    net_cfg = cfg.net_config()
    profile = cfg.device_profile()
    Path(cfg.log_path).parent.mkdir(parents=True, exist_ok=True)
    summaries = []
    for speaker in cfg.speaker_profiles():
        ckpt_dir = Path(cfg.checkpoint_dir) / speaker.speaker_id
        log_path = Path(cfg.log_path)
        if len(cfg.speakers) > 1:
            log_path = log_path.with_name(f"{log_path.stem}_{speaker.speaker_id}{log_path.suffix}")
        rounds = run_rounds(cfg.rounds, speaker, profile, session_cfg, net_cfg=net_cfg,
                            baseline=cfg.baseline, checkpoint_dir=ckpt_dir,
                            cache_factory=_corpus_cache_factory(cfg, speaker), log_path=log_path)
        for s in rounds:
            if s.skipped:
                print(f"[{speaker.speaker_id}] round {s.round}: round skipped: insufficient resources",
                      file=out)
            else:
                print(f"[{speaker.speaker_id}] round {s.round}: {s.submodel} sub-model, "
                      f"initial WER {s.initial_wer:.4f}, best WER {s.best_wer:.4f} at epoch {s.best_epoch}, "
                      f"stopped: {s.stopping_reason}", file=out)
            summaries.append({"speaker": speaker.speaker_id, **asdict(s)})
    Path(cfg.summary_path).parent.mkdir(parents=True, exist_ok=True)
    Path(cfg.summary_path).write_text(json.dumps({"rounds": summaries}, indent=2, sort_keys=True) + "\n")
    return summaries


def cmd_eval(checkpoint_path: str | Path, manifest: str | Path, split: str = "validation",
             out_csv: str | Path | None = None, out=None) -> float:
    out = out or sys.stdout
    model, meta = ckpt.model_from_checkpoint(checkpoint_path)
    cache = load_cache(manifest, split=split)
    if len(cache) == 0:
        raise ParseError(f"{manifest}: split {split!r} is empty")
    mean = np.asarray(meta["feature_mean"]) if "feature_mean" in meta else None
    std = np.asarray(meta["feature_std"]) if "feature_std" in meta else None
    # evaluation data all sits in one split; relabel so prepare() keeps it together
    for u in cache.utterances:
        u.split = "validation"
    data, _, _ = prepare(cache, mean, std)
    wer, rows = evaluate(model, data["validation"])
    if out_csv is not None:
        with open(out_csv, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id", "reference", "hypothesis"])
            w.writerows(rows)
    print(f"pooled WER over {len(rows)} {split} utterances: {wer!r}", file=out)
    return wer


def cmd_simulate_stopping(wers, cfg: SessionConfig, profile: DeviceProfile, out=None):
    out = out or sys.stdout
    state, trace = simulate_stopping(wers, profile, cfg)
    print(f"{'epoch':>5} {'battery':>8} {'wer':>8} {'past_wer':>9} {'patience':>8} {'best':>8}  stop",
          file=out)
    for row in trace:
        wer = "-" if row.wer is None else f"{row.wer:.4f}"
        print(f"{row.epoch:>5} {row.battery_pct:>8.1f} {wer:>8} {row.past_wer:>9.4f} {row.patience:>8} "
              f"{row.best_wer:>8.4f}  {row.stop_reason}", file=out)
    print(f"stopped: {state.stopping_reason} after {state.epoch} epochs; best WER {state.best_wer} "
          f"at epoch {state.best_epoch}", file=out)
    return state, trace


def _patience_mode(value: str) -> str:
    return value.replace("-", "_")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="odt-asr", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="experiment JSON file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--rounds", type=int)
        sp.add_argument("--n", type=int, help="utterances per session")
        sp.add_argument("--device")
        sp.add_argument("--patience-mode", choices=["no-improvement", "paper-literal"])

    g = sub.add_parser("gen-corpus", help="synthesise session corpora")
    common(g)
    g.add_argument("--out")

    t = sub.add_parser("inspect-topology", help="sub-model table for a layer manifest")
    t.add_argument("manifest", nargs="?", help="layer manifest (default: bundled paper mirror)")
    t.add_argument("--toy", action="store_true", help="inspect the toy model instead")
    t.add_argument("--config")
    for name in ("r1", "r2", "r3", "medium-cap", "light-cap"):
        t.add_argument(f"--{name}", type=float)

    tr = sub.add_parser("train", help="run multi-round on-device training")
    common(tr)

    e = sub.add_parser("eval", help="pooled WER of a checkpoint on a corpus split")
    e.add_argument("checkpoint")
    e.add_argument("manifest")
    e.add_argument("--split", default="validation")
    e.add_argument("--out", help="per-utterance CSV")

    s = sub.add_parser("simulate-stopping", help="replay scripted WERs through the stopping rules")
    common(s)
    s.add_argument("--wers", required=True, help="comma-separated validation WERs")
    s.add_argument("--patience", type=int)
    s.add_argument("--battery-floor", type=float)
    s.add_argument("--max-epochs", type=int)
    s.add_argument("--battery-start", type=float, default=100.0)
    s.add_argument("--drain", type=float, default=0.0)
    return p


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    changes = {}
    for key in ("seed", "rounds", "n", "device"):
        value = getattr(args, key, None)
        if value is not None:
            changes[key] = value
    if getattr(args, "patience_mode", None):
        changes["session"] = dict(cfg.session, patience_mode=_patience_mode(args.patience_mode))
    return replace(cfg, **changes)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "inspect-topology":
            cfg = ExperimentConfig.load(args.config)
            base = cfg.session_config().thresholds
            th = SelectionThresholds(
                r1=args.r1 if args.r1 is not None else base.r1,
                r2=args.r2 if args.r2 is not None else base.r2,
                r3=args.r3 if args.r3 is not None else base.r3,
                medium_cap=args.medium_cap if args.medium_cap is not None else base.medium_cap,
                light_cap=args.light_cap if args.light_cap is not None else base.light_cap)
            cmd_inspect_topology(args.manifest, th, cfg.net_config() if args.toy else None)
            return 0
        if args.command == "eval":
            cmd_eval(args.checkpoint, args.manifest, args.split, args.out)
            return 0
        cfg = _apply_overrides(ExperimentConfig.load(args.config), args)
        if args.command == "gen-corpus":
            cmd_gen_corpus(cfg, args.out)
        elif args.command == "train":
            cmd_train(cfg)
        elif args.command == "simulate-stopping":
            wers = [float(w) for w in args.wers.split(",") if w.strip()]
            # stopping rules use SessionConfig defaults (p=2, b=20) unless a config file says otherwise
            scfg = cfg.session_config() if args.config else SessionConfig(
                patience_mode=cfg.session.get("patience_mode", "no_improvement"))
            overrides = {k: v for k, v in (("patience", args.patience),
                                           ("battery_floor", args.battery_floor)) if v is not None}
            scfg = replace(scfg, max_epochs=args.max_epochs or len(wers), **overrides)
            profile = DeviceProfile("scripted", 8192, ((0, 8192),), args.battery_start, args.drain)
            cmd_simulate_stopping(wers, scfg, profile)
        return 0
    except (OdtError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
