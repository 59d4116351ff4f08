"""Resource-aware training sessions and multi-round personalisation.

A session selects a sub-model from the device's RAM ratio, then trains epoch
by epoch until one of the stopping rules fires. The weights from the best
validation epoch are kept as the session's checkpoint.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import checkpoint as ckpt
from .corpus import SHORT, DEFAULT_WORDS, CorpusPreset, SessionCache, SpeakerProfile, build_session, clear_cache
from .ctc import ctc_loss_grad, greedy_decode
from .ctc_eval import labels_to_text, pooled_wer, text_to_labels
from .device import DeviceProfile, ram_ratio, snapshot
from .errors import EmptyCache, InfeasibleAlignment, MissingPriorCheckpoint
from .features import log_mel
from .net import NetConfig, ToyAcousticModel, adam_step, clip_by_global_norm, init_model
from .topology import SelectionThresholds, select_training_mode

log = logging.getLogger(__name__)

PATIENCE_MODES = ("no_improvement", "paper_literal")
STOP_NONE, STOP_BATTERY, STOP_PATIENCE, STOP_MAX_EPOCHS = "none", "battery", "patience", "max_epochs"
IMPROVEMENT_TOL = 1e-9
CSV_HEADER = ["round", "epoch", "submodel", "train_loss", "val_wer", "battery_pct", "ram_ratio", "stop_reason"]


@dataclass(frozen=True)
class SessionConfig:
    max_epochs: int = 20
    batch_size: int = 5
    learning_rate: float = 1e-5
    thresholds: SelectionThresholds = SelectionThresholds()
    battery_floor: float = 20.0
    patience: int = 2
    patience_mode: str = "no_improvement"
    rounds: int = 1
    clip_norm: float = 5.0
    shuffle_seed: int = 0

    def __post_init__(self):
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0 <= self.battery_floor <= 100:
            raise ValueError("battery_floor must lie in [0, 100]")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.patience_mode not in PATIENCE_MODES:
            raise ValueError(f"patience_mode must be one of {PATIENCE_MODES}")
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["thresholds"] = asdict(self.thresholds)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SessionConfig":
        d = dict(d)
        if "thresholds" in d and isinstance(d["thresholds"], dict):
            d["thresholds"] = SelectionThresholds(**d["thresholds"])
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


@dataclass
class SessionState:
    epoch: int = 0
    past_wer: float = 0.0
    best_wer: float = float("inf")
    current_patience: int = 0
    stopping_reason: str = STOP_NONE
    best_epoch: int = 0
    best_checkpoint_id: str | None = None
    initial_wer: float | None = None
    submodel: str = "None"
    skipped: bool = False


@dataclass(frozen=True)
class EpochLog:
    round: int
    epoch: int
    submodel: str
    train_loss: float | None
    val_wer: float | None
    battery_pct: float
    ram_ratio: float
    stop_reason: str = ""


class StoppingRule:
    """Patience and best-WER bookkeeping, updated once per trained epoch.

    ``no_improvement`` counts epochs whose WER fails to beat the best so far.
    ``paper_literal`` grows the counter when the WER is at most the previous
    epoch's (starting from 0) and resets it otherwise.
    """

    def __init__(self, state: SessionState, patience: int, mode: str):
        self.state = state
        self.patience = patience
        self.mode = mode

    def update(self, wer: float) -> bool:
        """Record one epoch's WER; returns True when it is a new best."""
        s = self.state
        s.epoch += 1
        improved = wer < s.best_wer - IMPROVEMENT_TOL
        if improved:
            s.best_wer = wer
            s.best_epoch = s.epoch
        if self.mode == "no_improvement":
            s.current_patience = 0 if improved else s.current_patience + 1
            if s.current_patience >= self.patience:
                s.stopping_reason = STOP_PATIENCE
        else:
            if wer <= s.past_wer:
                s.current_patience += 1
                if s.current_patience >= self.patience:
                    s.stopping_reason = STOP_PATIENCE
            else:
                s.current_patience = 0
        s.past_wer = wer
        return improved


@dataclass(frozen=True)
class TraceRow:
    epoch: int
    battery_pct: float
    wer: float | None
    past_wer: float
    patience: int
    best_wer: float
    stop_reason: str


def drive(epoch_fn: Callable[[int], tuple[float | None, float]], profile: DeviceProfile,
          cfg: SessionConfig, start_time: int = 0, state: SessionState | None = None,
          on_improve: Callable[[SessionState], None] | None = None) -> tuple[SessionState, list[TraceRow]]:
    """The epoch loop: battery check first, then train, then the patience update.

    ``epoch_fn(i)`` trains epoch ``i`` (1-based) and returns (train_loss, val_wer).
    """
    state = state if state is not None else SessionState()
    rule = StoppingRule(state, cfg.patience, cfg.patience_mode)
    trace = []
    while state.epoch < cfg.max_epochs and state.stopping_reason == STOP_NONE:
        battery = snapshot(profile, start_time + state.epoch).battery_pct
        if battery <= cfg.battery_floor:
            state.stopping_reason = STOP_BATTERY
            trace.append(TraceRow(state.epoch + 1, battery, None, state.past_wer,
                                  state.current_patience, state.best_wer, STOP_BATTERY))
            break
        _, wer = epoch_fn(state.epoch + 1)
        if rule.update(wer) and on_improve is not None:
            on_improve(state)
        trace.append(TraceRow(state.epoch, battery, wer, state.past_wer, state.current_patience,
                              state.best_wer, state.stopping_reason if state.stopping_reason != STOP_NONE else ""))
    if state.stopping_reason == STOP_NONE:
        state.stopping_reason = STOP_MAX_EPOCHS
    return state, trace


def simulate_stopping(wers: Sequence[float], profile: DeviceProfile, cfg: SessionConfig,
                      start_time: int = 0) -> tuple[SessionState, list[TraceRow]]:
    """Replay a scripted validation-WER sequence through the stopping rules, no model involved."""
    wers = list(wers)
    if len(wers) < cfg.max_epochs:
        cfg = replace(cfg, max_epochs=len(wers))
    return drive(lambda i: (None, wers[i - 1]), profile, cfg, start_time)


# ---- training -------------------------------------------------------------

@dataclass
class PreparedUtterance:
    id: str
    features: np.ndarray  # standardised (n_mels, T)
    labels: list[int]
    transcript: str


def feature_stats(feature_list) -> tuple[np.ndarray, np.ndarray]:
    stacked = np.concatenate(feature_list, axis=1)
    mean = stacked.mean(axis=1)
    std = np.maximum(stacked.std(axis=1), 1e-8)
    return mean, std


def prepare(cache: SessionCache, mean=None, std=None):
    """Featurise a cache. Normalisation stats come from its training split unless given."""
    feats = {u.id: log_mel(u.clip).values for u in cache.utterances}
    if mean is None:
        train = [feats[u.id] for u in cache.train] or list(feats.values())
        mean, std = feature_stats(train)
    out = {"train": [], "validation": []}
    for u in cache.utterances:
        standardised = (feats[u.id] - mean[:, None]) / std[:, None]
        out[u.split].append(PreparedUtterance(u.id, standardised, text_to_labels(u.transcript), u.transcript))
    return out, mean, std


def decode_text(model: ToyAcousticModel, features: np.ndarray) -> str:
    return labels_to_text(greedy_decode(model.logits(features)))


def evaluate(model: ToyAcousticModel, utterances: Sequence[PreparedUtterance]) -> tuple[float, list[tuple[str, str, str]]]:
    """Pooled WER plus (id, reference, hypothesis) per utterance."""
    rows = [(u.id, u.transcript, decode_text(model, u.features)) for u in utterances]
    return pooled_wer((ref, hyp) for _, ref, hyp in rows), rows


def train_epoch(model: ToyAcousticModel, utterances: Sequence[PreparedUtterance], cfg: SessionConfig,
                rng: np.random.Generator) -> float:
    """One pass of shuffled mini-batches; returns the mean per-utterance CTC loss."""
    order = rng.permutation(len(utterances))
    losses = []
    for start in range(0, len(order), cfg.batch_size):
        batch = [utterances[i] for i in order[start:start + cfg.batch_size]]
        total: dict[str, np.ndarray] = {}
        used = 0
        for u in batch:
            logits, cache = model.forward(u.features)
            try:
                res = ctc_loss_grad(logits, u.labels)
            except InfeasibleAlignment as exc:
                log.warning("skipping %s: %s", u.id, exc)
                continue
            grads = model.backward(cache, res.grad_logits)
            for k, g in grads.items():
                if k in total:
                    total[k] += g
                else:
                    total[k] = g.copy()
            losses.append(res.loss)
            used += 1
        if used == 0:
            continue
        grads = {k: g / used for k, g in total.items()}
        adam_step(model, clip_by_global_norm(grads, cfg.clip_norm), cfg.learning_rate)
    if not losses:
        raise EmptyCache("no trainable utterances in this session")
    return float(np.mean(losses))


@dataclass
class SessionResult:
    state: SessionState
    logs: list[EpochLog]
    checkpoint_path: Path | None = None
    best_parameters: dict[str, np.ndarray] | None = None
    metadata: dict = field(default_factory=dict)


def _reset_adam(model: ToyAcousticModel) -> None:
    for name in model.adam.m:
        model.adam.m[name][...] = 0.0
        model.adam.v[name][...] = 0.0
    model.adam.step = 0


def run_session(model: ToyAcousticModel, cache: SessionCache, profile: DeviceProfile,
                cfg: SessionConfig, start_time: int = 0, round_index: int = 1,
                checkpoint_dir: str | Path | None = None) -> SessionResult:
    """Run one on-device training session over ``cache``.

    On return ``model`` holds the best-epoch weights. When the device is too
    constrained to train, the session is recorded as skipped and the model is
    left untouched.
    """
    if len(cache) == 0 or not cache.train or not cache.validation:
        raise EmptyCache("session cache needs both training and validation utterances")
    state = SessionState()
    start = snapshot(profile, start_time)
    spec = select_training_mode(start, cfg.thresholds, model.topology())
    if spec is None:
        state.skipped = True
        log.info("round %d skipped: RAM ratio %.3f below r3", round_index, ram_ratio(start))
        row = EpochLog(round_index, 0, "None", None, None, start.battery_pct, ram_ratio(start), "skipped")
        return SessionResult(state, [row])

    state.submodel = spec.category.name
    model.apply_submodel(spec)
    _reset_adam(model)
    data, mean, std = prepare(cache)
    state.initial_wer, _ = evaluate(model, data["validation"])
    log.info("round %d: %s sub-model (%.1f%% of parameters), initial WER %.4f",
             round_index, spec.category.name, 100 * spec.param_fraction, state.initial_wer)

    metadata_base = {
        "round": round_index,
        "submodel": spec.category.name,
        "feature_mean": mean.tolist(),
        "feature_std": std.tolist(),
        "session_config": cfg.to_dict(),
    }
    result = SessionResult(state, [])
    logs: list[EpochLog] = []
    train_losses: dict[int, float] = {}
    ckpt_path = Path(checkpoint_dir) / f"round{round_index}_best.odtc" if checkpoint_dir else None

    def epoch_fn(i):
        rng = np.random.default_rng([cfg.shuffle_seed, round_index, i])
        train_losses[i] = train_epoch(model, data["train"], cfg, rng)
        wer, _ = evaluate(model, data["validation"])
        log.info("round %d epoch %d: loss %.4f, val WER %.4f", round_index, i, train_losses[i], wer)
        return train_losses[i], wer

    def on_improve(s: SessionState):
        result.best_parameters = model.copy_parameters()
        result.metadata = dict(metadata_base, epoch=s.epoch, val_wer=s.best_wer)
        if ckpt_path is not None:
            s.best_checkpoint_id = ckpt.save_checkpoint(model, result.metadata, ckpt_path)
            result.checkpoint_path = ckpt_path
        else:
            s.best_checkpoint_id = f"round{round_index}_epoch{s.epoch}"

    state, trace = drive(epoch_fn, profile, cfg, start_time, state, on_improve)
    for row in trace:
        if row.wer is None:
            continue
        ratio = ram_ratio(snapshot(profile, start_time + row.epoch - 1))
        logs.append(EpochLog(round_index, row.epoch, spec.category.name, train_losses[row.epoch],
                             row.wer, row.battery_pct, ratio, ""))
    if logs:
        logs[-1] = replace(logs[-1], stop_reason=state.stopping_reason)
    else:
        logs.append(EpochLog(round_index, 0, spec.category.name, None, state.initial_wer,
                             start.battery_pct, ram_ratio(start), state.stopping_reason))
    result.logs = logs
    if result.best_parameters is not None:
        model.load_parameters(result.best_parameters)
    return result


# ---- rounds ---------------------------------------------------------------

@dataclass(frozen=True)
class RoundSummary:
    round: int
    skipped: bool
    submodel: str
    initial_wer: float | None
    best_wer: float | None
    best_epoch: int
    epochs_run: int
    stopping_reason: str
    checkpoint: str | None


def _profile_for_round(profile, r: int) -> DeviceProfile:
    if isinstance(profile, DeviceProfile):
        return profile
    profiles = list(profile)
    return profiles[min(r - 1, len(profiles) - 1)]


def run_rounds(rounds: int, speaker: SpeakerProfile, profile, cfg: SessionConfig,
               model: ToyAcousticModel | None = None, net_cfg: NetConfig = NetConfig(),
               baseline: str | Path | None = None, checkpoint_dir: str | Path | None = None,
               cache_factory: Callable[[int], SessionCache] | None = None,
               n: int = 80, corpus_seed: int = 0, preset: CorpusPreset = SHORT,
               word_list=DEFAULT_WORDS, log_path: str | Path | None = None,
               results: list | None = None) -> list[RoundSummary]:
    """Personalise over several rounds, each on a fresh cache of utterances.

    Round 1 starts from ``model``, a ``baseline`` checkpoint, or a fresh
    initialisation. Every later round reloads the previous best checkpoint,
    selects its sub-model against the device state again, and trains. A
    ``profile`` sequence supplies one device profile per round; each round
    starts its device clock at 0.
    """
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    if model is None:
        model = init_model(net_cfg)
    if baseline is not None:
        tensors, meta = ckpt.load_checkpoint(baseline)
        ckpt.restore(model, tensors, meta)
    if cache_factory is None:
        def cache_factory(r):
            return build_session(speaker, word_list, rng_seed=corpus_seed + r - 1, n=n, preset=preset)

    summaries = []
    prior_params: dict[str, np.ndarray] | None = None
    prior_path: Path | None = None
    if log_path is not None:
        Path(log_path).write_text(",".join(CSV_HEADER) + "\n")
    for r in range(1, rounds + 1):
        if r > 1:
            if prior_path is not None:
                if not prior_path.exists():
                    raise MissingPriorCheckpoint(f"round {r - 1} checkpoint {prior_path} is missing")
                tensors, meta = ckpt.load_checkpoint(prior_path)
                ckpt.restore(model, tensors, meta)
            elif prior_params is not None:
                model.load_parameters(prior_params)
        cache = cache_factory(r)
        res = run_session(model, cache, _profile_for_round(profile, r), cfg,
                          round_index=r, checkpoint_dir=checkpoint_dir)
        clear_cache(cache)
        if log_path is not None:
            append_epoch_logs(log_path, res.logs)
        if results is not None:
            results.append(res)
        s = res.state
        if res.best_parameters is not None:
            prior_params = res.best_parameters
            prior_path = res.checkpoint_path
        summaries.append(RoundSummary(
            round=r, skipped=s.skipped, submodel=s.submodel, initial_wer=s.initial_wer,
            best_wer=None if s.best_wer == float("inf") else s.best_wer,
            best_epoch=s.best_epoch, epochs_run=s.epoch,
            stopping_reason="skipped" if s.skipped else s.stopping_reason,
            checkpoint=str(res.checkpoint_path) if res.checkpoint_path else s.best_checkpoint_id))
    return summaries


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def epoch_logs_csv(logs: Sequence[EpochLog], header: bool = True) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if header:
        w.writerow(CSV_HEADER)
    for row in logs:
        w.writerow([_fmt(getattr(row, k)) for k in CSV_HEADER])
    return buf.getvalue()


def append_epoch_logs(path: str | Path, logs: Sequence[EpochLog]) -> None:
    path = Path(path)
    new = not path.exists() or path.stat().st_size == 0
    with path.open("a", newline="") as fh:
        fh.write(epoch_logs_csv(logs, header=new))
