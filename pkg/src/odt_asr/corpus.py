"""Synthetic tone-coded speech corpus and the per-session utterance cache.

Each letter is rendered as a sine tone whose frequency depends on the letter
and the speaker; a space is silence. Speakers differ in base pitch, pitch
step, speaking rate and noise level, which plays the role of an accent.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .ctc_eval import normalise
from .errors import ParseError, TranscriptTooLongForDuration
from .features import SAMPLE_RATE, HOP, AudioClip, read_wav, write_wav

MAX_TRANSCRIPT_CHARS = 180
FADE_S = 0.010
TONE_AMPLITUDE = 0.5
MANIFEST_NAME = "manifest.jsonl"

# No doubled letters: a repeated tone is only separated by the fade dip.
DEFAULT_WORDS = (
    "cat", "dog", "sun", "map", "red", "blue", "grape", "stone", "river", "cloud",
    "table", "chair", "light", "night", "water", "bread", "phone", "train", "music", "house",
    "garden", "window", "pocket", "silver", "purple", "orange", "planet", "forest", "bridge", "candle",
    "morning", "evening", "kitchen", "picture", "weather", "journey", "captain", "station", "monkey", "dragon",
)


@dataclass(frozen=True)
class SpeakerProfile:
    speaker_id: str
    base_freq_hz: float = 300.0
    freq_step_hz: float = 100.0
    char_duration_s: float = 0.08
    noise_std: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.base_freq_hz + 27 * self.freq_step_hz >= SAMPLE_RATE / 2:
            raise ValueError(f"{self.speaker_id}: highest tone reaches Nyquist")
        if self.freq_step_hz <= 0:
            raise ValueError(f"{self.speaker_id}: freq_step_hz must be positive")
        if self.char_duration_s < 2 * HOP / SAMPLE_RATE:
            raise ValueError(f"{self.speaker_id}: char_duration_s below two hops")
        if self.noise_std < 0:
            raise ValueError(f"{self.speaker_id}: noise_std must be non-negative")

    def symbol_frequency(self, ch: str) -> float | None:
        if ch == " ":
            return None
        return self.base_freq_hz + (ord(ch) - ord("a")) * self.freq_step_hz

    def to_dict(self) -> dict:
        return {"speaker_id": self.speaker_id, "base_freq_hz": self.base_freq_hz,
                "freq_step_hz": self.freq_step_hz, "char_duration_s": self.char_duration_s,
                "noise_std": self.noise_std, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "SpeakerProfile":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


# Six synthetic accents plus two "real-time" speakers.
SPEAKERS = {
    s.speaker_id: s for s in (
        SpeakerProfile("us_male", 280.0, 110.0, 0.080, 0.010, 11),
        SpeakerProfile("us_female", 420.0, 120.0, 0.075, 0.010, 12),
        SpeakerProfile("uk_male", 300.0, 105.0, 0.090, 0.015, 13),
        SpeakerProfile("uk_female", 450.0, 115.0, 0.085, 0.015, 14),
        SpeakerProfile("ind_male", 260.0, 125.0, 0.095, 0.020, 15),
        SpeakerProfile("ind_female", 400.0, 130.0, 0.090, 0.020, 16),
        SpeakerProfile("ind_male_rt", 270.0, 118.0, 0.085, 0.030, 17),
        SpeakerProfile("ind_female_rt", 410.0, 122.0, 0.088, 0.030, 18),
    )
}


@dataclass(frozen=True)
class CorpusPreset:
    min_duration_s: float
    max_duration_s: float
    min_words: int
    max_words: int
    char_duration_scale: float = 1.0


SHORT = CorpusPreset(1.0, 3.0, 3, 6)
# 7-12 s utterances at roughly four times the default speaking rate duration
PAPER = CorpusPreset(7.0, 12.0, 4, 6, char_duration_scale=4.0)
PRESETS = {"short": SHORT, "paper": PAPER}


@dataclass
class Utterance:
    id: str
    clip: AudioClip
    transcript: str
    split: str
    speaker_id: str
    audio_path: Path | None = None


@dataclass
class SessionCache:
    utterances: list[Utterance] = field(default_factory=list)
    capacity: int = 80
    directory: Path | None = None

    @property
    def train(self) -> list[Utterance]:
        return [u for u in self.utterances if u.split == "train"]

    @property
    def validation(self) -> list[Utterance]:
        return [u for u in self.utterances if u.split == "validation"]

    @property
    def is_full(self) -> bool:
        return len(self.utterances) >= self.capacity

    def __len__(self):
        return len(self.utterances)


def split_counts(n: int) -> tuple[int, int]:
    """Train/validation sizes in a 3:1 ratio (60/20 for N=80)."""
    n_val = round(n / 4)
    if n >= 2:
        n_val = max(n_val, 1)
    return n - n_val, n_val


def synthesize(profile: SpeakerProfile, transcript: str, max_duration_s: float = 12.0) -> AudioClip:
    transcript = normalise(transcript) if transcript.strip() else transcript
    n_char = int(round(profile.char_duration_s * SAMPLE_RATE))
    total = n_char * len(transcript)
    if total > max_duration_s * SAMPLE_RATE:
        raise TranscriptTooLongForDuration(
            f"{len(transcript)} characters need {total / SAMPLE_RATE:.2f} s (cap {max_duration_s} s)")
    t = np.arange(n_char) / SAMPLE_RATE
    n_fade = min(int(round(FADE_S * SAMPLE_RATE)), n_char // 2)
    envelope = np.ones(n_char)
    ramp = np.linspace(0.0, 1.0, n_fade, endpoint=False)
    envelope[:n_fade] = ramp
    envelope[n_char - n_fade:] = ramp[::-1]
    pieces = []
    for ch in transcript:
        freq = profile.symbol_frequency(ch)
        if freq is None:
            pieces.append(np.zeros(n_char))
        else:
            pieces.append(TONE_AMPLITUDE * envelope * np.sin(2 * np.pi * freq * t))
    samples = np.concatenate(pieces)
    if profile.noise_std > 0:
        rng = np.random.default_rng([profile.seed, zlib.crc32(transcript.encode())])
        samples = samples + rng.normal(0.0, profile.noise_std, size=samples.size)
    # snap to the 16-bit grid so in-memory clips equal their WAV round trip
    samples = np.round(np.clip(samples, -1.0, 1.0) * 32767.0) / 32767.0
    return AudioClip(samples)


def _utterance_seconds(profile: SpeakerProfile, text: str) -> float:
    return int(round(profile.char_duration_s * SAMPLE_RATE)) * len(text) / SAMPLE_RATE


def _sample_transcript(rng, words, profile, preset, required=None, max_tries=1000):
    for _ in range(max_tries):
        n = int(rng.integers(preset.min_words, preset.max_words + 1))
        chosen = [words[i] for i in rng.integers(0, len(words), size=n)]
        if required is not None:
            chosen[int(rng.integers(0, n))] = required
        text = " ".join(chosen)
        if len(text) > MAX_TRANSCRIPT_CHARS:
            continue
        if preset.min_duration_s <= _utterance_seconds(profile, text) <= preset.max_duration_s:
            return text
    raise ValueError("cannot build a transcript within the duration bounds; "
                     "adjust the preset or the speaking rate")


def build_session(profiles, word_list=DEFAULT_WORDS, rng_seed: int = 0, n: int = 80,
                  preset: CorpusPreset = SHORT, directory: str | Path | None = None) -> SessionCache:
    """Record ``n`` utterances split 3:1 into train and validation.

    Every validation transcript contains at least one word that also occurs
    in the training split. Speakers take turns when several are given. With
    ``directory`` the WAV files and manifest are written there.
    """
    if isinstance(profiles, SpeakerProfile):
        profiles = [profiles]
    profiles = [replace(p, char_duration_s=p.char_duration_s * preset.char_duration_scale)
                for p in profiles]
    words = [normalise(w) for w in word_list]
    if not words:
        raise ValueError("word list is empty")
    rng = np.random.default_rng(rng_seed)
    n_train, n_val = split_counts(n)
    utterances = []
    train_words: list[str] = []
    for k in range(n):
        profile = profiles[k % len(profiles)]
        if k < n_train:
            text = _sample_transcript(rng, words, profile, preset)
            train_words.extend(w for w in text.split() if w not in train_words)
            split = "train"
        else:
            anchor = train_words[int(rng.integers(0, len(train_words)))]
            text = _sample_transcript(rng, words, profile, preset, required=anchor)
            split = "validation"
        clip = synthesize(profile, text, max_duration_s=max(12.0, preset.max_duration_s))
        utterances.append(Utterance(f"s{rng_seed}-u{k:03d}", clip, text, split, profile.speaker_id))
    cache = SessionCache(utterances, capacity=n)
    if directory is not None:
        write_cache(cache, directory)
    return cache


def write_cache(cache: SessionCache, directory: str | Path) -> Path:
    """Write WAVs plus a JSON-lines manifest; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for u in cache.utterances:
        path = directory / f"{u.id}.wav"
        write_wav(path, u.clip)
        u.audio_path = path
        lines.append(json.dumps({"id": u.id, "audio": path.name, "transcript": u.transcript,
                                 "split": u.split, "speaker_id": u.speaker_id}, sort_keys=True))
    manifest = directory / MANIFEST_NAME
    manifest.write_text("\n".join(lines) + "\n")
    cache.directory = directory
    return manifest


def load_cache(manifest: str | Path, split: str | None = None) -> SessionCache:
    """Read a manifest written by :func:`write_cache`; audio paths resolve next to it."""
    manifest = Path(manifest)
    if manifest.is_dir():
        manifest = manifest / MANIFEST_NAME
    utterances = []
    for lineno, line in enumerate(manifest.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            audio = manifest.parent / rec["audio"]
            utt = Utterance(rec["id"], read_wav(audio), rec["transcript"], rec["split"],
                            rec["speaker_id"], audio)
        except (json.JSONDecodeError, KeyError) as exc:
            raise ParseError(f"{manifest}:{lineno}: {exc!r}") from exc
        if split is None or utt.split == split:
            utterances.append(utt)
    return SessionCache(utterances, capacity=len(utterances), directory=manifest.parent)


def clear_cache(cache: SessionCache) -> SessionCache:
    """Drop every utterance and delete the files the cache wrote (WAVs and manifest)."""
    if cache.directory is not None:
        directory = Path(cache.directory)
        for u in cache.utterances:
            if u.audio_path is not None:
                Path(u.audio_path).unlink(missing_ok=True)
        (directory / MANIFEST_NAME).unlink(missing_ok=True)
        if directory.exists() and not any(directory.iterdir()):
            directory.rmdir()
    cache.utterances.clear()
    cache.directory = None
    return cache
