"""Deterministic synthetic speaker corpus and trial-list generation.

Each utterance is T frames of frame_dim numbers built as

    frame_t = M @ v_speaker + c_utterance + noise_t

where M is one fixed mixing matrix per corpus, v_speaker a per-speaker
Gaussian latent, c_utterance a per-utterance channel offset and noise_t
per-frame Gaussian noise, each scaled by its config knob. Every draw comes
from a SplitMix64 stream keyed by (seed, purpose, speaker, utterance), so
any utterance is reproducible in isolation and generation order is
irrelevant.

Speakers split 50/50 into a pre-training half and an adaptation half.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .errors import ConfigError, ParseError
from .metrics import Trial
from .rng import Stream

FORMAT_HEADER = "svcorpus-v1"


@dataclass(frozen=True)
class CorpusConfig:
    seed: int = 0
    num_speakers: int = 40
    utts_per_speaker: int = 20
    frames_min: int = 30
    frames_max: int = 60
    frame_dim: int = 20
    speaker_scale: float = 1.0
    channel_scale: float = 0.3
    noise_scale: float = 0.5

    def __post_init__(self):
        if self.num_speakers < 2:
            raise ConfigError("need at least 2 speakers to split the corpus")
        if self.frames_min < 2 or self.frames_max < self.frames_min:
            raise ConfigError(
                f"bad frame range [{self.frames_min}, {self.frames_max}]"
            )
        if self.utts_per_speaker < 1 or self.frame_dim < 1:
            raise ConfigError("utts_per_speaker and frame_dim must be positive")


@dataclass
class Utterance:
    utt_id: str
    speaker: str
    frames: np.ndarray  # [T, frame_dim]


@dataclass
class Corpus:
    config: CorpusConfig
    utterances: list
    speaker_split: dict  # speaker -> "pretrain" | "adapt"

    def part(self, which: str) -> list:
        if which not in ("pretrain", "adapt"):
            raise ConfigError(f"unknown corpus part {which!r}")
        return [u for u in self.utterances if self.speaker_split[u.speaker] == which]

    def speakers(self, which: str) -> list:
        return sorted({u.speaker for u in self.part(which)})

    def by_id(self) -> dict:
        return {u.utt_id: u for u in self.utterances}


def _speaker_id(i: int) -> str:
    return f"spk{i:03d}"


def _utt_id(spk: int, u: int) -> str:
    return f"spk{spk:03d}_utt{u:03d}"


def generate_utterance(cfg: CorpusConfig, mixing: np.ndarray, spk: int, u: int) -> Utterance:
    latent = Stream(cfg.seed, f"speaker/{spk}").gaussian(cfg.frame_dim) * cfg.speaker_scale
    channel = Stream(cfg.seed, f"channel/{spk}/{u}").gaussian(cfg.frame_dim) * cfg.channel_scale
    span = cfg.frames_max - cfg.frames_min + 1
    t = cfg.frames_min + Stream(cfg.seed, f"length/{spk}/{u}").randint(span)
    noise = Stream(cfg.seed, f"noise/{spk}/{u}").gaussian((t, cfg.frame_dim)) * cfg.noise_scale
    frames = (mixing @ latent)[None, :] + channel[None, :] + noise
    return Utterance(_utt_id(spk, u), _speaker_id(spk), frames)


def generate_corpus(cfg: CorpusConfig) -> Corpus:
    """All utterances for the config, split 50/50 into pretrain and adapt
    speakers (pretrain gets the extra speaker when the count is odd)."""
    mixing = Stream(cfg.seed, "mixing").gaussian((cfg.frame_dim, cfg.frame_dim))
    mixing /= np.sqrt(cfg.frame_dim)
    utterances = [
        generate_utterance(cfg, mixing, spk, u)
        for spk in range(cfg.num_speakers)
        for u in range(cfg.utts_per_speaker)
    ]
    n_pre = (cfg.num_speakers + 1) // 2
    split = {
        _speaker_id(i): ("pretrain" if i < n_pre else "adapt")
        for i in range(cfg.num_speakers)
    }
    return Corpus(cfg, utterances, split)


def generate_trials(utterances, n_target: int, n_nontarget: int, seed: int) -> list:
    """Exact counts of same-speaker and cross-speaker unordered pairs, no
    duplicates, no self-pairs, deterministic in the seed."""
    by_speaker = {}
    for u in utterances:
        by_speaker.setdefault(u.speaker, []).append(u.utt_id)
    target_pool = [
        (ids[i], ids[j])
        for ids in by_speaker.values()
        for i in range(len(ids))
        for j in range(i + 1, len(ids))
    ]
    speakers = sorted(by_speaker)
    nontarget_pool = [
        (a, b)
        for si in range(len(speakers))
        for sj in range(si + 1, len(speakers))
        for a in by_speaker[speakers[si]]
        for b in by_speaker[speakers[sj]]
    ]
    if n_target > len(target_pool):
        raise ConfigError(
            f"requested {n_target} target trials, only {len(target_pool)} "
            f"distinct same-speaker pairs exist"
        )
    if n_nontarget > len(nontarget_pool):
        raise ConfigError(
            f"requested {n_nontarget} nontarget trials, only "
            f"{len(nontarget_pool)} distinct cross-speaker pairs exist"
        )
    stream = Stream(seed, "trials")
    chosen_t = stream.sample(target_pool, n_target)
    chosen_n = stream.sample(nontarget_pool, n_nontarget)
    return [Trial(a, b, True) for a, b in chosen_t] + [
        Trial(a, b, False) for a, b in chosen_n
    ]


def mean_frame_classifier_accuracy(corpus: Corpus) -> float:
    """Training accuracy of a nearest-class-centroid linear classifier on
    utterance-mean frames; the learnability sanity oracle."""
    means = np.stack([u.frames.mean(axis=0) for u in corpus.utterances])
    speakers = sorted({u.speaker for u in corpus.utterances})
    labels = np.array([speakers.index(u.speaker) for u in corpus.utterances])
    centroids = np.stack([means[labels == k].mean(axis=0) for k in range(len(speakers))])
    d2 = ((means[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    return float((d2.argmin(axis=1) == labels).mean())


# ---------------------------------------------------------------------------
# corpus files: text header with config, then one record per utterance


def write_corpus(path, corpus: Corpus) -> None:
    cfg = corpus.config
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(FORMAT_HEADER + "\n")
        fh.write("[config]\n")
        for f in fields(cfg):
            fh.write(f"{f.name}={getattr(cfg, f.name)!r}\n")
        fh.write("[speakers]\n")
        for spk in sorted(corpus.speaker_split):
            fh.write(f"{spk} {corpus.speaker_split[spk]}\n")
        fh.write("[utterances]\n")
        for u in corpus.utterances:
            t, f_dim = u.frames.shape
            fh.write(f"utt {u.utt_id} {u.speaker} {t} {f_dim}\n")
            for row in u.frames:
                fh.write(" ".join(f"{v:.17e}" for v in row) + "\n")


def _parse_config(lines, path):
    values = {}
    field_types = {f.name: f.type for f in fields(CorpusConfig)}
    for lineno, line in lines:
        if line == "[speakers]":
            break
        if "=" not in line:
            raise ParseError(f"{path}:{lineno}: expected key=value in [config]")
        key, _, raw = line.partition("=")
        if key not in field_types:
            raise ParseError(f"{path}:{lineno}: unknown config key {key!r}")
        caster = int if field_types[key] == "int" else float
        try:
            values[key] = caster(raw)
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from exc
    else:
        raise ParseError(f"{path}: missing [speakers] section")
    return CorpusConfig(**values)


def read_corpus(path) -> Corpus:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [(i, line.rstrip("\n")) for i, line in enumerate(fh, start=1)]
    it = iter(lines)
    try:
        lineno, header = next(it)
    except StopIteration:
        raise ParseError(f"{path}: empty corpus file") from None
    if header != FORMAT_HEADER:
        raise ParseError(
            f"{path}:1: unsupported corpus format {header!r}, expected {FORMAT_HEADER!r}"
        )
    lineno, section = next(it, (0, ""))
    if section != "[config]":
        raise ParseError(f"{path}:{lineno}: expected [config] section")
    cfg = _parse_config(it, path)

    split = {}
    for lineno, line in it:
        if line == "[utterances]":
            break
        parts = line.split()
        if len(parts) != 2 or parts[1] not in ("pretrain", "adapt"):
            raise ParseError(f"{path}:{lineno}: bad speaker split line {line!r}")
        split[parts[0]] = parts[1]
    else:
        raise ParseError(f"{path}: missing [utterances] section")

    utterances = []
    for lineno, line in it:
        parts = line.split()
        if len(parts) != 5 or parts[0] != "utt":
            raise ParseError(f"{path}:{lineno}: expected utterance record, got {line!r}")
        _, utt_id, speaker, t_str, f_str = parts
        try:
            t, f_dim = int(t_str), int(f_str)
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from exc
        if speaker not in split:
            raise ParseError(f"{path}:{lineno}: utterance for unlisted speaker {speaker!r}")
        rows = []
        for _ in range(t):
            rowno, row = next(it, (None, None))
            if row is None:
                raise ParseError(f"{path}: truncated utterance {utt_id!r}")
            vals = row.split()
            if len(vals) != f_dim:
                raise ParseError(
                    f"{path}:{rowno}: expected {f_dim} values, got {len(vals)}"
                )
            try:
                rows.append([float(v) for v in vals])
            except ValueError as exc:
                raise ParseError(f"{path}:{rowno}: {exc}") from exc
        utterances.append(Utterance(utt_id, speaker, np.array(rows)))
    return Corpus(cfg, utterances, split)


# trial-list files: "enroll test label" with label 1 (target) or 0


def write_trials(path, trials) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in trials:
            fh.write(f"{t.enroll} {t.test} {int(t.target)}\n")


def read_trials(path) -> list:
    trials = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if len(parts) != 3 or parts[2] not in ("0", "1"):
                raise ParseError(f"{path}:{lineno}: bad trial line {line.rstrip()!r}")
            trials.append(Trial(parts[0], parts[1], parts[2] == "1"))
    return trials
