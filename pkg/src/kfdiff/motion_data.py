"""Synthetic motion corpus: pose representation, procedural generators,
keyframe masks, normalization, and JSON-lines persistence.

Pose layout (D = 19 channels per frame):
    [0:15)   xyz positions of 5 joints: root, torso, arm, left foot, right foot
    [15:17)  foot contact indicators in [0, 1] (left, right)
    [17:19)  root velocity on the ground plane (x, z), units per frame
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

FORMAT_VERSION = 1

NUM_JOINTS = 5
POS_DIM = 3 * NUM_JOINTS
NUM_CONTACTS = 2
FEATURE_DIM = POS_DIM + NUM_CONTACTS + 2  # 19

POS_SLICE = slice(0, POS_DIM)
CONTACT_SLICE = slice(POS_DIM, POS_DIM + NUM_CONTACTS)
ROOTVEL_SLICE = slice(POS_DIM + NUM_CONTACTS, FEATURE_DIM)

JOINT_ROOT, JOINT_TORSO, JOINT_ARM, JOINT_LFOOT, JOINT_RFOOT = range(NUM_JOINTS)
FOOT_JOINTS = (JOINT_LFOOT, JOINT_RFOOT)
ARM_CHANNELS = slice(3 * JOINT_ARM, 3 * JOINT_ARM + 3)

ACTIONS = ("walk", "wave", "jump", "bend", "stand")
MODIFIERS = ("slow", "fast")
DIRECTIONS = ("forward", "left", "right")

STD_FLOOR = 1e-6
DEFAULT_FPS = 20

_VERBS = {"walk": "walks", "wave": "waves", "jump": "jumps",
          "bend": "bends", "stand": "stands"}
_DIR_PHRASES = {"forward": "forward", "left": "to the left",
                "right": "to the right"}
_ADVERBS = {"slow": "slowly", "fast": "quickly"}

VOCAB: tuple[str, ...] = ("<pad>", "a", "person", "walks", "waves", "jumps",
                          "bends", "stands", "forward", "to", "the", "left",
                          "right", "slowly", "quickly")
PAD_TOKEN = 0
_WORD_TO_ID = {w: i for i, w in enumerate(VOCAB)}


class ConfigError(ValueError):
    """Invalid corpus or run parameters."""


class ShapeError(ValueError):
    """Array dimensions disagree with the corpus header."""


def tokenize(text: str) -> list[int]:
    try:
        return [_WORD_TO_ID[w] for w in text.split()]
    except KeyError as exc:
        raise ConfigError(f"word not in vocabulary: {exc.args[0]!r}") from exc


def detokenize(tokens: list[int]) -> str:
    return " ".join(VOCAB[t] for t in tokens if t != PAD_TOKEN)


def prompt_text(action: str, modifier: str, direction: str) -> str:
    return (f"a person {_VERBS[action]} {_DIR_PHRASES[direction]} "
            f"{_ADVERBS[modifier]}")


@dataclass
class Prompt:
    text: str
    tokens: list[int]
    action: str
    modifier: str
    direction: str


@dataclass
class MotionSequence:
    frames: np.ndarray  # (N, D) float64
    fps: int = DEFAULT_FPS
    prompt_id: int = -1

    @property
    def length(self) -> int:
        return self.frames.shape[0]


@dataclass
class KeyframeMask:
    mask: np.ndarray  # (N, D) {0, 1}
    keyframe_indices: list[int]


@dataclass
class CorpusStats:
    mean: np.ndarray  # (D,)
    std: np.ndarray  # (D,), floored at STD_FLOOR


@dataclass
class CorpusSpec:
    size: int = 500
    n_max: int = 64
    seed: int = 0
    noise_scale: float = 0.01

    def validate(self) -> None:
        if self.size < 1:
            raise ConfigError(f"corpus size must be >= 1, got {self.size}")
        if self.n_max < 16:
            raise ConfigError(f"N_max must be >= 16, got {self.n_max}")
        if self.noise_scale < 0:
            raise ConfigError("noise_scale must be >= 0")


@dataclass
class Corpus:
    sequences: list[MotionSequence]
    prompts: list[Prompt]
    stats: CorpusStats
    n_max: int
    spec: CorpusSpec = field(default=None)  # type: ignore[assignment]


def _rest_pose() -> np.ndarray:
    joints = np.zeros((NUM_JOINTS, 3))
    joints[JOINT_ROOT] = (0.0, 1.0, 0.0)
    joints[JOINT_TORSO] = (0.0, 1.5, 0.0)
    joints[JOINT_ARM] = (0.3, 1.4, 0.0)
    joints[JOINT_LFOOT] = (-0.1, 0.0, 0.0)
    joints[JOINT_RFOOT] = (0.1, 0.0, 0.0)
    return joints


def _direction_vector(direction: str) -> np.ndarray:
    # ground-plane (x, z) unit vector
    return {"forward": np.array([1.0, 0.0]),
            "left": np.array([0.0, 1.0]),
            "right": np.array([0.0, -1.0])}[direction]


def _synthesize_joints(action: str, modifier: str, direction: str,
                       n: int, fps: int, phase: float = 0.0,
                       amp: float = 1.0, tempo: float = 1.0) -> np.ndarray:
    """Clean joint trajectories, shape (n, NUM_JOINTS, 3).

    phase/amp/tempo are per-sequence style latents deliberately absent from
    the prompt: the text fixes the action class while these parameters pick
    one trajectory within it, so keyframes carry real information."""
    # fast stays below ~1.3 Hz so that keyframes a few frames apart pin the
    # gait phase unambiguously (higher rates alias between nearby keyframes)
    freq = {"slow": 0.6, "fast": 1.1}[modifier] * tempo
    t = np.arange(n) / fps
    joints = np.tile(_rest_pose(), (n, 1, 1))
    dir_xz = _direction_vector(direction)

    if action == "walk":
        speed = 0.45 * freq
        root_xz = np.outer(t, dir_xz) * speed
        for j in (JOINT_ROOT, JOINT_TORSO, JOINT_ARM):
            joints[:, j, 0] += root_xz[:, 0]
            joints[:, j, 2] += root_xz[:, 1]
        # arm counter-swing
        joints[:, JOINT_ARM, 0] += 0.08 * amp * np.sin(
            2 * np.pi * freq * t + phase)
        # alternating stance/swing feet: stationary during stance
        half = max(2, int(round(fps / (2 * freq))))
        stride = speed * (2 * half) / fps
        p0 = int(phase / (2 * np.pi) * 2 * half) % (2 * half)
        foot_xz = {JOINT_LFOOT: joints[0, JOINT_LFOOT, (0, 2)].astype(float),
                   JOINT_RFOOT: joints[0, JOINT_RFOOT, (0, 2)].astype(float)}
        for i in range(n):
            ip = i + p0
            step = (ip // half) % 2  # 0: left swings, 1: right swings
            frac = (ip % half) / half
            for k, j in enumerate(FOOT_JOINTS):
                if (step == 0) == (j == JOINT_LFOOT):
                    foot_xz[j] = foot_xz[j] + dir_xz * (stride / half)
                    joints[i, j, 1] = 0.08 * amp * np.sin(np.pi * frac)
                joints[i, j, 0] = foot_xz[j][0]
                joints[i, j, 2] = foot_xz[j][1]
    elif action == "wave":
        a = 0.5 * amp
        joints[:, JOINT_ARM, 0] += a * np.sin(2 * np.pi * freq * t + phase)
        joints[:, JOINT_ARM, 1] += 0.4 + 0.3 * amp * np.cos(
            2 * np.pi * freq * t + phase)
    elif action == "jump":
        # single parabolic flight; phase shifts the takeoff within the clip
        shift = (phase / (2 * np.pi) - 0.5) * 0.2 * n
        t0, t1 = 0.3 * n + shift, 0.7 * n + shift
        idx = np.arange(n)
        in_air = (idx >= t0) & (idx < t1)
        u = np.zeros(n)
        u[in_air] = (idx[in_air] - t0) / (t1 - t0)
        height = 0.6 * amp * freq * 4 * u * (1 - u)
        for j in range(NUM_JOINTS):
            joints[:, j, 1] += height
    elif action == "bend":
        # the onset delay is the style latent here: the prompt fixes the
        # action class while the start time picks one trajectory within it
        delay = (phase / (2 * np.pi)) * 0.5 * (n / fps)
        ramp = 0.5 * (1 - np.cos(
            np.pi * np.minimum(np.maximum(t - delay, 0.0) * freq, 1.0)))
        joints[:, JOINT_TORSO, 1] -= 0.5 * amp * ramp
        joints[:, JOINT_TORSO, 0] += 0.3 * amp * ramp
        joints[:, JOINT_ARM, 1] -= 0.5 * amp * ramp
        joints[:, JOINT_ROOT, 1] -= 0.15 * amp * ramp
    elif action == "stand":
        # slight personal sway so standing clips are not all identical
        joints[:, JOINT_TORSO, 0] += 0.05 * amp * np.sin(
            2 * np.pi * 0.3 * freq * t + phase)
    else:
        raise ConfigError(f"unknown action {action!r}")
    return joints


def synthesize_motion(action: str, modifier: str, direction: str, n: int,
                      fps: int, noise_scale: float,
                      rng: np.random.Generator) -> np.ndarray:
    """One clean-plus-noise motion, shape (n, FEATURE_DIM). Style latents
    (phase, amplitude, tempo) are drawn from `rng` before the observation
    noise."""
    phase = float(rng.uniform(0.0, 2 * np.pi))
    amp = float(rng.uniform(0.6, 1.4))
    tempo = float(rng.uniform(0.85, 1.2))
    joints = _synthesize_joints(action, modifier, direction, n, fps,
                                phase=phase, amp=amp, tempo=tempo)
    frames = np.zeros((n, FEATURE_DIM))
    frames[:, POS_SLICE] = joints.reshape(n, POS_DIM)

    # contacts from clean foot velocity, before observation noise
    for k, j in enumerate(FOOT_JOINTS):
        pos = joints[:, j, :]
        vel = np.linalg.norm(np.diff(pos, axis=0), axis=1)
        vel = np.concatenate([vel, vel[-1:]])
        frames[:, POS_DIM + k] = (vel < 1e-6).astype(float)

    root_xz = joints[:, JOINT_ROOT][:, (0, 2)]
    rv = np.diff(root_xz, axis=0)
    frames[1:, ROOTVEL_SLICE] = rv
    frames[0, ROOTVEL_SLICE] = rv[0] if n > 1 else 0.0

    if noise_scale > 0:
        frames[:, POS_SLICE] += noise_scale * rng.standard_normal((n, POS_DIM))
    return frames


def _sequence_rng(seed: int, index: int) -> np.random.Generator:
    # per-sequence stream so generation order cannot matter
    ss = np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, index])
    return np.random.default_rng(ss)


def compute_stats(sequences: list[MotionSequence]) -> CorpusStats:
    allframes = np.concatenate([s.frames for s in sequences], axis=0)
    mean = allframes.mean(axis=0)
    std = np.maximum(allframes.std(axis=0), STD_FLOOR)
    return CorpusStats(mean=mean, std=std)


def generate_corpus(spec: CorpusSpec) -> Corpus:
    spec.validate()
    sequences: list[MotionSequence] = []
    prompts: list[Prompt] = []
    for i in range(spec.size):
        rng = _sequence_rng(spec.seed, i)
        action = ACTIONS[rng.integers(len(ACTIONS))]
        modifier = MODIFIERS[rng.integers(len(MODIFIERS))]
        direction = DIRECTIONS[rng.integers(len(DIRECTIONS))]
        n = int(rng.integers(16, spec.n_max + 1))
        frames = synthesize_motion(action, modifier, direction, n,
                                   DEFAULT_FPS, spec.noise_scale, rng)
        text = prompt_text(action, modifier, direction)
        prompts.append(Prompt(text=text, tokens=tokenize(text), action=action,
                              modifier=modifier, direction=direction))
        sequences.append(MotionSequence(frames=frames, fps=DEFAULT_FPS,
                                        prompt_id=i))
    stats = compute_stats(sequences)
    return Corpus(sequences=sequences, prompts=prompts, stats=stats,
                  n_max=spec.n_max, spec=spec)


def sample_keyframe_mask(n: int, rate: float, seed: int,
                         d: int = FEATURE_DIM) -> KeyframeMask:
    """Uniform-without-replacement keyframe rows, K = max(1, round(rate*N))."""
    if n < 1:
        raise ConfigError(f"frame count must be >= 1, got {n}")
    if not 0.0 <= rate <= 1.0:
        raise ConfigError(f"keyframe rate must be in [0, 1], got {rate}")
    k = max(1, int(np.floor(rate * n + 0.5)))  # half-up
    rng = np.random.default_rng(np.random.SeedSequence(
        [seed & 0xFFFFFFFFFFFFFFFF, n]))
    indices = sorted(rng.choice(n, size=k, replace=False).tolist())
    mask = np.zeros((n, d))
    mask[indices, :] = 1.0
    return KeyframeMask(mask=mask, keyframe_indices=indices)


def mask_from_indices(n: int, indices: list[int],
                      d: int = FEATURE_DIM) -> KeyframeMask:
    mask = np.zeros((n, d))
    indices = sorted(set(int(i) for i in indices))
    mask[indices, :] = 1.0
    return KeyframeMask(mask=mask, keyframe_indices=indices)


def normalize(frames: np.ndarray, stats: CorpusStats) -> np.ndarray:
    if frames.shape[-1] != stats.mean.shape[0]:
        raise ShapeError(f"feature dim {frames.shape[-1]} != "
                         f"stats dim {stats.mean.shape[0]}")
    return (frames - stats.mean) / stats.std


def denormalize(frames: np.ndarray, stats: CorpusStats) -> np.ndarray:
    if frames.shape[-1] != stats.mean.shape[0]:
        raise ShapeError(f"feature dim {frames.shape[-1]} != "
                         f"stats dim {stats.mean.shape[0]}")
    return frames * stats.std + stats.mean


def _round_floats(obj):
    return obj  # frames serialized at full precision via repr below


def write_corpus(path: str, corpus: Corpus) -> None:
    header = {
        "version": FORMAT_VERSION,
        "D": FEATURE_DIM,
        "N_max": corpus.n_max,
        "vocab": list(VOCAB),
        "stats": {"mean": corpus.stats.mean.tolist(),
                  "std": corpus.stats.std.tolist()},
    }
    if corpus.spec is not None:
        header["spec"] = {"size": corpus.spec.size, "N_max": corpus.spec.n_max,
                          "seed": corpus.spec.seed,
                          "noise_scale": corpus.spec.noise_scale}
    with open(path, "w") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for i, (seq, pr) in enumerate(zip(corpus.sequences, corpus.prompts)):
            rec = {
                "id": i,
                "prompt_text": pr.text,
                "prompt_tokens": pr.tokens,
                "action": pr.action,
                "modifier": pr.modifier,
                "direction": pr.direction,
                "fps": seq.fps,
                "frames": seq.frames.tolist(),
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_corpus(path: str) -> Corpus:
    with open(path) as fh:
        header = json.loads(fh.readline())
        if header.get("version") != FORMAT_VERSION:
            raise ConfigError(f"unsupported corpus version "
                              f"{header.get('version')!r}")
        if header["D"] != FEATURE_DIM:
            raise ShapeError(f"corpus D={header['D']} != {FEATURE_DIM}")
        sequences, prompts = [], []
        for line in fh:
            rec = json.loads(line)
            frames = np.asarray(rec["frames"], dtype=np.float64)
            if not np.all(np.isfinite(frames)):
                raise ShapeError(f"non-finite frames in record {rec['id']}")
            sequences.append(MotionSequence(frames=frames, fps=rec["fps"],
                                            prompt_id=rec["id"]))
            prompts.append(Prompt(text=rec["prompt_text"],
                                  tokens=rec["prompt_tokens"],
                                  action=rec["action"],
                                  modifier=rec["modifier"],
                                  direction=rec["direction"]))
    stats = CorpusStats(mean=np.asarray(header["stats"]["mean"]),
                        std=np.asarray(header["stats"]["std"]))
    spec = None
    if "spec" in header:
        s = header["spec"]
        spec = CorpusSpec(size=s["size"], n_max=s["N_max"], seed=s["seed"],
                          noise_scale=s["noise_scale"])
    return Corpus(sequences=sequences, prompts=prompts, stats=stats,
                  n_max=header["N_max"], spec=spec)
