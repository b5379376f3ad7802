"""Landmark episodes for the spatial-temporal memorization task."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .se3 import Pose, RelativeMotion, sample_motions

LANDMARK_RANGE = 5.0
STEP_INPUT_DIM = 16


@dataclass
class LandmarkEpisode:
    """One episode, or a batch of them when arrays carry a leading batch axis.

    ``R[k], t[k]`` is the motion from frame k-1 to frame k (identity at k=0);
    ``landmarks[k]`` is in frame k; ``targets[k]`` is landmark k in the final frame.
    """

    landmarks: np.ndarray  # (..., T, 3)
    labels: np.ndarray  # (..., T)
    R: np.ndarray  # (..., T, 3, 3)
    t: np.ndarray  # (..., T, 3)
    targets: np.ndarray | None = None

    @property
    def T(self) -> int:
        return self.labels.shape[-1]

    def __len__(self) -> int:
        return self.labels.shape[0] if self.labels.ndim == 2 else 1

    def __getitem__(self, n: int) -> "LandmarkEpisode":
        tg = None if self.targets is None else self.targets[n]
        return LandmarkEpisode(self.landmarks[n], self.labels[n], self.R[n], self.t[n], tg)

    def motion(self, k: int) -> RelativeMotion:
        return Pose(self.R[k], self.t[k])

    def inputs(self) -> np.ndarray:
        """Per-step network inputs, shape (..., T, 16)."""
        return encode_step_input(self.landmarks, self.labels, self.R, self.t)


def compute_targets(landmarks: np.ndarray, R: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Register every landmark into the final frame (batched over leading axes).

    Accumulates the chain backwards: C_{T-1} = I, C_k = C_{k+1} o M_{k+1}.
    """
    T = landmarks.shape[-2]
    batch = landmarks.shape[:-2]
    CR = np.broadcast_to(np.eye(3), batch + (3, 3)).copy()
    Ct = np.zeros(batch + (3,))
    out = np.empty_like(landmarks)
    for k in range(T - 1, -1, -1):
        out[..., k, :] = np.einsum("...ij,...j->...i", CR, landmarks[..., k, :]) + Ct
        if k > 0:
            Rk, tk = R[..., k, :, :], t[..., k, :]
            Ct = np.einsum("...ij,...j->...i", CR, tk) + Ct
            CR = CR @ Rk
    return out


def targets_of(episode: LandmarkEpisode) -> np.ndarray:
    return compute_targets(episode.landmarks, episode.R, episode.t)


def generate_batch(T: int, batch: int, rng: np.random.Generator) -> LandmarkEpisode:
    """``batch`` independent episodes of length T.

    Draw order: motions (angles then translations), landmarks, labels.
    """
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    R, t = sample_motions(rng, (batch, T))
    R[:, 0] = np.eye(3)
    t[:, 0] = 0.0
    landmarks = rng.uniform(-LANDMARK_RANGE, LANDMARK_RANGE, size=(batch, T, 3))
    labels = rng.integers(0, 2, size=(batch, T)).astype(np.float64)
    return LandmarkEpisode(landmarks, labels, R, t, compute_targets(landmarks, R, t))


def generate_episode(T: int, rng: np.random.Generator) -> LandmarkEpisode:
    return generate_batch(T, 1, rng)[0]


def episode_from_motions(motions: list[RelativeMotion], landmarks: np.ndarray,
                         labels: np.ndarray) -> LandmarkEpisode:
    R = np.stack([m.R for m in motions])
    t = np.stack([m.t for m in motions])
    landmarks = np.asarray(landmarks, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    return LandmarkEpisode(landmarks, labels, R, t, compute_targets(landmarks, R, t))


def encode_step_input(landmark, label, R, t) -> np.ndarray:
    """Layout ``[l (3) | c (1) | R row-major (9) | t (3)]``; broadcasts over leading axes."""
    landmark = np.asarray(landmark, dtype=np.float64)
    label = np.asarray(label, dtype=np.float64)
    R = np.asarray(R, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    lead = landmark.shape[:-1]
    return np.concatenate([landmark, label[..., None], R.reshape(lead + (9,)), t], axis=-1)


def decode_step_input(v: np.ndarray):
    v = np.asarray(v)
    lead = v.shape[:-1]
    return v[..., 0:3], v[..., 3], v[..., 4:13].reshape(lead + (3, 3)), v[..., 13:16]
