"""Seeded stand-in for the CSI + pose dataset.

Each activity drives eight limb angles (left/right forearm, upper arm, upper
leg, lower leg).  The pose sequence is obtained from the angles by forward
kinematics on a 17-keypoint skeleton; the CSI magnitudes respond linearly to
the same angles, each limb owning a disjoint band of subcarriers, plus
AR(1)-filtered Gaussian noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

ACTIVITIES = ("walking", "running", "jumping", "squatting", "waving", "clapping", "wiping")

LIMBS = (
    "l_forearm",
    "r_forearm",
    "l_upper_arm",
    "r_upper_arm",
    "l_upper_leg",
    "r_upper_leg",
    "l_lower_leg",
    "r_lower_leg",
)
GROUPS = {
    "forearms": ("l_forearm", "r_forearm"),
    "upper_arms": ("l_upper_arm", "r_upper_arm"),
    "upper_legs": ("l_upper_leg", "r_upper_leg"),
    "lower_legs": ("l_lower_leg", "r_lower_leg"),
}

# 17-point skeleton (Human3.6M ordering used by VideoPose3D)
KEYPOINTS = (
    "pelvis", "r_hip", "r_knee", "r_ankle", "l_hip", "l_knee", "l_ankle", "spine",
    "thorax", "neck", "head", "l_shoulder", "l_elbow", "l_wrist", "r_shoulder",
    "r_elbow", "r_wrist",
)  # fmt: skip
LIMB_JOINTS = {
    "l_upper_arm": (11, 12),
    "l_forearm": (12, 13),
    "r_upper_arm": (14, 15),
    "r_forearm": (15, 16),
    "l_upper_leg": (4, 5),
    "l_lower_leg": (5, 6),
    "r_upper_leg": (1, 2),
    "r_lower_leg": (2, 3),
}
LIMB_LENGTH = {"upper_arm": 0.28, "forearm": 0.25, "upper_leg": 0.42, "lower_leg": 0.40}
REST_ANGLE = -math.pi / 2

SQUAT_PERIOD = 3.0


@dataclass(frozen=True)
class GroupMotion:
    amplitude: float  # radians
    freq: float  # Hz
    antiphase: bool = True  # left/right half a cycle apart


# Cyclic activities: one GroupMotion per limb group; missing groups stay at rest.
_CYCLIC = {
    "walking": {
        "upper_legs": GroupMotion(0.35, 1.0),
        "lower_legs": GroupMotion(0.45, 1.0),
        "upper_arms": GroupMotion(0.01, 1.0),
        "forearms": GroupMotion(0.02, 1.0),
    },
    "running": {
        "upper_legs": GroupMotion(0.70, 2.5),
        "lower_legs": GroupMotion(0.90, 2.5),
        "upper_arms": GroupMotion(0.50, 2.5),
        "forearms": GroupMotion(0.35, 2.5),
    },
    "jumping": {
        "upper_legs": GroupMotion(0.45, 1.6, antiphase=False),
        "lower_legs": GroupMotion(0.70, 1.6, antiphase=False),
        "upper_arms": GroupMotion(0.60, 1.6, antiphase=False),
        "forearms": GroupMotion(0.40, 1.6, antiphase=False),
    },
    "waving": {
        "upper_arms": GroupMotion(0.90, 1.8, antiphase=False),
        "forearms": GroupMotion(1.00, 1.8, antiphase=False),
    },
    "clapping": {
        "upper_arms": GroupMotion(0.12, 3.0),
        "forearms": GroupMotion(0.60, 3.0),
    },
    "wiping": {
        "upper_arms": GroupMotion(0.35, 0.8),
        "forearms": GroupMotion(0.45, 0.8),
    },
}


def _check_activity(activity: str) -> None:
    if activity not in ACTIVITIES:
        raise ValueError(f"unknown activity {activity!r}; expected one of {ACTIVITIES}")


def limb_angle_series(activity: str, t: np.ndarray, seed: int) -> dict[str, np.ndarray]:
    """Absolute limb angles (radians) at times ``t`` for one recording.

    Per-recording amplitude, frequency and phase jitter comes from ``seed`` so the
    CSI and pose streams of the same recording agree.  Squatting is phase-locked
    to t = 0 with a 3 s cycle: an arm raise in the first 0.3 s, legs at rest
    until 0.6 s, a descent reaching full depth at 1.2 s, a hold, and the rise
    back to rest over the last 0.8 s.
    """
    _check_activity(activity)
    rng = np.random.default_rng([seed, 7919])
    angles = {limb: np.full(t.shape, REST_ANGLE) for limb in LIMBS}
    if activity == "squatting":
        amp = 0.9 * rng.uniform(0.9, 1.1)
        arm_amp = 0.45 * rng.uniform(0.9, 1.1)
        phase = np.mod(t, SQUAT_PERIOD)
        descent = np.sin(0.5 * math.pi * np.clip((phase - 0.6) / 0.6, 0.0, 1.0))
        ascent = 0.5 * (1 + np.cos(math.pi * np.clip((phase - 2.2) / 0.8, 0.0, 1.0)))
        legs = amp * np.where(phase < 0.6, 0.0, np.where(phase < 2.2, descent, ascent))
        arms = np.where(phase < 0.3, arm_amp * np.sin(2 * math.pi * phase / 0.3), 0.0)
        for side in ("l", "r"):
            angles[f"{side}_upper_leg"] = REST_ANGLE + legs
            angles[f"{side}_lower_leg"] = REST_ANGLE - 1.1 * legs
            angles[f"{side}_upper_arm"] = REST_ANGLE + arms
            angles[f"{side}_forearm"] = REST_ANGLE + 0.6 * arms
        return angles
    spec = _CYCLIC[activity]
    fscale = rng.uniform(0.95, 1.05)
    base_phase = rng.uniform(0, 2 * math.pi)
    for group, limbs in GROUPS.items():
        motion = spec.get(group)
        amp_jitter = rng.uniform(0.9, 1.1)
        if motion is None:
            continue
        f = motion.freq * fscale
        a = motion.amplitude * amp_jitter
        for k, limb in enumerate(limbs):
            shift = math.pi * k if motion.antiphase else 0.0
            angles[limb] = REST_ANGLE + a * np.sin(2 * math.pi * f * t + base_phase + shift)
    return angles


def pose_from_angles(angles: dict[str, np.ndarray]) -> np.ndarray:
    """Keypoints [frames][17][2] by forward kinematics from absolute limb angles."""
    n = len(next(iter(angles.values())))
    kp = np.zeros((n, 17, 2))
    fixed = {
        0: (0.0, 0.0), 1: (-0.1, 0.0), 4: (0.1, 0.0), 7: (0.0, 0.25), 8: (0.0, 0.5),
        9: (0.0, 0.6), 10: (0.0, 0.72), 11: (0.18, 0.5), 14: (-0.18, 0.5),
    }  # fmt: skip
    for j, (x, y) in fixed.items():
        kp[:, j] = (x, y)
    for limb in ("l_upper_arm", "l_forearm", "r_upper_arm", "r_forearm",
                 "l_upper_leg", "l_lower_leg", "r_upper_leg", "r_lower_leg"):  # fmt: skip
        a, b = LIMB_JOINTS[limb]
        length = LIMB_LENGTH[limb[2:]]
        th = angles[limb]
        kp[:, b, 0] = kp[:, a, 0] + length * np.cos(th)
        kp[:, b, 1] = kp[:, a, 1] + length * np.sin(th)
    return kp


def csi_response(
    angles: dict[str, np.ndarray],
    subcarriers: int,
    antennas: int,
    seed: int,
    noise_std: float,
    noise_corr: float,
) -> np.ndarray:
    """Magnitudes [frames][subcarriers][antennas] for the given limb angles.

    The environment (base level and per-limb gains) depends only on the subcarrier
    and antenna counts, so different recordings share one room.
    """
    env = np.random.default_rng([subcarriers, antennas, 104729])
    n = len(next(iter(angles.values())))
    base = env.uniform(12.0, 28.0, size=(subcarriers, antennas))
    bands = np.array_split(np.arange(subcarriers), len(LIMBS))
    out = np.broadcast_to(base, (n, subcarriers, antennas)).copy()
    for limb, band in zip(LIMBS, bands):
        if len(band) == 0:
            continue
        gain = env.uniform(3.0, 6.0, size=(len(band), antennas)) * env.choice(
            [-1.0, 1.0], size=(len(band), antennas)
        )
        dev = angles[limb] - REST_ANGLE
        out[:, band, :] += dev[:, None, None] * gain[None]
    if noise_std > 0:
        rng = np.random.default_rng([seed, 15485863])
        w = rng.normal(0.0, noise_std * math.sqrt(1 - noise_corr**2), size=out.shape)
        # AR(1) filter along time, stationary std = noise_std
        noise = np.empty_like(w)
        noise[0] = rng.normal(0.0, noise_std, size=out.shape[1:])
        for i in range(1, n):
            noise[i] = noise_corr * noise[i - 1] + w[i]
        out += noise
    np.maximum(out, 0.0, out=out)
    return out
