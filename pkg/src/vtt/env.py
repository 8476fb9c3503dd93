"""Deterministic 2-D planar pushing simulator.

A velocity-controlled end-effector disk pushes a square block toward a goal
pose inside the unit workspace.  Contact is resolved kinematically: the
block yields along the contact normal down to a mass-dependent residual
penetration, so heavier blocks press back harder, and the sensed wrench is
the stiffness force of that residual.  Rendering is a coverage-antialiased
rasterization of goal, block and end-effector, bit-identical for identical
states.

Conventions: world coordinates are (x right, y up) in [0, 1]^2; image row 0
is the top of the scene.  The wrench is [Fx, Fy, Fz, Tx, Ty, Tz] with the
out-of-plane entries identically zero except the z torque, which reports
the contact moment about the block center.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ValidationError
from .rng import SeededRng


@dataclass(frozen=True)
class EnvConfig:
    dt: float = 0.05            # s
    v_max: float = 0.2          # m/s
    r_ee: float = 0.03          # m
    block_half: float = 0.05    # m
    k_contact: float = 200.0    # N/m
    success_radius: float = 0.05
    horizon: int = 100
    mass_min: float = 0.5
    mass_max: float = 2.0
    goal_min_dist: float = 0.3
    goal_max_dist: float = 0.45  # keeps episodes solvable within the horizon
    yaw_gain: float = 0.15      # rad per (N*m) per kg, per step
    image_hw: int = 24
    render_ss: int = 8          # supersampling factor per axis
    ee_home: tuple[float, float] = (0.5, 0.3)

    @property
    def step_len(self) -> float:
        return self.v_max * self.dt


@dataclass
class PushState:
    ee_pos: np.ndarray
    block_pos: np.ndarray
    block_yaw: float
    block_mass: float
    block_half: float
    goal_pos: np.ndarray
    step_count: int = 0
    wrench: np.ndarray = field(default_factory=lambda: np.zeros(6, dtype=np.float32))
    contact: int = 0


@dataclass
class ObservationPair:
    image: np.ndarray   # [H, W, 3] in [0, 1]
    wrench: np.ndarray  # [1, 6]
    contact_gt: int
    aligned: int
    t: int


@dataclass
class StepResult:
    obs: ObservationPair
    reward: float
    done: bool
    info: dict


def reset(rng: SeededRng, cfg: EnvConfig) -> PushState:
    """Block in the central region, mass uniform, goal in a solvable distance band."""
    block = np.array([rng.uniform((), 0.4, 0.6), rng.uniform((), 0.4, 0.6)])
    mass = float(rng.uniform((), cfg.mass_min, cfg.mass_max))
    while True:
        goal = np.array([rng.uniform((), 0.2, 0.8), rng.uniform((), 0.2, 0.8)])
        if cfg.goal_min_dist <= np.linalg.norm(goal - block) <= cfg.goal_max_dist:
            break
    return PushState(
        ee_pos=np.array(cfg.ee_home, dtype=np.float64),
        block_pos=block.astype(np.float64),
        block_yaw=0.0,
        block_mass=mass,
        block_half=cfg.block_half,
        goal_pos=goal.astype(np.float64),
    )


def _rot(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def _closest_point_on_block(point: np.ndarray, state: PushState):
    """Closest point of the (rotated) block boundary/interior to `point`.

    Returns (closest_world, outward_normal_world, distance).  For a point
    inside the block the nearest face is used and the distance is 0.
    """
    h = state.block_half
    rot = _rot(state.block_yaw)
    local = rot.T @ (point - state.block_pos)
    clipped = np.clip(local, -h, h)
    if np.all(np.abs(local) < h):  # interior: exit through the nearest face
        overlap = h - np.abs(local)
        axis = int(np.argmin(overlap))
        sign = 1.0 if local[axis] >= 0 else -1.0
        clipped = local.copy()
        clipped[axis] = sign * h
        normal_local = np.zeros(2)
        normal_local[axis] = sign
        dist = 0.0
    else:
        delta = local - clipped
        dist = float(np.linalg.norm(delta))
        if dist > 1e-12:
            normal_local = delta / dist
        else:  # exactly on the boundary
            overlap = h - np.abs(local)
            axis = int(np.argmin(overlap))
            normal_local = np.zeros(2)
            normal_local[axis] = 1.0 if local[axis] >= 0 else -1.0
    return state.block_pos + rot @ clipped, rot @ normal_local, dist


def _penetration(state: PushState, cfg: EnvConfig):
    """(depth, normal, contact_point): depth > 0 when the ee disk overlaps the block."""
    closest, normal, dist = _closest_point_on_block(state.ee_pos, state)
    inside = np.all(np.abs(_rot(state.block_yaw).T @ (state.ee_pos - state.block_pos))
                    < state.block_half)
    if inside:
        depth = cfg.r_ee + float(np.linalg.norm(state.ee_pos - closest))
    else:
        depth = cfg.r_ee - dist
    return depth, normal, closest


def _residual_penetration(mass: float, cfg: EnvConfig) -> float:
    """Steady-state penetration the block tolerates; grows with mass."""
    frac = 0.1 + 0.15 * (mass - cfg.mass_min) / max(cfg.mass_max - cfg.mass_min, 1e-9)
    return frac * cfg.r_ee


def physics_step(state: PushState, action: np.ndarray, cfg: EnvConfig) -> tuple[PushState, float, bool, dict]:
    """Advance one step without rendering.

    Returns (new_state, reward, done, info); the new state caches the sensed
    wrench and contact flag for observation assembly.
    """
    a = np.asarray(action, dtype=np.float64).reshape(2)
    if not np.all(np.isfinite(a)):
        raise ValidationError("action contains non-finite values")
    a = np.clip(a, -1.0, 1.0)

    ee_old = state.ee_pos
    ee_new = np.clip(ee_old + a * cfg.step_len, 0.0, 1.0)
    ee_moved = float(np.linalg.norm(ee_new - ee_old))

    block = state.block_pos.copy()
    yaw = state.block_yaw
    trial = replace(state, ee_pos=ee_new)
    depth, normal, contact_pt = _penetration(trial, cfg)

    wrench = np.zeros(6, dtype=np.float32)
    contact = 0
    if depth > 0.0:
        # block yields along -normal down to its mass-dependent residual,
        # never faster than the end-effector moved
        slack = _residual_penetration(state.block_mass, cfg)
        disp = min(max(depth - slack, 0.0), ee_moved)
        block = block - normal * disp
        block = np.clip(block, state.block_half, 1.0 - state.block_half)
        trial = replace(trial, block_pos=block)
        depth2, normal2, contact_pt = _penetration(trial, cfg)
        if depth2 > 0.0:
            contact = 1
            force = cfg.k_contact * depth2 * normal2  # reaction on the sensor
            lever = contact_pt - block
            torque_z = float(lever[0] * (-force[1]) - lever[1] * (-force[0]))
            wrench[0], wrench[1] = force
            wrench[5] = torque_z
            yaw = yaw + float(np.clip(torque_z * cfg.yaw_gain / state.block_mass, -0.1, 0.1))

    dist_goal = float(np.linalg.norm(block - state.goal_pos))
    step_count = state.step_count + 1
    if dist_goal < cfg.success_radius:
        reward, success = 25.0, True
    else:
        reward, success = -10.0 * dist_goal, False
    done = success or step_count >= cfg.horizon

    new_state = PushState(ee_pos=ee_new, block_pos=block, block_yaw=yaw,
                          block_mass=state.block_mass, block_half=state.block_half,
                          goal_pos=state.goal_pos.copy(), step_count=step_count,
                          wrench=wrench, contact=contact)
    info = {"contact": contact, "dist_to_goal": dist_goal, "success": success}
    return new_state, reward, done, info


def observe(state: PushState, cfg: EnvConfig) -> ObservationPair:
    return ObservationPair(image=render(state, cfg),
                           wrench=state.wrench.reshape(1, 6).copy(),
                           contact_gt=int(state.contact), aligned=1,
                           t=state.step_count)


def step(state: PushState, action: np.ndarray, cfg: EnvConfig) -> tuple[PushState, StepResult]:
    new_state, reward, done, info = physics_step(state, action, cfg)
    return new_state, StepResult(obs=observe(new_state, cfg), reward=reward,
                                 done=done, info=info)


# ---------------------------------------------------------------------------
# rendering

BG_COLOR = np.array([0.08, 0.08, 0.10], dtype=np.float64)
GOAL_COLOR = np.array([0.45, 0.45, 0.45], dtype=np.float64)
BLOCK_COLOR = np.array([1.0, 1.0, 1.0], dtype=np.float64)
EE_COLOR = np.array([0.95, 0.45, 0.15], dtype=np.float64)


def _sample_grid(cfg: EnvConfig):
    n = cfg.image_hw * cfg.render_ss
    xs = (np.arange(n) + 0.5) / n
    ys = 1.0 - (np.arange(n) + 0.5) / n
    return np.meshgrid(xs, ys)  # [n, n] each; row 0 is the top of the scene


def _coverage(mask: np.ndarray, cfg: EnvConfig) -> np.ndarray:
    hw, ss = cfg.image_hw, cfg.render_ss
    return mask.reshape(hw, ss, hw, ss).mean(axis=(1, 3))


def render(state: PushState, cfg: EnvConfig) -> np.ndarray:
    """Rasterize goal square, block square (yaw-rotated) and ee disk over a dark field."""
    gx, gy = _sample_grid(cfg)
    img = np.empty((cfg.image_hw, cfg.image_hw, 3), dtype=np.float64)
    img[:] = BG_COLOR

    # grey goal square (axis-aligned, half-size = success radius)
    h = cfg.success_radius
    inside = (np.abs(gx - state.goal_pos[0]) <= h) & (np.abs(gy - state.goal_pos[1]) <= h)
    cov = _coverage(inside, cfg)[..., None]
    img = img * (1.0 - cov) + GOAL_COLOR * cov

    # white block square, rotated by yaw
    c, s = np.cos(state.block_yaw), np.sin(state.block_yaw)
    dx, dy = gx - state.block_pos[0], gy - state.block_pos[1]
    lx = c * dx + s * dy
    ly = -s * dx + c * dy
    inside = (np.abs(lx) <= state.block_half) & (np.abs(ly) <= state.block_half)
    cov = _coverage(inside, cfg)[..., None]
    img = img * (1.0 - cov) + BLOCK_COLOR * cov

    # end-effector disk
    inside = (gx - state.ee_pos[0]) ** 2 + (gy - state.ee_pos[1]) ** 2 <= cfg.r_ee ** 2
    cov = _coverage(inside, cfg)[..., None]
    img = img * (1.0 - cov) + EE_COLOR * cov

    return img.astype(np.float32)


# ---------------------------------------------------------------------------
# scripted pusher


def scripted_action(state: PushState, cfg: EnvConfig) -> np.ndarray:
    """Line up behind the block relative to the goal, then push through it.

    Approach navigates directly when the straight path clears the block and
    orbits around it otherwise; push speed scales down with the remaining
    block-goal distance, so contact forces decay as the task completes.
    """
    to_goal = state.goal_pos - state.block_pos
    d_bg = float(np.linalg.norm(to_goal))
    if d_bg < cfg.success_radius * 0.8:
        return np.zeros(2)
    dir_bg = to_goal / d_bg
    standoff = state.block_half + cfg.r_ee

    u = state.block_pos - state.ee_pos
    du = float(np.linalg.norm(u))
    uhat = u / max(du, 1e-9)
    behind = du > 1e-9 and float(np.dot(uhat, dir_bg)) > 0.92

    if behind and du < standoff + 0.05:
        # push: servo toward a carrot point just inside the push face
        speed = float(np.clip(4.0 * d_bg + 0.3, 0.5, 1.0))
        carrot = state.block_pos - dir_bg * (standoff - 0.012)
        err = carrot - state.ee_pos
        norm = float(np.linalg.norm(err))
        aim = dir_bg if norm < 1e-4 else err / norm
        return aim * speed

    push_point = state.block_pos - dir_bg * (standoff - 0.005)
    seg = push_point - state.ee_pos
    seg_len = float(np.linalg.norm(seg))
    if seg_len < 1e-9:
        return np.zeros(2)
    tpar = float(np.clip(np.dot(state.block_pos - state.ee_pos, seg) / seg_len ** 2, 0.0, 1.0))
    clearance = float(np.linalg.norm(state.ee_pos + tpar * seg - state.block_pos))
    if clearance >= standoff - 0.005 or behind:
        return seg / seg_len * min(1.0, seg_len / cfg.step_len)

    # orbit around the block toward the side opposite the goal
    v = state.ee_pos - state.block_pos
    r = max(float(np.linalg.norm(v)), 1e-9)
    vhat = v / r
    ang_ee = np.arctan2(vhat[1], vhat[0])
    ang_target = np.arctan2(-dir_bg[1], -dir_bg[0])
    dang = (ang_target - ang_ee + np.pi) % (2.0 * np.pi) - np.pi
    sign = 1.0 if dang >= 0 else -1.0
    tangent = np.array([-vhat[1], vhat[0]]) * sign
    radial = vhat * (standoff + 0.03 - r) * 8.0
    out = tangent + radial
    return out / max(float(np.linalg.norm(out)), 1e-9)


def rollout(policy_fn, rng: SeededRng, cfg: EnvConfig, render_frames: bool = True):
    """Run one episode; policy_fn(state, obs) -> action.

    Returns (episode dict of stacked arrays, total_return, success).
    """
    state = reset(rng, cfg)
    obs = observe(state, cfg) if render_frames else None
    images, wrenches, actions, rewards, contacts, dones = [], [], [], [], [], []
    total, success = 0.0, False
    while True:
        action = np.asarray(policy_fn(state, obs), dtype=np.float64).reshape(2)
        if render_frames:
            images.append(obs.image)
            wrenches.append(obs.wrench.reshape(6))
            contacts.append(float(obs.contact_gt))
        state, reward, done, info = physics_step(state, action, cfg)
        if render_frames:
            obs = observe(state, cfg)
        actions.append(action.astype(np.float32))
        rewards.append(float(reward))
        dones.append(float(done))
        total += reward
        success = success or info["success"]
        if done:
            break
    episode = {
        "actions": np.asarray(actions, dtype=np.float32),
        "rewards": np.asarray(rewards, dtype=np.float32),
        "dones": np.asarray(dones, dtype=np.float32),
    }
    if render_frames:
        episode["images"] = np.asarray(images, dtype=np.float32)
        episode["wrenches"] = np.asarray(wrenches, dtype=np.float32)
        episode["contacts"] = np.asarray(contacts, dtype=np.float32)
    return episode, total, success
