"""Synthetic PDE trajectory generators with checkable stability bounds.

All generators integrate on periodic grids with first-order explicit
schemes, are deterministic under a fixed seed, and emit ``FieldSequence``
trajectories whose shapes satisfy the compression constraints (H, W
divisible by 8; T divisible by 4).

Schemes:
  * reaction-diffusion (activator/substrate pair): explicit Euler with a
    5-point Laplacian on a unit-spacing lattice
  * heat equation: explicit Euler on the unit square, with the analytic
    single-mode solution attached as oracle metadata
  * passive tracer in a steady shear: semi-Lagrangian backtrace with
    periodic bilinear interpolation (mass-conserving up to interpolation
    error)
  * advected-diffused tracer: semi-Lagrangian advection plus an explicit
    diffusion substep, used as the held-out adaptation task
"""

import numpy as np

from ..errors import ConfigError, StabilityError
from .types import Boundary, DatasetSpec, FieldSequence, SPATIAL_FACTOR, TEMPORAL_FACTOR


def _check_shape(T: int, H: int, W: int) -> None:
    if T % TEMPORAL_FACTOR:
        raise ConfigError(f"frame count {T} must be divisible by {TEMPORAL_FACTOR}")
    if H % SPATIAL_FACTOR or W % SPATIAL_FACTOR:
        raise ConfigError(f"grid {H}x{W} must be divisible by {SPATIAL_FACTOR}")


def laplacian(z: np.ndarray) -> np.ndarray:
    """Periodic 5-point Laplacian at unit grid spacing (last two axes)."""
    return (
        np.roll(z, 1, -2)
        + np.roll(z, -1, -2)
        + np.roll(z, 1, -1)
        + np.roll(z, -1, -1)
        - 4.0 * z
    )


def generate_gray_scott(
    feed_rate: float,
    kill_rate: float,
    diffusion_u: float,
    diffusion_v: float,
    T: int,
    H: int,
    W: int,
    dt: float,
    seed: int,
    save_every: int = 1,
    init: str = "spots",
    noise_amplitude: float = 0.02,
    dataset_name: str = "gray_scott",
) -> FieldSequence:
    """Two-species reaction-diffusion trajectory (channels u, v).

    ``init="spots"`` seeds 1-3 random squares into the (u=1, v=0)
    background plus small uniform noise; ``init="uniform"`` keeps the
    exact homogeneous background (a fixed point when all rates vanish).
    ``save_every`` records one frame every that many integrator steps;
    frame 0 is the initial condition.
    """
    _check_shape(T, H, W)
    d = max(diffusion_u, diffusion_v)
    bound = np.inf if d == 0 else 1.0 / (4.0 * d)
    if dt <= 0 or dt > bound:
        raise StabilityError(
            f"dt={dt} violates explicit-Euler stability dt <= h^2/(4*max(Du,Dv)) = {bound:.6g}"
        )

    rng = np.random.default_rng(seed)
    u = np.ones((H, W), dtype=np.float64)
    v = np.zeros((H, W), dtype=np.float64)
    if init == "spots":
        n_seeds = int(rng.integers(1, 4))
        for _ in range(n_seeds):
            s = int(rng.integers(H // 16, H // 6 + 1))
            cy = int(rng.integers(0, H))
            cx = int(rng.integers(0, W))
            ys = (np.arange(cy - s, cy + s) % H)[:, None]
            xs = (np.arange(cx - s, cx + s) % W)[None, :]
            u[ys, xs] = 0.5
            v[ys, xs] = 0.25
        u += noise_amplitude * (rng.random((H, W)) - 0.5)
        v += noise_amplitude * (rng.random((H, W)) - 0.5)
        np.clip(u, 0.0, 1.0, out=u)
        np.clip(v, 0.0, 1.0, out=v)
    elif init != "uniform":
        raise ConfigError(f"unknown init {init!r}")

    frames = np.empty((T, 2, H, W), dtype=np.float32)
    frames[0, 0], frames[0, 1] = u, v
    for t in range(1, T):
        for _ in range(save_every):
            uvv = u * v * v
            du = diffusion_u * laplacian(u) - uvv + feed_rate * (1.0 - u)
            dv = diffusion_v * laplacian(v) + uvv - (feed_rate + kill_rate) * v
            u = u + dt * du
            v = v + dt * dv
        frames[t, 0], frames[t, 1] = u, v

    spec = DatasetSpec(
        name=dataset_name,
        channels=("u", "v"),
        height=H,
        width=W,
        frame_interval=dt * save_every,
        boundary=Boundary.PERIODIC,
    )
    meta = {
        "generator": "gray_scott",
        "feed_rate": feed_rate,
        "kill_rate": kill_rate,
        "diffusion_u": diffusion_u,
        "diffusion_v": diffusion_v,
        "dt": dt,
        "save_every": save_every,
        "seed": seed,
    }
    return FieldSequence(data=frames, spec=spec, metadata=meta)


def heat_stability_bound(viscosity: float, H: int, W: int) -> float:
    """Explicit-Euler limit for diffusion on the unit square grid."""
    if viscosity == 0:
        return np.inf
    inv_hx2 = float(W) ** 2
    inv_hy2 = float(H) ** 2
    return 1.0 / (2.0 * viscosity * (inv_hx2 + inv_hy2))


def heat_analytic_frame(meta: dict, frame_index: int, H: int, W: int) -> np.ndarray:
    """Closed-form solution for the single-mode initial condition.

    u(x, y, t) = sin(2 pi x) sin(2 pi y) * exp(-8 pi^2 nu t), evaluated at
    the grid sample points for the time of ``frame_index``.
    """
    if meta.get("init_mode") != "single_fourier_mode":
        raise ConfigError("analytic solution only exists for single_fourier_mode")
    t = frame_index * meta["dt"] * meta["save_every"]
    x = np.arange(W) / W
    y = np.arange(H) / H
    u0 = np.sin(2 * np.pi * y)[:, None] * np.sin(2 * np.pi * x)[None, :]
    return u0 * np.exp(-8.0 * np.pi**2 * meta["viscosity"] * t)


def generate_heat(
    viscosity: float,
    T: int,
    H: int,
    W: int,
    dt: float,
    init_mode: str,
    seed: int,
    save_every: int = 1,
    dataset_name: str = "heat",
) -> FieldSequence:
    """Periodic heat equation u_t = nu * lap(u) on the unit square.

    ``single_fourier_mode`` starts from sin(2 pi x) sin(2 pi y), whose
    analytic decay exp(-8 pi^2 nu t) is recorded in the metadata as the
    oracle; ``random_smooth`` superposes a few seeded low-wavenumber modes.
    """
    _check_shape(T, H, W)
    bound = heat_stability_bound(viscosity, H, W)
    if dt <= 0 or dt > bound:
        raise StabilityError(
            f"dt={dt} violates explicit-Euler stability for viscosity={viscosity} "
            f"on a {H}x{W} unit-square grid (bound {bound:.6g})"
        )

    x = np.arange(W) / W
    y = np.arange(H) / H
    if init_mode == "single_fourier_mode":
        u = np.sin(2 * np.pi * y)[:, None] * np.sin(2 * np.pi * x)[None, :]
    elif init_mode == "random_smooth":
        rng = np.random.default_rng(seed)
        u = np.zeros((H, W))
        for ky in range(1, 4):
            for kx in range(1, 4):
                amp = rng.normal(0.0, 1.0) / (kx + ky)
                phx, phy = rng.uniform(0, 2 * np.pi, size=2)
                u += amp * np.sin(2 * np.pi * ky * y + phy)[:, None] * np.sin(
                    2 * np.pi * kx * x + phx
                )[None, :]
    else:
        raise ConfigError(f"unknown init_mode {init_mode!r}")

    inv_hx2 = float(W) ** 2
    inv_hy2 = float(H) ** 2
    frames = np.empty((T, 1, H, W), dtype=np.float32)
    frames[0, 0] = u
    for t in range(1, T):
        for _ in range(save_every):
            lap = inv_hy2 * (np.roll(u, 1, 0) + np.roll(u, -1, 0) - 2 * u) + inv_hx2 * (
                np.roll(u, 1, 1) + np.roll(u, -1, 1) - 2 * u
            )
            u = u + dt * viscosity * lap
        frames[t, 0] = u

    spec = DatasetSpec(
        name=dataset_name,
        channels=("temperature",),
        height=H,
        width=W,
        frame_interval=dt * save_every,
        boundary=Boundary.PERIODIC,
    )
    meta = {
        "generator": "heat",
        "viscosity": viscosity,
        "dt": dt,
        "save_every": save_every,
        "init_mode": init_mode,
        "seed": seed,
    }
    return FieldSequence(data=frames, spec=spec, metadata=meta)


def _bilinear_periodic(field: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Sample ``field`` at fractional (ys, xs) with periodic wrap."""
    H, W = field.shape
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    fy = ys - y0
    fx = xs - x0
    y0 %= H
    x0 %= W
    y1 = (y0 + 1) % H
    x1 = (x0 + 1) % W
    return (
        field[y0, x0] * (1 - fy) * (1 - fx)
        + field[y0, x1] * (1 - fy) * fx
        + field[y1, x0] * fy * (1 - fx)
        + field[y1, x1] * fy * fx
    )


def _advect(tracer: np.ndarray, vx: np.ndarray, vy: np.ndarray, dt: float) -> np.ndarray:
    H, W = tracer.shape
    yy, xx = np.meshgrid(np.arange(H, dtype=np.float64), np.arange(W, dtype=np.float64), indexing="ij")
    return _bilinear_periodic(tracer, yy - vy * dt, xx - vx * dt)


def _velocity_profile(profile, H, W, speed, cross_speed):
    yy, xx = np.meshgrid(np.arange(H, dtype=np.float64), np.arange(W, dtype=np.float64), indexing="ij")
    if profile == "shear":
        vx = speed * np.sin(2 * np.pi * yy / H)
        vy = cross_speed * np.sin(2 * np.pi * xx / W)
    elif profile == "uniform":
        vx = np.full((H, W), speed)
        vy = np.full((H, W), cross_speed)
    elif profile == "zero":
        vx = np.zeros((H, W))
        vy = np.zeros((H, W))
    else:
        raise ConfigError(f"unknown velocity profile {profile!r}")
    return vx, vy


def _tracer_init(rng, H, W):
    """Smooth periodic blob mixture; amplitudes and centers are seeded."""
    yy, xx = np.meshgrid(np.arange(H, dtype=np.float64), np.arange(W, dtype=np.float64), indexing="ij")
    tracer = np.zeros((H, W))
    for _ in range(int(rng.integers(2, 5))):
        cy, cx = rng.uniform(0, H), rng.uniform(0, W)
        sy = rng.uniform(H / 8, H / 4)
        sx = rng.uniform(W / 8, W / 4)
        dy = np.minimum(np.abs(yy - cy), H - np.abs(yy - cy))
        dx = np.minimum(np.abs(xx - cx), W - np.abs(xx - cx))
        tracer += rng.uniform(0.5, 1.0) * np.exp(-0.5 * ((dy / sy) ** 2 + (dx / sx) ** 2))
    return tracer


def generate_shear_advect(
    T: int,
    H: int,
    W: int,
    dt: float,
    seed: int,
    speed: float = 1.2,
    cross_speed: float = 0.25,
    profile: str = "shear",
    save_every: int = 1,
    dataset_name: str = "shear_advect",
) -> FieldSequence:
    """Passive tracer in a steady velocity field (tracer, velocity_x, velocity_y).

    Velocities are in grid cells per time unit and constant in time. The
    semi-Lagrangian step is unconditionally stable; with an integer uniform
    displacement it reduces to an exact circular shift.
    """
    _check_shape(T, H, W)
    if dt <= 0:
        raise StabilityError("dt must be positive")
    rng = np.random.default_rng(seed)
    vx, vy = _velocity_profile(profile, H, W, speed, cross_speed)
    tracer = _tracer_init(rng, H, W)

    frames = np.empty((T, 3, H, W), dtype=np.float32)
    frames[:, 1] = vx
    frames[:, 2] = vy
    frames[0, 0] = tracer
    for t in range(1, T):
        for _ in range(save_every):
            tracer = _advect(tracer, vx, vy, dt)
        frames[t, 0] = tracer

    spec = DatasetSpec(
        name=dataset_name,
        channels=("tracer", "velocity_x", "velocity_y"),
        height=H,
        width=W,
        frame_interval=dt * save_every,
        boundary=Boundary.PERIODIC,
    )
    meta = {
        "generator": "shear_advect",
        "dt": dt,
        "save_every": save_every,
        "profile": profile,
        "speed": speed,
        "cross_speed": cross_speed,
        "seed": seed,
    }
    return FieldSequence(data=frames, spec=spec, metadata=meta)


def generate_advect_diffuse(
    T: int,
    H: int,
    W: int,
    dt: float,
    seed: int,
    diffusivity: float = 0.05,
    speed: float = 1.2,
    cross_speed: float = 0.25,
    profile: str = "shear",
    save_every: int = 1,
    dataset_name: str = "advect_diffuse",
) -> FieldSequence:
    """Tracer that is both advected and diffused (pollutant, velocity_x, velocity_y).

    Held-out adaptation task: shares the velocity channels with the pure
    advection dataset but introduces the novel ``pollutant`` channel and a
    dissipative mechanism. Diffusion uses unit lattice spacing, so the
    explicit substep requires dt <= 1/(4*diffusivity).
    """
    _check_shape(T, H, W)
    bound = np.inf if diffusivity == 0 else 1.0 / (4.0 * diffusivity)
    if dt <= 0 or dt > bound:
        raise StabilityError(
            f"dt={dt} violates the diffusion substep bound dt <= 1/(4*diffusivity) = {bound:.6g}"
        )
    rng = np.random.default_rng(seed)
    vx, vy = _velocity_profile(profile, H, W, speed, cross_speed)
    tracer = _tracer_init(rng, H, W)

    frames = np.empty((T, 3, H, W), dtype=np.float32)
    frames[:, 1] = vx
    frames[:, 2] = vy
    frames[0, 0] = tracer
    for t in range(1, T):
        for _ in range(save_every):
            tracer = _advect(tracer, vx, vy, dt)
            tracer = tracer + dt * diffusivity * laplacian(tracer)
        frames[t, 0] = tracer

    spec = DatasetSpec(
        name=dataset_name,
        channels=("pollutant", "velocity_x", "velocity_y"),
        height=H,
        width=W,
        frame_interval=dt * save_every,
        boundary=Boundary.PERIODIC,
    )
    meta = {
        "generator": "advect_diffuse",
        "dt": dt,
        "save_every": save_every,
        "diffusivity": diffusivity,
        "profile": profile,
        "speed": speed,
        "cross_speed": cross_speed,
        "seed": seed,
    }
    return FieldSequence(data=frames, spec=spec, metadata=meta)


GENERATORS = {
    "gray_scott": generate_gray_scott,
    "heat": generate_heat,
    "shear_advect": generate_shear_advect,
    "advect_diffuse": generate_advect_diffuse,
}
