"""Atomistic interface solver: two-phase MD run, interface tracking, slab sampling."""

from __future__ import annotations

import logging
import math
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.ndimage import gaussian_filter1d

from mixhmm import units
from mixhmm.eos import EosError, Phase, VdwMixture, default_eos
from mixhmm.md import engine
from mixhmm.md.engine import LjTable, MdError, ParticleSystem
from mixhmm.units import QuantityKind

log = logging.getLogger(__name__)


class InterfaceLostError(MdError):
    """No liquid/vapour density crossing was found in the box."""

    exit_code = 14


class SlabGeometryError(engine.ParameterError):
    """A phase cuboid is shorter than the reach of its sampling slab."""


@dataclass(frozen=True)
class MdParams:
    """Run parameters of the atomistic solver (reduced units unless noted).

    ``n_thermalize`` steps of size ``dtau_thermalize`` equilibrate each cuboid
    before the production run of ``n_end`` steps of size ``dtau``.
    """

    n_particles: int = 4096
    n_end: int = 500
    dtau: float = 5e-4
    f_t_smpl: float = 0.2
    r_cutoff: float = 2.5
    T: float = 110.0  # K
    n_thermalize: int = 1000
    dtau_thermalize: float = 5e-3
    thermostat_production: bool = False
    bin_width: float | None = None  # A, default half the largest sigma
    mirror: bool = False
    normal_periodic: bool = True
    snapshot_every: int = 0

    def __post_init__(self):
        if self.n_particles < 2:
            raise engine.ParameterError("need at least two particles")
        if self.n_end < 2:
            raise engine.ParameterError("need at least two production steps")
        if not (self.dtau > 0 and self.dtau_thermalize > 0):
            raise engine.ParameterError("time steps must be positive")
        if not 0.0 <= self.f_t_smpl <= 1.0:
            raise engine.ParameterError("f_t_smpl must lie in [0, 1]")
        if self.n_thermalize < 0:
            raise engine.ParameterError("n_thermalize must be non-negative")

    def window_start(self) -> int:
        """First production step included in the time average."""
        return min(self.n_end - 1, int(round((1.0 - self.f_t_smpl) * self.n_end)))


#: settings used for the qualitative checks and the desk-scale dataset; the
#: production step is ten times the default so that the interface has moved
#: a few Angstrom by the end of the run
DESK_PARAMS = MdParams(n_particles=4096, n_end=2500, dtau=5e-3)
DATASET_PARAMS = MdParams(n_particles=4096, n_end=1000, dtau=5e-3, n_thermalize=500)


@dataclass(frozen=True)
class SamplingConfig:
    bin_width: float
    slab_offset: float
    slab_width: float
    kernel_length: float
    f_t_smpl: float = 0.2

    def __post_init__(self):
        if not (self.bin_width > 0 and self.slab_width > 0 and self.kernel_length > 0):
            raise engine.ParameterError("sampling lengths must be positive")
        if self.slab_offset < 0:
            raise engine.ParameterError("slab offset must be non-negative")

    @classmethod
    def for_table(cls, table: LjTable, bin_width: float | None = None, f_t_smpl: float = 0.2):
        s = table.sigma_max
        return cls(
            bin_width=bin_width if bin_width else 0.5 * s,
            slab_offset=3.0 * s,
            slab_width=6.0 * s,
            kernel_length=2.0 * s,
            f_t_smpl=f_t_smpl,
        )


def check_slab_geometry(geometry, cfg: SamplingConfig, n_particles: int) -> None:
    """Raise ``SlabGeometryError`` if a slab would reach past its own cuboid.

    Each slab spans ``slab_offset + slab_width`` from the interface, so a shorter
    cuboid samples the other phase (or the far interface) instead of a bulk state.
    """
    reach = cfg.slab_offset + cfg.slab_width
    shortest = min(geometry.length_minus, geometry.length_plus)
    if shortest < reach:
        # cuboid length scales with N^(1/3) at fixed densities
        n_min = int(math.ceil(n_particles * (reach / shortest) ** 3))
        raise SlabGeometryError(
            f"cuboid length {shortest:.1f} A is below the slab reach {reach:.1f} A; "
            f"use at least {n_min} particles for these densities"
        )


# ---------------------------------------------------------------------------
# field profiles


def bin_edges(length: float, width: float) -> np.ndarray:
    n = max(1, int(round(length / width)))
    return np.linspace(0.0, length, n + 1)


@dataclass
class Profiles:
    centers: np.ndarray
    rho: np.ndarray  # (2, nb) u/A^3
    mom: np.ndarray  # (2, nb) normal momentum density
    temperature: np.ndarray  # (nb,) K, NaN in empty bins

    @property
    def total_density(self) -> np.ndarray:
        return self.rho.sum(axis=0)


def _bin_index(x, edges):
    k = np.searchsorted(edges, x, side="right") - 1
    return np.clip(k, 0, len(edges) - 2)


def density_profile(sys: ParticleSystem, edges: np.ndarray, table: LjTable) -> np.ndarray:
    """Total mass density per bin along the normal axis [u/A^3]."""
    vol = np.diff(edges) * sys.box[1] * sys.box[2]
    k = _bin_index(sys.positions[:, 0], edges)
    return np.bincount(k, weights=sys.masses(table), minlength=len(vol)) / vol


def kernel_velocity(sys: ParticleSystem, x: np.ndarray, eps: float) -> np.ndarray:
    """Gaussian-kernel average particle velocity at normal coordinates ``x``."""
    out = np.zeros((len(x), 3))
    xi = sys.positions[:, 0]
    for k0 in range(0, len(x), 256):
        d = x[k0 : k0 + 256, None] - xi[None, :]
        w = np.exp(-0.5 * (d / eps) ** 2)
        ws = w.sum(axis=1)
        ws[ws == 0] = 1.0
        out[k0 : k0 + 256] = (w @ sys.velocities) / ws[:, None]
    return out


def field_profiles(
    sys: ParticleSystem, edges: np.ndarray, table: LjTable, kernel_length: float
) -> Profiles:
    """Histogram densities, normal momenta and local temperature per bin."""
    nb = len(edges) - 1
    vol = np.diff(edges) * sys.box[1] * sys.box[2]
    k = _bin_index(sys.positions[:, 0], edges)
    m = sys.masses(table)
    rho = np.zeros((2, nb))
    mom = np.zeros((2, nb))
    for a in (0, 1):
        sel = sys.species == a
        rho[a] = np.bincount(k[sel], weights=m[sel], minlength=nb) / vol
        mom[a] = np.bincount(k[sel], weights=m[sel] * sys.velocities[sel, 0], minlength=nb) / vol
    # peculiar velocities relative to the kernel-averaged velocity at each particle
    grid = np.linspace(edges[0], edges[-1], 4 * nb + 1)
    vbar_grid = kernel_velocity(sys, grid, kernel_length)
    vbar = np.stack(
        [np.interp(sys.positions[:, 0], grid, vbar_grid[:, d]) for d in range(3)], axis=1
    )
    pec = sys.velocities - vbar
    e = m * np.einsum("ij,ij->i", pec, pec)
    count = np.bincount(k, minlength=nb)
    esum = np.bincount(k, weights=e, minlength=nb)
    with np.errstate(invalid="ignore", divide="ignore"):
        temp = np.where(count > 0, esum / (3.0 * count), np.nan)
    return Profiles(0.5 * (edges[1:] + edges[:-1]), rho, mom, temp)


# ---------------------------------------------------------------------------
# interface tracking


#: required ratio of the liquid to the vapour plateau density
MIN_PLATEAU_CONTRAST = 2.0


def plateau_threshold(profile: np.ndarray, n_iter: int = 50) -> float:
    """Midpoint between the liquid and vapour plateaus (iterated median split)."""
    p = np.asarray(profile, dtype=float)
    t = 0.5 * (p.max() + p.min())
    for _ in range(n_iter):
        hi, lo = p[p > t], p[p <= t]
        if len(hi) == 0 or len(lo) == 0:
            break
        t_new = 0.5 * (np.median(hi) + np.median(lo))
        if t_new == t:
            break
        t = t_new
    return float(t)


def interface_position(
    profile: np.ndarray,
    centers: np.ndarray,
    liquid_left: bool = True,
    smooth_bins: float = 2.0,
    start: float | None = None,
    period: float | None = None,
) -> float:
    """Normal coordinate where the smoothed density first drops below the plateau midpoint.

    The scan runs from the liquid side toward the vapour side: from the
    liquid wall, or on a periodic axis (``period`` given) from ``start``,
    a point inside the liquid. On a periodic axis the result is the image
    closest to ``start`` in the scan direction, so successive positions stay
    continuous. Raises :class:`InterfaceLostError` when no liquid-to-vapour
    crossing exists.
    """
    x = np.asarray(centers, dtype=float)
    mode = "wrap" if period else "nearest"
    p = gaussian_filter1d(np.asarray(profile, dtype=float), smooth_bins, mode=mode)
    step = 1 if liquid_left else -1
    if period:
        nb = len(p)
        dx = period / nb
        k0 = int(np.floor((start - x[0]) / dx + 0.5))
        idx = (k0 + step * np.arange(nb)) % nb
        p = p[idx]
        x = x[0] + k0 * dx + step * dx * np.arange(nb)
    elif not liquid_left:
        p, x = p[::-1], x[::-1]
    if p.max() - p.min() <= 0:
        raise InterfaceLostError("flat density profile")
    t = plateau_threshold(p)
    above = p > t
    if np.median(p[above]) < MIN_PLATEAU_CONTRAST * np.median(p[~above]):
        raise InterfaceLostError("no distinct liquid and vapour plateaus")
    # skip the depleted layer next to a liquid wall
    first = np.flatnonzero(above)
    if len(first) == 0 or first[0] > len(p) // 2:
        raise InterfaceLostError("no liquid plateau at the start of the scan")
    below = np.flatnonzero(~above[first[0] :])
    if len(below) == 0:
        raise InterfaceLostError("no density crossing found")
    k = first[0] + below[0]
    w = (p[k - 1] - t) / (p[k - 1] - p[k])
    return float(x[k - 1] + w * (x[k] - x[k - 1]))


def regression_slope(t: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Least-squares slope and its standard error."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(t)
    if n < 2:
        raise ValueError("need at least two points")
    tm = t - t.mean()
    sxx = float(tm @ tm)
    slope = float(tm @ (y - y.mean())) / sxx
    if n > 2:
        resid = y - y.mean() - slope * tm
        se = math.sqrt(float(resid @ resid) / (n - 2) / sxx)
    else:
        se = float("nan")
    return slope, se


def hac_bandwidth(resid: np.ndarray) -> int:
    """First lag at which the residual autocorrelation turns non-positive."""
    r = resid - resid.mean()
    n = len(r)
    var = float(r @ r)
    if var == 0.0:
        return 0
    for lag in range(1, n // 2):
        if float(r[:-lag] @ r[lag:]) / var <= 0.0:
            return lag
    return n // 2


def hac_slope_stderr(t: np.ndarray, y: np.ndarray, lags: int | None = None) -> float:
    """Newey-West (Bartlett kernel) standard error of the least-squares slope.

    Interface positions sampled every step are strongly autocorrelated, which
    makes the textbook OLS error far too small.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(t)
    if n < 3:
        return float("nan")
    tm = t - t.mean()
    sxx = float(tm @ tm)
    slope = float(tm @ (y - y.mean())) / sxx
    resid = y - y.mean() - slope * tm
    if lags is None:
        lags = hac_bandwidth(resid)
    g = tm * resid
    omega = float(g @ g)
    for lag in range(1, lags + 1):
        w = 1.0 - lag / (lags + 1.0)
        omega += 2.0 * w * float(g[:-lag] @ g[lag:])
    return math.sqrt(max(omega, 0.0) * n / (n - 2)) / sxx


@dataclass
class InterfaceTrace:
    """Per-step interface positions and instantaneous slab states in box coordinates.

    ``states`` columns: rho0-, rho1-, v0-, v1-, rho0+, rho1+, v0+, v1+ (reduced
    units, NaN velocity where a slab held no particle of that species).
    """

    steps: np.ndarray
    times: np.ndarray
    positions: np.ndarray
    states: np.ndarray | None = None
    counts: np.ndarray | None = None

    def speed(self, start: int = 0) -> tuple[float, float]:
        """Slope and OLS standard error over steps ``>= start``."""
        sel = self.steps >= start
        return regression_slope(self.times[sel], self.positions[sel])

    def speed_stderr_hac(self, start: int = 0) -> float:
        sel = self.steps >= start
        return hac_slope_stderr(self.times[sel], self.positions[sel])


def detect_interface(
    profiles: np.ndarray,
    centers: np.ndarray,
    times: np.ndarray,
    liquid_left: bool = True,
    f_t_smpl: float = 1.0,
) -> tuple[InterfaceTrace, float]:
    """Interface positions for a stack of density profiles and the speed [m/s].

    The speed is the regression slope over the final ``f_t_smpl`` fraction of
    the samples, converted to SI.
    """
    profiles = np.atleast_2d(profiles)
    if len(profiles) < 2:
        raise ValueError("need profiles at two or more times")
    pos = np.array([interface_position(p, centers, liquid_left) for p in profiles])
    steps = np.arange(len(pos))
    trace = InterfaceTrace(steps, np.asarray(times, dtype=float), pos)
    start = min(len(pos) - 2, int(round((1.0 - f_t_smpl) * (len(pos) - 1))))
    slope, _ = trace.speed(start)
    return trace, float(units.to_si(slope, QuantityKind.VELOCITY))


# ---------------------------------------------------------------------------
# slab sampling


@dataclass
class SlabSample:
    rho: np.ndarray  # (2,) u/A^3
    velocity: np.ndarray  # (2,) normal velocity, NaN if no particle
    counts: np.ndarray  # (2,)
    volume: float


def sample_slab(sys: ParticleSystem, lo: float, hi: float, table: LjTable) -> SlabSample:
    """Partial densities and per-species mean normal velocity inside ``[lo, hi)``.

    On a periodic normal axis the slab wraps around; otherwise it is clipped
    to the box.
    """
    x = sys.positions[:, 0]
    L = sys.box[0]
    if sys.periodic[0]:
        width = min(hi - lo, L)
        inside = np.mod(x - lo, L) < width
    else:
        lo, hi = max(lo, 0.0), min(hi, L)
        width = max(hi - lo, 0.0)
        inside = (x >= lo) & (x < hi)
    vol = width * sys.box[1] * sys.box[2]
    rho = np.zeros(2)
    vel = np.full(2, np.nan)
    counts = np.zeros(2, dtype=int)
    for a in (0, 1):
        sel = inside & (sys.species == a)
        counts[a] = int(sel.sum())
        if counts[a]:
            rho[a] = table.mass[a] * counts[a] / vol
            vel[a] = float(sys.velocities[sel, 0].mean())
    return SlabSample(rho, vel, counts, vol)


def slab_bounds(position: float, cfg: SamplingConfig, liquid_left: bool = True):
    """``((lo, hi) liquid slab, (lo, hi) vapour slab)`` beside the interface."""
    o, w = cfg.slab_offset, cfg.slab_width
    left = (position - o - w, position - o)
    right = (position + o, position + o + w)
    return (left, right) if liquid_left else (right, left)


def sample_interface_states(
    sys: ParticleSystem, position: float, cfg: SamplingConfig, table: LjTable, liquid_left=True
) -> tuple[SlabSample, SlabSample]:
    (a0, a1), (b0, b1) = slab_bounds(position, cfg, liquid_left)
    return sample_slab(sys, a0, a1, table), sample_slab(sys, b0, b1, table)


# ---------------------------------------------------------------------------
# solver


@dataclass
class InterfaceSolution:
    """Result of one atomistic solve in SI: rotated states ``(rho0, rho1, m0, m1)``."""

    u_minus: np.ndarray
    u_plus: np.ndarray
    s: float
    s_stderr: float = float("nan")  # autocorrelation-robust (Newey-West)
    degenerate: bool = False
    warnings: list[str] = field(default_factory=list)
    trace: InterfaceTrace | None = None
    wall_time: float = 0.0
    s_stderr_ols: float = float("nan")

    def as_vector(self) -> np.ndarray:
        """9-vector (u*-, u*+, s)."""
        return np.concatenate([self.u_minus, self.u_plus, [self.s]])


def _phase_ok(eos: VdwMixture, u, expected: Phase) -> bool:
    try:
        return eos.classify_phase(u[0], u[1]) == expected
    except EosError:
        return False


def write_diagnostics(path, trace: InterfaceTrace, sol: "InterfaceSolution", mirror: bool):
    header = (
        "interface trace of an atomistic Riemann solve (box coordinates)\n"
        f"mirror={mirror}; final u*- [kg/m3, kg/m3, kg/(m2 s), kg/(m2 s)] = "
        f"{' '.join(map(repr, sol.u_minus.tolist()))}\n"
        f"final u*+ = {' '.join(map(repr, sol.u_plus.tolist()))}\n"
        f"s [m/s] = {sol.s!r}; stderr HAC [m/s] = {sol.s_stderr!r}; "
        f"stderr OLS [m/s] = {sol.s_stderr_ols!r}; degenerate={sol.degenerate}\n"
        "step time[tau] gamma[A] rho0-[u/A3] rho1-[u/A3] v0-[red] v1-[red] "
        "rho0+[u/A3] rho1+[u/A3] v0+[red] v1+[red] n0- n1- n0+ n1+"
    )
    data = np.column_stack([trace.steps, trace.times, trace.positions, trace.states, trace.counts])
    np.savetxt(path, data, header=header, fmt="%.17g")


def solve_md_riemann(
    u_minus,
    u_plus,
    params: MdParams = MdParams(),
    seed: int = 0,
    table: LjTable | None = None,
    eos: VdwMixture | None = None,
    diagnostics_dir: str | None = None,
) -> InterfaceSolution:
    """Atomistic interface solve for rotated SI states (liquid ``u_minus``, vapour ``u_plus``).

    Returns time-averaged adjacent states and interface speed along the normal.
    """
    t_start = time.perf_counter()
    table = table or engine.argon_methane(params.r_cutoff)
    eos = eos or default_eos()
    u_minus = np.asarray(u_minus, dtype=float)
    u_plus = np.asarray(u_plus, dtype=float)
    cfg = SamplingConfig.for_table(table, params.bin_width, params.f_t_smpl)
    geometry = engine.cubic_geometry(
        u_minus, u_plus, params.n_particles, table, params.normal_periodic
    )
    check_slab_geometry(geometry, cfg, params.n_particles)
    if params.mirror:
        geometry = geometry.mirrored()
    liquid_left = not params.mirror
    sign = 1.0 if liquid_left else -1.0
    if diagnostics_dir:
        os.makedirs(diagnostics_dir, exist_ok=True)

    sys = None
    try:
        sys = engine.initialize_two_phase_box(
            u_minus,
            u_plus,
            geometry,
            params.T,
            seed,
            table,
            n_thermalize=params.n_thermalize,
            dtau=params.dtau_thermalize,
        )
        counts0 = sys.counts()
        edges = bin_edges(sys.box[0], cfg.bin_width)
        centers = 0.5 * (edges[1:] + edges[:-1])
        n_end = params.n_end
        positions = np.empty(n_end)
        states = np.empty((n_end, 8))
        slab_counts = np.empty((n_end, 4), dtype=int)
        period = sys.box[0] if params.normal_periodic else None
        gamma = geometry.interface
        lookback = 0.5 * geometry.length_minus * sign
        for n in range(1, n_end + 1):
            engine.velocity_verlet_step(sys, params.dtau, table)
            if params.thermostat_production:
                engine.rescale_temperature(sys, params.T, table)
            gamma = interface_position(
                density_profile(sys, edges, table),
                centers,
                liquid_left,
                start=gamma - lookback,
                period=period,
            )
            liq, vap = sample_interface_states(sys, gamma, cfg, table, liquid_left)
            positions[n - 1] = gamma
            states[n - 1] = np.concatenate([liq.rho, liq.velocity, vap.rho, vap.velocity])
            slab_counts[n - 1] = np.concatenate([liq.counts, vap.counts])
            if diagnostics_dir and params.snapshot_every and n % params.snapshot_every == 0:
                engine.write_snapshot(os.path.join(diagnostics_dir, f"snapshot_{n:06d}.txt"), sys, n)
        if sys.counts() != counts0:
            raise MdError("species counts changed during the run")
    except MdError as err:
        if diagnostics_dir and sys is not None:
            path = os.path.join(diagnostics_dir, "abort_snapshot.txt")
            engine.write_snapshot(path, sys)
            err.snapshot_path = path
        raise

    steps = np.arange(1, n_end + 1)
    trace = InterfaceTrace(steps, steps * params.dtau, positions, states, slab_counts)
    start = params.window_start()
    sel = steps >= start
    slope, se = trace.speed(start)
    warnings = []
    avg = np.zeros(8)
    for col in range(8):
        vals = states[sel, col]
        if col in (2, 3, 6, 7):
            ok = np.isfinite(vals)
            if not np.any(ok):
                side = "liquid" if col < 4 else "vapour"
                warnings.append(f"species {col % 2} never sampled in the {side} slab")
                avg[col] = 0.0
                continue
            if not np.all(ok):
                side = "liquid" if col < 4 else "vapour"
                warnings.append(
                    f"species {col % 2} missing from the {side} slab in {int((~ok).sum())} steps"
                )
            avg[col] = float(vals[ok].mean())
        else:
            avg[col] = float(vals.mean())
    rho_si = units.to_si(avg[[0, 1, 4, 5]], QuantityKind.DENSITY)
    v_si = sign * units.to_si(avg[[2, 3, 6, 7]], QuantityKind.VELOCITY)
    u_star_minus = np.array([rho_si[0], rho_si[1], rho_si[0] * v_si[0], rho_si[1] * v_si[1]])
    u_star_plus = np.array([rho_si[2], rho_si[3], rho_si[2] * v_si[2], rho_si[3] * v_si[3]])
    s = sign * float(units.to_si(slope, QuantityKind.VELOCITY))
    s_se_ols = float(units.to_si(se, QuantityKind.VELOCITY))
    s_se = float(units.to_si(trace.speed_stderr_hac(start), QuantityKind.VELOCITY))
    degenerate = not (
        _phase_ok(eos, u_star_minus, Phase.LIQUID) and _phase_ok(eos, u_star_plus, Phase.VAPOR)
    )
    if degenerate:
        warnings.append("interface states are not liquid/vapour admissible")
    sol = InterfaceSolution(
        u_star_minus,
        u_star_plus,
        s,
        s_se,
        degenerate,
        warnings,
        trace,
        time.perf_counter() - t_start,
        s_se_ols,
    )
    if diagnostics_dir:
        write_diagnostics(os.path.join(diagnostics_dir, "interface_trace.txt"), trace, sol, params.mirror)
    return sol


def with_overrides(params: MdParams, **kw) -> MdParams:
    return replace(params, **kw)
