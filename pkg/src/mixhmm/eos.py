"""Isothermal two-component van-der-Waals mixture.

Stand-in for a molecular-based equation of state. Works in mass densities
[kg/m^3] on the outside and molar concentrations ``c_a = rho_a / M_a`` on the
inside. The Helmholtz free-energy density is

    f = R T sum_a c_a (ln c_a - 1) - R T c ln(1 - B) - sum_ab a_ab c_a c_b

with ``c = c_0 + c_1`` and covolume fraction ``B = b_0 c_0 + b_1 c_1``.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass
from importlib import resources

import numpy as np

R_GAS = 8.314  # J/(mol K)
#: concentrations below this are clamped inside the logarithms [mol/m^3]
C_FLOOR = 1e-12
#: lower bound on squared sound speeds [m^2/s^2]
C2_FLOOR = 1e-6

PARAMS_FORMAT = "vdw-mixture"


class EosError(ValueError):
    exit_code = 20


class SingularDensityError(EosError):
    """Covolume fraction reached one (packing limit)."""


class PhaseError(EosError):
    """State lies in the spinodal region where the system is not hyperbolic."""


class Phase(enum.Enum):
    LIQUID = "liquid"
    VAPOR = "vapor"
    SPINODAL = "spinodal"


PHASE_BY_CODE = (Phase.LIQUID, Phase.VAPOR, Phase.SPINODAL)
PHASE_CODE = {p: k for k, p in enumerate(PHASE_BY_CODE)}


@dataclass(frozen=True)
class EosParams:
    """Parameters in SI: M [kg/mol], a [J m^3/mol^2], b [m^3/mol], T [K]."""

    M0: float
    M1: float
    a00: float
    a01: float
    a11: float
    b0: float
    b1: float
    T: float
    R: float = R_GAS
    version: str = "1"

    def __post_init__(self):
        if not (self.M0 > 0 and self.M1 > 0):
            raise EosError("molar masses must be positive")
        if not (self.b0 > 0 and self.b1 > 0):
            raise EosError("covolumes must be positive")
        if min(self.a00, self.a01, self.a11) < 0:
            raise EosError("attraction coefficients must be non-negative")
        if not self.T > 0:
            raise EosError("temperature must be positive")

    @property
    def M(self) -> np.ndarray:
        return np.array([self.M0, self.M1])

    @property
    def b(self) -> np.ndarray:
        return np.array([self.b0, self.b1])

    @property
    def a(self) -> np.ndarray:
        return np.array([[self.a00, self.a01], [self.a01, self.a11]])

    def to_dict(self) -> dict:
        d = asdict(self)
        d["format"] = PARAMS_FORMAT
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EosParams":
        d = dict(d)
        fmt = d.pop("format", PARAMS_FORMAT)
        if fmt != PARAMS_FORMAT:
            raise EosError(f"unsupported parameter format {fmt!r}")
        d.pop("comment", None)
        return cls(**d)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def load(cls, path) -> "EosParams":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def vdw_from_critical(T_crit: float, c_crit: float, R: float = R_GAS) -> tuple[float, float]:
    """Pure-component ``(a, b)`` from a critical temperature and concentration."""
    b = 1.0 / (3.0 * c_crit)
    a = 27.0 * R * T_crit * b / 8.0
    return a, b


def argon_methane_params() -> EosParams:
    """Calibrated argon-methane parameters shipped with the package."""
    text = resources.files("mixhmm.data").joinpath("vdw_argon_methane_110K.json").read_text()
    return EosParams.from_dict(json.loads(text))


class VdwMixture:
    """Two-component van-der-Waals free energy with geometric cross attraction.

    Args:
        params: Model constants.
        envelope_points: Resolution of the precomputed spinodal envelope on the
            (mole fraction, total concentration) grid.
    """

    def __init__(self, params: EosParams, envelope_points: int = 512):
        self.params = params
        self.T = params.T
        self._M = params.M
        self._a = params.a
        self._b = params.b
        self._RT = params.R * params.T
        self._envelope_points = envelope_points
        self._envelope = None

    # -- helpers ----------------------------------------------------------
    def _conc(self, rho0, rho1):
        rho0 = np.asarray(rho0, dtype=float)
        rho1 = np.asarray(rho1, dtype=float)
        if np.any(rho0 < 0) or np.any(rho1 < 0):
            raise EosError("densities must be non-negative")
        c0 = rho0 / self._M[0]
        c1 = rho1 / self._M[1]
        B = self._b[0] * c0 + self._b[1] * c1
        if np.any(B >= 1.0):
            raise SingularDensityError("covolume fraction reached the packing limit")
        return c0, c1, B

    def _check_T(self, T):
        if T is not None and not math.isclose(T, self.T, rel_tol=1e-12):
            raise EosError(f"model is calibrated at T = {self.T} K, got {T}")

    def packing_limit(self, x1: float) -> float:
        """Total concentration [mol/m^3] where ``B = 1`` at mole fraction ``x1``."""
        return 1.0 / ((1 - x1) * self._b[0] + x1 * self._b[1])

    # -- thermodynamics ---------------------------------------------------
    def free_energy(self, rho0, rho1, T=None):
        """Helmholtz free-energy density [J/m^3]."""
        self._check_T(T)
        c0, c1, B = self._conc(rho0, rho1)
        RT = self._RT
        a = self._a
        ideal = 0.0
        for c in (c0, c1):
            cc = np.maximum(c, C_FLOOR)
            ideal = ideal + np.where(c > 0, c * (np.log(cc) - 1.0), 0.0)
        f = RT * ideal - RT * (c0 + c1) * np.log1p(-B)
        f = f - (a[0, 0] * c0 * c0 + 2 * a[0, 1] * c0 * c1 + a[1, 1] * c1 * c1)
        return f

    def chemical_potential(self, rho0, rho1, T=None):
        """``(mu0, mu1)`` [J/kg], derivatives of the free energy w.r.t. mass densities."""
        self._check_T(T)
        c0, c1, B = self._conc(rho0, rho1)
        RT = self._RT
        a, b = self._a, self._b
        c = c0 + c1
        common = -RT * np.log1p(-B)
        mus = []
        for k, ck in enumerate((c0, c1)):
            molar = (
                RT * np.log(np.maximum(ck, C_FLOOR))
                + common
                + RT * c * b[k] / (1.0 - B)
                - 2.0 * (a[k, 0] * c0 + a[k, 1] * c1)
            )
            mus.append(molar / self._M[k])
        return mus[0], mus[1]

    def pressure(self, rho0, rho1, T=None):
        """Mixture pressure [Pa]."""
        self._check_T(T)
        c0, c1, B = self._conc(rho0, rho1)
        a = self._a
        c = c0 + c1
        return self._RT * c / (1.0 - B) - (
            a[0, 0] * c0 * c0 + 2 * a[0, 1] * c0 * c1 + a[1, 1] * c1 * c1
        )

    def hessian(self, rho0, rho1):
        """Hessian of the free energy w.r.t. mass densities, shape ``(..., 2, 2)``."""
        c0, c1, B = self._conc(rho0, rho1)
        RT = self._RT
        a, b, M = self._a, self._b, self._M
        c = c0 + c1
        inv = 1.0 / (1.0 - B)
        cinv2 = c * inv * inv
        h00 = RT * (2 * b[0] * inv + cinv2 * b[0] * b[0] + 1.0 / np.maximum(c0, C_FLOOR)) - 2 * a[0, 0]
        h11 = RT * (2 * b[1] * inv + cinv2 * b[1] * b[1] + 1.0 / np.maximum(c1, C_FLOOR)) - 2 * a[1, 1]
        h01 = RT * ((b[0] + b[1]) * inv + cinv2 * b[0] * b[1]) - 2 * a[0, 1]
        H = np.empty(np.shape(c0) + (2, 2))
        H[..., 0, 0] = h00 / (M[0] * M[0])
        H[..., 1, 1] = h11 / (M[1] * M[1])
        H[..., 0, 1] = H[..., 1, 0] = h01 / (M[0] * M[1])
        return H

    def is_spinodal(self, rho0, rho1):
        """True where the free-energy Hessian is not positive definite."""
        H = self.hessian(rho0, rho1)
        det = H[..., 0, 0] * H[..., 1, 1] - H[..., 0, 1] * H[..., 1, 0]
        return ~((H[..., 0, 0] > 0) & (det > 0))

    # -- phase classification ----------------------------------------------
    def _build_envelope(self):
        n = self._envelope_points
        xs = np.linspace(0.0, 1.0, n)
        env = np.full((n, 2), np.nan)
        frac = np.linspace(1e-4, 1 - 1e-4, n)
        for k, x in enumerate(xs):
            c = frac * self.packing_limit(x)
            spin = self.is_spinodal((1 - x) * c * self._M[0], x * c * self._M[1])
            if np.any(spin):
                idx = np.flatnonzero(spin)
                env[k] = c[idx[0]], c[idx[-1]]
        # mixtures without an unstable band: fall back to nearest-neighbour envelope
        good = ~np.isnan(env[:, 0])
        if not np.any(good):
            raise EosError("no spinodal region at this temperature")
        for col in range(2):
            env[~good, col] = np.interp(xs[~good], xs[good], env[good, col])
        self._envelope = (xs, env)

    @property
    def envelope(self):
        """``(x1_grid, [[c_low, c_high], ...])`` spinodal band in total concentration."""
        if self._envelope is None:
            self._build_envelope()
        return self._envelope

    def phase_codes(self, rho0, rho1) -> np.ndarray:
        """Integer phase codes (0 liquid, 1 vapour, 2 spinodal) for arrays of states."""
        rho0 = np.asarray(rho0, dtype=float)
        rho1 = np.asarray(rho1, dtype=float)
        if np.any(rho0 + rho1 <= 0):
            raise EosError("total density must be positive")
        spin = self.is_spinodal(rho0, rho1)
        c0 = rho0 / self._M[0]
        c1 = rho1 / self._M[1]
        c = c0 + c1
        x1 = c1 / c
        xs, env = self.envelope
        mid = 0.5 * (np.interp(x1, xs, env[:, 0]) + np.interp(x1, xs, env[:, 1]))
        return np.where(spin, 2, np.where(c > mid, 0, 1))

    def classify_phase(self, rho0, rho1, T=None):
        """Phase of a state (scalar input returns a :class:`Phase`)."""
        self._check_T(T)
        out = self.phase_codes(rho0, rho1)
        if out.ndim == 0:
            return PHASE_BY_CODE[int(out)]
        return np.array([PHASE_BY_CODE[k] for k in out.ravel()], dtype=object).reshape(out.shape)

    # -- hyperbolic wave speed ------------------------------------------------
    def sound_speed_squared(self, rho0, rho1):
        """Largest eigenvalue of ``diag(rho) H`` (squared mixture sound speed)."""
        H = self.hessian(rho0, rho1)
        d = np.sqrt(np.stack([np.asarray(rho0, float), np.asarray(rho1, float)], axis=-1))
        S = d[..., :, None] * H * d[..., None, :]
        # largest eigenvalue of a symmetric 2x2 matrix in closed form
        half_tr = 0.5 * (S[..., 0, 0] + S[..., 1, 1])
        half_diff = 0.5 * (S[..., 0, 0] - S[..., 1, 1])
        lam = half_tr + np.hypot(half_diff, S[..., 0, 1])
        return np.maximum(lam, C2_FLOOR)

    def wave_speeds(self, rho0, rho1, v0, v1) -> np.ndarray:
        """Vectorized :meth:`max_wave_speed` for normal velocities (no phase check)."""
        return np.maximum(np.abs(v0), np.abs(v1)) + np.sqrt(self.sound_speed_squared(rho0, rho1))

    def max_wave_speed(self, state, n=None) -> float:
        """Bound on the characteristic speeds of the isothermal two-velocity system.

        Args:
            state: ``(rho0, rho1, m0, m1)`` with scalar normal momenta or
                d-vectors of momenta.
            n: Unit normal; required when momenta are vectors.
        """
        rho0, rho1, m0, m1 = state
        if self.is_spinodal(rho0, rho1):
            raise PhaseError(f"state ({rho0}, {rho1}) is in the spinodal region")
        vn = []
        for rho, m in ((rho0, m0), (rho1, m1)):
            m = np.asarray(m, dtype=float)
            if m.ndim:
                m = float(np.dot(m, n))
            vn.append(abs(float(m) / rho) if rho > 0 else 0.0)
        return max(vn) + math.sqrt(float(self.sound_speed_squared(rho0, rho1)))


def default_eos() -> VdwMixture:
    return VdwMixture(argon_methane_params())
