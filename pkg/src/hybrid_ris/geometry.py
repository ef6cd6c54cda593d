"""Hybrid-field RIS channel synthesis: array responses, visible regions, pilots."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import vec

SPEED_OF_LIGHT = 299_792_458.0


@dataclass(frozen=True)
class SystemGeometry:
    """Array sizes and positions of the BS / RIS / user setup.

    The RIS is a ULA along the x axis with element 1 at the origin. ``bs_anchor``
    is the BS position and users lie at ``user_range`` metres from element 1.
    """

    M: int = 8
    N: int = 32
    K: int = 4
    wavelength: float = SPEED_OF_LIGHT / 28e9
    d: float | None = None
    bs_anchor: tuple[float, float] = (-90.0, -30.0)
    user_range: tuple[float, float] = (10.0, 20.0)

    def __post_init__(self):
        if self.d is None:
            object.__setattr__(self, "d", self.wavelength / 2)
        if self.M < 1 or self.N < 1 or self.K < 1:
            raise ValueError("array sizes must be positive")
        if self.N % self.K:
            raise ValueError(f"N={self.N} is not divisible by K={self.K}")
        if self.d <= 0 or self.wavelength <= 0:
            raise ValueError("spacing and wavelength must be positive")
        lo, hi = self.user_range
        if not 0 < lo <= hi:
            raise ValueError(f"bad user range {self.user_range}")

    @classmethod
    def from_frequency(cls, freq_hz: float, **kw) -> "SystemGeometry":
        return cls(wavelength=SPEED_OF_LIGHT / freq_hz, **kw)

    @property
    def subarray_size(self) -> int:
        return self.N // self.K

    @property
    def wavenumber(self) -> float:
        return 2 * np.pi / self.wavelength

    @property
    def rayleigh_distance(self) -> float:
        return 2 * (self.N * self.d) ** 2 / self.wavelength

    @property
    def ris_center(self) -> np.ndarray:
        return np.array([(self.N - 1) * self.d / 2, 0.0])

    @property
    def bs_range(self) -> float:
        """Distance from the BS to the RIS centre."""
        return float(np.linalg.norm(np.asarray(self.bs_anchor) - self.ris_center))

    def is_far_field(self, distance: float) -> bool:
        return distance >= self.rayleigh_distance

    def is_near_field(self, distance: float) -> bool:
        return distance < self.rayleigh_distance


def far_field_arv(n_elems: int, varphi: float, d: float, wavelength: float) -> np.ndarray:
    """Planar-wave response, entry n is ``exp(-j 2π/λ (n-1) d varphi)``."""
    if abs(varphi) > 1:
        raise ValueError(f"|varphi| = {abs(varphi)} exceeds 1")
    n = np.arange(n_elems)
    return np.exp(-1j * 2 * np.pi / wavelength * n * d * varphi)


def element_distances(n_elems: int, vartheta: float, r: float, d: float) -> np.ndarray:
    """Exact distance from a source at (r, vartheta) to each element."""
    sin_t = np.sqrt(max(0.0, 1.0 - vartheta**2))
    x = np.arange(n_elems) * d
    return np.hypot(r * vartheta - x, r * sin_t)


def near_field_arv(
    n_elems: int,
    vartheta: float,
    r: float,
    d: float,
    wavelength: float,
    mode: str = "exact",
) -> np.ndarray:
    """Spherical-wave response, entry n is ``exp(+j 2π/λ (r_n - r))``.

    The sign is chosen so that ``r -> inf`` gives ``far_field_arv(vartheta)``.
    ``mode="fresnel"`` uses the second-order distance expansion.
    """
    if r <= 0:
        raise ValueError(f"range must be positive, got {r}")
    if abs(vartheta) > 1:
        raise ValueError(f"|vartheta| = {abs(vartheta)} exceeds 1")
    k = 2 * np.pi / wavelength
    if mode == "exact":
        delta = element_distances(n_elems, vartheta, r, d) - r
    elif mode == "fresnel":
        t = np.arange(n_elems) * d
        delta = -t * vartheta + t**2 * (1 - vartheta**2) / (2 * r)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return np.exp(1j * k * delta)


def fresnel_arv_curv(n_elems: int, angle, curvature, d: float, wavelength: float) -> np.ndarray:
    """Fresnel response parameterized by angle and curvature ``(1 - angle²) / r``.

    Vectorized over matching ``angle``/``curvature`` arrays (one column each).
    Curvature zero is the far-field limit.
    """
    k = 2 * np.pi / wavelength
    t = (np.arange(n_elems) * d)[:, None]
    angle = np.atleast_1d(np.asarray(angle, dtype=float))
    curvature = np.atleast_1d(np.asarray(curvature, dtype=float))
    phase = k * (-t * angle[None, :] + 0.5 * t**2 * curvature[None, :])
    return np.exp(1j * phase)


# -- visible regions -----------------------------------------------------------


@dataclass(frozen=True)
class MarkovVRPrior:
    """Two-state Markov chain over subarrays, state 1 meaning visible."""

    p01: float
    p10: float

    def __post_init__(self):
        if not (0 < self.p01 <= 1 and 0 <= self.p10 < 1):
            raise ValueError(f"bad transition probabilities p01={self.p01}, p10={self.p10}")

    @classmethod
    def from_sparsity(cls, lambda_vr: float, p01: float = 0.35) -> "MarkovVRPrior":
        """Pick ``p10`` so that the stationary visibility equals ``lambda_vr``."""
        if not 0 < lambda_vr <= 1:
            raise ValueError(f"lambda_vr must be in (0, 1], got {lambda_vr}")
        return cls(p01=p01, p10=p01 * (1 - lambda_vr) / lambda_vr)

    @property
    def p00(self) -> float:
        return 1 - self.p01

    @property
    def p11(self) -> float:
        return 1 - self.p10

    @property
    def lambda_vr(self) -> float:
        return self.p01 / (self.p01 + self.p10)


@dataclass(frozen=True)
class VisibleRegion:
    phi_sub: np.ndarray  # K x L_U, binary

    @property
    def K(self) -> int:
        return self.phi_sub.shape[0]

    def expand(self, N: int) -> np.ndarray:
        """Element-level N x L_U mask."""
        return np.repeat(self.phi_sub, N // self.K, axis=0)


def sample_vr(geom: SystemGeometry, L_U: int, prior: MarkovVRPrior, rng,
              max_attempts: int = 50) -> VisibleRegion:
    """Draw one Markov chain of length K per user path; all-zero chains are redrawn."""
    K = geom.K
    phi = np.zeros((K, L_U), dtype=np.int8)
    for l in range(L_U):
        for _ in range(max_attempts):
            col = np.empty(K, dtype=np.int8)
            col[0] = rng.random() < prior.lambda_vr
            for k in range(1, K):
                u = rng.random()
                col[k] = (u >= prior.p10) if col[k - 1] else (u < prior.p01)
            if col.any():
                phi[:, l] = col
                break
        else:
            raise RuntimeError(f"path {l} stayed fully blocked after {max_attempts} draws")
    return VisibleRegion(phi)


# -- paths and channels --------------------------------------------------------


@dataclass(frozen=True)
class PathLossModel:
    alpha_db: float = 61.4
    beta: float = 2.0
    sigma_db: float = 5.8
    los_boost_db: float = 10.0

    def amplitude(self, distance: float, rng) -> float:
        pl_db = self.alpha_db + 10 * self.beta * np.log10(distance) + self.sigma_db * rng.standard_normal()
        return 10 ** (-pl_db / 20)


@dataclass(frozen=True)
class PathSet:
    theta_U: np.ndarray  # L_U
    r_U: np.ndarray  # L_U
    alpha: np.ndarray  # L_U complex
    theta_B: np.ndarray  # L_RB
    phi_R: np.ndarray  # L_RB
    beta: np.ndarray  # L_RB complex

    @property
    def L_U(self) -> int:
        return len(self.theta_U)

    @property
    def L_RB(self) -> int:
        return len(self.theta_B)


def _cgauss(rng, n: int) -> np.ndarray:
    return (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / np.sqrt(2)


def sample_paths(geom: SystemGeometry, L_U: int, L_RB: int, rng,
                 pathloss: PathLossModel | None = PathLossModel()) -> PathSet:
    """Draw angles uniform in cosine, user distances uniform in ``user_range``.

    Path 1 of the user link is the LoS path and gets ``los_boost_db`` extra power.
    With ``pathloss=None`` the gains are unit-variance complex Gaussians.
    """
    if L_U < 1 or L_RB < 1:
        raise ValueError("need at least one path per link")
    theta_U = rng.uniform(-1, 1, L_U)
    r_U = rng.uniform(*geom.user_range, L_U)
    theta_B = rng.uniform(-1, 1, L_RB)
    phi_R = rng.uniform(-1, 1, L_RB)
    alpha = _cgauss(rng, L_U)
    beta = _cgauss(rng, L_RB)
    if pathloss is not None:
        alpha[0] *= 10 ** (pathloss.los_boost_db / 20)
        alpha *= np.array([pathloss.amplitude(r, rng) for r in r_U])
        beta *= np.array([pathloss.amplitude(geom.bs_range, rng) for _ in range(L_RB)])
    return PathSet(theta_U, r_U, alpha, theta_B, phi_R, beta)


@dataclass(frozen=True)
class ChannelRealization:
    h_u: np.ndarray
    H: np.ndarray
    paths: PathSet
    vr: VisibleRegion
    h_cascaded: np.ndarray = field(repr=False)


def user_channel(geom: SystemGeometry, paths: PathSet, vr: VisibleRegion,
                 mode: str = "exact") -> np.ndarray:
    phi = vr.expand(geom.N)
    h_u = np.zeros(geom.N, dtype=complex)
    for l in range(paths.L_U):
        a = near_field_arv(geom.N, paths.theta_U[l], paths.r_U[l], geom.d, geom.wavelength, mode)
        h_u += paths.alpha[l] * a * phi[:, l]
    return h_u


def ris_bs_channel(geom: SystemGeometry, paths: PathSet) -> np.ndarray:
    H = np.zeros((geom.M, geom.N), dtype=complex)
    for l in range(paths.L_RB):
        a_b = far_field_arv(geom.M, paths.theta_B[l], geom.d, geom.wavelength)
        a_r = far_field_arv(geom.N, paths.phi_R[l], geom.d, geom.wavelength)
        H += paths.beta[l] * np.outer(a_b, a_r.conj())
    return H


def synthesize_channel(geom: SystemGeometry, paths: PathSet, vr: VisibleRegion) -> ChannelRealization:
    """Cascaded channel with exact spherical wavefronts on the user link."""
    if paths.L_U < 1 or paths.L_RB < 1:
        raise ValueError("degenerate path set")
    if vr.phi_sub.shape != (geom.K, paths.L_U):
        raise ValueError(f"VR shape {vr.phi_sub.shape} does not match (K, L_U)")
    h_u = user_channel(geom, paths, vr)
    H = ris_bs_channel(geom, paths)
    return ChannelRealization(h_u, H, paths, vr, vec(H * h_u[None, :]))


@dataclass(frozen=True)
class PilotObservation:
    y: np.ndarray  # M*P, pilot blocks stacked
    ris_phases: np.ndarray  # N x P
    noise_var: float
    M: int

    @property
    def P(self) -> int:
        return self.ris_phases.shape[1]

    @property
    def Y(self) -> np.ndarray:
        """Observation as an M x P matrix (column p is pilot p)."""
        return self.y.reshape(self.M, self.P, order="F")

    def permuted(self, order) -> "PilotObservation":
        order = np.asarray(order)
        return PilotObservation(vec(self.Y[:, order]), self.ris_phases[:, order],
                                self.noise_var, self.M)


def noiseless_pilots(ch: ChannelRealization, ris_phases: np.ndarray) -> np.ndarray:
    """M x P matrix with column p equal to ``H diag(η_p) h_u``."""
    return (ch.H * ch.h_u[None, :]) @ ris_phases


def observe(ch: ChannelRealization, P: int, snr_db: float, rng) -> PilotObservation:
    """Random unit-modulus RIS phases per pilot plus circular Gaussian noise.

    The noise variance is the pilot-averaged signal power divided by the SNR,
    where the average is taken over the random phases.
    """
    if P < 1:
        raise ValueError("need at least one pilot")
    M, N = ch.H.shape
    eta = np.exp(2j * np.pi * rng.random((N, P)))
    Y = noiseless_pilots(ch, eta)
    mean_power = float(np.sum(np.abs(ch.h_u) ** 2 * np.sum(np.abs(ch.H) ** 2, axis=0))) / M
    if np.isinf(snr_db) and snr_db > 0:
        noise_var = 0.0
    else:
        noise_var = mean_power / 10 ** (snr_db / 10)
        Y = Y + np.sqrt(noise_var / 2) * (rng.standard_normal((M, P)) + 1j * rng.standard_normal((M, P)))
    return PilotObservation(vec(Y), eta, noise_var, M)
