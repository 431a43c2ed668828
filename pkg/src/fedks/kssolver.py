"""Pseudo-spectral ETDRK4 integrator for the Kuramoto-Sivashinsky equation

    u_t = -u_xxxx - u_xx - u u_x,   x in [0, L), periodic.

The field is advanced in Fourier space; the stiff linear part is integrated
exactly and the quadratic term with fourth-order exponential Runge-Kutta
stages. Coefficients of the scheme are evaluated with contour-integral means
to avoid cancellation near zero symbols.
"""

from __future__ import annotations

import dataclasses
import functools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument, NumericalBlowup

__all__ = [
    "KSParams",
    "SpectralState",
    "ETDRK4Coeffs",
    "Trajectory",
    "wavenumbers",
    "dft_forward",
    "dft_inverse",
    "linear_symbol",
    "etdrk4_coefficients",
    "nonlinear_term",
    "step",
    "random_initial_condition",
    "simulate",
    "KSSolver",
]

REALNESS_TOL = 1e-10


def _is_pow2(n: int) -> bool:
    return isinstance(n, (int, np.integer)) and n > 0 and (n & (n - 1)) == 0


def _integral_ratio(num: float, den: float, what: str) -> int:
    ratio = num / den
    n = int(round(ratio))
    if abs(ratio - n) > 1e-9 * max(1.0, abs(ratio)):
        raise InvalidArgument(f"{what} must be an integer multiple ({num} / {den} = {ratio})")
    return n


@dataclass(frozen=True)
class KSParams:
    L: float = 22.0
    N: int = 64
    dt: float = 2.5e-3
    transient_start: float = -250.0
    sample_interval: float = 0.25
    M: int = 32
    seed: int = 0
    dealias: bool = False

    def __post_init__(self):
        if not _is_pow2(self.N):
            raise InvalidArgument(f"grid size N={self.N} is not a positive power of two")
        if not self.L > 0:
            raise InvalidArgument("domain length L must be positive")
        if not self.dt > 0:
            raise InvalidArgument("dt must be positive")
        if self.M < 16:
            raise InvalidArgument("contour point count M must be >= 16")
        _integral_ratio(self.sample_interval, self.dt, "sample_interval/dt")

    @property
    def steps_per_sample(self) -> int:
        return _integral_ratio(self.sample_interval, self.dt, "sample_interval/dt")

    @property
    def grid(self) -> np.ndarray:
        return self.L * np.arange(self.N) / self.N

    def replace(self, **changes) -> "KSParams":
        return dataclasses.replace(self, **changes)


@dataclass
class SpectralState:
    u_hat: np.ndarray
    t: float


@dataclass(frozen=True)
class ETDRK4Coeffs:
    E: np.ndarray
    E2: np.ndarray
    Q: np.ndarray
    f1: np.ndarray
    f2: np.ndarray
    f3: np.ndarray
    h: float


@dataclass
class Trajectory:
    snapshots: np.ndarray  # (samples, N), physical space
    times: np.ndarray
    params: KSParams = field(default_factory=KSParams)

    def __post_init__(self):
        self.snapshots = np.asarray(self.snapshots, dtype=np.float64)
        self.times = np.asarray(self.times, dtype=np.float64)
        if self.snapshots.shape[0] != self.times.shape[0]:
            raise InvalidArgument("snapshots and times differ in length")

    def __len__(self) -> int:
        return self.snapshots.shape[0]


# ---------------------------------------------------------------------------
# Fourier transforms (mixed radix-8/4/2 Cooley-Tukey, decimation in time)


def _radices(n: int) -> tuple[int, ...]:
    out = []
    while n > 1:
        r = 8 if n % 8 == 0 else n
        out.append(r)
        n //= r
    return tuple(out)


def _digit_reversal(idx: np.ndarray, radices: tuple[int, ...]) -> np.ndarray:
    if idx.size == 1:
        return idx
    r = radices[0]
    return np.concatenate([_digit_reversal(idx[m::r], radices[1:]) for m in range(r)])


@functools.lru_cache(maxsize=None)
def _fft_plan(n: int, inverse: bool):
    """Input permutation plus, per stage, (twiddles, small DFT matrix).

    Stages run bottom-up; stage with radix r merges r sub-transforms of
    length ``sub`` into one of length ``r * sub``.
    """
    radices = _radices(n)
    perm = _digit_reversal(np.arange(n), radices)
    sign = 1.0 if inverse else -1.0
    stages = []
    sub = 1
    for r in reversed(radices):
        size = r * sub
        m = np.arange(r)[:, None]
        kk = np.arange(sub)[None, :]
        twiddle = np.exp(sign * 2j * np.pi * m * kk / size)
        q = np.arange(r)
        kernel = np.exp(sign * 2j * np.pi * np.outer(q, q) / r)
        stages.append((r, sub, twiddle, kernel))
        sub = size
    return perm, tuple(stages)


def _fft(x: np.ndarray, inverse: bool) -> np.ndarray:
    n = x.shape[-1]
    if not _is_pow2(n):
        raise InvalidArgument(f"transform length {n} is not a power of two")
    perm, stages = _fft_plan(n, inverse)
    lead = x.shape[:-1]
    a = x[..., perm].astype(np.complex128)
    for r, sub, twiddle, kernel in stages:
        blocks = a.reshape(*lead, n // (r * sub), r, sub)
        if sub > 1:
            blocks = blocks * twiddle
        a = np.matmul(kernel, blocks).reshape(*lead, n)
    return a


def dft_forward(u) -> np.ndarray:
    """Unnormalized DFT over the last axis: ``U_k = sum_j u_j exp(-2 pi i j k / N)``."""
    return _fft(np.asarray(u), inverse=False)


def _dft_inverse_complex(u_hat) -> np.ndarray:
    u_hat = np.asarray(u_hat)
    return _fft(u_hat, inverse=True) / u_hat.shape[-1]


def dft_inverse(u_hat) -> np.ndarray:
    """Inverse DFT with 1/N normalization; returns the real part."""
    return _dft_inverse_complex(u_hat).real


# ---------------------------------------------------------------------------
# Operators


def wavenumbers(N: int, L: float) -> np.ndarray:
    """Angular wavenumbers in standard DFT ordering.

    The Nyquist entry is kept as ``+2 pi (N/2) / L``; callers building odd
    derivatives have to zero it themselves.
    """
    if not _is_pow2(N):
        raise InvalidArgument(f"N={N} is not a positive power of two")
    if not L > 0:
        raise InvalidArgument("L must be positive")
    j = np.arange(N)
    j = np.where(j <= N // 2, j, j - N)
    return 2.0 * np.pi * j / L


def linear_symbol(k):
    """Fourier symbol of ``-d4/dx4 - d2/dx2``: k^2 - k^4."""
    k = np.asarray(k, dtype=np.float64)
    return k**2 - k**4


def etdrk4_coefficients(symbols, h: float, M: int = 32) -> ETDRK4Coeffs:
    if M < 16:
        raise InvalidArgument("contour point count M must be >= 16")
    if not h > 0:
        raise InvalidArgument("time step h must be positive")
    lam = np.atleast_1d(np.asarray(symbols, dtype=np.float64))
    hl = h * lam
    # unit circle around each h*lambda, midpoints so no node sits on the centre's axis
    r = np.exp(2j * np.pi * (np.arange(1, M + 1) - 0.5) / M)
    z = hl[:, None] + r[None, :]
    ez = np.exp(z)
    z3 = z**3
    Q = h * np.mean((np.exp(z / 2) - 1.0) / z, axis=1).real
    f1 = h * np.mean((-4.0 - z + ez * (4.0 - 3.0 * z + z**2)) / z3, axis=1).real
    f2 = h * np.mean((2.0 + z + ez * (-2.0 + z)) / z3, axis=1).real
    f3 = h * np.mean((-4.0 - 3.0 * z - z**2 + ez * (4.0 - z)) / z3, axis=1).real
    c = lambda a: np.asarray(a, dtype=np.complex128)  # noqa: E731
    return ETDRK4Coeffs(
        E=c(np.exp(hl)), E2=c(np.exp(hl / 2)), Q=c(Q), f1=c(f1), f2=c(f2), f3=c(f3), h=float(h)
    )


def _derivative_factor(k: np.ndarray) -> np.ndarray:
    g = -0.5j * np.asarray(k, dtype=np.float64)
    if g.shape[0] % 2 == 0:
        g[g.shape[0] // 2] = 0.0
    return g


def _dealias_mask(N: int) -> np.ndarray:
    j = np.arange(N)
    j = np.abs(np.where(j <= N // 2, j, j - N))
    return (3 * j < N).astype(np.float64)


def _hermitian(v: np.ndarray) -> np.ndarray:
    # project onto spectra of real fields; exact no-op on symmetric input
    mirrored = np.conj(np.roll(v[::-1], 1))
    return 0.5 * (v + mirrored)


def nonlinear_term(u_hat, k, dealias: bool = False) -> np.ndarray:
    """Fourier coefficients of ``-u u_x``, computed as ``-(i k / 2) F[u^2]``."""
    u_hat = np.asarray(u_hat, dtype=np.complex128)
    if dealias:
        u_hat = u_hat * _dealias_mask(u_hat.shape[-1])
    u = dft_inverse(u_hat)
    return _derivative_factor(k) * dft_forward(u * u)


def _stages(v, c: ETDRK4Coeffs, nl):
    Nv = nl(v)
    a = c.E2 * v + c.Q * Nv
    Na = nl(a)
    b = c.E2 * v + c.Q * Na
    Nb = nl(b)
    cc = c.E2 * a + c.Q * (2.0 * Nb - Nv)
    Nc = nl(cc)
    return c.E * v + c.f1 * Nv + 2.0 * c.f2 * (Na + Nb) + c.f3 * Nc


def step(
    state: SpectralState,
    coeffs: ETDRK4Coeffs,
    k,
    *,
    dealias: bool = False,
    nonlinear: bool = True,
    debug: bool = False,
) -> SpectralState:
    """Advance one ETDRK4 step of size ``coeffs.h``.

    ``nonlinear=False`` drops the quadratic term, leaving the exact linear
    propagator. ``debug`` asserts conjugate symmetry of the result.
    """
    v = np.asarray(state.u_hat, dtype=np.complex128)
    if not np.isfinite(v).all():
        raise NumericalBlowup(state.t)
    if nonlinear:
        g = _derivative_factor(k)
        mask = _dealias_mask(v.shape[0]) if dealias else None

        def nl(w):
            if mask is not None:
                w = w * mask
            u = dft_inverse(w)
            return g * dft_forward(u * u)

        with np.errstate(over="ignore", invalid="ignore"):
            out = _hermitian(_stages(v, coeffs, nl))
    else:
        out = coeffs.E * v
    t = state.t + coeffs.h
    if not np.isfinite(out).all():
        raise NumericalBlowup(t)
    if debug:
        sym = np.conj(np.roll(out[::-1], 1))
        assert np.allclose(out, sym, rtol=0, atol=1e-12 * max(1.0, np.abs(out).max()))
    return SpectralState(out, t)


# ---------------------------------------------------------------------------
# Runs


def random_initial_condition(params: KSParams) -> np.ndarray:
    """Zero-mean field from seeded random amplitudes on Fourier modes 1..4, RMS 0.1."""
    N = params.N
    rng = np.random.default_rng(params.seed)
    n_modes = min(4, N // 2 - 1) if N >= 4 else 1
    amp = rng.standard_normal(n_modes) + 1j * rng.standard_normal(n_modes)
    u_hat = np.zeros(N, dtype=np.complex128)
    u_hat[1 : n_modes + 1] = amp
    u_hat[N - n_modes :] = np.conj(amp[::-1])
    u = dft_inverse(u_hat)
    u -= u.mean()
    return u * (0.1 / math.sqrt(np.mean(u * u)))


class KSSolver:
    """Caches wavenumbers and ETDRK4 coefficients for one ``KSParams``."""

    def __init__(self, params: KSParams):
        self.params = params
        self.k = wavenumbers(params.N, params.L)
        self.coeffs = etdrk4_coefficients(linear_symbol(self.k), params.dt, params.M)
        self._g = _derivative_factor(self.k)
        self._mask = _dealias_mask(params.N) if params.dealias else None

    def _nl(self, w):
        if self._mask is not None:
            w = w * self._mask
        u = dft_inverse(w)
        return self._g * dft_forward(u * u)

    def simulate(self, u0, t_begin: float, t_end: float) -> Trajectory:
        p = self.params
        n_steps = _integral_ratio(t_end - t_begin, p.dt, "(t_end - t_begin)/dt")
        per = p.steps_per_sample
        if n_steps % per:
            raise InvalidArgument("run length is not a whole number of sample intervals")
        n_samples = n_steps // per
        u0 = np.asarray(u0, dtype=np.float64)
        if u0.shape != (p.N,):
            raise InvalidArgument(f"initial field must have shape ({p.N},)")

        snaps = np.empty((n_samples, p.N))
        times = t_begin + p.sample_interval * np.arange(1, n_samples + 1)
        v = dft_forward(u0)
        c = self.coeffs
        for s in range(n_samples):
            for i in range(per):
                # overflow surfaces as inf/nan and is reported below
                with np.errstate(over="ignore", invalid="ignore"):
                    v = _hermitian(_stages(v, c, self._nl))
                if not np.isfinite(v).all():
                    raise NumericalBlowup(t_begin + (s * per + i + 1) * p.dt)
            u = _dft_inverse_complex(v)
            leak = np.abs(u.imag).max()
            if leak >= REALNESS_TOL * max(1.0, np.abs(u.real).max()):
                raise NumericalBlowup(times[s], f"imaginary leakage {leak:.3g} at t={times[s]:.6g}")
            snaps[s] = u.real
        return Trajectory(snaps, times, p)


def simulate(params: KSParams, u0, t_begin: float, t_end: float) -> Trajectory:
    """Integrate from ``t_begin`` to ``t_end``, recording every ``sample_interval``.

    The first recorded sample is at ``t_begin + sample_interval``.
    """
    return KSSolver(params).simulate(u0, t_begin, t_end)
