"""Long-run covariance application for snapshot statistics.

Given Hermitian Q, this module evaluates the kernel-weighted long-run
covariance

    V[Q] = sum_{|l| <= L'} kappa_M(l) * Gamma_l[Q],
    Gamma_l[Q] = (1/M) sum_{m=1}^{M-l} (C_{m+l} - C)^* Q (C_m - C),

where C_m = u_m v_m^* are the rank-one per-sample characteristic matrices
and C is their mean.  Negative lags are defined by Gamma_{-l} = Gamma_l^*.

Two evaluation routes are provided: a direct reference implementation
(`variance_apply_naive`) that materializes the centered snapshot matrices,
and a production path (`variance_apply`) that exploits the rank-one
structure to run in O(L * M * N + M * N^2) time.  The two must agree to
near machine precision; tests enforce a 1e-10 relative Frobenius bound.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .charmatrix import snapshot_factors
from .errors import (
    NumericError,
    ShapeError,
    UnstableKernelError,
    WindowTooLargeError,
)
from .ingest import SnapshotSeries

__all__ = [
    "KernelSpec",
    "VarianceApplication",
    "FactorCache",
    "kappa_w",
    "metastability_kernel",
    "window_length",
    "estimate_tau",
    "default_mu_list",
    "prepare_factors",
    "variance_apply",
    "variance_apply_naive",
    "variance_exact_iid",
]

#: mu within this distance of 1 makes the deflation factor blow up.
MU_GUARD = 0.05

#: relative size below which a negative eigenvalue of V[Q] is clipped.
PSD_CLIP_TOL = 1e-10


def kappa_w(x: np.ndarray | float) -> np.ndarray | float:
    """Flat-top lag window with non-negative Fourier transform.

    kappa_w(x) = (1/pi) sin(pi |x|) + (1 - |x|) cos(pi x)  for |x| < 1,
    and 0 outside.  kappa_w(0) = 1 and the window is even.
    """
    x = np.asarray(x, dtype=float)
    ax = np.abs(x)
    inside = ax < 1.0
    out = np.zeros_like(x)
    xi = ax[inside]
    out[inside] = np.sin(np.pi * xi) / np.pi + (1.0 - xi) * np.cos(np.pi * xi)
    return out if out.ndim else float(out)


def metastability_kernel(
    mu_list: tuple[complex, ...] | list[complex], mu_guard: float = MU_GUARD
) -> np.ndarray:
    """Convolve the lag-1 deflation factors for each slow mode mu.

    Each factor has weights d(0) = (1 + mu^2)/(1 - mu)^2 and
    d(+-1) = -mu/(1 - mu)^2, which sum to one and annihilate pure
    geometric correlation tails W mu^l beyond lag 1.

    Returns the combined weights on lags -K..K (K = len(mu_list)) as a
    real array of length 2K + 1.

    Raises
    ------
    UnstableKernelError
        If some |1 - mu| < mu_guard (weights blow up), or if a complex mu
        lacks its conjugate partner so the combined kernel is not real.
    """
    kp = np.array([1.0 + 0.0j])
    for mu in mu_list:
        mu = complex(mu)
        if abs(1.0 - mu) < mu_guard:
            raise UnstableKernelError(
                f"mu={mu:.4g} is within {mu_guard} of 1; deflation weights "
                "are unstable (drop it from mu_list)"
            )
        denom = (1.0 - mu) ** 2
        d = np.array([-mu, 1.0 + mu * mu, -mu]) / denom
        kp = np.convolve(kp, d)
    resid = float(np.abs(kp.imag).max(initial=0.0))
    if resid > 1e-10 * max(1.0, float(np.abs(kp).max(initial=0.0))):
        raise UnstableKernelError(
            "combined kernel is not real; complex entries of mu_list must "
            f"come in conjugate pairs (imaginary residue {resid:.3e})"
        )
    return kp.real.copy()


@dataclass(frozen=True, eq=False)
class KernelSpec:
    """Fully resolved covariance kernel: mode, window length, slow modes,
    and the combined lag weights.

    ``kappa_p`` holds the deflation weights on lags -K..K and ``kappa_m``
    the window-smoothed weights on lags -(K + l_window)..(K + l_window).
    Use the constructors; the raw constructor performs validation only.
    """

    mode: str                     # "iid" | "windowed"
    l_window: int                 # L_M, half-width of the smoothing window
    mu_list: tuple[complex, ...]
    kappa_p: np.ndarray
    kappa_m: np.ndarray

    def __post_init__(self) -> None:
        if self.mode not in ("iid", "windowed"):
            raise ShapeError(f"mode must be 'iid' or 'windowed', got {self.mode!r}")
        if self.l_window < 0:
            raise ShapeError(f"l_window must be >= 0, got {self.l_window}")
        kp = np.array(self.kappa_p, dtype=float)
        km = np.array(self.kappa_m, dtype=float)
        k = len(self.mu_list)
        if kp.shape != (2 * k + 1,):
            raise ShapeError(f"kappa_p length {kp.shape} != 2*{k}+1")
        if km.shape != (2 * (k + self.l_window) + 1,):
            raise ShapeError("kappa_m length inconsistent with mu_list and l_window")
        if abs(kp.sum() - 1.0) > 1e-10:
            raise ShapeError(f"kappa_p must sum to 1, got {kp.sum():.6g}")
        if self.mode == "iid" and (k > 0 or self.l_window > 0):
            raise ShapeError("iid mode requires an empty mu_list and l_window == 0")
        kp.flags.writeable = False
        km.flags.writeable = False
        object.__setattr__(self, "kappa_p", kp)
        object.__setattr__(self, "kappa_m", km)
        object.__setattr__(self, "mu_list", tuple(complex(m) for m in self.mu_list))

    @staticmethod
    def iid() -> "KernelSpec":
        """Kernel for independent snapshot pairs: a unit mass at lag 0."""
        return KernelSpec("iid", 0, (), np.array([1.0]), np.array([1.0]))

    @staticmethod
    def windowed(
        l_window: int, mu_list: tuple[complex, ...] | list[complex] = ()
    ) -> "KernelSpec":
        """Kernel for serially correlated snapshots.

        ``l_window = 0`` degenerates the smoothing window to a unit mass at
        lag 0, so ``windowed(0)`` matches the iid weights while keeping the
        windowed-mode label.
        """
        kp = metastability_kernel(tuple(mu_list))
        if l_window == 0:
            win = np.array([1.0])
        else:
            lags = np.arange(-l_window, l_window + 1)
            win = np.asarray(kappa_w(lags / l_window))
        km = np.convolve(kp, win)
        return KernelSpec("windowed", l_window, tuple(mu_list), kp, km)

    @property
    def half_width(self) -> int:
        """Largest lag with (possibly zero) weight: len(mu_list) + l_window."""
        return len(self.mu_list) + self.l_window

    def weight(self, lag: int) -> float:
        """kappa_M at an integer lag (0 outside the support)."""
        h = self.half_width
        if abs(lag) > h:
            return 0.0
        return float(self.kappa_m[lag + h])

    def tilde_weights(self) -> np.ndarray:
        """One-sided weights for the folded evaluation: lag 0 halved."""
        h = self.half_width
        kt = self.kappa_m[h:].copy()
        kt[0] *= 0.5
        return kt

    def min_fourier(self, n_grid: int = 4096) -> float:
        """Minimum of the discrete Fourier transform of the lag weights.

        The window and deflation factors are constructed so this is
        non-negative up to round-off; large negative values indicate a
        broken kernel.
        """
        h = self.half_width
        if n_grid < 2 * h + 1:
            raise ShapeError(f"n_grid={n_grid} too small for half-width {h}")
        arr = np.zeros(n_grid)
        for lag in range(-h, h + 1):
            arr[lag % n_grid] += self.kappa_m[lag + h]
        return float(np.fft.fft(arr).real.min())

    def to_json_dict(self) -> dict:
        return {
            "mode": self.mode,
            "l_window": self.l_window,
            "mu_list": [{"re": m.real, "im": m.imag} for m in self.mu_list],
            "kappa_p": [float(v) for v in self.kappa_p],
            "kappa_m": [float(v) for v in self.kappa_m],
        }


def window_length(tau: float, m_samples: int) -> int:
    """Plug-in window half-width from a correlation-time estimate.

    L = round((16 M tau^4 / pi^4)^(1/5)), floored at 1 and capped at
    floor(sqrt(M)).
    """
    if tau <= 0.0:
        raise ShapeError(f"tau must be positive, got {tau}")
    if m_samples < 2:
        raise ShapeError(f"m_samples must be >= 2, got {m_samples}")
    raw = (16.0 * m_samples * tau**4 / np.pi**4) ** 0.2
    length = max(1, int(round(raw)))
    return min(length, int(np.sqrt(m_samples)))


def estimate_tau(
    series: SnapshotSeries, lam: complex = 1.0, max_lag: int | None = None
) -> float:
    """Correlation time of the snapshot stream from trace autocovariances.

    Fits an exponential decay to r(l) = tr Gamma_l (with Q = I) over the
    leading run of positive values, by least squares on log r.  Returns a
    conservative large value when no decay is detectable and a small value
    when correlation is immeasurable; both ends are safe inputs to
    ``window_length``.
    """
    m = series.M
    if m < 2:
        raise ShapeError(f"need at least 2 snapshot pairs, got {m}")
    if max_lag is None:
        max_lag = min(50, m // 10)
    max_lag = max(1, min(max_lag, m - 1))

    cache = prepare_factors(series, lam)
    ut, vt, c_hat = cache.ut, cache.vt, cache.c_hat
    # t_m = tr(C_m^* C) = u_m^* C v_m
    tvec = np.sum(ut.conj() * (c_hat @ vt), axis=0)
    cnorm2 = float(np.linalg.norm(c_hat) ** 2)

    r = np.empty(max_lag + 1)
    for lag in range(max_lag + 1):
        alpha = np.sum(ut[:, lag:].conj() * ut[:, : m - lag], axis=0)
        beta = np.sum(vt[:, : m - lag].conj() * vt[:, lag:], axis=0)
        total = (
            np.sum(alpha * beta)
            - np.sum(tvec[lag:])
            - np.sum(tvec[: m - lag].conj())
            + (m - lag) * cnorm2
        )
        r[lag] = total.real / m

    # Leading run of positive autocovariance traces.
    k = 0
    while k <= max_lag and r[k] > 0.0:
        k += 1
    if k < 2:
        return 0.5
    lags = np.arange(k)
    slope = np.polyfit(lags, np.log(r[:k]), 1)[0]
    if slope >= -1e-12:
        return float(max_lag)
    return float(max(-1.0 / slope, 1e-2))


def default_mu_list(
    eigenvalues: list[complex] | np.ndarray, top_k: int, mu_guard: float = MU_GUARD
) -> tuple[tuple[complex, ...], list[str]]:
    """Pick slow modes for the deflation kernel from EDMD eigenvalues.

    Takes the ``top_k`` eigenvalues of largest modulus, skipping any within
    ``mu_guard`` of 1 (typically the trivial constant mode), then closes the
    list under conjugation so the combined kernel stays real.

    Returns the mu tuple and a list of warning strings for skipped modes.
    """
    if top_k < 0:
        raise ShapeError(f"top_k must be >= 0, got {top_k}")
    ordered = sorted(
        (complex(v) for v in eigenvalues), key=lambda z: -abs(z)
    )
    chosen: list[complex] = []
    notes: list[str] = []
    for mu in ordered:
        if len(chosen) >= top_k:
            break
        if abs(1.0 - mu) < mu_guard:
            notes.append(
                f"skipped eigenvalue {mu:.4g}: within {mu_guard} of 1, "
                "deflation weights would be unstable"
            )
            continue
        chosen.append(mu)
    # Close under conjugation so the convolved kernel is real.
    out = list(chosen)
    for mu in chosen:
        if abs(mu.imag) > 1e-12 and not any(
            abs(mu.conjugate() - other) <= 1e-9 * max(1.0, abs(mu)) for other in out
        ):
            out.append(mu.conjugate())
    return tuple(out), notes


@dataclass(frozen=True, eq=False)
class VarianceApplication:
    """Result of applying V[.] to one Hermitian matrix."""

    result: np.ndarray
    psd_repair_applied: bool = False


@dataclass(frozen=True, eq=False)
class FactorCache:
    """Per-(series, lambda) arrays reused across variance applications.

    ``ut``/``vt`` hold the rank-one factors column-per-sample and ``c_hat``
    their mean outer product, i.e. the characteristic matrix at ``lam``.
    """

    lam: complex
    ut: np.ndarray        # (N, M)
    vt: np.ndarray        # (N, M)
    c_hat: np.ndarray     # (N, N)

    @property
    def m_samples(self) -> int:
        return self.ut.shape[1]

    @property
    def dim(self) -> int:
        return self.ut.shape[0]


def prepare_factors(series: SnapshotSeries, lam: complex) -> FactorCache:
    """Build the rank-one factor cache for repeated applications at ``lam``."""
    u, v = snapshot_factors(series, lam)
    ut = np.ascontiguousarray(u.T)
    vt = np.ascontiguousarray(v.T)
    c_hat = ut @ vt.conj().T / series.M
    return FactorCache(complex(lam), ut, vt, c_hat)


def _check_window(kernel: KernelSpec, m_samples: int) -> None:
    if kernel.half_width >= m_samples:
        raise WindowTooLargeError(
            f"kernel half-width {kernel.half_width} >= M={m_samples}; "
            "shorten the window or provide more data"
        )


def _hermitize(mat: np.ndarray) -> np.ndarray:
    return 0.5 * (mat + mat.conj().T)


def _finalize_psd(raw: np.ndarray, q: np.ndarray) -> VarianceApplication:
    """Symmetrize and apply the negative-eigenvalue repair policy.

    Round-off-scale negative eigenvalues are clipped to zero (flagged).
    Structurally negative eigenvalues raise only when the input Q was PSD,
    since then a PSD result is mathematically guaranteed; for indefinite Q
    the result is legitimately indefinite and is returned as-is.
    """
    sym = _hermitize(raw)
    w, vecs = np.linalg.eigh(sym)
    wmin = float(w[0])
    if wmin >= 0.0:
        return VarianceApplication(sym, False)
    scale = float(np.abs(w).max())
    if wmin >= -PSD_CLIP_TOL * scale:
        wc = np.clip(w, 0.0, None)
        repaired = _hermitize((vecs * wc) @ vecs.conj().T)
        return VarianceApplication(repaired, True)
    wq = np.linalg.eigvalsh(_hermitize(np.asarray(q, dtype=complex)))
    q_scale = float(np.abs(wq).max(initial=0.0))
    if wq[0] >= -1e-12 * max(q_scale, 1.0):
        raise NumericError(
            f"covariance application lost positivity (min eig {wmin:.3e} at "
            f"scale {scale:.3e}) despite PSD input"
        )
    return VarianceApplication(sym, False)


def variance_apply(
    q: np.ndarray,
    lam: complex,
    series: SnapshotSeries,
    kernel: KernelSpec,
    factors: FactorCache | None = None,
) -> VarianceApplication:
    """Apply the kernel-weighted covariance V[Q] via the rank-one expansion.

    Expanding the centered products and folding negative lags yields

        V[Q] = T + T^*,
        T = (1/M) sum_m ( sum_l kt(l) (u_{m+l}^* Q u_m) v_{m+l} ) v_m^*
            + (1/M) sum_{j=1}^{Lt} w_j ( C_j^* Q C + C^* Q C_{M-j+1} )
            - ( sum_l kt(l) (M + l)/M ) C^* Q C,

    with one-sided weights kt from the kernel (lag 0 halved) and boundary
    weights w_j = sum_{l >= j} kt(l).  For the iid kernel this reduces to
    the single-lag estimator (1/M) sum (u_m^* Q u_m) v_m v_m^* - C^* Q C.

    Parameters
    ----------
    q : ndarray, shape (N, N)
        Hermitian test matrix.
    factors : FactorCache, optional
        Precomputed factors at ``lam``; pass when applying repeatedly.
    """
    if factors is None:
        factors = prepare_factors(series, lam)
    m = factors.m_samples
    _check_window(kernel, m)
    q = np.asarray(q, dtype=complex)
    ut, vt, c_hat = factors.ut, factors.vt, factors.c_hat
    kt = kernel.tilde_weights()
    lt = kernel.half_width

    qu = q @ ut
    acc = np.zeros_like(vt)
    for lag in range(lt + 1):
        if kt[lag] == 0.0:
            continue
        inner = np.sum(ut[:, lag:].conj() * qu[:, : m - lag], axis=0)
        acc[:, : m - lag] += kt[lag] * (vt[:, lag:] * inner[np.newaxis, :])
    tilde = acc @ vt.conj().T / m

    qc = q @ c_hat
    if lt > 0:
        # w_j = sum_{l >= j} kt(l) for 1-based j = 1..Lt.
        w = np.cumsum(kt[::-1])[::-1][1:]
        head = (vt[:, :lt] * w[np.newaxis, :]) @ (ut[:, :lt].conj().T @ qc)
        idx = m - 1 - np.arange(lt)
        cq = c_hat.conj().T @ q
        tail = ((cq @ ut[:, idx]) * w[np.newaxis, :]) @ vt[:, idx].conj().T
        tilde += (head + tail) / m

    lags = np.arange(lt + 1)
    coef = float(np.sum(kt * (m + lags) / m))
    tilde -= coef * (c_hat.conj().T @ qc)

    return _finalize_psd(tilde + tilde.conj().T, q)


def variance_apply_naive(
    q: np.ndarray,
    lam: complex,
    series: SnapshotSeries,
    kernel: KernelSpec,
) -> VarianceApplication:
    """Reference evaluation of V[Q] from materialized centered matrices.

    Computes every Gamma_l by direct summation and combines them with the
    kernel weights; negative lags enter through Gamma_{-l} = Gamma_l^*.
    Quadratic in memory (M x N x N); intended for validation, not production.
    """
    factors = prepare_factors(series, lam)
    m, n = factors.m_samples, factors.dim
    _check_window(kernel, m)
    q = np.asarray(q, dtype=complex)
    c_stack = np.einsum("im,jm->mij", factors.ut, factors.vt.conj())
    d_stack = c_stack - factors.c_hat[np.newaxis, :, :]

    total = np.zeros((n, n), dtype=complex)
    for lag in range(kernel.half_width + 1):
        wgt = kernel.weight(lag)
        if wgt == 0.0:
            continue
        gam = (
            np.einsum(
                "mba,bc,mcd->ad",
                d_stack[lag:].conj(),
                q,
                d_stack[: m - lag],
                optimize=True,
            )
            / m
        )
        total += wgt * gam
        if lag > 0:
            total += wgt * gam.conj().T
    return _finalize_psd(total, q)


def variance_exact_iid(q: np.ndarray, lam: complex, moments) -> np.ndarray:
    """Population covariance V[Q] = E[C_w^* Q C_w] - C^* Q C.

    ``moments`` must expose ``c_matrix(lam)`` and ``expected_chc(lam, q)``
    (exact second moments of the per-sample characteristic matrices under
    the sampling distribution).
    """
    q = np.asarray(q, dtype=complex)
    c = moments.c_matrix(lam)
    second = moments.expected_chc(lam, q)
    return _hermitize(second - c.conj().T @ q @ c)
