"""Snapshot ingestion: observable pairs from files, raw states, or built-in dictionaries.

A snapshot series is an ordered collection of observable pairs
(a_m, b_m) = (psi(X_m), psi(Y_m)) in C^N. Everything downstream (Gram
matrices, characteristic matrices, variance kernels) consumes this one type.

File formats
------------
CSV: one header line

    # specguard-snapshots v1 N=<n> kind=<iid|trajectory> dt=<float|none>

followed by M rows of 4N columns:
re(a_1), im(a_1), ..., re(a_N), im(a_N), re(b_1), im(b_1), ..., re(b_N), im(b_N).

JSON mirrors this with explicit arrays under schema "specguard/v1/snapshots".
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from itertools import product
from pathlib import Path
from typing import Iterator, Literal

import numpy as np

from .errors import FormatError, InsufficientDataError, ShapeError

__all__ = [
    "ObservablePair",
    "SnapshotSeries",
    "DictionarySpec",
    "load_snapshots",
    "write_snapshots",
    "evaluate_dictionary",
    "delay_embed",
]

CSV_MAGIC = "# specguard-snapshots v1"
JSON_SCHEMA = "specguard/v1/snapshots"


def monomial_exponents(max_degree: int, state_dim: int) -> list[tuple[int, ...]]:
    """Exponent tuples of the per-delay monomial family, graded-lex ordered.

    The family is: total degree between 1 and max_degree, every exponent at
    most 2, and at most two nonzero exponents. For (max_degree=3, state_dim=3)
    this yields 15 monomials per delayed state, so a 10-delay dictionary has
    N = 1 + 10*15 = 151 observables.
    """
    if max_degree < 1 or state_dim < 1:
        raise ShapeError("monomial family needs max_degree >= 1 and state_dim >= 1")
    exps = []
    for e in product(range(min(max_degree, 2) + 1), repeat=state_dim):
        deg = sum(e)
        if not 1 <= deg <= max_degree:
            continue
        if sum(1 for k in e if k > 0) > 2:
            continue
        exps.append(e)
    # graded lexicographic, first variable major
    exps.sort(key=lambda e: (sum(e), tuple(-k for k in e)))
    return exps


@dataclass(frozen=True)
class DictionarySpec:
    """Which observable dictionary produced (or will produce) a series.

    variant is one of "trig", "monomial_delay", "identity"; n_obs is the
    resulting number of observables N.
    """

    variant: Literal["trig", "monomial_delay", "identity"]
    n_obs: int
    max_degree: int = 0
    n_delays: int = 0
    state_dim: int = 0

    @staticmethod
    def trig(n_obs: int) -> "DictionarySpec":
        """Fourier dictionary {1, cos x, sin x, ..., sin((N-2)x/2), cos(Nx/2)}; N even."""
        if n_obs < 2 or n_obs % 2 != 0:
            raise ShapeError(f"trig dictionary needs even N >= 2, got {n_obs}")
        return DictionarySpec("trig", n_obs)

    @staticmethod
    def monomial_delay(max_degree: int, n_delays: int, state_dim: int) -> "DictionarySpec":
        """Constant plus per-delay monomial blocks over a sliding window of states."""
        if n_delays < 1:
            raise ShapeError(f"monomial_delay needs n_delays >= 1, got {n_delays}")
        n_mono = len(monomial_exponents(max_degree, state_dim))
        return DictionarySpec(
            "monomial_delay",
            1 + n_delays * n_mono,
            max_degree=max_degree,
            n_delays=n_delays,
            state_dim=state_dim,
        )

    @staticmethod
    def identity(state_dim: int) -> "DictionarySpec":
        """psi(x) = x."""
        if state_dim < 1:
            raise ShapeError(f"identity dictionary needs state_dim >= 1, got {state_dim}")
        return DictionarySpec("identity", state_dim, state_dim=state_dim)


@dataclass(frozen=True)
class ObservablePair:
    """One sample: a = psi(X_m), b = psi(Y_m), both complex vectors of length N."""

    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a, dtype=complex)
        b = np.asarray(self.b, dtype=complex)
        if a.ndim != 1 or b.ndim != 1 or a.shape != b.shape or a.size < 1:
            raise ShapeError(f"pair vectors must share a length N >= 1, got {a.shape} / {b.shape}")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise FormatError("pair contains non-finite entries")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)


@dataclass(frozen=True)
class SnapshotSeries:
    """Ordered observable pairs with sampling metadata.

    a and b are (M, N) complex arrays; row m holds psi(X_m) and psi(Y_m).
    For sampling_kind "trajectory" the row order is the time order, so lag
    structure is meaningful. Instances are immutable after construction and
    safe to share across threads.
    """

    a: np.ndarray
    b: np.ndarray
    sampling_kind: Literal["iid", "trajectory"]
    dt: float | None = None
    dictionary_meta: DictionarySpec | str = "external"

    def __post_init__(self):
        a = np.ascontiguousarray(self.a, dtype=complex)
        b = np.ascontiguousarray(self.b, dtype=complex)
        if a.ndim != 2 or a.shape != b.shape:
            raise ShapeError(f"a and b must be (M, N) of equal shape, got {a.shape} / {b.shape}")
        if a.shape[0] < 1 or a.shape[1] < 1:
            raise InsufficientDataError(f"need at least one pair and N >= 1, got shape {a.shape}")
        if self.sampling_kind not in ("iid", "trajectory"):
            raise FormatError(f"unknown sampling_kind {self.sampling_kind!r}")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise FormatError("series contains non-finite entries")
        a.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def M(self) -> int:
        return self.a.shape[0]

    @property
    def N(self) -> int:
        return self.a.shape[1]

    def pair(self, m: int) -> ObservablePair:
        return ObservablePair(self.a[m], self.b[m])

    def pairs(self) -> Iterator[ObservablePair]:
        for m in range(self.M):
            yield self.pair(m)


def _format_float(x: float) -> str:
    return repr(float(x))


def write_snapshots(series: SnapshotSeries, path: str | Path, format: str = "csv") -> None:
    """Write a series in the v1 CSV or JSON layout; load_snapshots inverts this."""
    path = Path(path)
    if format == "csv":
        dt = "none" if series.dt is None else _format_float(series.dt)
        lines = [f"{CSV_MAGIC} N={series.N} kind={series.sampling_kind} dt={dt}"]
        for m in range(series.M):
            row: list[str] = []
            for vec in (series.a[m], series.b[m]):
                for z in vec:
                    row.append(_format_float(z.real))
                    row.append(_format_float(z.imag))
            lines.append(",".join(row))
        path.write_text("\n".join(lines) + "\n")
    elif format == "json":
        doc = {
            "schema": JSON_SCHEMA,
            "N": series.N,
            "kind": series.sampling_kind,
            "dt": series.dt,
            "a_re": series.a.real.tolist(),
            "a_im": series.a.imag.tolist(),
            "b_re": series.b.real.tolist(),
            "b_im": series.b.imag.tolist(),
        }
        path.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")
    else:
        raise FormatError(f"unknown snapshot format {format!r}")


def _parse_csv_header(line: str) -> tuple[int, str, float | None]:
    if not line.startswith(CSV_MAGIC):
        raise FormatError(f"missing header {CSV_MAGIC!r}; got {line[:60]!r}")
    fields = dict(
        tok.split("=", 1) for tok in line[len(CSV_MAGIC):].split() if "=" in tok
    )
    try:
        n = int(fields["N"])
        kind = fields["kind"]
        dt_tok = fields["dt"]
    except KeyError as exc:
        raise FormatError(f"header missing field {exc}") from exc
    if n < 1:
        raise FormatError(f"header declares N={n}")
    if kind not in ("iid", "trajectory"):
        raise FormatError(f"header declares unknown kind {kind!r}")
    dt = None if dt_tok == "none" else float(dt_tok)
    return n, kind, dt


def load_snapshots(path: str | Path, format: str = "csv") -> SnapshotSeries:
    """Load a snapshot series, validating width, finiteness, and M >= 2.

    Raises FormatError for a malformed header or a non-finite row (the row
    index is named), ShapeError for inconsistent row width, and
    InsufficientDataError when fewer than two pairs are present.
    """
    path = Path(path)
    if format == "csv":
        lines = [ln for ln in path.read_text().splitlines() if ln.strip()]
        if not lines:
            raise FormatError(f"{path} is empty")
        n, kind, dt = _parse_csv_header(lines[0])
        rows = []
        for idx, ln in enumerate(lines[1:]):
            cells = ln.split(",")
            if len(cells) != 4 * n:
                raise ShapeError(
                    f"row {idx}: expected {4 * n} columns for N={n}, got {len(cells)}"
                )
            try:
                vals = np.array([float(c) for c in cells])
            except ValueError as exc:
                raise FormatError(f"row {idx}: non-numeric entry ({exc})") from exc
            if not np.all(np.isfinite(vals)):
                raise FormatError(f"row {idx}: non-finite entry")
            rows.append(vals)
        if len(rows) < 2:
            raise InsufficientDataError(f"{path} holds {len(rows)} pairs; need at least 2")
        flat = np.vstack(rows)
        a = flat[:, : 2 * n : 2] + 1j * flat[:, 1 : 2 * n : 2]
        b = flat[:, 2 * n :: 2] + 1j * flat[:, 2 * n + 1 :: 2]
        return SnapshotSeries(a, b, kind, dt=dt)
    if format == "json":
        doc = json.loads(path.read_text())
        if doc.get("schema") != JSON_SCHEMA:
            raise FormatError(f"expected schema {JSON_SCHEMA!r}, got {doc.get('schema')!r}")
        kind = doc["kind"]
        a = np.asarray(doc["a_re"], dtype=float) + 1j * np.asarray(doc["a_im"], dtype=float)
        b = np.asarray(doc["b_re"], dtype=float) + 1j * np.asarray(doc["b_im"], dtype=float)
        if a.ndim != 2 or a.shape != b.shape:
            raise ShapeError(f"JSON arrays disagree in shape: {a.shape} vs {b.shape}")
        finite = np.all(np.isfinite(a), axis=1) & np.all(np.isfinite(b), axis=1)
        if not np.all(finite):
            raise FormatError(f"non-finite entry in row {int(np.argmin(finite))}")
        if a.shape[0] < 2:
            raise InsufficientDataError(f"{path} holds {a.shape[0]} pairs; need at least 2")
        return SnapshotSeries(a, b, kind, dt=doc.get("dt"))
    raise FormatError(f"unknown snapshot format {format!r}")


def _trig_eval(x: np.ndarray, n_obs: int) -> np.ndarray:
    """Rows psi(x) for the Fourier dictionary {1, cos x, sin x, ..., cos(Nx/2)}."""
    x = np.asarray(x, dtype=float).reshape(-1)
    cols = [np.ones_like(x)]
    for k in range(1, (n_obs - 2) // 2 + 1):
        cols.append(np.cos(k * x))
        cols.append(np.sin(k * x))
    cols.append(np.cos((n_obs // 2) * x))
    return np.column_stack(cols)


def _monomial_eval(states: np.ndarray, exps: list[tuple[int, ...]]) -> np.ndarray:
    """Rows of monomial values x^e for each exponent tuple, states (M, d)."""
    out = np.empty((states.shape[0], len(exps)))
    for j, e in enumerate(exps):
        col = np.ones(states.shape[0])
        for axis, k in enumerate(e):
            if k:
                col = col * states[:, axis] ** k
        out[:, j] = col
    return out


def _as_states(x, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ShapeError(f"{name} must be an (M, d) matrix, got ndim {x.ndim}")
    return x


def evaluate_dictionary(
    x_states,
    y_states,
    dict_spec: DictionarySpec,
    sampling_kind: str = "iid",
    dt: float | None = None,
) -> SnapshotSeries:
    """Map raw state pairs through an observable dictionary.

    x_states/y_states are (M, d) real matrices; row m gives a_m = psi(x_m)
    and b_m = psi(y_m). trig requires d = 1; identity and monomial_delay
    require d = state_dim (monomial_delay only for n_delays = 1; longer
    windows need delay_embed, which owns the time alignment).
    """
    x = _as_states(x_states, "x_states")
    y = _as_states(y_states, "y_states")
    if x.shape != y.shape:
        raise ShapeError(f"x_states {x.shape} and y_states {y.shape} differ")
    if dict_spec.variant == "trig":
        if x.shape[1] != 1:
            raise ShapeError(f"trig dictionary needs 1-d states, got d={x.shape[1]}")
        a = _trig_eval(x[:, 0], dict_spec.n_obs)
        b = _trig_eval(y[:, 0], dict_spec.n_obs)
    elif dict_spec.variant == "identity":
        if x.shape[1] != dict_spec.state_dim:
            raise ShapeError(
                f"identity dictionary needs d={dict_spec.state_dim}, got {x.shape[1]}"
            )
        a, b = x, y
    elif dict_spec.variant == "monomial_delay":
        if dict_spec.n_delays != 1:
            raise ShapeError(
                "evaluate_dictionary handles monomial_delay only for n_delays=1; "
                "use delay_embed for longer windows"
            )
        if x.shape[1] != dict_spec.state_dim:
            raise ShapeError(
                f"monomial dictionary needs d={dict_spec.state_dim}, got {x.shape[1]}"
            )
        exps = monomial_exponents(dict_spec.max_degree, dict_spec.state_dim)
        ones = np.ones((x.shape[0], 1))
        a = np.hstack([ones, _monomial_eval(x, exps)])
        b = np.hstack([ones, _monomial_eval(y, exps)])
    else:
        raise ShapeError(f"unknown dictionary variant {dict_spec.variant!r}")
    return SnapshotSeries(a, b, sampling_kind, dt=dt, dictionary_meta=dict_spec)


def delay_embed(
    raw_series, dict_spec: DictionarySpec, step: int = 1, dt: float | None = None
) -> SnapshotSeries:
    """Build delay-monomial observable pairs from a single trajectory.

    raw_series is (T, d) with rows in time order at a fixed sampling step.
    Pair m stacks the constant 1 and, delay by delay (most recent first),
    the monomials of the states at times m+n_delays, ..., m+1; the b-vector
    is the same construction advanced by `step` samples, so b_m = a_{m+step}
    whenever both exist. The oldest n_delays states are consumed as warm-up
    rather than zero-padded. M = T - n_delays - step.
    """
    if dict_spec.variant != "monomial_delay":
        raise ShapeError("delay_embed requires a monomial_delay dictionary")
    if step < 1:
        raise ShapeError(f"step must be a positive integer, got {step}")
    states = _as_states(raw_series, "raw_series")
    T = states.shape[0]
    if states.shape[1] != dict_spec.state_dim:
        raise ShapeError(
            f"trajectory has d={states.shape[1]}, dictionary expects {dict_spec.state_dim}"
        )
    n_delays = dict_spec.n_delays
    M = T - n_delays - step
    if M < 1:
        raise InsufficientDataError(
            f"T={T} too short for n_delays={n_delays}, step={step} (need T > n_delays + step)"
        )
    exps = monomial_exponents(dict_spec.max_degree, dict_spec.state_dim)
    mono = _monomial_eval(states, exps)  # (T, n_mono)
    n_mono = len(exps)

    def window(lead_times: np.ndarray) -> np.ndarray:
        out = np.empty((lead_times.size, dict_spec.n_obs))
        out[:, 0] = 1.0
        for d in range(n_delays):
            block = mono[lead_times - d]
            out[:, 1 + d * n_mono : 1 + (d + 1) * n_mono] = block
        return out

    leads = np.arange(M) + n_delays
    a = window(leads)
    b = window(leads + step)
    return SnapshotSeries(a, b, "trajectory", dt=dt, dictionary_meta=dict_spec)
