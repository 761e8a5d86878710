"""Two-state charge blinking model with state-dependent Poisson photon emission.

The NV charge state is modeled as a continuous-time two-state Markov process
(bright NV-, dark NV0) with ionization rate ``k_ion`` (bright -> dark) and
recombination rate ``k_rec`` (dark -> bright). Photons are emitted at a
Poisson rate ``gamma_bright`` while bright and ``gamma_dark`` (background)
while dark. All operations are pure given (params, seed) and safe to call
concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import InvalidParameterError, UndefinedStationaryStateError


class ChargeState(Enum):
    NV_MINUS = "NVminus"
    NV_ZERO = "NVzero"


@dataclass(frozen=True)
class TelegraphParams:
    """Switching rates (1/s) and detected photon rates (counts/s) of a blinking emitter."""

    k_ion: float
    k_rec: float
    gamma_bright: float
    gamma_dark: float

    def __post_init__(self):
        for name in ("k_ion", "k_rec", "gamma_bright", "gamma_dark"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0.0:
                raise InvalidParameterError(f"{name} must be finite and >= 0, got {value!r}")
        if self.gamma_bright < self.gamma_dark:
            raise InvalidParameterError(
                "gamma_bright must be >= gamma_dark (the bright state is the detectable one)"
            )

    def stationary(self) -> float:
        """Steady-state bright (NV-) population."""
        return stationary_population(self.k_ion, self.k_rec)


def stationary_population(k_ion: float, k_rec: float) -> float:
    """Steady-state probability of the bright state, k_rec / (k_ion + k_rec).

    Raises
    ------
    UndefinedStationaryStateError
        If both rates are zero (no switching, the stationary state is undefined).
    """
    for name, value in (("k_ion", k_ion), ("k_rec", k_rec)):
        if not np.isfinite(value) or value < 0.0:
            raise InvalidParameterError(f"{name} must be finite and >= 0, got {value!r}")
    total = k_ion + k_rec
    if total <= 0.0:
        raise UndefinedStationaryStateError("k_ion + k_rec must be > 0")
    return k_rec / total


@dataclass(frozen=True, eq=False)
class TimeTrace:
    """Binned photon counts with a fixed bin width.

    counts[i] covers the interval [t0 + i*bin_width, t0 + (i+1)*bin_width).
    """

    bin_width: float
    counts: np.ndarray
    t0: float = 0.0

    def __post_init__(self):
        if not np.isfinite(self.bin_width) or self.bin_width <= 0.0:
            raise InvalidParameterError(f"bin_width must be > 0, got {self.bin_width!r}")
        counts = np.asarray(self.counts)
        if counts.ndim != 1 or counts.size < 1:
            raise InvalidParameterError("counts must be a non-empty 1-d sequence")
        if np.any(counts < 0) or not np.issubdtype(counts.dtype, np.integer):
            if not np.all(np.equal(np.mod(counts, 1), 0)) or np.any(counts < 0):
                raise InvalidParameterError("counts must be non-negative integers")
        object.__setattr__(self, "counts", counts.astype(np.int64))

    @property
    def n_bins(self) -> int:
        return self.counts.size

    @property
    def duration(self) -> float:
        return self.n_bins * self.bin_width

    @property
    def bin_starts(self) -> np.ndarray:
        return self.t0 + np.arange(self.n_bins) * self.bin_width

    def rebin(self, factor: int) -> "TimeTrace":
        """Merge every `factor` consecutive bins; a trailing partial group is dropped."""
        if factor < 1 or int(factor) != factor:
            raise InvalidParameterError(f"rebin factor must be a positive integer, got {factor!r}")
        factor = int(factor)
        n = (self.n_bins // factor) * factor
        if n == 0:
            raise InvalidParameterError("trace shorter than one rebinned bin")
        merged = self.counts[:n].reshape(-1, factor).sum(axis=1)
        return TimeTrace(self.bin_width * factor, merged, self.t0)

    def to_csv(self, path) -> None:
        """Write `bin_start_s,counts` rows with the bin width in a comment line."""
        lines = [f"# bin_width_s={self.bin_width:.17g}", "bin_start_s,counts"]
        starts = self.bin_starts
        lines.extend(f"{starts[i]:.12g},{self.counts[i]:d}" for i in range(self.n_bins))
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path) -> "TimeTrace":
        bin_width = None
        starts: list[float] = []
        counts: list[int] = []
        text = Path(path).read_text()
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line.lstrip("#").strip()
                if body.startswith("bin_width_s="):
                    bin_width = float(body.split("=", 1)[1])
                continue
            if line.startswith("bin_start_s"):
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise InvalidParameterError(f"{path}: malformed row at line {lineno}: {raw!r}")
            try:
                starts.append(float(parts[0]))
                counts.append(int(parts[1]))
            except ValueError as exc:
                raise InvalidParameterError(f"{path}: malformed row at line {lineno}: {raw!r}") from exc
        if bin_width is None:
            raise InvalidParameterError(f"{path}: missing '# bin_width_s=' comment")
        if not counts:
            raise InvalidParameterError(f"{path}: no data rows")
        t0 = starts[0] if starts else 0.0
        return cls(bin_width, np.asarray(counts, dtype=np.int64), t0)


def _resolve_initial(params: TelegraphParams, initial, rng: np.random.Generator) -> bool:
    """Map an initial-state spec to a bool (bright?), drawing from the stationary law if None."""
    if initial is None or initial == "stationary":
        p_bright = stationary_population(params.k_ion, params.k_rec)
        return bool(rng.random() < p_bright)
    if isinstance(initial, ChargeState):
        return initial is ChargeState.NV_MINUS
    raise InvalidParameterError(f"initial must be a ChargeState, 'stationary' or None, got {initial!r}")


def _charge_segments(k_ion: float, k_rec: float, duration: float, start_bright: bool,
                     rng: np.random.Generator):
    """Exact alternating-dwell realization of the switching process on [0, duration].

    Returns (switch_times, bright) where switch_times[0] = 0 and bright[i] is the
    state on [switch_times[i], switch_times[i+1]) (the last segment runs to
    `duration`). Dwells are exponential with the exit rate of the current state.
    """
    scale_bright = 1.0 / k_ion if k_ion > 0.0 else np.inf
    scale_dark = 1.0 / k_rec if k_rec > 0.0 else np.inf

    cycle = scale_bright + scale_dark
    est = 16 if not np.isfinite(cycle) else int(duration / cycle + 5.0 * np.sqrt(duration / cycle)) + 16

    chunks: list[np.ndarray] = []
    total = 0.0
    first_is_bright = start_bright
    while total < duration:
        block = np.empty(2 * est)
        if first_is_bright:
            s0, s1 = scale_bright, scale_dark
        else:
            s0, s1 = scale_dark, scale_bright
        block[0::2] = rng.exponential(s0, est) if np.isfinite(s0) else np.inf
        block[1::2] = rng.exponential(s1, est) if np.isfinite(s1) else np.inf
        chunks.append(block)
        chunk_total = block.sum()
        total = np.inf if not np.isfinite(chunk_total) else total + chunk_total
        # even-length chunks keep the alternation parity for the next chunk

    dwells = np.concatenate(chunks)
    cum = np.cumsum(dwells)
    n_switches = int(np.searchsorted(cum, duration, side="left"))
    switch_times = np.empty(n_switches + 1)
    switch_times[0] = 0.0
    switch_times[1:] = cum[:n_switches]
    idx = np.arange(n_switches + 1)
    bright = (idx % 2 == 0) if start_bright else (idx % 2 == 1)
    return switch_times, bright


def _bright_time_at(switch_times: np.ndarray, bright: np.ndarray, duration: float,
                    t: np.ndarray) -> np.ndarray:
    """Cumulative bright time B(t) for t in [0, duration], vectorized."""
    seg_end = np.append(switch_times[1:], duration)
    seg_dur = seg_end - switch_times
    cum_bright = np.concatenate(([0.0], np.cumsum(seg_dur * bright)))
    idx = np.searchsorted(switch_times, t, side="right") - 1
    idx = np.clip(idx, 0, switch_times.size - 1)
    return cum_bright[idx] + bright[idx] * (t - switch_times[idx])


def simulate_trace(params: TelegraphParams, duration: float, bin_width: float,
                   initial=None, seed: int = 0) -> TimeTrace:
    """Exact event-driven simulation of a blinking fluorescence trace.

    Dwell times are drawn exponentially per state; the expected counts of a bin
    straddling a switch are split in proportion to the time spent in each state,
    so each bin is Poisson with mean ``gamma_bright*t_bright + gamma_dark*t_dark``.

    Parameters
    ----------
    initial : ChargeState, "stationary" or None
        Starting charge state; None draws it from the stationary distribution.
    seed : int
        Seed of the random stream; identical seeds yield identical traces.
    """
    if not (np.isfinite(duration) and np.isfinite(bin_width)):
        raise InvalidParameterError("duration and bin_width must be finite")
    if not (duration >= bin_width > 0.0):
        raise InvalidParameterError(
            f"need duration >= bin_width > 0, got duration={duration!r}, bin_width={bin_width!r}"
        )
    rng = np.random.default_rng(seed)
    start_bright = _resolve_initial(params, initial, rng)
    n_bins = int(np.floor(duration / bin_width + 1e-9))
    span = n_bins * bin_width
    switch_times, bright = _charge_segments(params.k_ion, params.k_rec, span, start_bright, rng)
    edges = np.arange(n_bins + 1) * bin_width
    cum = _bright_time_at(switch_times, bright, span, edges)
    t_bright = np.clip(np.diff(cum), 0.0, bin_width)
    mu = params.gamma_bright * t_bright + params.gamma_dark * (bin_width - t_bright)
    counts = rng.poisson(np.clip(mu, 0.0, None))
    return TimeTrace(bin_width, counts, 0.0)


def dwell_times(params: TelegraphParams, duration: float, seed: int = 0, initial=None):
    """Sample raw dwell durations of both states over [0, duration].

    Returns (bright_dwells, dark_dwells) in seconds. The final dwell is censored
    by the end of the observation window and is included as-is; for many events
    the induced bias on the means is negligible.
    """
    if not np.isfinite(duration) or duration <= 0.0:
        raise InvalidParameterError(f"duration must be > 0, got {duration!r}")
    rng = np.random.default_rng(seed)
    start_bright = _resolve_initial(params, initial, rng)
    switch_times, bright = _charge_segments(params.k_ion, params.k_rec, duration, start_bright, rng)
    seg_end = np.append(switch_times[1:], duration)
    seg_dur = seg_end - switch_times
    return seg_dur[bright], seg_dur[~bright]
