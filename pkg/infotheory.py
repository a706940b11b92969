import logging
import math
from dataclasses import dataclass
from typing import List, Mapping, Optional, Sequence, Tuple

import numpy as np

from commloop import PhaseOutcome
from errors import InsufficientDataError, InvalidArgumentError
from seeding import SeedStreams

logger = logging.getLogger(__name__)

DEFAULT_BINS = 3
DEFAULT_QUANTILES = (5.0, 95.0)
DEFAULT_SHUFFLES = 100

# (state channel, control channel) pairs of the state -> control table
DEFAULT_PAIRS: Tuple[Tuple[str, str], ...] = (
    ("temperature", "heat_rate"),
    ("pressure", "piston_rate"),
)


@dataclass(frozen=True)
class SymbolSeries:
    symbols: np.ndarray
    n_bins: int
    channel: str = ""
    update_period: Optional[float] = None

    def __post_init__(self):
        symbols = np.asarray(self.symbols, dtype=np.int64)
        if self.n_bins < 1:
            raise InvalidArgumentError(f"n_bins must be positive, got {self.n_bins}")
        if symbols.size and (symbols.min() < 0 or symbols.max() >= self.n_bins):
            raise InvalidArgumentError(f"Symbols of {self.channel or 'series'} must lie in [0, {self.n_bins})")
        object.__setattr__(self, 'symbols', symbols)

    def __len__(self):
        return int(self.symbols.size)


@dataclass
class TeResult:
    te_bits: float
    k: int
    l: int
    n_samples: int
    n_bins: int
    direction: str = ""
    update_period: Optional[float] = None
    # raw minus the mean over shuffled-source surrogates; not floored
    effective_te_bits: Optional[float] = None


def discretize_runs(runs: Sequence[Sequence[float]], n_bins: int = DEFAULT_BINS,
                    quantiles: Optional[Sequence[float]] = None, channel: str = "",
                    update_period: Optional[float] = None) -> List[SymbolSeries]:
    """
    Maps the values of several runs to bins split at quantile thresholds
    (percent) of the pooled values, returning one series per run.

    Defaults to three bins split at the 5th and 95th percentiles; a value
    equal to a threshold goes to the lower bin.
    """
    arrays = [np.asarray(run, dtype=float) for run in runs]
    values = np.concatenate(arrays) if arrays else np.zeros(0)
    if values.size < 2:
        raise InvalidArgumentError(f"Need at least 2 values to discretize, got {values.size}")
    if n_bins < 2:
        raise InvalidArgumentError(f"n_bins must be >= 2, got {n_bins}")
    if quantiles is None:
        quantiles = DEFAULT_QUANTILES if n_bins == DEFAULT_BINS else np.linspace(0.0, 100.0, n_bins + 1)[1:-1]
    if len(quantiles) != n_bins - 1:
        raise InvalidArgumentError(f"{n_bins} bins need {n_bins - 1} quantiles, got {len(quantiles)}")
    thresholds = np.percentile(values, list(quantiles))
    symbols = np.searchsorted(thresholds, values, side='left')
    pieces = np.split(symbols, np.cumsum([a.size for a in arrays])[:-1])
    return [SymbolSeries(piece, n_bins, channel, update_period) for piece in pieces]


def discretize(series: Sequence[float], n_bins: int = DEFAULT_BINS, quantiles: Optional[Sequence[float]] = None,
               channel: str = "", update_period: Optional[float] = None) -> SymbolSeries:
    return discretize_runs([series], n_bins, quantiles, channel, update_period)[0]


def _history_code(symbols: np.ndarray, t: np.ndarray, length: int, base: int) -> np.ndarray:
    code = np.zeros(t.size, dtype=np.int64)
    for lag in range(length):
        code = code * base + symbols[t - lag]
    return code


def _transitions(x: np.ndarray, y: np.ndarray, nx: int, ny: int, k: int, l: int):
    """(next y, y history, x history) codes for every usable step of one run."""
    t = np.arange(max(k, l) - 1, y.size - 1)
    return y[t + 1], _history_code(y, t, k, ny), _history_code(x, t, l, nx)


def _plugin_te(runs, nx: int, ny: int, k: int, l: int) -> float:
    parts = [_transitions(x, y, nx, ny, k, l) for x, y in runs]
    a, b, c = (np.concatenate([part[i] for part in parts]) for i in range(3))
    b_span = ny ** k
    c_span = nx ** l

    def counts_of(keys):
        _, inverse, counts = np.unique(keys, return_inverse=True, return_counts=True)
        return counts[inverse].astype(float)

    n_abc = counts_of((a * b_span + b) * c_span + c)
    n_ab = counts_of(a * b_span + b)
    n_bc = counts_of(b * c_span + c)
    n_b = counts_of(b)
    # sum over joint outcomes of p(a,b,c) log p(a|b,c)/p(a|b), as a sample mean
    return float(np.mean(np.log2(n_abc * n_b / (n_ab * n_bc))))


def pooled_transfer_entropy(runs: Sequence[Tuple[SymbolSeries, SymbolSeries]], k: int = 1, l: int = 1) -> TeResult:
    """
    Plug-in TE(X -> Y) in bits over independent runs: history tuples are
    formed inside each run and their counts pooled, so no transition
    crosses from the end of one run into the start of the next.
    """
    if not runs:
        raise InvalidArgumentError("Need at least one (x, y) run")
    if k < 1 or l < 1:
        raise InvalidArgumentError(f"History lengths must be >= 1, got k={k}, l={l}")
    first_x, first_y = runs[0]
    for x, y in runs:
        if len(x) != len(y):
            raise InvalidArgumentError(f"Series lengths differ: {len(x)} vs {len(y)}")
        if x.n_bins != first_x.n_bins or y.n_bins != first_y.n_bins:
            raise InvalidArgumentError("All runs must share the alphabet sizes of the first run")

    n = sum(len(y) for _, y in runs)
    usable = sum(max(0, len(y) - max(k, l)) for _, y in runs)
    if n < k + l + 1 or usable == 0:
        raise InsufficientDataError(f"Need at least {k + l + 1} samples in one run for k={k}, l={l}, got {n}")

    te = _plugin_te([(x.symbols, y.symbols) for x, y in runs], first_x.n_bins, first_y.n_bins, k, l)
    te = min(max(te, 0.0), math.log2(first_y.n_bins)) if first_y.n_bins > 1 else 0.0
    direction = f"{first_x.channel}->{first_y.channel}" if first_x.channel or first_y.channel else ""
    return TeResult(te, k, l, n, first_y.n_bins, direction, first_x.update_period)


def transfer_entropy(x: SymbolSeries, y: SymbolSeries, k: int = 1, l: int = 1) -> TeResult:
    """
    Plug-in transfer entropy TE(X -> Y) in bits, with k steps of Y's own
    history and l steps of X's history.
    """
    return pooled_transfer_entropy([(x, y)], k, l)


def pooled_effective_te(runs: Sequence[Tuple[SymbolSeries, SymbolSeries]], k: int = 1, l: int = 1,
                        n_shuffles: int = DEFAULT_SHUFFLES, rng: Optional[np.random.Generator] = None) -> TeResult:
    """Pooled TE alongside pooled TE minus its mean over copies with x shuffled inside each run."""
    if n_shuffles < 1:
        raise InvalidArgumentError(f"n_shuffles must be >= 1, got {n_shuffles}")
    if rng is None:
        raise InvalidArgumentError("effective_te needs a random stream for the shuffles")
    result = pooled_transfer_entropy(runs, k, l)
    surrogate = []
    for _ in range(n_shuffles):
        shuffled = [(SymbolSeries(rng.permutation(x.symbols), x.n_bins, x.channel, x.update_period), y)
                    for x, y in runs]
        surrogate.append(pooled_transfer_entropy(shuffled, k, l).te_bits)
    result.effective_te_bits = result.te_bits - float(np.mean(surrogate))
    return result


def effective_te(x: SymbolSeries, y: SymbolSeries, k: int = 1, l: int = 1,
                 n_shuffles: int = DEFAULT_SHUFFLES, rng: Optional[np.random.Generator] = None) -> TeResult:
    """Raw TE alongside raw minus the mean TE over time-shuffled copies of x."""
    return pooled_effective_te([(x, y)], k, l, n_shuffles, rng)


def channel_runs(outcomes: Sequence[PhaseOutcome], state_channel: str,
                 control_channel: str) -> List[Tuple[List[float], List[float]]]:
    """Uploaded state and commanded control at every exchange instant, one pair of lists per outcome."""
    runs = []
    for outcome in outcomes:
        exchanges = outcome.exchanges()
        runs.append(([getattr(p.state, state_channel) for p in exchanges],
                     [getattr(p.commanded, control_channel) for p in exchanges]))
    return runs


def te_table(trajectories: Mapping[float, Sequence[PhaseOutcome]], streams: SeedStreams,
             pairs: Sequence[Tuple[str, str]] = DEFAULT_PAIRS, n_bins: int = DEFAULT_BINS,
             quantiles: Optional[Sequence[float]] = None, k: int = 1, l: int = 1,
             n_shuffles: int = DEFAULT_SHUFFLES) -> List[TeResult]:
    """
    One cell per (update period, channel pair), in the order given.

    The outcomes at one period are independent runs. They share bin
    thresholds and pool their history counts. Shuffles for the cell at
    period position i and pair position j use the stream ("shuffle", i, j),
    so cells are independent of evaluation order.
    """
    table: List[TeResult] = []
    for i, (period, outcomes) in enumerate(trajectories.items()):
        for j, (state_channel, control_channel) in enumerate(pairs):
            direction = f"{state_channel}->{control_channel}"
            runs = channel_runs(outcomes, state_channel, control_channel)
            n = sum(len(xs) for xs, _ in runs)
            if n < k + l + 1:
                raise InsufficientDataError(f"Cell {direction} at period {period}: {n} exchanges, need {k + l + 1}")
            xs = discretize_runs([run[0] for run in runs], n_bins, quantiles, state_channel, period)
            ys = discretize_runs([run[1] for run in runs], n_bins, quantiles, control_channel, period)
            try:
                cell = pooled_effective_te(list(zip(xs, ys)), k, l, n_shuffles, streams.generator("shuffle", i, j))
            except InsufficientDataError as e:
                raise InsufficientDataError(f"Cell {direction} at period {period}: {e}") from e
            cell.direction = direction
            cell.update_period = period
            logger.info(f"TE {direction} at period {period}: {cell.te_bits:.4f} bits "
                        f"(effective {cell.effective_te_bits:.4f}, n={cell.n_samples}, runs={len(runs)})")
            table.append(cell)
    return table
