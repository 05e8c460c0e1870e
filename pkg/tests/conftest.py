import numpy as np
import pytest

from corecox.survival import OutcomeColumn, SurvivalDataset


def make_dataset(rng, n, p, k=1, ties=False, event_rate=0.7, name_prefix=""):
    """Random survival dataset; with `ties`, times are rounded to force them."""
    x = rng.standard_normal((n, p))
    outcomes = []
    for _ in range(k):
        t = rng.exponential(1.0, n)
        if ties:
            t = np.round(t, 1)
        ev = rng.uniform(size=n) < event_rate
        if not ev.any():
            ev[rng.integers(n)] = True
        outcomes.append(OutcomeColumn(t, ev))
    return SurvivalDataset(
        x,
        tuple(outcomes),
        tuple(f"{name_prefix}x{j}" for j in range(p)),
        tuple(f"{name_prefix}y{j}" for j in range(k)),
    )


def nll_oracle(data, outcome_index, beta):
    """Direct sum over events with explicitly enumerated Breslow risk sets."""
    t = data.outcomes[outcome_index].time
    e = data.outcomes[outcome_index].event
    eta = data.covariates @ np.asarray(beta, dtype=float)
    total = 0.0
    n_events = 0
    for i in range(len(t)):
        if not e[i]:
            continue
        n_events += 1
        risk = np.flatnonzero(t >= t[i])
        total += eta[i] - np.log(np.exp(eta[risk]).sum())
    return -total / n_events


def cindex_oracle(time, event, score):
    """O(n^2) pair enumeration of Harrell's concordance."""
    n = len(time)
    conc = 0.0
    pairs = 0
    for i in range(n):
        if not event[i]:
            continue
        for j in range(n):
            if j == i:
                continue
            comparable = time[i] < time[j] or (time[i] == time[j] and not event[j])
            if not comparable:
                continue
            pairs += 1
            if score[i] > score[j]:
                conc += 1.0
            elif score[i] == score[j]:
                conc += 0.5
    if pairs == 0:
        raise ValueError("no comparable pairs")
    return conc / pairs


def lift_oracle(time, event, score, fraction):
    """Direct enumeration with the deterministic tie rule."""
    import math

    n = len(time)
    order = sorted(range(n), key=lambda i: (-score[i], i))
    m = math.ceil(fraction * n)
    sel = order[:m]
    base = sum(event) / n
    return (sum(event[i] for i in sel) / m) / base


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
