"""Dual-path numeric kernels: numba-jitted loops with pure-numpy fallbacks.

Each kernel exists twice, as a ``*_numpy`` implementation and (when numba
is importable) a jitted ``*_numba`` twin. The public names dispatch to the
active path, chosen once at import time: numba is preferred unless the
environment variable ``OPR_NUMBA`` is set to ``0``, ``false``, or ``off``.

Both paths are bit-identical, not merely close: every stochastic input is
pre-drawn with numpy's Generator outside the kernel, transcendentals are
passed in as precomputed tables, and the arithmetic inside uses the same
operation order. The flag therefore only changes speed, never results.
"""

from __future__ import annotations

import os

import numpy as np

__all__ = [
    "NUMBA_ACTIVE",
    "encode_runs",
    "extract_windows",
    "markov_occupancy",
    "next_vacant_steps",
]

# Sentinel for "no vacant interval in range"; larger than any real distance.
NEVER_VACANT = np.int64(2**31)


def _numba_requested() -> bool:
    flag = os.environ.get("OPR_NUMBA", "1").strip().lower()
    return flag not in ("0", "false", "off")


# ---------------------------------------------------------------------------
# pure-numpy implementations
# ---------------------------------------------------------------------------


def encode_runs_numpy(states):
    """Run-length decomposition of every row of a boolean matrix.

    Returns ``(counts, starts, lengths, run_states, run_of)`` where row i
    has ``counts[i]`` maximal runs, described left to right by the padded
    ``[rows, max_runs]`` arrays, and ``run_of[i, t]`` is the index of the
    run containing column t.
    """
    states = np.ascontiguousarray(states, dtype=np.bool_)
    rows, cols = states.shape
    counts = np.empty(rows, dtype=np.int64)
    starts_per_row = []
    for i in range(rows):
        row = states[i]
        boundaries = np.flatnonzero(row[1:] != row[:-1]) + 1
        starts = np.concatenate((np.zeros(1, dtype=np.int64), boundaries))
        starts_per_row.append(starts)
        counts[i] = starts.size
    max_runs = int(counts.max())
    starts_out = np.zeros((rows, max_runs), dtype=np.int64)
    lengths_out = np.zeros((rows, max_runs), dtype=np.int64)
    states_out = np.zeros((rows, max_runs), dtype=np.bool_)
    run_of = np.empty((rows, cols), dtype=np.int64)
    for i in range(rows):
        starts = starts_per_row[i]
        k = int(counts[i])
        ends = np.concatenate((starts[1:], np.array([cols], dtype=np.int64)))
        starts_out[i, :k] = starts
        lengths_out[i, :k] = ends - starts
        states_out[i, :k] = states[i, starts]
        run_of[i] = np.repeat(np.arange(k, dtype=np.int64), lengths_out[i, :k])
    return counts, starts_out, lengths_out, states_out, run_of


def extract_windows_numpy(starts, lengths, run_states, run_of, t, alpha):
    """Signed-duration event windows for every row at reference column t.

    Returns ``(signed, current_signed)``: ``signed[i]`` holds the newest
    ``alpha`` completed runs of row i as sign * duration (vacant +, occupied
    -), oldest first, zero-padded on the oldest side when fewer exist;
    ``current_signed[i]`` is the signed age of the run containing t.
    """
    rows = starts.shape[0]
    cur = run_of[:, t]
    cur_start = np.take_along_axis(starts, cur[:, None], axis=1)[:, 0]
    cur_state = np.take_along_axis(run_states, cur[:, None], axis=1)[:, 0]
    cur_sign = np.where(cur_state, -1.0, 1.0)
    current_signed = cur_sign * (t - cur_start + 1).astype(np.float64)

    idx = cur[:, None] - alpha + np.arange(alpha, dtype=np.int64)[None, :]
    valid = idx >= 0
    safe = np.maximum(idx, 0)
    ev_len = np.take_along_axis(lengths, safe, axis=1).astype(np.float64)
    ev_state = np.take_along_axis(run_states, safe, axis=1)
    ev_sign = np.where(ev_state, -1.0, 1.0)
    signed = np.where(valid, ev_sign * ev_len, 0.0)
    assert signed.shape == (rows, alpha)
    return signed, current_signed


def markov_occupancy_numpy(
    init_u,
    step_u,
    sin_mod,
    neighbor_w,
    neighbor_cnt,
    base,
    gamma,
    rho0,
    hazard_base,
    hazard_slope,
    hazard_max,
    switch_cap,
):
    """Two-state occupancy chain with diurnal and neighbor modulation.

    All randomness comes from the pre-drawn uniforms ``init_u`` [rows] and
    ``step_u`` [steps-1, rows]; ``sin_mod[t]`` is the precomputed diurnal
    term (amplitude included). The switch hazard grows with the age of the
    current run, so stale runs end sooner than fresh ones.
    """
    rows = init_u.shape[0]
    steps = step_u.shape[0] + 1
    occ = np.empty((rows, steps), dtype=np.bool_)
    occ[:, 0] = init_u < base
    prev = occ[:, 0].astype(np.float64)
    age = np.ones(rows, dtype=np.float64)
    for t in range(1, steps):
        nbr_sum = neighbor_w @ prev
        nbr_mean = np.where(
            neighbor_cnt > 0.0, nbr_sum / np.maximum(neighbor_cnt, 1.0), base
        )
        p_occ = base + sin_mod[t] + gamma * (nbr_mean - base)
        p_occ = np.minimum(np.maximum(p_occ, 0.0), 1.0)
        hazard = rho0 * np.minimum(hazard_max, hazard_base + hazard_slope * age)
        q = np.where(prev == 1.0, hazard * (1.0 - p_occ), hazard * p_occ)
        q = np.minimum(q, switch_cap)
        switch = step_u[t - 1] < q
        cur = np.where(switch, 1.0 - prev, prev)
        age = np.where(switch, 1.0, age + 1.0)
        occ[:, t] = cur == 1.0
        prev = cur
    return occ


def next_vacant_steps_numpy(states):
    """Distance (in intervals) from each cell to the next vacant interval.

    ``steps[i, t]`` is 0 when row i is vacant at t, otherwise the number of
    intervals until its first vacant column at or after t, or NEVER_VACANT
    when the row stays occupied through the end.
    """
    states = np.ascontiguousarray(states, dtype=np.bool_)
    rows, cols = states.shape
    steps = np.empty((rows, cols), dtype=np.int64)
    nxt = np.full(rows, NEVER_VACANT, dtype=np.int64)
    for t in range(cols - 1, -1, -1):
        nxt = np.where(states[:, t], np.minimum(nxt + 1, NEVER_VACANT), 0)
        steps[:, t] = nxt
    return steps


# ---------------------------------------------------------------------------
# numba twins
# ---------------------------------------------------------------------------

NUMBA_ACTIVE = False
encode_runs_numba = None
extract_windows_numba = None
markov_occupancy_numba = None
next_vacant_steps_numba = None

if _numba_requested():
    try:
        from numba import njit
    except ImportError:
        njit = None
    if njit is not None:

        @njit(cache=True)
        def _count_runs_nb(states):
            rows, cols = states.shape
            counts = np.empty(rows, dtype=np.int64)
            for i in range(rows):
                k = 1
                for t in range(1, cols):
                    if states[i, t] != states[i, t - 1]:
                        k += 1
                counts[i] = k
            return counts

        @njit(cache=True)
        def _fill_runs_nb(states, counts, max_runs):
            rows, cols = states.shape
            starts = np.zeros((rows, max_runs), dtype=np.int64)
            lengths = np.zeros((rows, max_runs), dtype=np.int64)
            run_states = np.zeros((rows, max_runs), dtype=np.bool_)
            run_of = np.empty((rows, cols), dtype=np.int64)
            for i in range(rows):
                r = 0
                starts[i, 0] = 0
                run_states[i, 0] = states[i, 0]
                run_of[i, 0] = 0
                for t in range(1, cols):
                    if states[i, t] != states[i, t - 1]:
                        lengths[i, r] = t - starts[i, r]
                        r += 1
                        starts[i, r] = t
                        run_states[i, r] = states[i, t]
                    run_of[i, t] = r
                lengths[i, r] = cols - starts[i, r]
            return starts, lengths, run_states, run_of

        def encode_runs_numba(states):
            states = np.ascontiguousarray(states, dtype=np.bool_)
            counts = _count_runs_nb(states)
            max_runs = int(counts.max())
            starts, lengths, run_states, run_of = _fill_runs_nb(
                states, counts, max_runs
            )
            return counts, starts, lengths, run_states, run_of

        @njit(cache=True)
        def extract_windows_numba(starts, lengths, run_states, run_of, t, alpha):
            rows = starts.shape[0]
            signed = np.zeros((rows, alpha), dtype=np.float64)
            current_signed = np.empty(rows, dtype=np.float64)
            for i in range(rows):
                r = run_of[i, t]
                dur = np.float64(t - starts[i, r] + 1)
                if run_states[i, r]:
                    current_signed[i] = -dur
                else:
                    current_signed[i] = dur
                for a in range(alpha):
                    idx = r - alpha + a
                    if idx >= 0:
                        length = np.float64(lengths[i, idx])
                        if run_states[i, idx]:
                            signed[i, a] = -length
                        else:
                            signed[i, a] = length
            return signed, current_signed

        @njit(cache=True)
        def markov_occupancy_numba(
            init_u,
            step_u,
            sin_mod,
            neighbor_w,
            neighbor_cnt,
            base,
            gamma,
            rho0,
            hazard_base,
            hazard_slope,
            hazard_max,
            switch_cap,
        ):
            rows = init_u.shape[0]
            steps = step_u.shape[0] + 1
            occ = np.empty((rows, steps), dtype=np.bool_)
            prev = np.empty(rows, dtype=np.float64)
            curr = np.empty(rows, dtype=np.float64)
            age = np.ones(rows, dtype=np.float64)
            for i in range(rows):
                occ[i, 0] = init_u[i] < base
                prev[i] = 1.0 if occ[i, 0] else 0.0
            for t in range(1, steps):
                # prev is read-only within a step: all rows see the t-1 state
                for i in range(rows):
                    nbr_sum = 0.0
                    for j in range(rows):
                        nbr_sum += neighbor_w[i, j] * prev[j]
                    if neighbor_cnt[i] > 0.0:
                        nbr_mean = nbr_sum / max(neighbor_cnt[i], 1.0)
                    else:
                        nbr_mean = base
                    p_occ = base + sin_mod[t] + gamma * (nbr_mean - base)
                    p_occ = min(max(p_occ, 0.0), 1.0)
                    hazard = rho0 * min(
                        hazard_max, hazard_base + hazard_slope * age[i]
                    )
                    if prev[i] == 1.0:
                        q = hazard * (1.0 - p_occ)
                    else:
                        q = hazard * p_occ
                    q = min(q, switch_cap)
                    if step_u[t - 1, i] < q:
                        curr[i] = 1.0 - prev[i]
                        age[i] = 1.0
                    else:
                        curr[i] = prev[i]
                        age[i] = age[i] + 1.0
                    occ[i, t] = curr[i] == 1.0
                for i in range(rows):
                    prev[i] = curr[i]
            return occ

        @njit(cache=True)
        def next_vacant_steps_numba(states):
            rows, cols = states.shape
            steps = np.empty((rows, cols), dtype=np.int64)
            for i in range(rows):
                nxt = NEVER_VACANT
                for t in range(cols - 1, -1, -1):
                    if states[i, t]:
                        nxt = min(nxt + 1, NEVER_VACANT)
                    else:
                        nxt = 0
                    steps[i, t] = nxt
            return steps

        NUMBA_ACTIVE = True


def _numba_wrapped_next_vacant(states):
    states = np.ascontiguousarray(states, dtype=np.bool_)
    return next_vacant_steps_numba(states)


if NUMBA_ACTIVE:
    encode_runs = encode_runs_numba
    extract_windows = extract_windows_numba
    markov_occupancy = markov_occupancy_numba
    next_vacant_steps = _numba_wrapped_next_vacant
else:
    encode_runs = encode_runs_numpy
    extract_windows = extract_windows_numpy
    markov_occupancy = markov_occupancy_numpy
    next_vacant_steps = next_vacant_steps_numpy
