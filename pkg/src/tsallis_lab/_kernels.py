"""Numba-compiled inner loops shared by the library API and the harness.

Everything here operates on raw float64 arrays so the same compiled code
backs both the per-call library surface (`ftrl_core`, `policy`) and the
full-trajectory simulation kernel used by `harness`. Keeping a single
implementation is what makes library-driven and harness-driven
trajectories bit-identical.
"""

import numpy as np
from numba import njit

NU_TOLERANCE = 1e-12
MAX_SOLVER_ITERATIONS = 100

# Status codes returned by run_trajectory.
STATUS_OK = 0
STATUS_SOLVER_FAILURE = 1

# Audit check identifiers (indices into the violation-count array).
CHECK_SANDWICH = 0
CHECK_GROWTH = 1
CHECK_DECOMPOSITION = 2

SANDWICH_SLACK = 1e-9
GROWTH_SLACK = 1e-9
MAX_MASS_SLACK = 1e-12

ARM_BERNOULLI = 0
ARM_UNIFORM = 1


@njit(cache=True, nogil=True)
def solve_dual(scaled):
    """Root of g(nu) = sum_i 4*(scaled_i + nu)^-2 - 1 on [2, 2*sqrt(d)].

    ``scaled`` must be nonnegative with minimum exactly 0, which pins the
    root inside the bracket: the zero coordinate contributes 1 at nu=2
    (so g(2) >= 0) and every term is at most 1/d at nu=2*sqrt(d) (so
    g(2*sqrt(d)) <= 0). g is smooth, strictly decreasing and convex, so
    Newton from the left endpoint converges monotonically; any step that
    leaves the open bracket falls back to bisection.

    Returns (nu, residual, iterations, converged).
    """
    d = scaled.shape[0]
    if d == 1:
        return 2.0, 0.0, 0, True
    lo = 2.0
    hi = 2.0 * np.sqrt(d)
    nu = lo
    g = 0.0
    for iteration in range(1, MAX_SOLVER_ITERATIONS + 1):
        g = -1.0
        dg = 0.0
        for i in range(d):
            r = 1.0 / (scaled[i] + nu)
            h = 2.0 * r
            g += h * h
            dg -= 8.0 * r * r * r
        if abs(g) <= NU_TOLERANCE:
            # One guarded polish step: from inside the tolerance band a
            # Newton update typically lands at machine precision. The
            # root can sit at the bracket boundary (symmetric input), so
            # allow the polish to cross it by a hair.
            polished = nu - g / dg
            if lo < polished < hi + 1e-9:
                g2 = -1.0
                for i in range(d):
                    h = 2.0 / (scaled[i] + polished)
                    g2 += h * h
                if abs(g2) < abs(g):
                    return polished, g2, iteration, True
            return nu, g, iteration, True
        if g > 0.0:
            lo = nu
        else:
            hi = nu
        nxt = nu - g / dg
        if nxt <= lo or nxt >= hi:
            nxt = 0.5 * (lo + hi)
        nu = nxt
    return nu, g, MAX_SOLVER_ITERATIONS, False


@njit(cache=True, nogil=True)
def ftrl_point(eta, cumulative, out_probs):
    """Fill ``out_probs`` with the regularized-leader distribution.

    Applies the min-shift reduction, solves the dual and maps back via
    p_i = 4*(eta*shifted_i + nu)^-2. Returns (nu, residual, iterations,
    converged).
    """
    d = cumulative.shape[0]
    if d == 1:
        out_probs[0] = 1.0
        return 2.0, 0.0, 0, True
    m = cumulative[0]
    for i in range(1, d):
        if cumulative[i] < m:
            m = cumulative[i]
    scaled = np.empty(d)
    for i in range(d):
        scaled[i] = eta * (cumulative[i] - m)
    nu, residual, iterations, converged = solve_dual(scaled)
    for i in range(d):
        r = 2.0 / (scaled[i] + nu)
        out_probs[i] = r * r
    return nu, residual, iterations, converged


@njit(cache=True, nogil=True)
def divergence_to_vertex(probs, star):
    """Divergence from the point mass on ``star`` to ``probs``.

    Uses the cancellation-free closed form
    2*sum_{i != star} sqrt(p_i) + 2*(1 - sqrt(p_star))^2 / sqrt(p_star),
    which stays accurate as p_star -> 1.
    """
    s_star = np.sqrt(probs[star])
    acc = 0.0
    for i in range(probs.shape[0]):
        if i != star:
            acc += np.sqrt(probs[i])
    rem = 1.0 - s_star
    return 2.0 * acc + 2.0 * rem * rem / s_star


@njit(cache=True, nogil=True)
def divergence_between(x, y):
    """General divergence D(x, y) for the square-root potential."""
    acc = 0.0
    for i in range(x.shape[0]):
        sy = np.sqrt(y[i])
        acc += 4.0 * (sy - np.sqrt(x[i])) + (x[i] - y[i]) * 2.0 / sy
    return acc


@njit(cache=True, nogil=True, inline="always")
def _record_violation(counts, rows, stored, code, rnd, arm, lhs, rhs):
    counts[code] += 1
    if stored < rows.shape[0]:
        rows[stored, 0] = code
        rows[stored, 1] = rnd
        rows[stored, 2] = arm
        rows[stored, 3] = lhs
        rows[stored, 4] = rhs
        return stored + 1
    return stored


@njit(cache=True, nogil=True)
def run_trajectory(
    means,
    gaps,
    star,
    kind_codes,
    widths,
    alpha,
    horizon,
    checkpoints,
    env_uniforms,
    arm_uniforms,
    clip_floor,
    audit,
    decomp_tolerance,
    out_scalars,
    out_probs,
    out_final_cum,
    violation_counts,
    violation_rows,
    diagnostics,
):
    """Run one replication of the policy for ``horizon`` rounds.

    Consumes exactly d environment uniforms and one arm uniform per
    round, from the pregenerated arrays. At each checkpoint round t the
    iterate-based quantities reflect the pre-action distribution p_t and
    the cumulative quantities include round t itself.

    out_scalars columns: 0 divergence to the optimal vertex, 1 simple
    regret, 2 pseudo-regret, 3 estimated regret, 4 mean-vs-optimum
    estimate gap (u statistic), 5 concentration-event indicator.
    violation_rows columns: check code, round, arm, lhs, rhs.
    diagnostics: 0 max importance weight, 1 max decomposition residual,
    2 max solver iterations, 3 failing round on solver failure.

    ``clip_floor`` > 0 activates the fault-injection hook that floors
    and renormalizes the distribution (for audit sensitivity tests).
    Returns STATUS_OK or STATUS_SOLVER_FAILURE.
    """
    d = means.shape[0]
    n_ckpt = checkpoints.shape[0]
    two_sqrt_d = 2.0 * np.sqrt(d)
    inv_d = 1.0 / d

    cum = np.zeros(d)
    scaled = np.empty(d)
    probs = np.empty(d)
    prev_probs = np.zeros(d)
    prev_cum = np.zeros(d)
    prev_eta = 0.0
    prev_lhat = 0.0
    prev_arm = -1

    sum_inner = 0.0
    pseudo = 0.0
    max_iw = 0.0
    max_resid = 0.0
    max_iters = 0
    stored = 0
    ck = 0

    for t in range(1, horizon + 1):
        eta = alpha / np.sqrt(t)
        m = cum[0]
        for i in range(1, d):
            if cum[i] < m:
                m = cum[i]
        for i in range(d):
            scaled[i] = eta * (cum[i] - m)
        if d == 1:
            probs[0] = 1.0
            iterations = 0
        else:
            nu, residual, iterations, converged = solve_dual(scaled)
            if not converged:
                diagnostics[3] = t
                return STATUS_SOLVER_FAILURE
            for i in range(d):
                r = 2.0 / (scaled[i] + nu)
                probs[i] = r * r
        if iterations > max_iters:
            max_iters = iterations

        if clip_floor > 0.0:
            s = 0.0
            for i in range(d):
                if probs[i] < clip_floor:
                    probs[i] = clip_floor
                s += probs[i]
            for i in range(d):
                probs[i] /= s

        if audit:
            # Probability sandwich against the shifted scaled estimates.
            for i in range(d):
                r = 2.0 / (scaled[i] + two_sqrt_d)
                lower = r * r
                if probs[i] < lower - SANDWICH_SLACK:
                    stored = _record_violation(
                        violation_counts, violation_rows, stored,
                        CHECK_SANDWICH, t, i, probs[i], lower,
                    )
                if scaled[i] > 0.0:
                    r = 2.0 / scaled[i]
                    upper = r * r
                    if probs[i] > upper + SANDWICH_SLACK:
                        stored = _record_violation(
                            violation_counts, violation_rows, stored,
                            CHECK_SANDWICH, t, i, probs[i], upper,
                        )
            pmax = probs[0]
            imax = 0
            for i in range(1, d):
                if probs[i] > pmax:
                    pmax = probs[i]
                    imax = i
            if pmax < inv_d - MAX_MASS_SLACK:
                stored = _record_violation(
                    violation_counts, violation_rows, stored,
                    CHECK_SANDWICH, t, imax, pmax, inv_d,
                )
            if t > 1:
                # Per-step growth bound on each component.
                add = 1.0 / (t - 1)
                for i in range(d):
                    limit = 7.0 * d * prev_probs[i] + add
                    if probs[i] > limit + GROWTH_SLACK:
                        stored = _record_violation(
                            violation_counts, violation_rows, stored,
                            CHECK_GROWTH, t, i, probs[i], limit,
                        )
                # Decomposition identity for the previous round, now that
                # its successor distribution is available.
                star_ind = 1.0 if prev_arm == star else 0.0
                lhs = prev_lhat * (prev_probs[prev_arm] - star_ind)
                stability = (
                    prev_lhat * (prev_probs[prev_arm] - probs[prev_arm])
                    - divergence_between(probs, prev_probs) / eta
                )
                penalty = (
                    divergence_to_vertex(prev_probs, star)
                    - divergence_to_vertex(probs, star)
                ) / eta
                dot = 0.0
                for i in range(d):
                    dot += probs[i] * prev_cum[i]
                drift = (1.0 / eta - 1.0 / prev_eta) * prev_eta * (dot - prev_cum[star])
                resid = abs(lhs - stability - penalty - drift)
                if resid > max_resid:
                    max_resid = resid
                if resid > decomp_tolerance:
                    stored = _record_violation(
                        violation_counts, violation_rows, stored,
                        CHECK_DECOMPOSITION, t - 1, prev_arm, resid, decomp_tolerance,
                    )

        at_checkpoint = ck < n_ckpt and checkpoints[ck] == t
        if at_checkpoint:
            out_scalars[ck, 0] = divergence_to_vertex(probs, star)
            sr = 0.0
            for i in range(d):
                sr += gaps[i] * probs[i]
            out_scalars[ck, 1] = sr
            best = cum[0]
            best_i = 0
            for i in range(1, d):
                if cum[i] < best:
                    best = cum[i]
                    best_i = i
            out_scalars[ck, 5] = 1.0 if best_i == star else 0.0
            for i in range(d):
                out_probs[ck, i] = probs[i]

        u = arm_uniforms[t - 1]
        c = 0.0
        arm = d - 1
        for i in range(d):
            c += probs[i]
            if u < c:
                arm = i
                break
        uv = env_uniforms[t - 1, arm]
        if kind_codes[arm] == ARM_BERNOULLI:
            loss = 1.0 if uv < means[arm] else 0.0
        else:
            loss = means[arm] + widths[arm] * (uv - 0.5)
            if loss < 0.0:
                loss = 0.0
            elif loss > 1.0:
                loss = 1.0
        lhat = loss / probs[arm]
        iw = 1.0 / probs[arm]
        if iw > max_iw:
            max_iw = iw

        if audit:
            for i in range(d):
                prev_probs[i] = probs[i]
                prev_cum[i] = cum[i]
            prev_eta = eta
            prev_lhat = lhat
            prev_arm = arm

        cum[arm] += lhat
        sum_inner += loss
        pseudo += gaps[arm]

        if at_checkpoint:
            out_scalars[ck, 2] = pseudo
            mn = cum[0]
            for i in range(1, d):
                if cum[i] < mn:
                    mn = cum[i]
            out_scalars[ck, 3] = sum_inner - mn
            out_scalars[ck, 4] = cum[star] - sum_inner
            ck += 1

    for i in range(d):
        out_final_cum[i] = cum[i]
    diagnostics[0] = max_iw
    diagnostics[1] = max_resid
    diagnostics[2] = max_iters
    return STATUS_OK
