"""Damped-Newton maximization of NMI in a coarse-to-fine pyramid.

The step solves (H')^-1 grad with H' equal to the NMI Hessian whose
diagonal is inflated by (1 + lambda); off-diagonal entries are kept
untouched. Small lambda gives Newton behaviour, large lambda degenerates
to diagonally scaled gradient ascent. A trial step is accepted only if it
increases NMI, halving conservatism the usual way: divide lambda by 10 on
success, multiply by 10 on rejection.

Parameters are nondimensionalized before damping (translations divided by
the image diagonal, projective terms multiplied by it) so one lambda acts
uniformly on all eight components; step norms and the convergence
tolerance live in these scaled units.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (DegenerateEntropyError, InsufficientOverlapError,
                     SingularTransformError)
from .imgcore import Homography, build_pyramid, pyramid_levels_for
from .nmi import HistogramConfig, joint_histogram, nmi, nmi_state

LAMBDA_INIT = 1e-2
LAMBDA_FACTOR = 10.0
LAMBDA_MAX = 1e8
LAMBDA_MIN = 1e-12
MAX_ITER_PER_LEVEL = 110
CONVERGENCE_TOL = 1e-4
COARSE_MIN_DIM = 32

# A candidate step may not shrink the overlap below this fraction of the
# seed's overlap; NMI can otherwise be inflated by collapsing the common
# region to a sliver.
OVERLAP_FLOOR = 0.6


@dataclass(frozen=True)
class LevelSchedule:
    """Per-level iteration budget and step-norm convergence threshold."""

    max_iter_per_level: int = MAX_ITER_PER_LEVEL
    convergence_tol: float = CONVERGENCE_TOL
    levels: int = None  # None = derive from image size (coarsest in [32, 64))


@dataclass
class OptimizerState:
    """Running state of one level optimization; trace holds one record per
    trial step as (nmi value, scaled step norm, lambda)."""

    mu: Homography
    lam: float = LAMBDA_INIT
    iteration: int = 0
    best_value: float = -np.inf
    trace: list = field(default_factory=list)
    converged: bool = False
    stalled: bool = False


def param_scales(extent):
    """Nondimensionalization weights for the 8 parameters at this extent."""
    diag = float(np.hypot(extent[0], extent[1]))
    return np.array([1.0, 1.0, 1.0 / diag, 1.0, 1.0, 1.0 / diag, diag, diag])


def damped_hessian(hess, lam):
    """Eq.-style modified Hessian: diagonal scaled by (1 + lambda)."""
    out = hess.copy()
    out[np.diag_indices_from(out)] *= 1.0 + lam
    return out


def ml_step(state, grad, hess, scales=None):
    """Propose the next transform from the damped-Newton system.

    Returns (candidate Homography, scaled step norm). Raises
    SingularTransformError when the damped system cannot be solved; the
    caller reacts by raising lambda.
    """
    if scales is None:
        scales = np.ones(8)
    gs = grad / scales
    hs = hess / np.outer(scales, scales)
    hd = damped_hessian(hs, state.lam)
    try:
        delta = np.linalg.solve(hd, gs)
    except np.linalg.LinAlgError as exc:
        raise SingularTransformError("damped Hessian is singular") from exc
    if not np.all(np.isfinite(delta)):
        raise SingularTransformError("non-finite step")
    step = -delta
    mu_new = state.mu.params + step / scales
    return Homography.from_params(mu_new), float(np.linalg.norm(step))


def optimize_level(f_a, f_b, mu0, schedule=None, cfg=None, mask_a=None):
    """Maximize NMI at one pyramid level from the seed mu0.

    Iterates trial steps until the scaled step norm of an accepted step
    falls below the tolerance, the iteration budget is spent, or lambda
    hits its cap (stall). Accepted NMI values are non-decreasing by
    construction. Unscorable seeds propagate their exception.
    """
    schedule = schedule or LevelSchedule()
    cfg = cfg or HistogramConfig()
    scales = param_scales((f_a.width, f_a.height))
    value, grad, hess, jh0 = nmi_state(f_a, f_b, mu0, cfg, mask_a)
    min_overlap = OVERLAP_FLOOR * jh0.sample_count
    state = OptimizerState(mu=mu0, best_value=value)
    while state.iteration < schedule.max_iter_per_level:
        state.iteration += 1
        try:
            candidate, step_norm = ml_step(state, grad, hess, scales)
        except SingularTransformError:
            state.lam *= LAMBDA_FACTOR
            state.trace.append((state.best_value, np.nan, state.lam))
            if state.lam > LAMBDA_MAX:
                state.stalled = True
                break
            continue
        try:
            cand_jh = joint_histogram(f_a, f_b, candidate, cfg, mask_a,
                                      want_gradient=False)
            cand_value = (nmi(cand_jh)
                          if cand_jh.sample_count >= min_overlap else -np.inf)
        except (InsufficientOverlapError, DegenerateEntropyError):
            cand_value = -np.inf
        if np.isfinite(cand_value) and cand_value > state.best_value:
            state.mu = candidate
            state.best_value = cand_value
            state.lam = max(state.lam / LAMBDA_FACTOR, LAMBDA_MIN)
            state.trace.append((cand_value, step_norm, state.lam))
            if step_norm < schedule.convergence_tol:
                state.converged = True
                break
            value, grad, hess, _ = nmi_state(f_a, f_b, state.mu, cfg, mask_a)
        else:
            state.lam *= LAMBDA_FACTOR
            state.trace.append((state.best_value, step_norm, state.lam))
            if step_norm < schedule.convergence_tol:
                # the undamped/damped proposal is already negligible: treat
                # the seed as a local maximum within tolerance
                state.converged = True
                break
            if state.lam > LAMBDA_MAX:
                state.stalled = True
                break
    return state


def propagate_mu(mu, scale_factor=2.0):
    """Rescale a transform to coordinates scaled by `scale_factor`.

    Conjugation by S = diag(s, s, 1) makes the new transform act
    identically on the rescaled pixel grid.
    """
    s = float(scale_factor)
    m = mu.matrix.copy()
    out = np.array([
        [m[0, 0], m[0, 1], m[0, 2] * s],
        [m[1, 0], m[1, 1], m[1, 2] * s],
        [m[2, 0] / s, m[2, 1] / s, m[2, 2]],
    ])
    return Homography(out)


def multiscale_register(img_a, img_b, mu_init=None, schedule=None, cfg=None):
    """Coarse-to-fine NMI refinement of a seed transform.

    Builds matching pyramids of both images, rescales `mu_init` to the
    coarsest level, refines level by level, and propagates each result to
    the next finer grid. Returns (final Homography, report dict); when no
    level accepts any step the seed comes back with failed=True.
    """
    schedule = schedule or LevelSchedule()
    cfg = cfg or HistogramConfig()
    mu_init = mu_init or Homography.identity()
    if schedule.levels is not None:
        n_levels = schedule.levels
    else:
        n_levels = min(
            pyramid_levels_for(img_a.width, img_a.height, COARSE_MIN_DIM),
            pyramid_levels_for(img_b.width, img_b.height, COARSE_MIN_DIM),
        )
    pyr_a = build_pyramid(img_a, min_dim=8, num_levels=n_levels)
    pyr_b = build_pyramid(img_b, min_dim=8, num_levels=n_levels)

    mu = mu_init
    for _ in range(n_levels - 1):
        mu = propagate_mu(mu, 0.5)

    report = {"levels": [], "failed": False}
    any_scored = False
    for idx in range(n_levels):
        f_a, f_b = pyr_a.levels[idx], pyr_b.levels[idx]
        level_info = {
            "shape": (f_a.width, f_a.height),
            "iterations": 0,
            "nmi": None,
            "converged": False,
            "stalled": False,
            "error": None,
        }
        try:
            state = optimize_level(f_a, f_b, mu, schedule, cfg)
            mu = state.mu
            any_scored = True
            level_info.update(
                iterations=state.iteration,
                nmi=state.best_value,
                converged=state.converged,
                stalled=state.stalled,
                trace=[(float(v), float(s), float(l)) for v, s, l in state.trace],
            )
        except (InsufficientOverlapError, DegenerateEntropyError) as exc:
            level_info["error"] = str(exc)
        report["levels"].append(level_info)
        if idx < n_levels - 1:
            mu = propagate_mu(mu, 2.0)

    if not any_scored:
        report["failed"] = True
        return mu_init, report
    return mu, report
