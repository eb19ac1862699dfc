"""Dense photometric alignment.

The cost chains the layers end to end::

    params -> so3/se3 -> 3D grid generator -> projection -> bilinear sampler
           -> robust loss

and its gradient is assembled from the matching backward passes. The
optimiser is first-order descent with a backtracking line search.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from . import camera, lie, sampler
from .camera import CameraIntrinsics
from .grids import GridError, check_scalar_grid, reduce_sum
from .robust import RobustLoss, apply_rho_grid, rho

log = logging.getLogger(__name__)

MODES = ("so3", "se3")


class ConfigurationError(ValueError):
    pass


def _as_channels(img, name):
    a = np.asarray(img, dtype=np.float64)
    if a.ndim == 2:
        a = a[..., None]
    if a.ndim != 3 or min(a.shape) < 1:
        raise GridError(f"{name} must have shape (H, W) or (H, W, C), got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise GridError(f"{name} contains non-finite values")
    return a


@dataclass
class AlignmentProblem:
    """Reference and live images, intrinsics, loss and motion model.

    ``depth`` is the reference depth map (0 marks invalid pixels); it is
    required in ``se3`` mode and ignored in ``so3`` mode, where pixels are
    lifted onto the unit-depth ray grid.
    """

    ref: np.ndarray
    live: np.ndarray
    K: CameraIntrinsics
    depth: np.ndarray = None
    loss: RobustLoss = field(default_factory=RobustLoss)
    mode: str = "se3"

    def __post_init__(self):
        self.mode = str(self.mode).lower()
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}, got {self.mode!r}")
        self.ref = _as_channels(self.ref, "ref")
        self.live = _as_channels(self.live, "live")
        if self.ref.shape != self.live.shape:
            raise GridError(f"ref and live shapes differ: {self.ref.shape} vs {self.live.shape}")
        if isinstance(self.loss, str):
            self.loss = RobustLoss(self.loss)
        if self.mode == "se3":
            if self.depth is None:
                raise ConfigurationError("se3 mode requires a depth map")
            self.depth = check_scalar_grid(self.depth, "depth")
            if self.depth.shape != self.ref.shape[:2]:
                raise GridError(f"depth shape {self.depth.shape} does not match images {self.ref.shape[:2]}")
        elif self.depth is not None:
            self.depth = check_scalar_grid(self.depth, "depth")

    @property
    def n_params(self):
        return 3 if self.mode == "so3" else 6

    @property
    def shape(self):
        return self.ref.shape[:2]

    def lifting_depth(self):
        if self.mode == "so3":
            return np.ones(self.shape)
        return self.depth


@dataclass
class AlignConfig:
    """Optimiser settings.

    ``step_rule`` is ``"bb"`` (Barzilai-Borwein trial steps, first step of
    length ``initial_step`` in parameter space) or ``"fixed"`` (every
    iteration starts the line search at ``initial_step`` along the raw
    negative gradient).

    ``max_motion`` caps how far (in pixels) any sample may move in a single
    accepted step; a trial exceeding it is halved like a failed decrease.
    Without it a long trial step can push the whole warp out of view, which
    lowers the masked cost to zero. ``None`` disables the cap.

    A trial is accepted when it lowers the cost over the pixels valid both
    before and after the step, and does not raise the total cost. ``gtol``
    stops the run (as converged) once the gradient norm falls to it.
    """

    max_iters: int = 200
    tol: float = 1e-8
    initial_step: float = 1.0
    step_rule: str = "bb"
    max_halvings: int = 20
    max_motion: float = 4.0
    gtol: float = 1e-12

    def __post_init__(self):
        if self.max_iters < 1:
            raise ConfigurationError("max_iters must be >= 1")
        if self.step_rule not in ("bb", "fixed"):
            raise ConfigurationError(f"unknown step rule {self.step_rule!r}")
        if not self.initial_step > 0:
            raise ConfigurationError("initial_step must be > 0")


@dataclass
class TraceEntry:
    iteration: int
    cost: float
    step: float
    valid_fraction: float
    params: np.ndarray = None


@dataclass
class AlignmentResult:
    params: np.ndarray
    cost_trace: list
    converged: bool
    final_mask_fraction: float
    levels: list = field(default_factory=list)

    @property
    def initial_cost(self):
        return self.cost_trace[0].cost

    @property
    def final_cost(self):
        return self.cost_trace[-1].cost


def _transform(problem, params):
    p = np.asarray(params, dtype=np.float64)
    if p.shape != (problem.n_params,):
        raise ConfigurationError(
            f"{problem.mode} mode needs {problem.n_params} parameters, got shape {p.shape}"
        )
    if problem.mode == "so3":
        return np.concatenate([lie.so3_exp(p), np.zeros((3, 1))], axis=1)
    return lie.se3_forward(p)


def _forward(problem, params):
    T = _transform(problem, params)
    depth = problem.lifting_depth()
    points, valid_depth = camera.grid_generator_3d(depth, problem.K, T)
    pix, valid_w = camera.project_points(points, problem.K)
    warped = np.empty_like(problem.live)
    mask = None
    for k in range(problem.live.shape[2]):
        warped[..., k], mask = sampler.bilinear_sample(problem.live[..., k], pix)
    mask = mask * valid_depth * valid_w
    residuals = mask[..., None] * (problem.ref - warped)
    cost = 0.0
    grad_r = np.empty_like(residuals)
    for k in range(residuals.shape[2]):
        c, grad_r[..., k] = apply_rho_grid(problem.loss, residuals[..., k], mask)
        cost += c
    rho_map = mask * np.sum(rho(problem.loss, residuals), axis=-1)
    return dict(T=T, depth=depth, points=points, pix=pix, mask=mask, rho_map=rho_map,
                residuals=residuals, grad_r=grad_r, cost=cost, valid_w=valid_w)


def _squeeze(r):
    return r[..., 0] if r.shape[2] == 1 else r


def photometric_cost(problem, params):
    """Returns ``(cost, residuals, mask)``.

    ``residuals = mask * (ref - warped_live)``, one channel per image
    channel (squeezed for single-channel images).
    """
    f = _forward(problem, params)
    return f["cost"], _squeeze(f["residuals"]), f["mask"]


def _gradient_from(problem, params, f):
    grad_pix = np.zeros(problem.shape + (2,))
    for k in range(problem.live.shape[2]):
        # d cost / d warped = -psi(r) on valid pixels
        _, gg = sampler.bilinear_sample_backward(problem.live[..., k], f["pix"], -f["grad_r"][..., k])
        grad_pix += gg
    grad_pix *= f["mask"][..., None]
    grad_points = camera.project_points_backward(f["points"], problem.K, grad_pix, f["valid_w"])
    grad_T, _ = camera.grid_generator_3d_backward(f["depth"], problem.K, f["T"], grad_points)
    p = np.asarray(params, dtype=np.float64)
    if problem.mode == "so3":
        return lie.so3_backward(p, f["T"][:, :3], grad_T[:, :3])
    return lie.se3_backward(p, grad_T)


def photometric_gradient(problem, params):
    """Exact gradient of :func:`photometric_cost` with respect to ``params``."""
    return _gradient_from(problem, params, _forward(problem, params))


def cost_and_gradient(problem, params):
    f = _forward(problem, params)
    return f["cost"], _gradient_from(problem, params, f), float(f["mask"].mean())


def _common_support_decrease(a, b):
    """Whether forward state ``b`` beats ``a`` on pixels valid in both.

    Comparing raw masked sums would reward steps that merely push pixels
    out of view.
    """
    common = (a["mask"] > 0) & (b["mask"] > 0)
    if not common.any():
        return False
    return reduce_sum(b["rho_map"][common]) < reduce_sum(a["rho_map"][common])


def _motion(problem, a, b):
    """Largest pixel displacement between the warps at ``a`` and ``b``."""
    pa, va = _project_only(problem, a)
    pb, vb = _project_only(problem, b)
    if np.any(va != vb):
        return np.inf
    if not va.any():
        return 0.0
    return float(np.max(np.abs(pa[va] - pb[va])))


def _project_only(problem, params):
    points, valid = camera.grid_generator_3d(problem.lifting_depth(), problem.K, _transform(problem, params))
    pix, valid_w = camera.project_points(points, problem.K)
    return pix, valid & valid_w


def align(problem, initial_params=None, config=None):
    """Minimise the photometric cost from ``initial_params`` (identity by
    default).

    A failed line search (``max_halvings`` halvings without a decrease)
    ends the run with ``converged = False``.
    """
    config = config or AlignConfig()
    n = problem.n_params
    params = np.zeros(n) if initial_params is None else np.array(initial_params, dtype=np.float64)
    if params.shape != (n,):
        raise ConfigurationError(f"initial_params must have {n} values, got shape {params.shape}")

    state = _forward(problem, params)
    grad = _gradient_from(problem, params, state)
    trace = [TraceEntry(0, state["cost"], 0.0, float(state["mask"].mean()), params.copy())]
    stopped_on_tol = False
    prev_params = prev_grad = None
    step = config.initial_step

    for it in range(1, config.max_iters + 1):
        gnorm = float(np.linalg.norm(grad))
        if gnorm <= config.gtol:
            stopped_on_tol = True
            break
        if config.step_rule == "fixed":
            step = config.initial_step
        elif prev_params is None:
            step = config.initial_step / gnorm
        else:
            s = params - prev_params
            y = grad - prev_grad
            sy = float(s @ y)
            step = float(s @ s) / sy if sy > 0 else 2.0 * step

        accepted = False
        for _ in range(config.max_halvings + 1):
            trial = params - step * grad
            if config.max_motion is not None and _motion(problem, params, trial) > config.max_motion:
                step *= 0.5
                continue
            trial_state = _forward(problem, trial)
            if trial_state["cost"] <= state["cost"] and _common_support_decrease(state, trial_state):
                accepted = True
                break
            step *= 0.5
        if not accepted:
            log.debug("line search failed at iteration %d (cost %.6g)", it, state["cost"])
            break

        prev_params, prev_grad = params, grad
        prev_cost = state["cost"]
        params, state = trial, trial_state
        grad = _gradient_from(problem, params, state)
        cost = state["cost"]
        trace.append(TraceEntry(it, cost, step, float(state["mask"].mean()), params.copy()))
        if abs(prev_cost - cost) / max(prev_cost, 1e-12) < config.tol:
            stopped_on_tol = True
            break

    converged = stopped_on_tol and trace[-1].cost <= trace[0].cost
    return AlignmentResult(params, trace, converged, trace[-1].valid_fraction)


def downsample(img):
    """2x2 box average; a trailing odd row/column is dropped."""
    a = np.asarray(img, dtype=np.float64)
    h, w = a.shape[0] // 2 * 2, a.shape[1] // 2 * 2
    a = a[:h, :w]
    return 0.25 * (a[0::2, 0::2] + a[1::2, 0::2] + a[0::2, 1::2] + a[1::2, 1::2])


def downsample_depth(depth):
    """2x2 average over valid (non-zero) depths; 0 where none is valid."""
    d = np.asarray(depth, dtype=np.float64)
    h, w = d.shape[0] // 2 * 2, d.shape[1] // 2 * 2
    d = d[:h, :w]
    blocks = [d[0::2, 0::2], d[1::2, 0::2], d[0::2, 1::2], d[1::2, 1::2]]
    total = sum(np.where(b > 0, b, 0.0) for b in blocks)
    count = sum((b > 0).astype(np.float64) for b in blocks)
    return np.where(count > 0, total / np.maximum(count, 1.0), 0.0)


def build_pyramid(problem, levels):
    """Problems from finest (index 0) to coarsest."""
    if levels < 1:
        raise ConfigurationError("levels must be >= 1")
    pyramid = [problem]
    for _ in range(levels - 1):
        p = pyramid[-1]
        if min(p.shape) < 4:
            raise ConfigurationError(f"image too small for {levels} pyramid levels")
        pyramid.append(
            AlignmentProblem(
                ref=downsample(p.ref),
                live=downsample(p.live),
                K=p.K.downsampled(),
                depth=None if p.depth is None else downsample_depth(p.depth),
                loss=p.loss,
                mode=p.mode,
            )
        )
    return pyramid


def coarse_to_fine_align(problem, levels=3, config=None, initial_params=None):
    """Align on a box-filtered pyramid, coarsest first, seeding each level
    with the previous estimate. ``levels`` holds the per-level results,
    coarsest first; the returned trace is the finest level's."""
    pyramid = build_pyramid(problem, levels)
    params = initial_params
    results = []
    for p in reversed(pyramid):
        res = align(p, params, config)
        log.info("level %dx%d: cost %.6g -> %.6g in %d iterations",
                 p.shape[1], p.shape[0], res.initial_cost, res.final_cost, len(res.cost_trace) - 1)
        results.append(res)
        params = res.params
    final = results[-1]
    return AlignmentResult(final.params, final.cost_trace, final.converged,
                           final.final_mask_fraction, levels=results)


def annealed_align(problem, scales, config=None, initial_params=None):
    """Run :func:`align` once per entry of ``scales``, replacing the loss
    scale each time and seeding each stage with the previous estimate.

    A decreasing schedule starts with a wide basin and ends with a tight
    rejection threshold, which helps redescending losses (Tukey,
    Geman-McClure) on images with gross outliers. ``levels`` holds the
    per-stage results in schedule order.
    """
    if len(scales) == 0:
        raise ConfigurationError("scales must not be empty")
    params = initial_params
    results = []
    for c in scales:
        stage = AlignmentProblem(problem.ref, problem.live, problem.K, problem.depth,
                                 RobustLoss(problem.loss.kind, float(c)), problem.mode)
        res = align(stage, params, config)
        results.append(res)
        params = res.params
    final = results[-1]
    return AlignmentResult(final.params, final.cost_trace, final.converged,
                           final.final_mask_fraction, levels=results)
