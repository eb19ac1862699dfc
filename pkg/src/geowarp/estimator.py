"""scikit-learn style wrapper around photometric alignment."""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import alignment
from .camera import CameraIntrinsics
from .io import warp_image
from .robust import RobustLoss


def _intrinsics(value):
    if isinstance(value, CameraIntrinsics):
        return value
    if value is None:
        raise ValueError("intrinsics must be set before fitting")
    if isinstance(value, str):
        return CameraIntrinsics.from_string(value)
    return CameraIntrinsics(*np.asarray(value, dtype=np.float64).ravel())


class PhotometricAligner(BaseEstimator):
    """Estimate the pose taking reference pixels into the live image.

    ``fit(ref, live, depth)`` runs (coarse-to-fine) alignment and stores
    the pose in ``pose_`` as six numbers ``(v, t)``; in ``so3`` mode the
    translation half is zero. ``transform(live)`` resamples a live image
    into the reference frame with the fitted pose.

    Parameters mirror :class:`~geowarp.alignment.AlignConfig` plus
    ``intrinsics`` (a :class:`CameraIntrinsics`, a 4-sequence or a
    ``"fx fy px py"`` string), ``mode``, ``loss``/``loss_scale`` and
    ``levels``. ``loss_schedule``, when given, replaces the fixed loss
    scale by a sequence of scales run in turn at the finest level.
    """

    def __init__(self, intrinsics=None, mode="se3", loss="l2", loss_scale=None, levels=1,
                 max_iters=200, tol=1e-8, initial_step=1.0, step_rule="bb",
                 max_motion=4.0, loss_schedule=None):
        self.intrinsics = intrinsics
        self.mode = mode
        self.loss = loss
        self.loss_scale = loss_scale
        self.levels = levels
        self.max_iters = max_iters
        self.tol = tol
        self.initial_step = initial_step
        self.step_rule = step_rule
        self.max_motion = max_motion
        self.loss_schedule = loss_schedule

    def _config(self):
        return alignment.AlignConfig(max_iters=self.max_iters, tol=self.tol,
                                     initial_step=self.initial_step, step_rule=self.step_rule,
                                     max_motion=self.max_motion)

    def _problem(self, ref, live, depth):
        return alignment.AlignmentProblem(ref, live, _intrinsics(self.intrinsics), depth,
                                          RobustLoss(self.loss, self.loss_scale), self.mode)

    def fit(self, ref, live, depth=None, init=None):
        problem = self._problem(ref, live, depth)
        config = self._config()
        if self.loss_schedule is not None:
            result = alignment.annealed_align(problem, self.loss_schedule, config, init)
        elif self.levels > 1:
            result = alignment.coarse_to_fine_align(problem, self.levels, config, init)
        else:
            result = alignment.align(problem, init, config)
        self.result_ = result
        self.params_ = result.params
        self.pose_ = np.concatenate([result.params, np.zeros(6 - len(result.params))])
        self.converged_ = result.converged
        self.n_iter_ = len(result.cost_trace) - 1
        self.depth_ = problem.lifting_depth()
        self.intrinsics_ = problem.K
        return self

    def transform(self, live):
        """Live image resampled at the fitted warp, and its validity mask."""
        check_is_fitted(self, "pose_")
        return warp_image(live, self.depth_, self.pose_, self.intrinsics_)

    def predict(self, ref, live, depth=None, init=None):
        """Fit on the pair and return the pose."""
        return self.fit(ref, live, depth, init).pose_

    def score(self, ref, live, depth=None):
        """Negative photometric cost of the pair at the fitted pose."""
        check_is_fitted(self, "params_")
        cost, _, _ = alignment.photometric_cost(self._problem(ref, live, depth), self.params_)
        return -cost
