"""Online conformal prediction under semi-bandit feedback, cast as an
adversarial bandit over a grid of score thresholds."""

from .grid_loss import (DomainError, LossParams, ThresholdGrid, a_term, d_term, decay_scale, loss,
                        miscoverage_bit, normalized_gain, pseudo_gain)
from .learners import (Feedback, HyperParams, Learner, LearnerState, estimator_bandit, estimator_unlock,
                       estimator_unlock_plus, sample_arm, strategy, theorem_schedule, unlocking_set, update)
from .environments import EnvSpec, StepTruth, make_environment
from .harness import RunLog, RunSummary, run, summarize
from .config import RunConfig, parse_config

__version__ = "0.1.0"
