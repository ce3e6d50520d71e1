"""One-step Bayesian-bootstrap corrections of posterior draws for smooth functionals."""

from .bayes_bootstrap import (
    InfluenceMatrix,
    RngStream,
    WeightVector,
    correct_draw,
    draw_weights,
    one_step_posterior,
)
from .core import CausalData, CorrectedDraws, PosteriorSummary, UnivariateData, covers, summarize
from .dpmm import DpmmConfig, MixtureDraw, density_at
from .errors import InputError, NumericError, OnestepError, PositivityError
from .functionals import (
    FunctionalSpec,
    actt_corrected,
    att_corrected,
    att_ee_residual,
    cate_corrected,
    isd_chi,
    isd_influence,
    linear_influence,
    mar_influence,
    mar_influence_fixed_pi,
)
from .nuisance import GlmConfig, NuisanceDraws, bb_glm_posterior, irls_solve
from .simharness import ExperimentConfig, MetricsRow, run_experiment

__version__ = "0.1.0"
