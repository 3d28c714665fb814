"""Adaptive beam alignment for mmWave arrays.

Posterior tracking over angle hypotheses, hierarchical codebook baselines,
and a learned sensing policy trained end to end through the measurement model.
"""

from .channel import (
    ArrayConfig,
    ChannelRealization,
    PilotConfig,
    array_response,
    draw_channel,
    grid_angles,
    measure,
    snr_to_power,
    steering_matrix,
    trial_rng,
)
from .posterior import (
    GridPosterior,
    GridlessPosterior,
    KalmanBank,
    MeasurementHistory,
    interval_probs,
    kalman_init,
    kalman_step,
    map_detect,
    mmse_alpha,
    mmse_estimate,
    uniform_grid_posterior,
    uniform_gridless_posterior,
    update_kalman_posterior,
    update_known_alpha,
    update_mmse_posterior,
)
from .codebook import (
    HierCodebook,
    beam_pattern,
    build_codebook,
    cached_codebook,
    cm_project,
    cm_refine,
    hier_codeword,
    load_codebook,
    save_codebook,
    sector_indicator,
)
from .baselines import hiebs_run, hiepm_run, hiepm_select, omp_detect, random_sensing_matrix
from .policy import (
    PolicyParams,
    forward,
    init_policy,
    load_policy,
    policy_beamformer,
    save_policy,
)
from .training import TrainConfig, draw_episodes, episode_loss, rollout, train
from .evaluate import (
    ExperimentConfig,
    ResultRow,
    monte_carlo_eval,
    parse_report,
    register_method,
    write_report,
)
from .toy import g_estimate, toy_one_step

__version__ = "0.1.0"
