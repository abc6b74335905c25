"""Toy linear models for studying the biases of (beta-)variational inference."""

from .fa import (
    DataStats,
    FaModel,
    MeanFieldQ,
    fa_beta_sweep,
    fa_free_energy,
    fa_kl,
    fa_log_likelihood,
    fa_mean_field,
    fa_posterior,
    fa_pruning_experiment,
    fa_reconstruction,
    fa_rotation_experiment,
)
from .ica import (
    IcaFitConfig,
    IcaModel,
    IcaQ,
    ica_fit,
    ica_free_energy,
    ica_free_energy_grads,
    student_t_log_density,
)
