"""Variational Bayesian classifier built on finite mixtures of scale mixtures."""

from ._scalemix import (
    ClassModel,
    Classifier,
    Component,
    DataError,
    DimensionMismatch,
    DomainError,
    IoError,
    NotPositiveDefinite,
    NumericError,
    Prior,
    accuracy,
    butterworth_coefficients,
    confusion_matrix,
    default_prior,
    fit,
    log_density,
    lowpass,
    main,
    mav,
    precision_recall,
    probability_of_superiority,
    select_nu,
    simulate,
)

__all__ = [name for name in dir() if not name.startswith("_")]
