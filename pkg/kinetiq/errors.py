"""Exceptions raised by kinetiq.

Every error derives from `KinetiqError` and from the builtin exception it
specializes, so callers can catch either.
"""

__all__ = ['KinetiqError', 'InvalidInputError', 'InvalidPlacementError',
           'DegenerateConfigurationError', 'ConfigError',
           'LayoutMismatchError', 'TrialRejectedError',
           'TrainingDivergedError']


class KinetiqError(Exception):
    pass


class InvalidInputError(KinetiqError, ValueError):
    pass


class InvalidPlacementError(InvalidInputError):
    pass


class DegenerateConfigurationError(KinetiqError, ArithmeticError):
    pass


class ConfigError(KinetiqError, ValueError):
    pass


class LayoutMismatchError(KinetiqError, ValueError):
    pass


class TrialRejectedError(KinetiqError, ValueError):
    """Trial failed validation during ingestion.

    Args:
        trial: Trial name.
        reasons: Human-readable rejection reasons.
    """
    def __init__(self, trial: str, reasons):
        self.trial = trial
        self.reasons = list(reasons)
        super().__init__(f'Trial {trial} rejected: ' + '; '.join(self.reasons))


class TrainingDivergedError(KinetiqError, RuntimeError):
    """Non-finite loss during training.

    Args:
        step: Training step at which the loss became non-finite.
        term: Name of the first non-finite loss term.
        checkpoint_path: Last checkpoint with finite loss, if any.
    """
    def __init__(self, step: int, term: str, checkpoint_path: str = None):
        self.step = step
        self.term = term
        self.checkpoint_path = checkpoint_path
        super().__init__(f'Training diverged at step {step}: loss term '
                         f'{term} is not finite (last good checkpoint: '
                         f'{checkpoint_path})')
