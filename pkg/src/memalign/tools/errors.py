#!/usr/bin/env python3

import logging

logger = logging.getLogger(__name__)

# process exit codes used by the command line tools
EXIT_SUCCESS = 0
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3

class MemalignError(Exception):
    '''
    base class of every error raised on purpose by memalign
    '''
    exit_code = EXIT_RUNTIME

# validation family

class ValidationError(MemalignError):
    exit_code = EXIT_VALIDATION

class ArgumentError(ValidationError):
    pass

class DimensionError(ValidationError):
    pass

class UsageError(ValidationError):
    pass

class DegenerateInputError(ValidationError):
    pass

class DegenerateBoxError(ValidationError):
    pass

class PreconditionError(ValidationError):
    pass

class LayoutError(ValidationError):
    pass

class EvaluationError(ValidationError):
    pass

class ConfigValidationError(ValidationError):
    def __init__(self, message, offending_keys=None):
        self.offending_keys = sorted(offending_keys or [])
        if self.offending_keys:
            message = f'{message}: {", ".join(self.offending_keys)}'
        super().__init__(message)

# retrieval family, the trainer catches these and counts a skipped alignment

class RetrievalError(MemalignError):
    pass

class ClassUnavailableError(RetrievalError):
    pass

class NegativeUnavailableError(RetrievalError):
    pass

class ProvenanceError(RetrievalError):
    pass

# runtime family

class NumericalError(MemalignError):
    pass

class TrainingError(NumericalError):
    def __init__(self, message, epoch=None):
        self.epoch = epoch
        if epoch is not None:
            message = f'epoch {epoch}: {message}'
        super().__init__(message)

class DatasetIOError(MemalignError):
    def __init__(self, message, path=None):
        self.path = str(path) if path is not None else None
        if path is not None:
            message = f'{message} ({path})'
        super().__init__(message)

class IntegrityError(DatasetIOError):
    pass

def print_error_helper(error, error_class, error_string):
    '''
    function that helps print_error method to have less code
    '''
    if isinstance(error, error_class):
        logger.error(f'memalign says : {error_string}: {error}')
        return True
    return False

def print_error(error):
    '''
    receive an exception, compare with the known families, log what happened
    the most specific classes are tested first, the first match wins
    '''
    for error_class, error_string in [(ConfigValidationError, 'CONFIG_VALIDATION_FAILED'),
                                      (DegenerateBoxError, 'DEGENERATE_BOX'),
                                      (DegenerateInputError, 'DEGENERATE_INPUT'),
                                      (DimensionError, 'DIMENSION_MISMATCH'),
                                      (ArgumentError, 'INVALID_ARGUMENT'),
                                      (UsageError, 'INVALID_USAGE'),
                                      (PreconditionError, 'PRECONDITION_FAILED'),
                                      (LayoutError, 'LAYOUT_REJECTED'),
                                      (EvaluationError, 'EVALUATION_UNDEFINED'),
                                      (ClassUnavailableError, 'CLASS_UNAVAILABLE'),
                                      (NegativeUnavailableError, 'NEGATIVE_UNAVAILABLE'),
                                      (ProvenanceError, 'PROVENANCE_UNRESOLVED'),
                                      (TrainingError, 'TRAINING_DIVERGED'),
                                      (NumericalError, 'NUMERICAL_FAILURE'),
                                      (IntegrityError, 'INTEGRITY_CHECK_FAILED'),
                                      (DatasetIOError, 'IO_FAILURE')]:
        if print_error_helper(error, error_class, error_string):
            return
    logger.error(f'memalign says : UNEXPECTED_FAILURE: {error}')

def exit_code_for(error):
    if isinstance(error, MemalignError):
        return error.exit_code
    return EXIT_RUNTIME
