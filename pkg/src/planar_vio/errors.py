"""Exception hierarchy shared by every module of the package."""


class PlanarVioError(Exception):
    """Base class for all errors raised by planar_vio."""


class DegenerateTransfer(PlanarVioError):
    """A point maps to the plane at infinity (third homogeneous coordinate ~ 0)."""


class DegenerateConfiguration(PlanarVioError):
    """Corner correspondences are not in general position."""


class NotPositiveSemiDefinite(PlanarVioError):
    pass


class CameraOnPlane(PlanarVioError):
    pass


class EmptyMask(PlanarVioError):
    pass


class NonPositiveScale(PlanarVioError):
    pass


class EmptyInput(PlanarVioError):
    pass


class EmptySampleSet(EmptyInput):
    pass


class PlaneCollision(PlanarVioError):
    """Camera-to-plane distance collapsed during propagation."""


class NonMonotoneTime(PlanarVioError):
    pass


class NotStationary(PlanarVioError):
    pass


class OutOfRange(PlanarVioError):
    pass


class InsufficientOverlap(PlanarVioError):
    pass


class ConfigError(PlanarVioError):
    """Malformed configuration or input file; carries the offending line number."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:"
            if line is not None:
                where += f"{line}:"
            where += " "
        super().__init__(where + message)


class InnovationGateFailure(PlanarVioError):
    """Measurement rejected by the chi-square gate.

    The flow-reset state and covariance are attached so the caller can keep
    running the filter.
    """

    def __init__(self, mahalanobis, threshold, state, cov, innovation):
        self.mahalanobis = mahalanobis
        self.threshold = threshold
        self.state = state
        self.cov = cov
        self.innovation = innovation
        super().__init__(
            f"innovation gate rejected measurement: d2={mahalanobis:.3f} > {threshold:.3f}")


class FilterDivergence(PlanarVioError):
    """Numerical breakdown of a filter run.

    ``last_good_time`` is the timestamp of the last state that passed the
    covariance checks; ``partial`` holds whatever the run produced up to it.
    """

    def __init__(self, message, last_good_time, partial=None):
        self.last_good_time = last_good_time
        self.partial = partial
        super().__init__(f"{message} (last good state at t={last_good_time:.6f} s)")
