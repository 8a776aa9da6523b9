"""
Exception hierarchy for crowd-rom
"""

from typing import Optional


class CrowdRomError(Exception):
    """Base class for every error raised by the package"""


class GeometryError(CrowdRomError, ValueError):
    """Invalid corridor or obstacle geometry"""


class DomainError(CrowdRomError, ValueError):
    """Value outside its admissible range"""


class FieldTypeError(CrowdRomError, TypeError):
    """Operation applied to the wrong field quantity"""


class InfeasibleMassError(CrowdRomError, ValueError):
    """Requested mass pushes the initial peak density to rho_m or beyond"""


class SolverError(CrowdRomError):
    """Eikonal solver did not converge"""

    def __init__(self, message: str, residual: float, sweeps: int):
        super().__init__(message)
        self.residual = residual
        self.sweeps = sweeps


class StabilityError(CrowdRomError):
    """CFL time step underflowed or speeds are not finite"""


class ConservationError(CrowdRomError):
    """Density update produced negative values beyond rounding"""


class ConfigError(CrowdRomError, ValueError):
    """Inconsistent pipeline configuration"""


class SamplingError(CrowdRomError):
    """Not enough snapshots to fill a subsampling stratum"""


class FormatError(CrowdRomError):
    """Malformed dataset or model file"""


class FormatVersionError(FormatError):
    """Unsupported schema or payload version"""


class ChecksumError(FormatError):
    """Payload digest does not match the manifest"""


class TruncatedFileError(FormatError):
    """Payload ended before the declared content"""


class RankDeficiencyError(CrowdRomError):
    """Requested POD rank exceeds the numerical rank of the data"""


class RegularizationError(CrowdRomError):
    """Rank-deficient MVAR regressors; use a smaller lag or more data"""


class InstabilityError(CrowdRomError):
    """Free-running forecast diverged"""

    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


class ZeroMassError(CrowdRomError, ValueError):
    """Distribution with zero total mass"""


class UnequalMassError(CrowdRomError, ValueError):
    """Distributions compared by W1 do not carry the same mass"""


class SupportTooLargeError(CrowdRomError):
    """Transport problem exceeds the configured support cap"""


class TimeMisalignmentError(CrowdRomError, ValueError):
    """Truth and approximation are not sampled at the same times"""


class LineageError(CrowdRomError):
    """Artifacts were built from different upstream data"""


class ArtifactNotFoundError(CrowdRomError, LookupError):
    """Requested artifact id does not exist"""

    def __init__(self, kind: str, requested: str, available: Optional[list] = None):
        self.kind = kind
        self.requested = requested
        self.available = list(available or [])
        listing = ", ".join(str(a) for a in self.available) or "none"
        super().__init__(f"Unknown {kind} '{requested}'. Available: {listing}")


class NumericError(CrowdRomError):
    """Dense linear-algebra routine failed to converge"""
