"""
Enums for the crowd-rom pipeline
"""

from enum import Enum
from typing import List


class CellKind(Enum):
    """Tag carried by every grid cell"""
    FLUID = 0
    OBSTACLE = 1

    @classmethod
    def get_all_values(cls) -> List[int]:
        """Get all tag values"""
        return [kind.value for kind in cls]


class Quantity(Enum):
    """Physical quantity stored in a Field"""
    DENSITY = "density"  # people per square meter
    POTENTIAL = "potential"  # travel-time potential, meters of equivalent distance

    @classmethod
    def get_all_values(cls) -> List[str]:
        """Get all quantity values as strings"""
        return [quantity.value for quantity in cls]

    @classmethod
    def is_valid(cls, quantity: str) -> bool:
        """Check if a quantity string is valid"""
        return quantity in cls.get_all_values()


class Normalization(Enum):
    """Column normalization of a snapshot matrix"""
    RAW = "raw"
    UNIT_MASS = "unit_mass"  # every column sums to one

    @classmethod
    def get_all_values(cls) -> List[str]:
        """Get all normalization values as strings"""
        return [norm.value for norm in cls]

    @classmethod
    def is_valid(cls, norm: str) -> bool:
        """Check if a normalization string is valid"""
        return norm in cls.get_all_values()


class EmbeddingKind(Enum):
    """Latent coordinate families"""
    POD = "pod"
    DMAPS = "dmaps"

    @classmethod
    def get_all_values(cls) -> List[str]:
        """Get all embedding kinds as strings"""
        return [kind.value for kind in cls]

    @classmethod
    def is_valid(cls, kind: str) -> bool:
        """Check if an embedding kind string is valid"""
        return kind in cls.get_all_values()

    @classmethod
    def get_display_name(cls, kind: str) -> str:
        """Get the label used in summary tables"""
        display_map = {
            cls.POD.value: "POD-ROM",
            cls.DMAPS.value: "DMs-ROM",
        }
        return display_map.get(kind, kind)


class ArtifactMode(Enum):
    """Section tag recorded in an EQFR manifest"""
    SNAPSHOTS = "SNAPSHOTS"
    MODE_POD = "MODE_POD"
    MODE_DMAPS = "MODE_DMAPS"
    MODE_MVAR = "MODE_MVAR"

    @classmethod
    def get_all_values(cls) -> List[str]:
        """Get all artifact modes as strings"""
        return [mode.value for mode in cls]

    @classmethod
    def is_valid(cls, mode: str) -> bool:
        """Check if an artifact mode string is valid"""
        return mode in cls.get_all_values()


class Split(Enum):
    """Dataset splits, disjoint by run id"""
    TRAIN = "train"
    VAL = "val"
    TEST = "test"
    EXTRA = "extra"  # sigma outside the sampling range

    @classmethod
    def get_all_values(cls) -> List[str]:
        """Get all split names"""
        return [split.value for split in cls]

    @classmethod
    def is_valid(cls, split: str) -> bool:
        """Check if a split name is valid"""
        return split in cls.get_all_values()

    @classmethod
    def get_description(cls, split: str) -> str:
        """Get a description for a split"""
        descriptions = {
            cls.TRAIN.value: "Runs used to fit manifolds and MVAR models",
            cls.VAL.value: "Runs used for model selection",
            cls.TEST.value: "Held-out runs inside the sampling range",
            cls.EXTRA.value: "Held-out runs with out-of-range Gaussian widths",
        }
        return descriptions.get(split, "Unknown split")


class StageName(Enum):
    """Pipeline stages in execution order"""
    SIMULATE = "simulate"
    BUILD_MANIFOLD = "build-manifold"
    TRAIN_ROM = "train-rom"
    FORECAST_EVALUATE = "forecast-evaluate"
    EXPORT = "export"

    @classmethod
    def get_all_values(cls) -> List[str]:
        """Get all stage names"""
        return [stage.value for stage in cls]

    @classmethod
    def is_valid(cls, stage: str) -> bool:
        """Check if a stage name is valid"""
        return stage in cls.get_all_values()

    @property
    def directory(self) -> str:
        """Directory name of the stage under the stage root"""
        directory_map = {
            StageName.SIMULATE: "simulate",
            StageName.BUILD_MANIFOLD: "manifold",
            StageName.TRAIN_ROM: "rom",
            StageName.FORECAST_EVALUATE: "evaluate",
            StageName.EXPORT: "export",
        }
        return directory_map[self]
