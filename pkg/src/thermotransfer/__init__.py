"""Online transfer learning of zone-temperature predictors for heating control."""

__version__ = "0.1.0"
