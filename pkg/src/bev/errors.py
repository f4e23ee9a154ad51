"""Exception hierarchy. Everything raised on bad domain input derives from BEVError."""


class BEVError(Exception):
    """Base class for domain errors (CLI exit code 1)."""


class InvalidParams(BEVError, ValueError):
    pass


class DegenerateRotation(BEVError, ValueError):
    pass


class AssetMismatch(BEVError, ValueError):
    pass


class BehindCamera(BEVError, ValueError):
    pass


class OutOfFrustum(BEVError, ValueError):
    def __init__(self, indices, message=None):
        self.indices = list(indices)
        super().__init__(message or f"people outside frustum/depth range: {self.indices}")


class OutOfBounds(BEVError, ValueError):
    pass


class ShapeMismatch(BEVError, ValueError):
    pass


class UnknownClass(BEVError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "unknown age class"


class PriorFileCorrupt(BEVError):
    pass


class SceneCountMismatch(BEVError, ValueError):
    pass


class MissingLayers(BEVError, ValueError):
    pass


class TopologyMismatch(BEVError, ValueError):
    pass


class ZeroF1(BEVError, ZeroDivisionError):
    pass


class ParseError(BEVError):
    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


class SchemaViolation(BEVError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("schema violations:\n  " + "\n  ".join(self.violations))


class PlacementInfeasible(BEVError):
    pass


class ConfigError(BEVError):
    pass
