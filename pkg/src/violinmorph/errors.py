"""Exception hierarchy shared by all violinmorph modules.

The CLI maps these onto exit codes: input/parse problems exit with 2,
contract violations (bad geometry, failed isolation, grid mismatch) with 3,
anything unexpected with 4.
"""


class MorphometryError(Exception):
    """Base class for every error raised by this package."""


class InputError(MorphometryError):
    """A file is missing, unreadable, or does not parse under its format."""


class MeshFormatError(InputError):
    """Parse failure; carries the offending line or byte offset when known."""

    def __init__(self, message, path=None, line=None, offset=None):
        loc = []
        if path is not None:
            loc.append(str(path))
        if line is not None:
            loc.append(f"line {line}")
        if offset is not None:
            loc.append(f"byte {offset}")
        if loc:
            message = f"{message} ({', '.join(loc)})"
        super().__init__(message)
        self.path = path
        self.line = line
        self.offset = offset


class ContractError(MorphometryError):
    """Input data violates a documented precondition or invariant."""


class DegenerateFaceError(ContractError):
    """One or more faces reference fewer than three distinct vertices."""

    def __init__(self, face_indices):
        self.face_indices = list(face_indices)
        shown = ", ".join(str(i) for i in self.face_indices[:10])
        more = "" if len(self.face_indices) <= 10 else ", ..."
        super().__init__(f"degenerate faces at indices [{shown}{more}]")


class DisconnectedError(ContractError):
    """Two vertices that must share a component do not."""


class RankDeficiencyError(ContractError):
    """A covariance eigenproblem has repeated or vanishing eigenvalues."""


class CollinearityError(ContractError):
    """Points intended to define a plane are collinear (or too few)."""


class GridMismatchError(ContractError):
    """Two height grids do not share origin, spacing, or shape."""


class FragmentationError(ContractError):
    """Contour removal shattered the mesh instead of isolating a plate."""


class TopologicalLockError(ContractError):
    """Decimation cannot reach the target: no contractible edge remains."""


class NonAcuteConfigurationError(ContractError):
    """Plate planes are too far from horizontal to bisect meaningfully."""


class InsufficientOverlapError(ContractError):
    """Too few grid nodes carry values from both plates."""
