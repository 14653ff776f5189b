"""Exception hierarchy.

Errors fall into three families that the CLI maps onto exit codes:
bad input (3), stream/model mismatch (4) and broken internal invariants (5).
"""


class NNOCError(Exception):
    exit_code = 5


class InputError(NNOCError):
    exit_code = 3


class MismatchError(NNOCError):
    exit_code = 4


class InvariantError(NNOCError):
    exit_code = 5


# geometry
class CoordinateOutOfRange(InputError):
    def __init__(self, point, bitdepth):
        super().__init__(f"coordinate {tuple(int(c) for c in point)} outside [0, 2^{bitdepth})")
        self.point = tuple(int(c) for c in point)


class BitdepthUnsupported(InputError):
    pass


class BitdepthUnderflow(InputError):
    pass


class EmptyParent(InputError):
    pass


class OccupancyOutsideCandidates(InvariantError):
    pass


# context
class UnknownVariant(InputError):
    pass


class CorruptHistogramFile(MismatchError):
    pass


class PositionNotCandidate(InvariantError):
    pass


class SectionMismatch(InvariantError):
    pass


# model
class UnsupportedContextLength(InputError):
    pass


class LengthMismatch(InputError):
    pass


class DegenerateProbability(InputError):
    pass


class EmptyHistogram(InputError):
    pass


class CorruptModelFile(MismatchError):
    pass


class VersionMismatch(MismatchError):
    pass


class HashMismatch(MismatchError):
    pass


# entropy
class InvalidDistribution(InputError):
    pass


class StreamExhausted(MismatchError):
    pass


class CorruptRle(MismatchError):
    pass


# codec
class WrongBitdepth(InputError):
    pass


class ModelVariantMismatch(MismatchError):
    pass


class StreamCorrupt(MismatchError):
    pass


class MaskInconsistent(MismatchError):
    pass


class EmptyCloud(InputError):
    pass


# io
class UnsupportedPlyVariant(InputError):
    pass


class MalformedHeader(InputError):
    pass


class DegenerateExtent(InputError):
    pass


class IoFailure(InputError):
    pass
