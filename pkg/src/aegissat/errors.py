"""Exception hierarchy shared by every module."""


class AegisError(Exception):
    """Base class for all simulator errors."""


# crypto
class WrongKeyKind(AegisError):
    pass


class AuthFailure(AegisError):
    """AEAD tag did not verify; the caller must log and discard."""


class DecapsulationFailure(AegisError):
    pass


# package
class PayloadTooLarge(AegisError):
    pass


class MalformedPackage(AegisError):
    pass


# platform
class AlreadyProgrammed(AegisError):
    pass


class NotSecureWorld(AegisError):
    pass


class ZeroizedKeystore(AegisError):
    pass


class UnknownRegion(AegisError):
    pass


class IllegalTransition(AegisError):
    pass


class Unavailable(AegisError):
    pass


class RegionNotConfiguring(AegisError):
    pass


class RegionNotActive(AegisError):
    pass


class OverBudget(AegisError):
    pass


# boot
class FusesNotProvisioned(AegisError):
    pass


class SlotNotWritable(AegisError):
    pass


# link
class ChannelClosed(AegisError):
    pass


# harness
class MalformedScenario(AegisError):
    pass


class IoFailure(AegisError):
    pass
