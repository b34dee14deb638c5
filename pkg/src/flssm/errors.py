"""Exception types shared across the testbed."""


class FlssmError(Exception):
    """Base class for all testbed errors."""


class ParameterError(FlssmError):
    """A parameter violates its documented precondition."""


class ConfigError(FlssmError):
    """Invalid or unknown configuration key/value."""


class EncodingOverflow(FlssmError):
    """Value does not fit in the fixed-point plaintext space."""


class FormatError(FlssmError):
    """Malformed serialized input."""


class ShapeMismatch(FlssmError):
    """Incompatible operands (key, shard index, length, or scale)."""


class ShardSetIncomplete(FlssmError):
    """A shard set is missing indices or contains duplicates."""


class FieldOverflow(FlssmError):
    """Secret does not fit in the sharing field."""


class ThresholdNotMet(FlssmError):
    """Fewer shares than the reconstruction threshold."""


class DuplicateShare(FlssmError):
    """Two shares with the same evaluation point."""


class NoEligibleRecipient(FlssmError):
    """No registered credential satisfies the seal policy."""


class PolicyUnsatisfied(FlssmError):
    """Credential attributes do not satisfy the access policy."""


class AuthFailure(FlssmError):
    """Authenticated decryption failed (tampering or wrong key)."""


class CredentialInvalid(FlssmError):
    """Credential signature does not verify under the authority key."""


class TamperedToken(FlssmError):
    """Timestamp token failed signature verification."""


class ClockSkew(FlssmError):
    """Negative time interval between causally ordered events."""


class NumericalDivergence(FlssmError):
    """Training produced a non-finite loss."""


class TsaUnreachable(FlssmError):
    """Timestamp authority unavailable; rewards skipped this round."""


class NoEligibleNodes(FlssmError):
    """No node is eligible for the round reward."""
