"""Tensor keys inside a workload directory.

Key format: head{HH}/{role}

Examples:
    head00/q
    head03/kd
"""

import re
from dataclasses import dataclass

from .errors import ConfigError

VALID_ROLES = {
    "q": "prefill queries",
    "k": "prefill keys",
    "v": "prefill values",
    "qd": "decode-step queries",
    "kd": "decode-step keys",
    "vd": "decode-step values",
}

PREFILL_ROLES = ("q", "k", "v")
DECODE_ROLES = ("qd", "kd", "vd")
TENSOR_SUFFIX = ".tqt"

_KEY_PATTERN = re.compile(r"^head(\d{2,})/([a-z]+)$")


@dataclass(frozen=True)
class TensorKey:
    """Parsed key of one per-head tensor."""

    head: int
    role: str

    @property
    def full_key(self) -> str:
        return f"head{self.head:02d}/{self.role}"

    @property
    def head_dir(self) -> str:
        return f"head{self.head:02d}"

    @property
    def filename(self) -> str:
        """Return the tensor filename, e.g. kd.tqt."""
        return f"{self.role}{TENSOR_SUFFIX}"

    @property
    def relative_path(self) -> str:
        return f"{self.head_dir}/{self.filename}"

    @property
    def description(self) -> str:
        return VALID_ROLES[self.role]

    def __str__(self) -> str:
        return self.full_key


def parse_tensor_key(key: str) -> TensorKey | None:
    """Parse a key string into components.

    Args:
        key: Key string (e.g., head03/k)

    Returns:
        TensorKey if valid, None otherwise

    Examples:
        >>> parse_tensor_key("head03/k")
        TensorKey(head=3, role='k')

        >>> parse_tensor_key("head3/k") is None
        True
    """
    match = _KEY_PATTERN.match(key.strip().lower())
    if not match:
        return None
    head, role = match.groups()
    if role not in VALID_ROLES:
        return None
    return TensorKey(head=int(head), role=role)


def validate_tensor_key(key: str) -> bool:
    return parse_tensor_key(key) is not None


def build_tensor_key(head: int, role: str) -> TensorKey:
    """Build a key from components.

    Raises:
        ConfigError: If head is negative or role is unknown
    """
    if head < 0:
        raise ConfigError(f"Head index must be non-negative, got {head}")
    if role not in VALID_ROLES:
        raise ConfigError(f"Invalid role: {role}. Must be one of {sorted(VALID_ROLES)}")
    return TensorKey(head=head, role=role)
