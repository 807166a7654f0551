"""Protocol messages, their priority order, and a compact bit encoding.

The bit encoding is only used to meter congestion: processes exchange
``Message`` objects directly and the engine records ``bit_size`` per send.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from enum import IntEnum


class Label(IntEnum):
    NULL = 0
    BEGIN = 1
    END = 2
    DONE = 3
    EDGE = 4
    ERROR = 5
    RESET = 6
    # extension labels, encoded behind the escape code 7
    INPUT = 7
    FINAL = 8


ARITY = {
    Label.NULL: 0,
    Label.BEGIN: 1,
    Label.END: 0,
    Label.DONE: 1,
    Label.EDGE: 3,
    Label.ERROR: 1,
    Label.RESET: 3,
    Label.INPUT: 1,
    Label.FINAL: 2,
}

ESCAPE_CODE = 7
_EXTENDED_SUBCODE = {Label.INPUT: 0, Label.FINAL: 1}
_SUBCODE_LABEL = {v: k for k, v in _EXTENDED_SUBCODE.items()}


class DecodeError(ValueError):
    pass


@dataclass(frozen=True, slots=True)
class Message:
    label: Label
    params: tuple[int, ...] = ()
    _key: tuple = field(default=None, init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        if len(self.params) != ARITY[self.label]:
            raise ValueError(
                f"{self.label.name} takes {ARITY[self.label]} parameters, got {len(self.params)}"
            )
        if self.label == Label.RESET and not _is_power_of_two(self.params[2]):
            raise ValueError(f"Reset NewDiam must be a power of two, got {self.params[2]}")

    # parameter accessors, named as in the message type list
    @property
    def id(self) -> int:
        return self.params[0]

    @property
    def id1(self) -> int:
        return self.params[0]

    @property
    def id2(self) -> int:
        return self.params[1]

    @property
    def mult(self) -> int:
        return self.params[2]

    @property
    def level(self) -> int:
        """ErrorLevel or ResetLevel."""
        return self.params[0]

    @property
    def starting_round(self) -> int:
        return self.params[1]

    @property
    def new_diam(self) -> int:
        return self.params[2]

    @property
    def value(self) -> int:
        return self.params[0]

    @property
    def priority(self) -> tuple:
        if self._key is None:
            object.__setattr__(self, "_key", priority_key(self))
        return self._key

    def __repr__(self) -> str:
        if not self.params:
            return self.label.name.capitalize()
        return f"{self.label.name.capitalize()}{self.params}"


def _is_power_of_two(x: int) -> bool:
    return x >= 1 and x & (x - 1) == 0


NULL = Message(Label.NULL)
END = Message(Label.END)


def null() -> Message:
    return NULL


def begin(id_: int) -> Message:
    return Message(Label.BEGIN, (id_,))


def end() -> Message:
    return END


def done(id_: int) -> Message:
    return Message(Label.DONE, (id_,))


def edge(id1: int, id2: int, mult: int) -> Message:
    if mult < 1:
        raise ValueError("edge multiplicity must be positive")
    return Message(Label.EDGE, (id1, id2, mult))


def error(level: int) -> Message:
    return Message(Label.ERROR, (level,))


def reset(level: int, starting_round: int, new_diam: int) -> Message:
    return Message(Label.RESET, (level, starting_round, new_diam))


def input_value(value: int) -> Message:
    return Message(Label.INPUT, (value,))


def final(n: int, round_: int) -> Message:
    return Message(Label.FINAL, (n, round_))


def priority_key(m: Message) -> tuple:
    """Totally ordered key; a larger key means a higher priority.

    Null < Begin < End < Input < Done < Edge < ... < Reset k+1 < Error k < Reset k
    < ... < Reset 1 < Final.  All Begin messages share one key.  Done and Input
    favour smaller values; Edge favours the smaller product 2^ID1 * 3^ID2 * 5^Mult,
    which is the exact integer form of the rational edge priority.
    """
    lab = m.label
    if lab == Label.NULL:
        return (0,)
    if lab == Label.BEGIN:
        return (1,)
    if lab == Label.END:
        return (2,)
    if lab == Label.INPUT:
        return (3, -m.params[0])
    if lab == Label.DONE:
        return (4, -m.params[0])
    if lab == Label.EDGE:
        a, b, c = m.params
        return (5, -((2**a) * (3**b) * (5**c)))
    if lab == Label.ERROR:
        return (6, -m.params[0], 0)
    if lab == Label.RESET:
        return (6, -m.params[0], 1, m.params[1], m.params[2])
    return (7, m.params[0], m.params[1])


def compare(a: Message, b: Message) -> int:
    """Return -1, 0 or 1 as ``a`` has lower, equal or higher priority than ``b``."""
    ka, kb = a.priority, b.priority
    return (ka > kb) - (ka < kb)


def highest(current: Message, received) -> Message:
    """Keep ``current`` unless some received message has strictly higher priority."""
    top = current
    for m in received:
        if m.priority > top.priority:
            top = m
    return top


# --- wire format -----------------------------------------------------------


def varint_bits(x: int) -> str:
    if x < 0:
        raise ValueError(f"cannot encode negative parameter {x}")
    groups = []
    while True:
        low, x = x & 0x7F, x >> 7
        groups.append(low)
        if not x:
            break
    out = []
    for i, g in enumerate(groups):
        cont = "1" if i < len(groups) - 1 else "0"
        out.append(cont + format(g, "07b"))
    return "".join(out)


def varint_size(x: int) -> int:
    return 8 * max(1, -(-max(x, 1).bit_length() // 7))


def encode(m: Message) -> str:
    """Encode as a string of '0'/'1' characters."""
    if m.label in _EXTENDED_SUBCODE:
        head = format(ESCAPE_CODE, "03b") + varint_bits(_EXTENDED_SUBCODE[m.label])
    else:
        head = format(int(m.label), "03b")
    return head + "".join(varint_bits(p) for p in m.params)


def _read_varint(bits: str, pos: int) -> tuple[int, int]:
    value, shift = 0, 0
    while True:
        if pos + 8 > len(bits):
            raise DecodeError("truncated varint")
        cont = bits[pos] == "1"
        value |= int(bits[pos + 1 : pos + 8], 2) << shift
        shift += 7
        pos += 8
        if not cont:
            return value, pos


def decode(bits: str) -> Message:
    if len(bits) < 3 or set(bits) - {"0", "1"}:
        raise DecodeError("not a bit string or too short")
    code = int(bits[:3], 2)
    pos = 3
    if code == ESCAPE_CODE:
        sub, pos = _read_varint(bits, pos)
        if sub not in _SUBCODE_LABEL:
            raise DecodeError(f"unknown extended label {sub}")
        label = _SUBCODE_LABEL[sub]
    else:
        label = Label(code)
    params = []
    for _ in range(ARITY[label]):
        p, pos = _read_varint(bits, pos)
        params.append(p)
    if pos != len(bits):
        raise DecodeError(f"{len(bits) - pos} trailing bits")
    return Message(label, tuple(params))


@lru_cache(maxsize=65536)
def bit_size(m: Message) -> int:
    if m.label in _EXTENDED_SUBCODE:
        head = 3 + varint_size(_EXTENDED_SUBCODE[m.label])
    else:
        head = 3
    return head + sum(varint_size(p) for p in m.params)


def to_hex(bits: str) -> str:
    """Hex dump of a bit string, zero-padded on the right to whole bytes."""
    padded = bits + "0" * (-len(bits) % 8)
    return bytes(int(padded[i : i + 8], 2) for i in range(0, len(padded), 8)).hex()
