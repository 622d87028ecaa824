"""Exception hierarchy.

Every error carries a short ``code`` used by the command line tool when it
prints ``ERROR[<code>] message`` to standard error.
"""


class MfttsError(Exception):
    code = "generic"


class InvalidCharacter(MfttsError, ValueError):
    code = "invalid-character"

    def __init__(self, char, position):
        super().__init__(f"invalid character {char!r} at position {position}")
        self.char = char
        self.position = position


class OovWord(MfttsError, KeyError):
    code = "oov-word"

    def __init__(self, word):
        super().__init__(word)
        self.word = word

    def __str__(self):
        return f"word not in lexicon: {self.word!r}"


class LexiconError(MfttsError, ValueError):
    code = "lexicon"


class MalformedTree(MfttsError, ValueError):
    code = "malformed-tree"

    def __init__(self, message, offset):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class TokenizationMismatch(MfttsError, ValueError):
    code = "tokenization-mismatch"

    def __init__(self, leaf, token, position):
        super().__init__(f"parse leaf {leaf!r} != token {token!r} at word {position}")
        self.leaf = leaf
        self.token = token
        self.position = position


class DimensionMismatch(MfttsError, ValueError):
    code = "dimension-mismatch"

    def __init__(self, line, expected=None, got=None):
        msg = f"embedding dimension mismatch on line {line}"
        if expected is not None:
            msg += f" (expected {expected}, got {got})"
        super().__init__(msg)
        self.line = line


class EmptyTable(MfttsError, ValueError):
    code = "empty-table"


class AlignmentError(MfttsError, ValueError):
    code = "alignment"

    def __init__(self, expected, got):
        super().__init__(f"expected {expected} word rows, got {got}")
        self.expected = expected
        self.got = got


class CorruptFile(MfttsError, IOError):
    code = "corrupt-file"


class NonFiniteValue(MfttsError, ValueError):
    code = "non-finite"


class InvalidBand(MfttsError, ValueError):
    code = "invalid-band"


class TooShort(MfttsError, ValueError):
    code = "too-short"


class ConfigError(MfttsError, ValueError):
    code = "config"


class ShapeError(MfttsError, ValueError):
    code = "shape"


class NumericalError(MfttsError, ArithmeticError):
    code = "numerical"


class MissingInput(MfttsError, FileNotFoundError):
    code = "missing-input"
