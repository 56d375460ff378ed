# Verification outcome shared by every verifier.
# Verifiers return a Verdict instead of raising; the first failure wins.

from typing import NamedTuple


class Verdict(NamedTuple):
    accepted: bool
    reason: str = ""
    matrix: str | None = None
    index: int | None = None
    step: int | None = None

    def __bool__(self):
        return self.accepted

    def describe(self) -> str:
        if self.accepted:
            return "accept"
        where = []
        if self.step is not None:
            where.append(f"step {self.step}")
        if self.matrix is not None:
            where.append(self.matrix)
        if self.index is not None:
            where.append(f"j={self.index}")
        prefix = ", ".join(where)
        return f"reject({prefix + ', ' if prefix else ''}{self.reason})"


ACCEPT = Verdict(True)


def reject(reason: str, matrix: str | None = None, index: int | None = None,
           step: int | None = None) -> Verdict:
    return Verdict(False, reason, matrix, index, step)
