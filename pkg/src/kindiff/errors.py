"""Shared exception types."""


class AdmissibilityError(ValueError):
    """A velocity model or pilot chain violates a build-time hypothesis.

    ``hypothesis`` names the violated condition; validator messages start
    with that name so callers (and the CLI) can report which check failed:
    vdv, HypM, BallR, Rsmall, mcentred, rates, irreducible.
    """

    def __init__(self, hypothesis: str, message: str):
        self.hypothesis = hypothesis
        super().__init__(f"{hypothesis}: {message}")
