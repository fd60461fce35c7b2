class SolverError(Exception):
    """
    A numerical procedure failed to deliver its contract.

    Mirrors ``django.core.exceptions.ValidationError``: ``code`` names the
    failure mode and ``params`` carries diagnostics (reports, residuals).
    """

    def __init__(self, message, code=None, params=None):
        super().__init__(message)
        self.message = message
        self.code = code
        self.params = params or {}

    def __str__(self):
        if self.code:
            return f"[{self.code}] {self.message}"
        return self.message
