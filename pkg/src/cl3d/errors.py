class CL3DError(ValueError):
    """Domain error carrying a short machine-readable ``code`` (e.g. ``"empty-shape"``)."""

    def __init__(self, code: str, message: str = ""):
        self.code = code
        super().__init__(f"{code}: {message}" if message else code)
