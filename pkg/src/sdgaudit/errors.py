class SdgError(ValueError):
    """Error carrying a stable machine-readable ``code`` (e.g. ``"empty-dataset"``)."""

    def __init__(self, code: str, message: str = ""):
        self.code = code
        self.message = message or code
        super().__init__(f"{code}: {self.message}" if message else code)
