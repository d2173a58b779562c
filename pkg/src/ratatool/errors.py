"""Exception hierarchy.

Three families map onto CLI exit codes: configuration problems (2), bad or
inconsistent data (3) and remote-service failures (4).
"""

from __future__ import annotations


class RataToolError(Exception):
    exit_code = 1


class ConfigError(RataToolError):
    exit_code = 2


class DataError(RataToolError):
    exit_code = 3


class RemoteError(RataToolError):
    exit_code = 4


class SchemaError(DataError):
    def __init__(self, key: str, problem: str):
        self.key = key
        self.problem = problem
        super().__init__(f"{problem} {key!r}")


class MixedModalityError(DataError):
    pass


class EmptyModalityError(DataError):
    pass


class EmptyCorpus(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class UnknownTool(DataError):
    def __init__(self, tool_id: str):
        self.tool_id = tool_id
        super().__init__(f"unknown tool {tool_id!r}")


class CacheCorruption(DataError):
    def __init__(self, path: str, line: int, detail: str = ""):
        self.path = path
        self.line = line
        msg = f"{path}:{line}: unparseable cache line"
        super().__init__(f"{msg} ({detail})" if detail else msg)


class IndexMismatch(DataError):
    pass


class MissingPlaceholder(DataError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"missing placeholder {{{name}}}")


class ParseError(DataError):
    def __init__(self, message: str, raw_outputs: list[str] | None = None):
        self.raw_outputs = list(raw_outputs or [])
        super().__init__(message)


class TooFewCandidates(DataError):
    pass


class InvalidLogProb(DataError):
    pass


class EmptyBatch(DataError):
    pass


class EmptyEval(DataError):
    pass


class NotFound(RemoteError):
    def __init__(self, repo_id: str):
        self.repo_id = repo_id
        super().__init__(f"not found: {repo_id}")


class NetworkError(RemoteError):
    pass


class ApiError(RemoteError):
    def __init__(self, status: int | None, body: str = ""):
        self.status = status
        self.body = body[:200]
        super().__init__(f"API error {status}: {self.body}")


class GenerationError(RemoteError):
    pass
