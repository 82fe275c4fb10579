from stores.sqlite_store import SqliteStore


class MemoryStore(SqliteStore):
    """Run store that lives for the duration of the process"""

    def __init__(self):
        super().__init__(":memory:")
