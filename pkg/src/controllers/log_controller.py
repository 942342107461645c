from typing import List, Callable
from injector import singleton

@singleton
class LogController:
    def __init__(self):
        self._listeners: List[Callable[[str], None]] = []
        self._progress_listeners: List[Callable[[str, int, int], None]] = []

    def add_listener(self, listener: Callable[[str], None]):
        """Add a new listener for log messages"""
        if listener not in self._listeners:
            self._listeners.append(listener)

    def remove_listener(self, listener: Callable[[str], None]):
        """Remove a listener"""
        if listener in self._listeners:
            self._listeners.remove(listener)

    def add_progress_listener(self, listener: Callable[[str, int, int], None]):
        """Add a new listener for progress updates (task, done, total)"""
        if listener not in self._progress_listeners:
            self._progress_listeners.append(listener)

    def remove_progress_listener(self, listener: Callable[[str, int, int], None]):
        """Remove a progress listener"""
        if listener in self._progress_listeners:
            self._progress_listeners.remove(listener)

    def log_message(self, message: str):
        """Broadcast a log message to all listeners"""
        for listener in self._listeners:
            listener(message)

    def log_warning(self, message: str):
        """Broadcast a warning; listeners see it with a WARNING prefix"""
        self.log_message(f"WARNING: {message}")

    def update_progress(self, task: str, done: int, total: int):
        """Broadcast a progress update to all progress listeners"""
        for listener in self._progress_listeners:
            listener(task, done, total)
