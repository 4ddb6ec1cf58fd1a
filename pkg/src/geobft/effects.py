"""Side effects produced by replica handlers.

Handlers never talk to the network or the clock directly; they append to an
:class:`Effects` collector which the driver (the simulator, or a test)
interprets afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Hashable


@dataclass
class Effects:
    sends: list[tuple[Hashable, Any]] = field(default_factory=list)
    timers: list[tuple[Hashable, float | None]] = field(default_factory=list)
    events: list[tuple[str, dict]] = field(default_factory=list)
    certificates: list[Any] = field(default_factory=list)
    suspicions: list[str] = field(default_factory=list)

    def send(self, dest: Hashable, msg: Any) -> None:
        self.sends.append((dest, msg))

    def broadcast(self, dests, msg: Any) -> None:
        for d in dests:
            self.sends.append((d, msg))

    def set_timer(self, key: Hashable, delay: float) -> None:
        self.timers.append((key, delay))

    def cancel_timer(self, key: Hashable) -> None:
        self.timers.append((key, None))

    def emit(self, kind: str, **fields) -> None:
        self.events.append((kind, fields))

    def sent(self, kind=None) -> list:
        """Messages sent so far, optionally filtered by message class."""
        return [m for _, m in self.sends if kind is None or isinstance(m, kind)]
