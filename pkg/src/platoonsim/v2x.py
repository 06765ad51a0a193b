"""Typed vehicle-to-vehicle message passing.

Lossless, zero-latency transfer by default; packet loss is modeled as an
independent Bernoulli drop per (message, recipient) pair using a
counter-based deterministic draw, so drop decisions never depend on vehicle
iteration order and are bit-identical across runs and platforms.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional

from .errors import AddressingError, ConfigurationError
from .longitudinal import Trajectory
from .platooning import JoinPlan, JoinRequest
from .world import KinematicState


class MessageKind(Enum):
    STATUS = "Status"
    PLANNED_TRAJECTORY = "PlannedTrajectory"
    JOIN_REQUEST = "JoinRequest"
    JOIN_RESPONSE = "JoinResponse"
    GAP_OPEN_COMMAND = "GapOpenCommand"


@dataclass(frozen=True)
class StatusPayload:
    state: KinematicState
    length: float


@dataclass(frozen=True)
class TrajectoryPayload:
    plan: Trajectory
    planned_at_step: int  # step index at which point 0 of the plan holds


@dataclass(frozen=True)
class JoinRequestPayload:
    request: JoinRequest


@dataclass(frozen=True)
class JoinResponsePayload:
    accepted: bool
    plan: Optional[JoinPlan]
    reason: str = ""


@dataclass(frozen=True)
class GapOpenPayload:
    opener_id: str
    time_gap: float  # s, the enlarged gap to hold


_PAYLOAD_TYPES = {
    MessageKind.STATUS: StatusPayload,
    MessageKind.PLANNED_TRAJECTORY: TrajectoryPayload,
    MessageKind.JOIN_REQUEST: JoinRequestPayload,
    MessageKind.JOIN_RESPONSE: JoinResponsePayload,
    MessageKind.GAP_OPEN_COMMAND: GapOpenPayload,
}


@dataclass(frozen=True)
class V2XMessage:
    sender: str
    recipients: Optional[tuple[str, ...]]  # None = broadcast
    kind: MessageKind
    payload: object
    tx_step: int

    def __post_init__(self):
        if self.recipients is not None and self.sender in self.recipients:
            raise AddressingError(f"'{self.sender}' cannot address itself")
        expected = _PAYLOAD_TYPES[self.kind]
        if not isinstance(self.payload, expected):
            raise ConfigurationError(
                f"payload of kind {self.kind.value} must be {expected.__name__}, "
                f"got {type(self.payload).__name__}")


@dataclass(frozen=True)
class ChannelModel:
    drop_probability: float = 0.0  # p in [0, 1]
    latency_steps: int = 0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.drop_probability <= 1.0:
            raise ConfigurationError("drop_probability must lie in [0, 1]",
                                     "channel.drop_probability")
        if self.latency_steps < 0:
            raise ConfigurationError("latency_steps must be >= 0",
                                     "channel.latency_steps")


def delivery_roll(seed: int, sequence: int, recipient: str) -> float:
    """Deterministic uniform draw in [0, 1) keyed by (seed, sequence, recipient)."""
    digest = hashlib.blake2b(f"{seed}:{sequence}:{recipient}".encode(),
                             digest_size=8).digest()
    return int.from_bytes(digest, "big") / 2.0 ** 64


@dataclass
class DropLogEntry:
    step: int
    sender: str
    recipient: str
    kind: str
    dropped: bool


class MessageBus:
    """Per-run message bus owned by the simulation thread.

    ``deliver`` must be called exactly once per simulation step, after that
    step's sends; with zero latency a message sent at step k reaches its
    recipients' mailboxes at the step-k delivery.
    """

    def __init__(self, channel: ChannelModel, participants: Iterable[str]):
        self.channel = channel
        self.participants: list[str] = list(participants)
        self._known = set(self.participants)
        self._queue: list[tuple[int, int, V2XMessage]] = []  # (delivery_step, seq, msg)
        self._seq = 0
        self.drop_log: list[DropLogEntry] = []
        self.scheduled_deliveries = 0
        self.dropped_deliveries = 0

    def register(self, vehicle_id: str) -> None:
        if vehicle_id not in self._known:
            self.participants.append(vehicle_id)
            self._known.add(vehicle_id)

    def send(self, message: V2XMessage) -> None:
        if message.sender not in self._known:
            raise AddressingError(f"unknown sender '{message.sender}'")
        if message.recipients is not None:
            for rid in message.recipients:
                if rid not in self._known:
                    raise AddressingError(f"unknown recipient '{rid}'")
        self._queue.append((message.tx_step + self.channel.latency_steps,
                            self._seq, message))
        self._seq += 1

    def deliver(self, current_step: int) -> dict[str, list[V2XMessage]]:
        """Hand every due (message, recipient) pair to its mailbox.

        Each pair is delivered at most once, independently dropped with
        probability p, in (delivery_step, sequence) order per mailbox.
        """
        due = [item for item in self._queue if item[0] <= current_step]
        self._queue = [item for item in self._queue if item[0] > current_step]
        due.sort(key=lambda item: (item[0], item[1]))
        p = self.channel.drop_probability
        mailboxes: dict[str, list[V2XMessage]] = {}
        for _, seq, msg in due:
            recipients = (msg.recipients if msg.recipients is not None
                          else tuple(r for r in self.participants if r != msg.sender))
            for rid in recipients:
                self.scheduled_deliveries += 1
                dropped = p > 0.0 and delivery_roll(self.channel.seed, seq, rid) < p
                if p > 0.0:
                    self.drop_log.append(DropLogEntry(current_step, msg.sender, rid,
                                                      msg.kind.value, dropped))
                if dropped:
                    self.dropped_deliveries += 1
                else:
                    mailboxes.setdefault(rid, []).append(msg)
        return mailboxes

    def drop_log_rows(self) -> list[tuple[int, str, str, str, int]]:
        return [(e.step, e.sender, e.recipient, e.kind, int(e.dropped))
                for e in self.drop_log]
