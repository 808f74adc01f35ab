"""Content-addressed storage overlay with churn, caching, pinning and blacklists.

Retrieval is an oracle lookup over the online holders of a content id; there
is no routing or latency model. Whoever retrieves an object keeps an unpinned
copy, which is what lets content outlive its publisher.
"""

from __future__ import annotations

import enum
import itertools
import math
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from .clock import ScenarioClock
from .encoding import enum8, lp
from .symcrypto import digest


class StoreError(Exception):
    pass


class NodeOffline(StoreError): pass
class Unavailable(StoreError): pass
class BadChurnParams(StoreError): pass
class UnknownNode(StoreError): pass


class ContentKind(enum.IntEnum):
    RegistrationPage = 0
    PaymentPage = 1
    SampleDescriptor = 2
    Other = 3


@dataclass(frozen=True)
class ContentObject:
    kind: ContentKind
    data: bytes

    @property
    def id(self) -> bytes:
        return digest(self.data)

    def encode(self) -> bytes:
        return enum8(int(self.kind)) + lp(self.data)


@dataclass
class Node:
    id: bytes
    mean_online_s: float
    mean_offline_s: float
    capacity: int | None = None
    online: bool = True
    # content id -> pinned; insertion order doubles as LRU order
    held: OrderedDict = field(default_factory=OrderedDict)
    blacklist: set = field(default_factory=set)
    # bumping this invalidates any pending churn transition
    generation: int = 0

    @property
    def churns(self) -> bool:
        return math.isfinite(self.mean_online_s) and math.isfinite(self.mean_offline_s)


class ContentStore:
    def __init__(self, clock: ScenarioClock, rng: np.random.Generator | int | None = 0):
        self.clock = clock
        self.rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        self.nodes: dict[bytes, Node] = {}
        self._blobs: dict[bytes, bytes] = {}
        self._counter = itertools.count()

    # -- nodes ---------------------------------------------------------------

    def add_node(self, seed: bytes, churn: tuple[float, float] = (math.inf, math.inf),
                 capacity: int | None = None) -> bytes:
        mean_on, mean_off = (float(x) for x in churn)
        if not (mean_on > 0 and mean_off > 0):
            raise BadChurnParams(f"mean durations must be positive, got {churn}")
        if capacity is not None and capacity < 0:
            raise BadChurnParams("capacity must be non-negative")
        node_id = digest(b"node" + bytes(seed) + next(self._counter).to_bytes(8, "big"))[:20]
        node = Node(node_id, mean_on, mean_off, capacity)
        self.nodes[node_id] = node
        if node.churns:
            self._schedule_toggle(node)
        return node_id

    def node(self, node_id: bytes) -> Node:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise UnknownNode(node_id.hex()) from None

    def _schedule_toggle(self, node: Node) -> None:
        mean = node.mean_online_s if node.online else node.mean_offline_s
        gen = node.generation
        delay = float(self.rng.exponential(mean))

        def toggle():
            if node.generation != gen:
                return
            node.online = not node.online
            self._schedule_toggle(node)

        self.clock.schedule_in(delay, toggle, label="churn")

    def take_offline(self, node_id: bytes) -> None:
        """Permanently remove a node from the overlay (no further churn)."""
        node = self.node(node_id)
        node.generation += 1
        node.online = False

    def bring_online(self, node_id: bytes) -> None:
        node = self.node(node_id)
        node.generation += 1
        node.online = True
        if node.churns:
            self._schedule_toggle(node)

    def online_fraction(self) -> float:
        if not self.nodes:
            return 0.0
        return sum(n.online for n in self.nodes.values()) / len(self.nodes)

    # -- content -------------------------------------------------------------

    def _hold(self, node: Node, cid: bytes, pinned: bool) -> None:
        was_pinned = node.held.get(cid, False)
        node.held[cid] = was_pinned or pinned
        node.held.move_to_end(cid)
        if node.capacity is None:
            return
        unpinned = [c for c, p in node.held.items() if not p]
        while len(unpinned) > node.capacity:
            victim = unpinned.pop(0)
            del node.held[victim]

    def publish(self, node_id: bytes, data: bytes, pin: bool = False) -> bytes:
        node = self.node(node_id)
        if not node.online:
            raise NodeOffline(node_id.hex())
        cid = digest(data)
        self._blobs[cid] = bytes(data)
        self._hold(node, cid, pin)
        return cid

    def serving_holders(self, cid: bytes) -> list[bytes]:
        """Online nodes that hold ``cid`` and do not blacklist it (read-only)."""
        return [n.id for n in self.nodes.values()
                if n.online and cid in n.held and cid not in n.blacklist]

    def retrieve(self, requester: bytes, cid: bytes) -> bytes:
        node = self.node(requester)
        if not node.online:
            raise NodeOffline(requester.hex())
        if not self.serving_holders(cid):
            raise Unavailable(cid.hex())
        data = self._blobs[cid]
        if digest(data) != cid:
            raise Unavailable(f"integrity check failed for {cid.hex()}")
        if cid not in node.blacklist:
            self._hold(node, cid, False)
        return data

    def drop(self, node_id: bytes, cid: bytes) -> bool:
        """Evict an unpinned copy. Pinned copies stay; returns whether one was removed."""
        node = self.node(node_id)
        if node.held.get(cid, True):
            return False
        del node.held[cid]
        return True

    def add_to_blacklist(self, node_id: bytes, cid: bytes) -> None:
        self.node(node_id).blacklist.add(cid)

    def availability(self, cid: bytes) -> tuple[int, int]:
        holders = [n for n in self.nodes.values() if cid in n.held]
        return len(holders), sum(n.online for n in holders)
