"""
Multiply-accumulate accounting.

Layers report their MACs with record_macs() while a mac_counter() block is
active; outside such a block reporting is a no-op.
"""
import contextlib
import threading
from collections import OrderedDict
from typing import Dict, Iterator, List, Tuple

_local = threading.local()


class MacCounter:
    def __init__(self):
        self.per_layer: "OrderedDict[str, int]" = OrderedDict()
        self.shapes: Dict[str, Tuple[int, ...]] = {}

    def add(self, name: str, macs: int, out_shape: Tuple[int, ...] = ()) -> None:
        self.per_layer[name] = self.per_layer.get(name, 0) + int(macs)
        if out_shape:
            self.shapes[name] = tuple(out_shape)

    @property
    def total(self) -> int:
        return sum(self.per_layer.values())

    def by_prefix(self, prefixes: List[str]) -> Dict[str, int]:
        totals = {prefix: 0 for prefix in prefixes}
        for name, macs in self.per_layer.items():
            for prefix in prefixes:
                if name == prefix or name.startswith(prefix + "."):
                    totals[prefix] += macs
                    break
        return totals


@contextlib.contextmanager
def mac_counter() -> Iterator[MacCounter]:
    counter = MacCounter()
    stack = getattr(_local, "stack", [])
    stack.append(counter)
    _local.stack = stack
    try:
        yield counter
    finally:
        stack.pop()


def record_macs(name: str, macs: int, out_shape: Tuple[int, ...] = ()) -> None:
    for counter in getattr(_local, "stack", []):
        counter.add(name, macs, out_shape)
