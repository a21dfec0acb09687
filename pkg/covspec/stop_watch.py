"""
Nested wall-clock scopes. Only wall-clock report fields come from here; modeled time lives in
covspec.transport.clock.
"""
from time import perf_counter
from typing import Dict, List, Tuple

from covspec.common import logger

Scope = Tuple[str, ...]

_totals: Dict[Scope, List] = dict()  # scope -> [seconds, enters]
_order: List[Scope] = list()
_stack: Scope = ()


class StopWatch:
    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        global _stack
        self.outer = _stack
        _stack = _stack + (self.name,)
        if _stack not in _totals:
            _totals[_stack] = [0.0, 0]
            _order.append(_stack)
        self.entry = _totals[_stack]
        self.start = perf_counter()
        return self

    def __exit__(self, *exception_data):
        global _stack
        self.elapsed = perf_counter() - self.start
        self.entry[0] += self.elapsed
        self.entry[1] += 1
        _stack = self.outer


def seconds_to_readable(secs: float) -> str:
    minutes = int(secs) // 60
    secs %= 60
    if not minutes:
        return "{:.4} sec".format(secs)
    hours = minutes // 60
    minutes %= 60
    if not hours:
        return "{:02}:{:06.3f}".format(minutes, secs)
    return "{}:{:02}:{:02}".format(hours, minutes, int(secs))


def _scopes_in_tree_order() -> List[Scope]:
    children = {(): []}
    for scope in _order:
        children[scope[:-1]].append(scope)
        children[scope] = []
    ordered = []

    def visit(scope: Scope):
        for child in children[scope]:
            ordered.append(child)
            visit(child)
    visit(())
    return ordered


def print_times():
    logger.info("wall-clock time per scope")
    for scope in _scopes_in_tree_order():
        secs, enters = _totals[scope]
        logger.info("{}{}: {} * {} = {}".format("  " * len(scope), scope[-1],
                                                seconds_to_readable(secs / enters), enters,
                                                seconds_to_readable(secs)))


def get_times() -> Dict[str, float]:
    times = {}
    for scope in _scopes_in_tree_order():
        secs, enters = _totals[scope]
        name = "_".join(scope)
        times[f"time_{name}_total_secs"] = secs
        times[f"time_{name}_steps"] = enters
    return times
