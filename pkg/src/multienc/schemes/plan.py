"""Ladders, scheme identifiers and the per-scheme dependency plans."""

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple

from ..media import Resolution

Node = Tuple[int, int]          # (i, j), both 1-based


class SchemeId(Enum):
    StandAlone = "standalone"
    SingleBound = "singlebound"
    MR1 = "mr1"
    MR2 = "mr2"
    MR3 = "mr3"
    ME1 = "me1"
    ME2 = "me2"
    ME3 = "me3"
    ME4 = "me4"

    @classmethod
    def parse(cls, name):
        try:
            return cls(name.lower())
        except ValueError:
            raise ValueError(f"unknown scheme {name!r}") from None

    @property
    def label(self):
        if self.value.startswith(("mr", "me")):
            return f"{self.value[:2].upper()}-Scheme {self.value[2]}"
        return self.name

    @property
    def uses_predictor(self):
        return self in (SchemeId.MR2, SchemeId.ME1)


@dataclass(frozen=True)
class Ladder:
    resolutions: Tuple[Resolution, ...]
    bitrates: Tuple[Tuple[float, ...], ...]

    def __post_init__(self):
        if not self.resolutions:
            raise ValueError("ladder needs at least one resolution")
        if len(self.bitrates) != len(self.resolutions):
            raise ValueError("one bitrate list per resolution required")
        px = [r.width * r.height for r in self.resolutions]
        if any(b <= a for a, b in zip(px, px[1:])):
            raise ValueError("resolutions must strictly increase in pixel count")
        for i, r in enumerate(self.resolutions, 1):
            if r.index != i:
                raise ValueError("resolution indices must be 1..N in order")
        m = len(self.bitrates[0])
        for rates in self.bitrates:
            if len(rates) != m:
                raise ValueError("every resolution needs the same number of bitrates")
            if any(b <= a for a, b in zip(rates, rates[1:])) or min(rates) <= 0:
                raise ValueError("bitrates must be positive and strictly ascending")

    @property
    def N(self):
        return len(self.resolutions)

    @property
    def M(self):
        return len(self.bitrates[0])

    def nodes(self) -> List[Node]:
        return [(i, j) for i in range(1, self.N + 1) for j in range(1, self.M + 1)]

    def resolution(self, node: Node) -> Resolution:
        return self.resolutions[node[0] - 1]

    def bitrate(self, node: Node) -> float:
        return self.bitrates[node[0] - 1][node[1] - 1]

    def top(self):
        return self.resolutions[-1]

    def subset(self, rows):
        """Ladder restricted to the given 1-based resolution indices."""
        res = [self.resolutions[i - 1] for i in rows]
        res = tuple(Resolution(k, r.width, r.height) for k, r in enumerate(res, 1))
        return Ladder(res, tuple(self.bitrates[i - 1] for i in rows))


@dataclass(frozen=True)
class Term:
    """One constraint source of a dependent node.

    kind: upper (single bound), double, lower (lower_only), cross_lower
    (resolution-lowered lower bound), heuristics (mode and ME heuristics
    from high, with low for the intra and range rules), reuse (decision
    and MV reuse from a lower resolution), predict (split predictor)."""
    kind: str
    high: Optional[Node] = None
    low: Optional[Node] = None

    def sources(self):
        return tuple(n for n in (self.high, self.low) if n is not None)


TERM_KINDS = ("upper", "double", "lower", "cross_lower", "heuristics", "reuse", "predict")


@dataclass
class EncodePlan:
    scheme: SchemeId
    ladder: Ladder
    recipes: Dict[Node, Tuple[Term, ...]] = field(default_factory=dict)

    @property
    def nodes(self):
        return self.ladder.nodes()

    @property
    def edges(self):
        out = set()
        for n, terms in self.recipes.items():
            for t in terms:
                for s in t.sources():
                    out.add((s, n))
        return out

    def upstream(self, node):
        return sorted({s for t in self.recipes.get(node, ()) for s in t.sources()})

    def topological_order(self):
        """Kahn's algorithm; ready nodes taken in ladder order."""
        indeg = {n: len(self.upstream(n)) for n in self.nodes}
        down = {n: [] for n in self.nodes}
        for a, b in self.edges:
            down[a].append(b)
        ready = [n for n in self.nodes if indeg[n] == 0]
        order = []
        while ready:
            ready.sort()
            n = ready.pop(0)
            order.append(n)
            for b in down[n]:
                indeg[b] -= 1
                if indeg[b] == 0:
                    ready.append(b)
        if len(order) != len(self.nodes):
            raise ValueError("plan has a dependency cycle")
        return order


def plan(scheme: SchemeId, ladder: Ladder) -> EncodePlan:
    if isinstance(scheme, str):
        scheme = SchemeId.parse(scheme)
    N, M = ladder.N, ladder.M
    if scheme != SchemeId.StandAlone and M < 2:
        raise ValueError(f"{scheme.label} needs at least two bitrates per resolution")
    p = EncodePlan(scheme, ladder)
    r = p.recipes
    mid = range(2, M)
    S = SchemeId

    if scheme == S.SingleBound:
        root = (N, M)
        for n in ladder.nodes():
            if N == 1:
                if n[1] != M:
                    r[n] = (Term("upper", high=(n[0], M)),)
            elif n != root:
                r[n] = (Term("upper", high=root),)
    elif scheme in (S.MR1, S.MR2, S.MR3):
        for i in range(1, N + 1):
            hi, lo = (i, M), (i, 1)
            if scheme == S.MR1:
                r[lo] = (Term("upper", high=hi),)
            elif scheme == S.MR2:
                r[hi] = (Term("predict", low=lo),)
            else:
                r[hi] = (Term("lower", low=lo),)
            for j in mid:
                terms = (Term("double", high=hi, low=lo),)
                if scheme == S.MR3:
                    terms += (Term("heuristics", high=hi, low=lo),)
                r[(i, j)] = terms
    elif scheme == S.ME1:
        root = (1, M)
        for n in ladder.nodes():
            if n != root:
                r[n] = (Term("predict", low=root),)
    elif scheme == S.ME2:
        for i in range(1, N + 1):
            if i > 1:
                r[(i, M)] = (Term("cross_lower", low=(i - 1, M)),)
            for j in range(1, M):
                r[(i, j)] = (Term("upper", high=(i, M)),)
    elif scheme in (S.ME3, S.ME4):
        for i in range(1, N + 1):
            hi, lo = (i, M), (i, 1)
            if i == 1:
                r[hi] = (Term("lower", low=lo),)
            else:
                r[lo] = (Term("cross_lower", low=(i - 1, 1)),)
                if scheme == S.ME3:
                    r[hi] = (Term("cross_lower", low=(i - 1, 1)),)
                else:
                    r[hi] = (Term("reuse", low=(i - 1, 1)),)
            for j in mid:
                terms = (Term("double", high=hi, low=lo),)
                if scheme == S.ME4:
                    terms += (Term("heuristics", high=hi, low=lo),)
                r[(i, j)] = terms
    p.topological_order()
    return p


def predictor_pairs(ladder: Ladder):
    """(reference, target) node pairs the split predictor is applied to by
    the predictor-driven schemes."""
    out = set()
    for s in SchemeId:
        if s.uses_predictor:
            for n, terms in plan(s, ladder).recipes.items():
                out.update((t.low, n) for t in terms if t.kind == "predict")
    return sorted(out)
