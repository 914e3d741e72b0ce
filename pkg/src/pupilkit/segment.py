"""Edge segmentation: graph paths, curvature breakpoints, length trimming.

Branching edges are recast as undirected multigraphs (branch/terminal pixel
clusters as vertices, connecting pixel runs as arcs).  All simple paths are
enumerated and the one matching the circumference prediction best is kept;
leftover arcs re-enter the procedure.  Accepted chains are then split at
curvature breakpoints, and over-long chains are trimmed back to the
predicted circumference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .contour import CurvatureProfile, curvature_profile
from .edgemap import Edge, order_chain

_NEIGHBOURS = [(dx, dy) for dx in (-1, 0, 1) for dy in (-1, 0, 1) if dx or dy]


@dataclass
class Arc:
    v1: int
    v2: int
    points: list  # ordered (x, y) pixels from v1 toward v2, vertices excluded


@dataclass
class EdgeGraph:
    vertices: list  # vertex id -> list of (x, y) cluster pixels
    arcs: list      # list of Arc
    terminal: list  # vertex id -> bool

    def adjacency(self) -> dict[int, list[int]]:
        adj: dict[int, list[int]] = {v: [] for v in range(len(self.vertices))}
        for ai, arc in enumerate(self.arcs):
            adj[arc.v1].append(ai)
            if arc.v2 != arc.v1:
                adj[arc.v2].append(ai)
        return adj


@dataclass
class Path:
    vertex_ids: list
    arc_ids: list
    cyclic: bool
    points: np.ndarray  # ordered pixels over the whole path
    length: float       # step metric: 1 cardinal, sqrt(2) intercardinal


class PathBudgetExceeded(Exception):
    """Raised when simple-path enumeration exceeds the configured cap."""


def chain_length(points: np.ndarray) -> float:
    pts = np.asarray(points, dtype=np.float64)
    if len(pts) < 2:
        return 0.0
    return float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())


def _pixel_neighbours(p, index):
    x, y = p
    return [(x + dx, y + dy) for dx, dy in _NEIGHBOURS if (x + dx, y + dy) in index]


def edge_to_graph(points: np.ndarray, min_arc_points: int) -> Optional[EdgeGraph]:
    """Build the vertex/arc graph of one edge component.

    Returns None for edges without branch or terminal structure (pure cycles
    and isolated specks), which need no graph.  Noise arcs are dropped:
    arcs shorter than ``min_arc_points`` that dangle from a terminal vertex,
    are self-loops, or duplicate a shorter parallel arc.
    """
    pts = [tuple(int(v) for v in p) for p in np.asarray(points)]
    index = set(pts)
    degree = {p: len(_pixel_neighbours(p, index)) for p in pts}
    vertex_pixels = {p for p in pts if degree[p] >= 3 or degree[p] == 1}
    if not vertex_pixels:
        return None

    # Merge 8-adjacent vertex pixels into clusters.
    vertex_of: dict[tuple, int] = {}
    clusters: list[list] = []
    for p in sorted(vertex_pixels):
        if p in vertex_of:
            continue
        stack = [p]
        vertex_of[p] = len(clusters)
        cluster = [p]
        while stack:
            q = stack.pop()
            for nb in _pixel_neighbours(q, vertex_pixels):
                if nb not in vertex_of:
                    vertex_of[nb] = len(clusters)
                    cluster.append(nb)
                    stack.append(nb)
        clusters.append(cluster)

    # Walk arcs: runs of degree-2 pixels connecting vertex clusters.
    run_pixels = index - vertex_pixels
    visited = set()
    arcs: list[Arc] = []
    for p in sorted(run_pixels):
        if p in visited:
            continue
        nbs = _pixel_neighbours(p, run_pixels)
        if len([n for n in nbs if n not in visited]) > 1 and \
                not any(n in vertex_of for n in _pixel_neighbours(p, vertex_pixels)):
            continue  # interior pixel; reached later from a run end
        # p is a run end (adjacent to a vertex cluster, or a stub end)
        chain = [p]
        visited.add(p)
        current = p
        while True:
            nxt = [n for n in _pixel_neighbours(current, run_pixels) if n not in visited]
            if not nxt:
                break
            current = nxt[0]
            chain.append(current)
            visited.add(current)
        v_start = _touching_vertex(chain[0], vertex_of)
        v_end = _touching_vertex(chain[-1], vertex_of)
        if v_start is None and v_end is None:
            continue  # disconnected run, should not occur within one component
        if v_start is None:
            chain.reverse()
            v_start, v_end = v_end, v_start
        if v_end is None:
            v_end = v_start  # dangling run folded back; treated as self-loop
        arcs.append(Arc(v1=v_start, v2=v_end, points=chain))

    # Direct vertex-to-vertex adjacencies produce zero-length arcs.
    linked = set()
    for vi, cluster in enumerate(clusters):
        for p in cluster:
            for nb in _pixel_neighbours(p, vertex_of):
                vj = vertex_of[nb]
                if vj > vi:
                    linked.add((vi, vj))
    existing = {(min(a.v1, a.v2), max(a.v1, a.v2)) for a in arcs}
    for vi, vj in sorted(linked):
        if (vi, vj) not in existing:
            arcs.append(Arc(v1=vi, v2=vj, points=[]))

    terminal = [False] * len(clusters)
    for p, vi in vertex_of.items():
        if degree[p] == 1:
            terminal[vi] = True

    arcs = _filter_arcs(arcs, terminal, min_arc_points)
    return EdgeGraph(vertices=clusters, arcs=arcs, terminal=terminal)


def _touching_vertex(p, vertex_of) -> Optional[int]:
    for nb in _pixel_neighbours(p, vertex_of):
        return vertex_of[nb]
    return None


def _filter_arcs(arcs: list[Arc], terminal: list[bool],
                 min_points: int) -> list[Arc]:
    """Drop noise arcs shorter than the edge window length.

    Applies to arcs dangling from a terminal vertex, self-loops, and the
    longer members of parallel arc groups (the shortest parallel arc is
    always kept; parallel arcs at or above the window length all survive so
    that contours split by artefacts keep their cyclic structure).
    """
    by_pair: dict[tuple, list[Arc]] = {}
    for a in arcs:
        by_pair.setdefault((min(a.v1, a.v2), max(a.v1, a.v2)), []).append(a)
    keep = []
    for group in by_pair.values():
        group.sort(key=lambda a: len(a.points))
        for gi, a in enumerate(group):
            if len(a.points) >= min_points:
                keep.append(a)
                continue
            if a.v1 == a.v2:
                continue
            if terminal[a.v1] or terminal[a.v2]:
                continue
            if len(group) > 1 and gi > 0:
                continue  # short parallel duplicate; shortest already kept
            keep.append(a)
    return keep


def enumerate_paths(graph: EdgeGraph, cap: int = 10_000) -> list[Path]:
    """Maximal simple paths and cycles of the graph.

    A path repeats no arc and no vertex; acyclic paths that could be grown
    into a longer simple path at either end are subsumed by that longer path
    and not reported.  Paths are undirected (a path and its reverse count
    once) and cycles are canonical by their arc set.  Enumeration starts
    from terminal vertices first; exceeding ``cap`` raises
    PathBudgetExceeded.
    """
    adj = graph.adjacency()
    results: list[tuple[list, list, bool]] = []
    seen_acyclic: set = set()
    seen_cyclic: set = set()
    exhausted_starts: set = set()

    order = sorted(range(len(graph.vertices)),
                   key=lambda v: (not graph.terminal[v], v))

    def record(vertices, arcs_used, cyclic):
        if cyclic:
            key = frozenset(arcs_used)
            if key in seen_cyclic:
                return
            seen_cyclic.add(key)
        else:
            key = tuple(arcs_used)
            rkey = tuple(reversed(arcs_used))
            if key in seen_acyclic or rkey in seen_acyclic:
                return
            seen_acyclic.add(key)
        results.append((list(vertices), list(arcs_used), cyclic))
        if len(results) > cap:
            raise PathBudgetExceeded(f"more than {cap} simple paths")

    def head_extendable(start, visited_v, visited_a) -> bool:
        for ai in adj[start]:
            if ai in visited_a:
                continue
            arc = graph.arcs[ai]
            other = arc.v2 if arc.v1 == start else arc.v1
            if other not in visited_v:
                return True
        return False

    def dfs(current, start, vertices, arcs_used, visited_v, visited_a):
        extended = False
        for ai in adj[current]:
            if ai in visited_a:
                continue
            arc = graph.arcs[ai]
            nxt = arc.v2 if arc.v1 == current else arc.v1
            if nxt == start:
                # Closing arc; a lone self-loop is itself a cycle.
                record(vertices, arcs_used + [ai], True)
                continue
            if nxt in visited_v:
                continue
            extended = True
            if nxt in exhausted_starts:
                continue  # longer variant already found from that terminal
            visited_a.add(ai)
            visited_v.add(nxt)
            dfs(nxt, start, vertices + [nxt], arcs_used + [ai], visited_v, visited_a)
            visited_a.remove(ai)
            visited_v.remove(nxt)
        if not extended and arcs_used and \
                not head_extendable(start, visited_v, visited_a):
            record(vertices, arcs_used, False)

    for start in order:
        dfs(start, start, [start], [], {start}, set())
        if graph.terminal[start]:
            exhausted_starts.add(start)

    return [_materialise(graph, v, a, c) for v, a, c in results]


def _cluster_route(cluster: list, entry, exit_) -> list:
    """Shortest pixel route within a vertex cluster from entry to exit."""
    if entry == exit_:
        return [entry]
    index = set(cluster)
    prev = {entry: None}
    frontier = [entry]
    while frontier:
        nxt = []
        for p in frontier:
            for nb in _pixel_neighbours(p, index):
                if nb not in prev:
                    prev[nb] = p
                    if nb == exit_:
                        route = [nb]
                        while prev[route[-1]] is not None:
                            route.append(prev[route[-1]])
                        return route[::-1]
                    nxt.append(nb)
        frontier = nxt
    return [entry, exit_]  # cluster pixels are mutually 8-adjacent in practice


def _nearest_pixel(cluster: list, target) -> tuple:
    if target is None:
        return cluster[0]
    tx, ty = target
    return min(cluster, key=lambda p: max(abs(p[0] - tx), abs(p[1] - ty)))


def _materialise(graph: EdgeGraph, vertex_ids: list, arc_ids: list,
                 cyclic: bool) -> Path:
    """Assemble the ordered pixel sequence of a path."""
    pts: list = []
    if not arc_ids:
        pts = list(graph.vertices[vertex_ids[0]])
    else:
        current_v = vertex_ids[0]
        entry_px = None
        for k, ai in enumerate(arc_ids):
            arc = graph.arcs[ai]
            forward = arc.v1 == current_v
            arc_pts = arc.points if forward else arc.points[::-1]
            next_v = arc.v2 if forward else arc.v1
            cluster = graph.vertices[current_v]
            exit_px = _nearest_pixel(cluster, arc_pts[0] if arc_pts else None)
            if k == 0 and not cyclic:
                start_px = _nearest_pixel(cluster, entry_px)
                pts.extend(_cluster_route(cluster, start_px, exit_px))
            elif k == 0 and cyclic:
                pts.append(exit_px)
            else:
                enter = _nearest_pixel(cluster, entry_px)
                pts.extend(_cluster_route(cluster, enter, exit_px))
            pts.extend(arc_pts)
            entry_px = arc_pts[-1] if arc_pts else exit_px
            current_v = next_v
        cluster = graph.vertices[current_v]
        enter = _nearest_pixel(cluster, entry_px)
        if not cyclic:
            pts.extend(_cluster_route(cluster, enter, cluster[-1]))
        else:
            # Close the ring through the start cluster; the start pixel
            # itself is already first in the list.
            pts.extend(_cluster_route(cluster, enter, pts[0])[:-1])
    # Collapse accidental duplicates from cluster stitching.
    dedup = [pts[0]]
    for p in pts[1:]:
        if p != dedup[-1]:
            dedup.append(p)
    arr = np.asarray(dedup, dtype=np.int64)
    length = chain_length(arr)
    if cyclic and len(arr) > 1:
        length += float(np.linalg.norm(arr[0] - arr[-1]))
    return Path(vertex_ids=vertex_ids, arc_ids=arc_ids, cyclic=cyclic,
                points=arr, length=length)


def path_segment(edge: Edge, circ_pred: float, allow_circ: float,
                 circ_min: float, circ_max: float, min_arc_points: int,
                 cap: int = 10_000, _round: int = 0) -> list[Edge]:
    """Resolve a possibly-branching edge into ordered non-branching chains.

    A cyclic path whose length falls inside the predicted circumference
    window wins outright; otherwise the acyclic path closest in length to
    the prediction is taken.  Arcs not used by the winner regroup into new
    edges and re-enter the procedure (bounded recursion).
    """
    graph = edge_to_graph(edge.points, min_arc_points)
    if graph is None:
        try:
            pts, cyclic = order_chain(edge.points)
        except ValueError:
            return []
        return [Edge(points=pts, removed=edge.removed, ordered=True, cyclic=cyclic)]
    try:
        paths = enumerate_paths(graph, cap=cap)
    except PathBudgetExceeded:
        # Pathological lattice: pass the edge through unsegmented.
        return [Edge(points=edge.points, removed=edge.removed, ordered=False)]
    if not paths:
        return []

    lo = max(circ_min, circ_pred * (1.0 - allow_circ))
    hi = min(circ_max, circ_pred * (1.0 + allow_circ))
    cyclic_ok = [p for p in paths if p.cyclic and lo <= p.length <= hi]
    if cyclic_ok:
        best = min(cyclic_ok, key=lambda p: abs(p.length - circ_pred))
    else:
        acyclic = [p for p in paths if not p.cyclic]
        if not acyclic:
            return []
        best = min(acyclic, key=lambda p: abs(p.length - circ_pred))

    accepted = Edge(points=best.points, removed=edge.removed, ordered=True,
                    cyclic=best.cyclic)
    out = [accepted]

    if _round < 3:
        used = set(best.arc_ids)
        leftover_px: list = []
        for ai, arc in enumerate(graph.arcs):
            if ai not in used:
                leftover_px.extend(arc.points)
        if leftover_px:
            for comp in _components(leftover_px):
                if len(comp) >= min_arc_points:
                    sub = Edge(points=np.asarray(comp, dtype=np.int64))
                    out.extend(path_segment(sub, circ_pred, allow_circ, circ_min,
                                            circ_max, min_arc_points, cap,
                                            _round=_round + 1))
    return out


def _components(pixels: list) -> list[list]:
    index = set(pixels)
    seen = set()
    comps = []
    for p in sorted(index):
        if p in seen:
            continue
        stack = [p]
        seen.add(p)
        comp = [p]
        while stack:
            q = stack.pop()
            for nb in _pixel_neighbours(q, index):
                if nb not in seen:
                    seen.add(nb)
                    comp.append(nb)
                    stack.append(nb)
        comps.append(comp)
    return comps


def curvature_segment(edge: Edge, profile: CurvatureProfile,
                      kappa_min: float, kappa_max: float,
                      min_points: int) -> list[Edge]:
    """Split an ordered chain at every curvature breakpoint.

    Breakpoint pixels belong to neither child; children shorter than
    ``min_points`` are discarded.  A chain with no breakpoints passes
    through untouched (cyclic chains stay cyclic).
    """
    kappa = profile.kappa
    breaks = np.where(profile.valid & ((kappa > kappa_max) | (kappa < kappa_min)))[0]
    if not len(breaks):
        return [edge]
    pts = edge.points
    n = len(pts)
    out = []
    if edge.cyclic:
        # Cut the ring open at the breakpoints; segments wrap around.
        break_set = set(int(b) for b in breaks)
        segments = []
        current = []
        for i in list(range(n)) * 2:  # double pass to stitch the wrap segment
            if i in break_set:
                if current:
                    segments.append(current)
                current = []
            else:
                current.append(i)
            if len(segments) and i == n - 1 and len(segments[0]) and \
                    segments[0][0] == 0 and current:
                pass
        if current:
            segments.append(current)
        # Deduplicate: keep maximal runs covering each index once.
        covered = set()
        unique = []
        for seg in sorted(segments, key=len, reverse=True):
            ids = [i % n for i in seg]
            if not covered.intersection(ids):
                covered.update(ids)
                unique.append(ids)
        segments = unique
    else:
        segments = []
        current = []
        break_set = set(int(b) for b in breaks)
        for i in range(n):
            if i in break_set:
                if current:
                    segments.append(current)
                current = []
            else:
                current.append(i)
        if current:
            segments.append(current)
    for seg in segments:
        if len(seg) >= min_points:
            out.append(Edge(points=pts[np.asarray(seg)], removed=edge.removed,
                            ordered=True, cyclic=False))
    return out


def length_segment(edge: Edge, circ_pred: float, shat: tuple[float, float],
                   img: np.ndarray, window: int, weights, curves,
                   cert_pos: float) -> Edge:
    """Trim an over-long chain back to the predicted circumference.

    The chain is cut into head, body, tail with body + either end summing to
    the prediction; the end that resembles the body most (scored with the
    classification curves on feature differences) is kept, the other
    severed.  Ties keep the head.  Chains at or under the prediction pass
    through unchanged.
    """
    from . import classify

    total = chain_length(edge.points)
    if total <= circ_pred or len(edge.points) < 3 * window:
        return edge
    pts = edge.points
    steps = np.linalg.norm(np.diff(pts.astype(float), axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(steps)])
    tail_len = max(total - circ_pred, 0.0)
    head_end = int(np.searchsorted(cum, tail_len))          # head = [0, head_end)
    body_end = int(np.searchsorted(cum, total - tail_len))  # tail = [body_end, n)
    head_end = max(min(head_end, len(pts) - 2), 1)
    body_end = max(min(body_end, len(pts) - 1), head_end + 1)

    head = pts[:head_end]
    body = pts[head_end:body_end]
    tail = pts[body_end:]
    if len(head) < 2 or len(tail) < 2 or len(body) < 2:
        return edge

    prof = curvature_profile(pts, window, cyclic=False)
    body_f = classify.section_features(body, prof, head_end, shat, img)
    head_f = classify.section_features(head, prof, 0, shat, img)
    tail_f = classify.section_features(tail, prof, body_end, shat, img)

    length_value = abs(chain_length(head) - circ_pred) / max(chain_length(head), circ_pred)
    head_score = classify.similarity_score(head_f, body_f, length_value, circ_pred,
                                           weights, curves, cert_pos)
    tail_score = classify.similarity_score(tail_f, body_f, length_value, circ_pred,
                                           weights, curves, cert_pos)
    # NaN scores (flat image, degenerate sections) must not flip the tie
    # rule, so test for a strictly better tail.
    if tail_score > head_score:
        kept = np.vstack([body, tail])
    else:
        kept = np.vstack([head, body])
    return Edge(points=kept, removed=edge.removed, ordered=True, cyclic=False)
