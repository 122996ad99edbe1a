"""Marching-cubes case tables, generated by walking the cube faces.

Corner ``i`` of a cube sits at offset (i & 1, (i >> 1) & 1, (i >> 2) & 1).
Case index bit ``i`` is set when corner ``i`` is inside (negative distance).

For every face with a sign change, crossing edges are paired so that each run
of inside corners is cut off by its own segment; on faces with two diagonal
inside corners this separates them.  The rule only looks at the face's own
corners, so neighbouring cubes always agree and the surface is watertight.
Segments are directed consistently, chain into closed loops, and each loop is
fan-triangulated with normals pointing to the outside.
"""

import numpy as np

CORNERS = np.array([(i & 1, (i >> 1) & 1, (i >> 2) & 1) for i in range(8)], np.int64)


def _edges():
    edges = []
    for axis in range(3):
        for c0 in range(8):
            if not c0 & (1 << axis):
                edges.append((c0, c0 | (1 << axis), axis))
    return edges


EDGES = _edges()
EDGE_CORNERS = np.array([(a, b) for a, b, _ in EDGES], np.int64)
EDGE_AXIS = np.array([ax for _, _, ax in EDGES], np.int64)
_EDGE_ID = {}
for _k, (_a, _b, _) in enumerate(EDGES):
    _EDGE_ID[(_a, _b)] = _k
    _EDGE_ID[(_b, _a)] = _k


def _faces():
    """Four corners per face, counter-clockwise seen from outside the cube."""
    faces = []
    for axis in range(3):
        b, c = (axis + 1) % 3, (axis + 2) % 3
        for side in (0, 1):
            ring = []
            for pb, pc in ((0, 0), (1, 0), (1, 1), (0, 1)):
                bits = (side << axis) | (pb << b) | (pc << c)
                ring.append(bits)
            faces.append(ring if side == 1 else ring[::-1])
    return faces


FACES = _faces()


def _case_loops(case):
    nxt = {}
    for ring in FACES:
        inside = [(case >> c) & 1 for c in ring]
        crossings = [k for k in range(4) if inside[k] != inside[(k + 1) % 4]]
        for k in crossings:
            if not inside[k] and inside[(k + 1) % 4]:
                # outside -> inside: pair with the next inside -> outside crossing
                j = (k + 1) % 4
                while not (inside[j] and not inside[(j + 1) % 4]):
                    j = (j + 1) % 4
                a = _EDGE_ID[(ring[k], ring[(k + 1) % 4])]
                b = _EDGE_ID[(ring[j], ring[(j + 1) % 4])]
                nxt[a] = b
    loops = []
    seen = set()
    for start in sorted(nxt):
        if start in seen:
            continue
        loop = [start]
        seen.add(start)
        e = nxt[start]
        while e != start:
            loop.append(e)
            seen.add(e)
            e = nxt[e]
        loops.append(loop)
    return loops


def _midpoint(e):
    a, b = EDGE_CORNERS[e]
    return 0.5 * (CORNERS[a] + CORNERS[b])


def _build():
    raw = [_case_loops(c) for c in range(256)]
    # orient with the single-inside-corner case: normal must point away from corner 0
    loop = raw[1][0]
    p = [_midpoint(e) for e in loop]
    n = np.cross(p[1] - p[0], p[2] - p[0])
    flip = float(n @ np.ones(3)) < 0
    tri = np.full((256, 16), -1, np.int64)
    count = np.zeros(256, np.int64)
    for c, loops in enumerate(raw):
        out = []
        for lp in loops:
            if flip:
                lp = lp[::-1]
            for i in range(1, len(lp) - 1):
                out += [lp[0], lp[i], lp[i + 1]]
        tri[c, : len(out)] = out
        count[c] = len(out) // 3
    return tri, count


TRI_TABLE, TRI_COUNT = _build()
