import itertools
import math

import pytest

from xmodal.scene_io import BBox, Detection, Modality, ScenePair


def det(det_id, x, y, w=10.0, h=20.0, conf=0.9, modality=None, gt=None):
    if modality is None:
        modality = Modality.RGB if det_id.startswith("R") else Modality.THERMAL
    return Detection(det_id, modality, BBox(x, y, w, h), conf, gt)


def centered(det_id, cx, cy, modality=Modality.RGB):
    """Detection whose bbox center is exactly (cx, cy)."""
    return Detection(det_id, modality, BBox(cx - 1.0, cy - 1.0, 2.0, 2.0), 0.9)


def brute_force_min_path(points):
    """Minimum total length over all Hamiltonian paths (exhaustive)."""
    n = len(points)
    if n < 2:
        return 0.0
    best = math.inf
    for perm in itertools.permutations(range(n)):
        if perm[0] > perm[-1]:
            continue
        best = min(best, sum(math.dist(points[perm[i]], points[perm[i + 1]]) for i in range(n - 1)))
    return best


def prim_mst_length(points):
    """Unconstrained minimum spanning tree length (Prim, O(n^2))."""
    n = len(points)
    if n < 2:
        return 0.0
    in_tree = [False] * n
    dist = [math.inf] * n
    dist[0] = 0.0
    total = 0.0
    for _ in range(n):
        u = min((i for i in range(n) if not in_tree[i]), key=lambda i: dist[i])
        in_tree[u] = True
        total += dist[u]
        for v in range(n):
            if not in_tree[v]:
                dist[v] = min(dist[v], math.dist(points[u], points[v]))
    return total


def brute_force_assignment(cost):
    """Minimum total over all injective row->column maps (rows <= cols)."""
    n, m = len(cost), len(cost[0])
    return min(sum(cost[i][p[i]] for i in range(n)) for p in itertools.permutations(range(m), n))


@pytest.fixture
def two_by_two_scene():
    return ScenePair(
        scene_id="s1",
        image_size_rgb=(640, 480),
        image_size_thermal=(640, 480),
        rgb_detections=[det("R1", 10, 10, gt="a"), det("R2", 200, 100, gt="b")],
        thermal_detections=[det("T1", 12, 11, gt="a"), det("T2", 205, 98, gt="b")],
        gt_pairs=[("R1", "T1"), ("R2", "T2")],
    )
