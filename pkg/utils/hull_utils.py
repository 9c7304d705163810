import numpy as np

from .errors import DegenerateHull


def _cross(o, a, b):
    # z-component of (a - o) x (b - o); positive for a counter-clockwise turn
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull_2d(points):
    '''
    Monotone chain (Andrew's) convex hull.

    points: array-like (N, 2)
    Returns the hull vertices in counter-clockwise order, collinear points dropped.
    '''
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise DegenerateHull(f"Expected points of shape (N, 2), got {pts.shape}.")
    pts = np.unique(pts, axis=0)  # lexicographic sort by (x, y)
    if len(pts) < 3:
        return pts

    lower = []
    for p in pts:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)

    upper = []
    for p in pts[::-1]:
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)

    return np.array(lower[:-1] + upper[:-1])


def shoelace_area(polygon):
    poly = np.asarray(polygon, dtype=np.float64)
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def convex_hull_area_2d(points):
    if len(points) < 3:
        raise DegenerateHull(f"Need at least 3 points for a hull, got {len(points)}.")
    hull = convex_hull_2d(points)
    if len(hull) < 3:
        raise DegenerateHull("Points are collinear, the hull has zero area.")
    return float(shoelace_area(hull))
