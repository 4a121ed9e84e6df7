"""Bookshelf instances: geometry, sampling, feature encoding and validation.

Books are rectangles seen from the front of the shelf.  Book ``i`` has a
centroid ``(x, y)`` and an angle ``theta`` about that centroid (``theta = 0``
is upright, positive is counter-clockwise).  Vertices are numbered clockwise
starting at the top-right corner of the upright book::

    v4 ---- v1
    |        |
    v3 ---- v2

so a book leaning right pivots on ``v2`` and rests its ``v1`` corner/edge on
the neighbour, and a book leaning left pivots on ``v3``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial import ConvexHull

from .errors import RetryExhausted, WrongBookCount

STATES = ("lay_left", "upright", "lay_right", "lean_left", "lean_right")

# body-frame offsets of v1..v4, in units of (width/2, height/2)
VERTEX_SIGNS = np.array([[1.0, 1.0], [1.0, -1.0], [-1.0, -1.0], [-1.0, 1.0]])

# vertex (0-based) that touches the ground in each state
SUPPORT_VERTEX = {"lay_left": 2, "upright": 1, "lay_right": 1, "lean_left": 2, "lean_right": 1}

DEFAULT_TOL = 1e-6


@dataclass(frozen=True)
class Book:
    width: float
    height: float

    def __post_init__(self):
        if not (self.width > 0 and self.height > 0):
            raise ValueError(f"book dimensions must be positive, got {self.width}x{self.height}")


def vertex_offsets(book: Book) -> np.ndarray:
    return VERTEX_SIGNS * np.array([book.width / 2.0, book.height / 2.0])


def rotation(cos_t: float, sin_t: float) -> np.ndarray:
    return np.array([[cos_t, -sin_t], [sin_t, cos_t]])


@dataclass(frozen=True)
class BookPose:
    x: float
    y: float
    theta: float
    cos_t: float
    sin_t: float
    vertices: tuple
    vertex_offsets: tuple

    @classmethod
    def from_rotation(cls, book: Book, x: float, y: float, cos_t: float, sin_t: float) -> "BookPose":
        offs = vertex_offsets(book)
        verts = np.array([x, y]) + offs @ rotation(cos_t, sin_t).T
        return cls(
            x=float(x),
            y=float(y),
            theta=math.atan2(sin_t, cos_t),
            cos_t=float(cos_t),
            sin_t=float(sin_t),
            vertices=tuple(tuple(float(c) for c in v) for v in verts),
            vertex_offsets=tuple(tuple(float(c) for c in o) for o in offs),
        )

    @classmethod
    def from_angle(cls, book: Book, x: float, y: float, theta: float) -> "BookPose":
        pose = cls.from_rotation(book, x, y, math.cos(theta), math.sin(theta))
        # keep the exact angle rather than the atan2 round-trip
        return BookPose(pose.x, pose.y, float(theta), pose.cos_t, pose.sin_t, pose.vertices, pose.vertex_offsets)

    def polygon(self) -> np.ndarray:
        return np.asarray(self.vertices, dtype=float)

    def translated(self, dx: float) -> "BookPose":
        verts = tuple((vx + dx, vy) for vx, vy in self.vertices)
        return BookPose(self.x + dx, self.y, self.theta, self.cos_t, self.sin_t, verts, self.vertex_offsets)


@dataclass(frozen=True)
class ShelfInstance:
    shelf_width: float
    shelf_height: float
    stored_books: tuple  # ((Book, BookPose), ...) left to right
    insert_book: Book
    insert_pose: BookPose | None = None  # pose the removed book had in the sampled scene
    seed: int | None = None

    @property
    def n_books(self) -> int:
        return len(self.stored_books) + 1

    @property
    def books(self) -> list[Book]:
        return [b for b, _ in self.stored_books] + [self.insert_book]

    @property
    def stored_poses(self) -> list[BookPose]:
        return [p for _, p in self.stored_books]

    def is_ordered(self) -> bool:
        xs = [p.x for _, p in self.stored_books]
        return all(a <= b for a, b in zip(xs, xs[1:]))

    def with_stored_order(self) -> "ShelfInstance":
        order = sorted(self.stored_books, key=lambda bp: bp[1].x)
        return ShelfInstance(self.shelf_width, self.shelf_height, tuple(order), self.insert_book,
                             self.insert_pose, self.seed)

    def trivial_solution(self) -> "SceneSolution":
        """Stored books untouched, removed book back at its original pose."""
        if self.insert_pose is None:
            raise ValueError("instance carries no original pose for the insert book")
        poses = tuple(self.stored_poses) + (self.insert_pose,)
        return SceneSolution(poses, tuple(label_states(self.books, poses)))


@dataclass(frozen=True)
class SceneSolution:
    poses: tuple
    state_labels: tuple


@dataclass
class SamplerConfig:
    shelf_width: float = 360.0
    shelf_height: float = 220.0
    n_books: int = 4
    width_range: tuple = (20.0, 60.0)
    height_range: tuple = (120.0, 200.0)
    gap_range: tuple = (0.0, 40.0)
    state_weights: dict = field(default_factory=lambda: {
        "upright": 0.6, "lay_left": 0.1, "lay_right": 0.1, "lean_left": 0.1, "lean_right": 0.1})
    max_retries: int = 2000


# ---------------------------------------------------------------------------
# geometry


def _edge_normals(poly: np.ndarray) -> np.ndarray:
    edges = np.roll(poly, -1, axis=0) - poly
    normals = np.stack([edges[:, 1], -edges[:, 0]], axis=1)
    lens = np.linalg.norm(normals, axis=1, keepdims=True)
    return normals / np.where(lens == 0, 1.0, lens)


def polygons_overlap(p: np.ndarray, q: np.ndarray, tol: float = DEFAULT_TOL) -> bool:
    """True if the interiors of two convex polygons intersect by more than ``tol``."""
    for n in np.vstack([_edge_normals(p), _edge_normals(q)]):
        pp, qq = p @ n, q @ n
        if pp.max() <= qq.min() + tol or qq.max() <= pp.min() + tol:
            return False
    return True


def _point_segment_distance(pt, a, b) -> float:
    ab = b - a
    denom = float(ab @ ab)
    t = 0.0 if denom == 0 else min(1.0, max(0.0, float((pt - a) @ ab) / denom))
    return float(np.linalg.norm(pt - (a + t * ab)))


def polygon_distance(p: np.ndarray, q: np.ndarray) -> float:
    """Distance between two non-overlapping convex polygons (0 when touching)."""
    if polygons_overlap(p, q, tol=0.0):
        return 0.0
    best = math.inf
    for poly_a, poly_b in ((p, q), (q, p)):
        for pt in poly_a:
            for k in range(len(poly_b)):
                best = min(best, _point_segment_distance(pt, poly_b[k], poly_b[(k + 1) % len(poly_b)]))
    return best


def classify_state(theta: float, tol: float = DEFAULT_TOL) -> str:
    if abs(theta) <= tol:
        return "upright"
    if abs(theta - math.pi / 2) <= tol:
        return "lay_left"
    if abs(theta + math.pi / 2) <= tol:
        return "lay_right"
    return "lean_left" if theta > 0 else "lean_right"


def label_states(books: Sequence[Book], poses: Sequence[BookPose], tol: float = DEFAULT_TOL) -> list[str]:
    return [classify_state(p.theta, tol) for p in poses]


# ---------------------------------------------------------------------------
# validation


@dataclass
class ValidationReport:
    entries: list = field(default_factory=list)  # (check, book index or pair, passed, detail)

    def add(self, check: str, item, passed: bool, detail: str = ""):
        self.entries.append((check, item, bool(passed), detail))

    @property
    def ok(self) -> bool:
        return all(e[2] for e in self.entries)

    def failures(self, check: str | None = None) -> list:
        return [e for e in self.entries if not e[2] and (check is None or e[0] == check)]

    def passed(self, check: str) -> bool:
        return not self.failures(check)


def validate_scene(shelf_width: float, shelf_height: float, books: Sequence[Book],
                   poses: Sequence[BookPose], state_labels: Sequence[str] | None = None,
                   tol: float = DEFAULT_TOL, x_offset: float = 0.0) -> ValidationReport:
    """Check a set of book poses against the physical rules of the shelf.

    ``x_offset`` is the position of the left wall, used to check translated scenes.
    """
    rep = ValidationReport()
    if state_labels is None:
        state_labels = label_states(books, poses, tol)
    polys = [p.polygon() for p in poses]
    left, right = x_offset, x_offset + shelf_width

    for i, (book, pose, poly) in enumerate(zip(books, poses, polys)):
        inside = (poly[:, 0].min() >= left - tol and poly[:, 0].max() <= right + tol
                  and poly[:, 1].min() >= -tol and poly[:, 1].max() <= shelf_height + tol)
        rep.add("containment", i, inside)
        recon = np.array([pose.x, pose.y]) + vertex_offsets(book) @ rotation(pose.cos_t, pose.sin_t).T
        rep.add("vertices", i, np.abs(recon - poly).max() <= tol)
        rep.add("rotation", i, abs(pose.cos_t ** 2 + pose.sin_t ** 2 - 1.0) <= tol)
        rep.add("angle_range", i, pose.cos_t >= -tol and abs(pose.theta) <= math.pi / 2 + tol)

        label = state_labels[i]
        expected = classify_state(pose.theta, tol)
        rep.add("state", i, label == expected, f"label {label}, angle says {expected}")
        support = poly[SUPPORT_VERTEX.get(label, 1), 1]
        rep.add("ground", i, poly[:, 1].min() <= tol and abs(support) <= tol,
                f"support vertex y={support:.6g}")

    for i in range(len(poses)):
        for j in range(i + 1, len(poses)):
            rep.add("overlap", (i, j), not polygons_overlap(polys[i], polys[j], tol))

    order = sorted(range(len(poses)), key=lambda k: (poses[k].x, k))
    rank = {k: r for r, k in enumerate(order)}
    for i, label in enumerate(state_labels):
        if label not in ("lean_left", "lean_right"):
            continue
        r = rank[i] + (-1 if label == "lean_left" else 1)
        if not 0 <= r < len(order):
            rep.add("stability", i, False, "no neighbour to lean on")
            continue
        j = order[r]
        xi, xj = poses[i].x, poses[j].x
        if label == "lean_left":
            lo, hi = xj, polys[i][2, 0]
        else:
            lo, hi = polys[i][1, 0], xj
        rep.add("stability", i, lo - tol <= xi <= hi + tol, f"x={xi:.6g} not in [{lo:.6g}, {hi:.6g}]")
        rep.add("contact", i, polygon_distance(polys[i], polys[j]) <= tol)
    return rep


def validate_solution(instance: ShelfInstance, sol: SceneSolution, tol: float = DEFAULT_TOL) -> ValidationReport:
    if len(sol.poses) != instance.n_books:
        raise ValueError(f"expected {instance.n_books} poses, got {len(sol.poses)}")
    return validate_scene(instance.shelf_width, instance.shelf_height, instance.books, sol.poses,
                          sol.state_labels, tol)


def validate_stored(instance: ShelfInstance, tol: float = DEFAULT_TOL) -> ValidationReport:
    """Validate the pre-insertion scene (stored books only)."""
    books = [b for b, _ in instance.stored_books]
    return validate_scene(instance.shelf_width, instance.shelf_height, books, instance.stored_poses, None, tol)


# ---------------------------------------------------------------------------
# placing the insert book into a fixed scene


def _rigid_pose(book: Book, theta: float, x: float) -> BookPose:
    probe = BookPose.from_angle(book, 0.0, 0.0, theta)
    return BookPose.from_angle(book, x, -probe.polygon()[:, 1].min(), theta)


def _overlap_span(moving: np.ndarray, fixed: np.ndarray):
    """Range of x-shifts at which ``moving + (dx, 0)`` meets ``fixed`` (None if never).

    The shifts form the slice of the Minkowski difference ``fixed - moving`` along y = 0.
    """
    diff = (fixed[:, None, :] - moving[None, :, :]).reshape(-1, 2)
    hull = diff[ConvexHull(diff).vertices] if np.ptp(diff[:, 1]) > 0 and np.ptp(diff[:, 0]) > 0 else diff
    xs = []
    for p, q in zip(hull, np.roll(hull, -1, axis=0)):
        if (p[1] <= 0 <= q[1]) or (q[1] <= 0 <= p[1]):
            if p[1] == q[1]:
                xs += [p[0], q[0]]
            else:
                xs.append(p[0] + (q[0] - p[0]) * (0 - p[1]) / (q[1] - p[1]))
    return (min(xs), max(xs)) if xs else None


def _free_interval(shelf_width, book, theta, left_poly, right_poly):
    """Centroid x-range keeping a ground-standing book inside the shelf, right of ``left_poly`` and left of ``right_poly``."""
    probe = _rigid_pose(book, theta, 0.0).polygon()
    lo, hi = -probe[:, 0].min(), shelf_width - probe[:, 0].max()
    if left_poly is not None:
        span = _overlap_span(probe, left_poly)
        if span is not None:
            lo = max(lo, span[1])
    if right_poly is not None:
        span = _overlap_span(probe, right_poly)
        if span is not None:
            hi = min(hi, span[0])
    return (lo, hi) if lo <= hi else None


def _lean_pose(book: Book, theta: float, contact: np.ndarray) -> BookPose | None:
    """Pose pivoting on the ground whose leaning edge passes through ``contact``."""
    c, s = math.cos(theta), math.sin(theta)
    if c <= 0:
        return None
    t = contact[1] / c
    if t < 0 or t > book.height:
        return None
    # lean left: pivot v3, edge v3->v4; lean right: pivot v2, edge v2->v1 (both along R(0, h))
    p = contact[0] + contact[1] * s / c
    pivot_offset = vertex_offsets(book)[2 if theta > 0 else 1] @ rotation(c, s).T
    return BookPose.from_angle(book, p - pivot_offset[0], -pivot_offset[1], theta)


def place_insert(instance: ShelfInstance, stored_poses: Sequence[BookPose], slot: int, state: str,
                 n_angles: int = 7, tol: float = DEFAULT_TOL) -> BookPose | None:
    """A valid pose for the insert book at ``slot`` (before stored book ``slot``) in ``state``.

    Stored books stay where they are; returns None when the state does not fit.
    """
    stored = [b for b, _ in instance.stored_books]
    book = instance.insert_book
    n_stored = len(stored)
    left = slot - 1 if slot >= 1 else None
    right = slot if slot < n_stored else None
    lpoly = stored_poses[left].polygon() if left is not None else None
    rpoly = stored_poses[right].polygon() if right is not None else None
    # a stored book leaning across the slot would lose its support
    if left is not None and classify_state(stored_poses[left].theta, tol) == "lean_right":
        return None
    if right is not None and classify_state(stored_poses[right].theta, tol) == "lean_left":
        return None
    books = stored + [book]

    def valid(pose):
        poses = list(stored_poses) + [pose]
        if left is not None and pose.x < stored_poses[left].x - tol:
            return False
        if right is not None and pose.x > stored_poses[right].x + tol:
            return False
        rep = validate_scene(instance.shelf_width, instance.shelf_height, books, poses, None, tol)
        return rep.ok

    rigid = {"upright": 0.0, "lay_left": math.pi / 2, "lay_right": -math.pi / 2}
    if state in rigid:
        span = _free_interval(instance.shelf_width, book, rigid[state], lpoly, rpoly)
        if span is None:
            return None
        lo, hi = span
        if left is not None:
            lo = max(lo, stored_poses[left].x)
        if right is not None:
            hi = min(hi, stored_poses[right].x)
        if lo > hi:
            return None
        pose = _rigid_pose(book, rigid[state], 0.5 * (lo + hi))
        return pose if valid(pose) else None

    if state == "lean_left" and left is None or state == "lean_right" and right is None:
        return None
    sign = 1.0 if state == "lean_left" else -1.0
    # neighbour corner the leaning edge rests on, and the neighbour edge the top corner can rest on
    if state == "lean_left":
        corner, edge = lpoly[0], (lpoly[0], lpoly[1])
    else:
        corner, edge = rpoly[3], (rpoly[3], rpoly[2])
    a_lo = math.atan2(book.width, book.height)  # steep enough for the centroid to pass the pivot
    a_top = math.pi / 2 - 0.05
    fracs = sorted(np.linspace(0.0, 1.0, n_angles + 2)[1:-1], key=lambda f: (abs(f - 0.5), f))
    # mode 1: leaning edge through the neighbour's top corner
    if corner[1] <= book.height:
        a_hi = min(a_top, math.acos(min(1.0, corner[1] / book.height)))
        for f in fracs if a_hi > a_lo else ():
            pose = _lean_pose(book, sign * (a_lo + f * (a_hi - a_lo)), corner)
            if pose is not None and valid(pose):
                return pose
    # mode 2: top corner against the neighbour's side
    e0, e1 = edge
    if e0[1] > e1[1]:
        a_min = max(a_lo, math.acos(min(1.0, e0[1] / book.height)))
        for f in fracs if a_top > a_min else ():
            theta = a_min + f * (a_top - a_min)
            top_y = book.height * math.cos(theta)
            u = (e0[1] - top_y) / (e0[1] - e1[1])
            if not 0.0 <= u <= 1.0:
                continue
            pose = _lean_pose(book, sign * theta, e0 + u * (e1 - e0))
            if pose is not None and valid(pose):
                return pose
    return None


# ---------------------------------------------------------------------------
# sampling


def _lean_contact_length(book_h: float, neighbour_h: float, phi: float) -> float:
    # distance along the leaning edge from the pivot to the contact point
    return min(book_h, neighbour_h / math.cos(phi))


def _lean_angle(rng: np.random.Generator, book: Book) -> float:
    lo = math.atan2(book.width, book.height) + 0.05
    hi = min(lo + 0.5, math.pi / 2 - 0.15)
    if hi <= lo:
        return -1.0
    return float(rng.uniform(lo, hi))


def _try_place(rng: np.random.Generator, cfg: SamplerConfig):
    n = cfg.n_books
    books = [Book(float(rng.uniform(*cfg.width_range)), float(rng.uniform(*cfg.height_range)))
             for _ in range(n)]
    names = list(cfg.state_weights)
    weights = np.array([cfg.state_weights[s] for s in names], dtype=float)
    states = [names[k] for k in rng.choice(len(names), size=n, p=weights / weights.sum())]
    for i in range(n):
        if states[i] == "lean_left" and (i == 0 or states[i - 1] != "upright"):
            states[i] = "upright"
        if states[i] == "lean_right":
            if i == n - 1:
                states[i] = "upright"
            else:
                states[i + 1] = "upright"

    poses: list[BookPose | None] = [None] * n
    targets = set()
    frontier = 0.0
    i = 0
    while i < n:
        book, st = books[i], states[i]
        gap = float(rng.uniform(*cfg.gap_range))
        if st == "upright":
            poses[i] = BookPose.from_angle(book, frontier + gap + book.width / 2, book.height / 2, 0.0)
        elif st in ("lay_left", "lay_right"):
            theta = math.pi / 2 if st == "lay_left" else -math.pi / 2
            if book.height > cfg.shelf_width or book.width > cfg.shelf_height:
                return None
            poses[i] = BookPose.from_angle(book, frontier + gap + book.height / 2, book.width / 2, theta)
        elif st == "lean_left":
            nb_book, nb = books[i - 1], poses[i - 1]
            phi = _lean_angle(rng, book)
            if phi < 0:
                return None
            xr = nb.x + nb_book.width / 2
            px = xr + _lean_contact_length(book.height, nb_book.height, phi) * math.sin(phi)
            # centroid = pivot v3 + R(phi) (w/2, h/2)
            cx = px + book.width / 2 * math.cos(phi) - book.height / 2 * math.sin(phi)
            cy = book.width / 2 * math.sin(phi) + book.height / 2 * math.cos(phi)
            poses[i] = BookPose.from_angle(book, cx, cy, phi)
            targets.add(i - 1)
        else:  # lean_right, paired with the upright book to its right
            phi = _lean_angle(rng, book)
            if phi < 0:
                return None
            nb_book = books[i + 1]
            probe = BookPose.from_angle(book, 0.0, 0.0, -phi)
            pv = probe.polygon()
            shift_x = frontier + gap - pv[:, 0].min()
            shift_y = -pv[1, 1]
            pose = BookPose.from_rotation(book, shift_x, shift_y, probe.cos_t, probe.sin_t)
            poses[i] = BookPose(pose.x, pose.y, -phi, pose.cos_t, pose.sin_t, pose.vertices, pose.vertex_offsets)
            px = poses[i].vertices[1][0]
            xl = px + _lean_contact_length(book.height, nb_book.height, phi) * math.sin(phi)
            poses[i + 1] = BookPose.from_angle(nb_book, xl + nb_book.width / 2, nb_book.height / 2, 0.0)
            targets.add(i + 1)
            frontier = max(v[0] for v in poses[i + 1].vertices)
            i += 2
            continue
        frontier = max(frontier, max(v[0] for v in poses[i].vertices))
        i += 1

    if frontier > cfg.shelf_width:
        return None
    rep = validate_scene(cfg.shelf_width, cfg.shelf_height, books, poses, states)
    if not rep.ok:
        return None
    return books, poses, states, targets


def sample_instance(rng_seed: int, config: SamplerConfig | None = None) -> ShelfInstance:
    """Sample a shelf, place ``n_books`` books left to right, then remove one to insert."""
    cfg = config or SamplerConfig()
    rng = np.random.default_rng(rng_seed)
    for _ in range(cfg.max_retries):
        placed = _try_place(rng, cfg)
        if placed is None:
            continue
        books, poses, states, targets = placed
        removable = [k for k in range(len(books)) if k not in targets]
        if not removable:
            continue
        k = int(removable[rng.integers(len(removable))])
        stored = tuple((books[j], poses[j]) for j in range(len(books)) if j != k)
        inst = ShelfInstance(cfg.shelf_width, cfg.shelf_height, stored, books[k], poses[k], int(rng_seed))
        inst = inst.with_stored_order()
        if validate_stored(inst).ok:
            return inst
    raise RetryExhausted(f"no valid scene after {cfg.max_retries} attempts (seed {rng_seed})")


# ---------------------------------------------------------------------------
# features


def feature_dim(n_stored: int) -> int:
    return 5 * n_stored + 2


def encode_features(instance: ShelfInstance, n_stored: int = 3) -> np.ndarray:
    """Fixed-width feature vector: (x, y, theta, height, width) per stored book, then insert (height, width)."""
    if len(instance.stored_books) != n_stored:
        raise WrongBookCount(f"expected {n_stored} stored books, got {len(instance.stored_books)}")
    inst = instance if instance.is_ordered() else instance.with_stored_order()
    vals = []
    for book, pose in inst.stored_books:
        vals += [pose.x, pose.y, pose.theta, book.height, book.width]
    vals += [inst.insert_book.height, inst.insert_book.width]
    return np.array(vals, dtype=float)
