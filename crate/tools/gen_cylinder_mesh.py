"""Generate the 2D channel-with-cylinder triangle mesh as an ASCII MSH 2.2 file.

Channel [0, 2.2] x [0, 0.41], circular obstacle of radius 0.05 centred at
(0.2, 0.2). The obstacle boundary is a polygon with straight facets.

Usage: python3 tools/gen_cylinder_mesh.py [--n-circle 48] [--h-far 0.029] OUT.msh
"""
import argparse
import math

import numpy as np
from scipy.spatial import Delaunay

L, H = 2.2, 0.41
CX, CY, R = 0.2, 0.2, 0.05


def size_field(px, py, h_near, h_far):
    d = np.hypot(px - CX, py - CY) - R
    return np.minimum(h_far, h_near + 0.25 * np.maximum(d, 0.0))


def edge_points(a, b, h_near, h_far):
    """Points along segment a->b (excluding b) following the size field."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    length = np.linalg.norm(b - a)
    ts = [0.0]
    while True:
        p = a + ts[-1] * (b - a)
        h = float(size_field(p[0], p[1], h_near, h_far))
        t = ts[-1] + h / length
        if t >= 1.0 - 0.5 * h / length:
            break
        ts.append(t)
    ts = np.array(ts)
    # stretch so the last gap equals the others
    ts = ts * (1.0 / (ts[-1] + (ts[-1] - ts[-2]) if len(ts) > 1 else 1.0))
    return [tuple(a + t * (b - a)) for t in ts]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("out")
    ap.add_argument("--n-circle", type=int, default=48)
    ap.add_argument("--h-far", type=float, default=0.029)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()

    h_near = 2 * math.pi * R / args.n_circle
    h_far = args.h_far

    # boundary loops
    corners = [(0.0, 0.0), (L, 0.0), (L, H), (0.0, H)]
    bottom = edge_points(corners[0], corners[1], h_near, h_far)
    right = edge_points(corners[1], corners[2], h_near, h_far)
    top = edge_points(corners[2], corners[3], h_near, h_far)
    left = edge_points(corners[3], corners[0], h_near, h_far)
    outer = bottom + right + top + left
    outer_tags = (["wall"] * len(bottom) + ["outflow"] * len(right)
                  + ["wall"] * len(top) + ["inflow"] * len(left))
    circle = [(CX + R * math.cos(2 * math.pi * i / args.n_circle),
               CY + R * math.sin(2 * math.pi * i / args.n_circle))
              for i in range(args.n_circle)]

    # interior: rings around the obstacle, then a hexagonal lattice
    pts = []
    r, h = R, h_near
    while h < h_far * 0.999:
        r += h * math.sqrt(3) / 2
        h = float(size_field(CX + r, CY, h_near, h_far))
        n = max(8, int(round(2 * math.pi * r / h)))
        off = 0.5 * (len(pts) % 2)
        for i in range(n):
            a = 2 * math.pi * (i + off) / n
            pts.append((CX + r * math.cos(a), CY + r * math.sin(a)))
    ring_r = r + 0.5 * h_far
    dy = h_far * math.sqrt(3) / 2
    j = 0
    y = dy * 0.5
    while y < H - 0.4 * dy:
        x = (0.5 * h_far) * (j % 2) + 0.5 * h_far
        while x < L - 0.4 * h_far:
            if math.hypot(x - CX, y - CY) > ring_r:
                pts.append((x, y))
            x += h_far
        y += dy
        j += 1
    pts = [p for p in pts
           if 0.3 * h_near < p[0] < L - 0.3 * h_far and 0.3 * h_near < p[1] < H - 0.3 * h_near
           and math.hypot(p[0] - CX, p[1] - CY) > R + 0.3 * h_near]

    fixed = np.array(outer + circle)
    free = np.array(pts)
    # drop free points too close to boundary points
    def prune(free):
        allp = np.vstack([fixed, free])
        tri = Delaunay(allp)
        keep = np.ones(len(free), bool)
        nf = len(fixed)
        for s in tri.simplices:
            for a in range(3):
                i, jj = s[a], s[(a + 1) % 3]
                if i >= nf and keep[i - nf] and jj != i:
                    pi, pj = allp[i], allp[jj]
                    hloc = float(size_field(pi[0], pi[1], h_near, h_far))
                    if np.linalg.norm(pi - pj) < 0.45 * hloc and (jj < nf or jj < i):
                        keep[i - nf] = False
        return free[keep]
    free = prune(free)

    def triangulate(free):
        allp = np.vstack([fixed, free])
        tri = Delaunay(allp).simplices
        c = allp[tri].mean(axis=1)
        inside = np.hypot(c[:, 0] - CX, c[:, 1] - CY) < R
        return allp, tri[~inside]

    # Laplacian smoothing of interior points
    for _ in range(30):
        allp, tri = triangulate(free)
        nf = len(fixed)
        acc = np.zeros_like(allp)
        cnt = np.zeros(len(allp))
        for s in tri:
            for a in range(3):
                for b in range(3):
                    if a != b:
                        acc[s[a]] += allp[s[b]]
                        cnt[s[a]] += 1
        newfree = acc[nf:] / np.maximum(cnt[nf:], 1)[:, None]
        free = 0.5 * free + 0.5 * newfree
    allp, tri = triangulate(free)

    # orient counter-clockwise
    a, b, c = allp[tri[:, 0]], allp[tri[:, 1]], allp[tri[:, 2]]
    area = 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (c[:, 0] - a[:, 0]) * (b[:, 1] - a[:, 1]))
    tri[area < 0] = tri[area < 0][:, [0, 2, 1]]
    area = np.abs(area)
    assert area.min() > 0

    # boundary lines
    lines = []
    no = len(outer)
    for i in range(no):
        lines.append((outer_tags[i], i, (i + 1) % no))
    nc = len(circle)
    for i in range(nc):
        lines.append(("obstacle", no + i, no + (i + 1) % nc))

    phys = {"inflow": 1, "outflow": 2, "wall": 3, "obstacle": 4, "fluid": 5}
    with open(args.out, "w") as f:
        f.write("$MeshFormat\n2.2 0 8\n$EndMeshFormat\n")
        f.write("$PhysicalNames\n5\n")
        for name in ["inflow", "outflow", "wall", "obstacle"]:
            f.write(f'1 {phys[name]} "{name}"\n')
        f.write(f'2 5 "fluid"\n')
        f.write("$EndPhysicalNames\n")
        f.write(f"$Nodes\n{len(allp)}\n")
        for i, p in enumerate(allp):
            f.write(f"{i + 1} {p[0]:.16g} {p[1]:.16g} 0\n")
        f.write("$EndNodes\n")
        f.write(f"$Elements\n{len(lines) + len(tri)}\n")
        eid = 1
        for name, i, j in lines:
            f.write(f"{eid} 1 2 {phys[name]} {phys[name]} {i + 1} {j + 1}\n")
            eid += 1
        for s in tri:
            f.write(f"{eid} 2 2 5 5 {s[0] + 1} {s[1] + 1} {s[2] + 1}\n")
            eid += 1
        f.write("$EndElements\n")

    # quality report
    e = lambda p, q: np.linalg.norm(allp[p] - allp[q], axis=1)
    l0, l1, l2 = e(tri[:, 1], tri[:, 2]), e(tri[:, 2], tri[:, 0]), e(tri[:, 0], tri[:, 1])
    ang = []
    for la, lb, lc in [(l0, l1, l2), (l1, l2, l0), (l2, l0, l1)]:
        ang.append(np.degrees(np.arccos(np.clip((lb**2 + lc**2 - la**2) / (2 * lb * lc), -1, 1))))
    ang = np.array(ang)
    print(f"nodes={len(allp)} cells={len(tri)} min_angle={ang.min():.1f} "
          f"area_sum={area.sum():.6f} exact={L * H - math.pi * R * R:.6f}")


if __name__ == "__main__":
    main()
