"""Synthetic vascular phantoms with exact ground truth: a bifurcating
arterial tree obeying a Murray-exponent radius law, a nidus tangle of random
chords inside a sphere, and a draining vein, rasterized as capsules with a
Gaussian point-spread and additive noise.

Physical coordinates are (x, y, z) mm with x along W, y along H, z along D;
voxel (d, h, w) is centered at (w*sx, h*sy, d*sz).
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import ConfigError
from .rng import derive_rng
from .volume import BinaryMask, Spacing, Volume, save_mask, save_volume

ARTERY, NIDUS, VEIN = "artery", "nidus", "vein"


@dataclass
class PhantomSpec:
    dims: tuple = (64, 64, 64)
    spacing: Spacing = field(default_factory=lambda: Spacing.iso(0.227))
    seed: int = 0
    root_radius: float = 1.0          # mm
    min_radius: float = 0.3           # mm
    branch_angle_jitter: float = 15.0  # degrees around the 30 deg base angle
    length_ratio: float = 0.8         # segment length decay per generation
    murray_exponent: float = 3.0
    nidus_center: tuple = None        # (d, h, w) voxels; default right of center
    nidus_radius: float = 3.0         # mm
    nidus_segments: int = 12
    vein_radius: float = 0.8          # mm
    intensity_vessel: float = 100.0
    intensity_background: float = 20.0
    psf_sigma: float = 0.4            # mm
    noise_sigma: float = 10.0

    def validate(self):
        if not self.min_radius < self.root_radius:
            raise ConfigError("min_radius must be < root_radius")
        if min(self.root_radius, self.min_radius, self.nidus_radius,
               self.vein_radius) <= 0:
            raise ConfigError("all radii must be > 0")
        center = self.nidus_center_mm()
        size = self.size_mm()
        for c, s in zip(center, size):
            if c - self.nidus_radius < 0 or c + self.nidus_radius > s:
                raise ConfigError("nidus sphere exceeds the grid")
        return self

    def size_mm(self):
        d, h, w = self.dims
        return np.array([(w - 1) * self.spacing.sx,
                         (h - 1) * self.spacing.sy,
                         (d - 1) * self.spacing.sz])

    def nidus_center_mm(self):
        if self.nidus_center is None:
            d, h, w = self.dims
            voxel = (d // 2, h // 2, 2 * w // 3)
        else:
            voxel = self.nidus_center
        return np.array([voxel[2] * self.spacing.sx,
                         voxel[1] * self.spacing.sy,
                         voxel[0] * self.spacing.sz])

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["spacing"] = list(self.spacing.as_tuple())
        d["dims"] = list(self.dims)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["spacing"] = Spacing(*d["spacing"])
        d["dims"] = tuple(d["dims"])
        if d.get("nidus_center") is not None:
            d["nidus_center"] = tuple(d["nidus_center"])
        return cls(**d).validate()


@dataclass
class CenterlineGraph:
    nodes: list   # (position mm (3,), radius)
    edges: list   # (parent index, child index, radius, label)

    def component_edges(self, label):
        return [e for e in self.edges if e[3] == label]


def _unit(v):
    n = np.linalg.norm(v)
    return v / n if n > 0 else np.array([1.0, 0.0, 0.0])


def _perpendicular(v, rng):
    trial = rng.standard_normal(3)
    p = trial - np.dot(trial, v) * v
    return _unit(p)


def _rotate(v, axis, angle):
    # Rodrigues rotation of v around the unit axis
    return (v * np.cos(angle) + np.cross(axis, v) * np.sin(angle)
            + axis * np.dot(axis, v) * (1 - np.cos(angle)))


def generate_centerlines(spec):
    """Recursive bifurcation from a boundary root toward the nidus center;
    child radii satisfy r_p^m = r_l^m + r_r^m with a random split fraction
    in [0.3, 0.7]; recursion stops below min_radius or inside the nidus.
    Terminal tips connect through nidus chords to a single vein trunk
    leaving through the +x boundary (no chords when nidus_segments == 0:
    the vein attaches to the first tip).  Deterministic given spec.seed."""
    spec.validate()
    rng = derive_rng(spec.seed, "centerlines")
    size = spec.size_mm()
    nidus_c = spec.nidus_center_mm()
    margin = spec.root_radius + 2 * spec.psf_sigma

    nodes = []
    edges = []

    def add_node(pos, radius):
        nodes.append((np.asarray(pos, dtype=float), float(radius)))
        return len(nodes) - 1

    def clamp(pos):
        return np.clip(pos, margin, size - margin)

    root_pos = clamp(np.array([0.0, size[1] * 0.5, size[2] * 0.5])
                     + rng.normal(0, 0.02 * size[1], 3) * np.array([0, 1, 1]))
    root_pos[0] = margin
    root = add_node(root_pos, spec.root_radius)
    base_len = 0.35 * np.linalg.norm(nidus_c - root_pos)
    base_angle = np.deg2rad(30.0)
    tips = []

    def in_nidus(pos):
        return np.linalg.norm(pos - nidus_c) <= spec.nidus_radius

    def grow(parent_idx, direction, radius, generation):
        pos = nodes[parent_idx][0]
        steer = _unit(nidus_c - pos)
        direction = _unit(0.6 * direction + 0.4 * steer)
        length = base_len * spec.length_ratio ** generation * rng.uniform(0.75, 1.3)
        end = clamp(pos + direction * length)
        child = add_node(end, radius)
        edges.append((parent_idx, child, radius, ARTERY))
        if in_nidus(end) or generation >= 11:
            tips.append(child)
            return
        m = spec.murray_exponent
        f = rng.uniform(0.3, 0.7)
        r_l = radius * f ** (1.0 / m)
        r_r = radius * (1.0 - f) ** (1.0 / m)
        jitter = np.deg2rad(spec.branch_angle_jitter)
        perp = _perpendicular(direction, rng)
        for r_child, sign in ((r_l, 1.0), (r_r, -1.0)):
            if r_child < spec.min_radius:
                tips.append(child)
                continue
            angle = sign * (base_angle + rng.uniform(-jitter, jitter))
            d_child = _unit(_rotate(direction, perp, angle))
            spin = rng.uniform(0, 2 * np.pi)
            d_child = _unit(_rotate(d_child, direction, spin * 0.3))
            grow(child, d_child, r_child, generation + 1)

    grow(root, _unit(nidus_c - root_pos), spec.root_radius, 0)

    def rand_in_sphere():
        while True:
            p = rng.uniform(-1, 1, 3)
            if np.dot(p, p) <= 1.0:
                return nidus_c + p * spec.nidus_radius * 0.9

    chord_radius = lambda: spec.min_radius * rng.uniform(0.9, 1.3)
    nidus_nodes = []
    if spec.nidus_segments > 0:
        for tip in dict.fromkeys(tips):  # unique, order-preserving
            target = add_node(rand_in_sphere(), chord_radius())
            edges.append((tip, target, nodes[target][1], NIDUS))
            nidus_nodes.append(target)
        for _ in range(spec.nidus_segments):
            src = nidus_nodes[rng.integers(len(nidus_nodes))]
            target = add_node(rand_in_sphere(), chord_radius())
            edges.append((src, target, nodes[target][1], NIDUS))
            nidus_nodes.append(target)
        vein_src = nidus_nodes[-1]
    else:
        vein_src = tips[0]

    exit_pos = clamp(np.array([size[0], nidus_c[1], nidus_c[2]])
                     + rng.normal(0, 0.05 * size[1], 3) * np.array([0, 1, 1]))
    exit_pos[0] = size[0] - margin
    mid = clamp(0.5 * (nodes[vein_src][0] + exit_pos)
                + rng.normal(0, 0.04 * size[1], 3))
    v_mid = add_node(mid, spec.vein_radius)
    edges.append((vein_src, v_mid, spec.vein_radius, VEIN))
    v_end = add_node(exit_pos, spec.vein_radius)
    edges.append((v_mid, v_end, spec.vein_radius, VEIN))
    return CenterlineGraph(nodes=nodes, edges=edges)


def rasterize(graph, spec):
    """Union of capsules (segment +/- radius, exact point-to-segment
    distance) as the ground-truth mask; the intensity volume adds the
    Gaussian point-spread and i.i.d. noise on top of the two-level image."""
    d_dim, h_dim, w_dim = spec.dims
    sp = spec.spacing
    mask = np.zeros(spec.dims, dtype=bool)
    step = np.array([sp.sx, sp.sy, sp.sz])
    for parent, child, radius, _label in graph.edges:
        a = graph.nodes[parent][0]
        b = graph.nodes[child][0]
        lo_mm = np.minimum(a, b) - radius
        hi_mm = np.maximum(a, b) + radius
        lo = np.maximum(np.floor(lo_mm / step).astype(int), 0)
        hi = np.minimum(np.ceil(hi_mm / step).astype(int) + 1,
                        [w_dim, h_dim, d_dim])
        if np.any(lo >= hi):
            continue
        wi = np.arange(lo[0], hi[0]) * sp.sx
        hi_ = np.arange(lo[1], hi[1]) * sp.sy
        di = np.arange(lo[2], hi[2]) * sp.sz
        zz, yy, xx = np.meshgrid(di, hi_, wi, indexing="ij")
        px = np.stack([xx, yy, zz], axis=-1)
        ab = b - a
        denom = float(np.dot(ab, ab))
        if denom == 0:
            closest = a
        else:
            t = np.clip(((px - a) @ ab) / denom, 0.0, 1.0)
            closest = a + t[..., None] * ab
        dist = np.linalg.norm(px - closest, axis=-1)
        sub = mask[lo[2]:hi[2], lo[1]:hi[1], lo[0]:hi[0]]
        sub |= dist <= radius
        mask[lo[2]:hi[2], lo[1]:hi[1], lo[0]:hi[0]] = sub
    image = np.where(mask, spec.intensity_vessel,
                     spec.intensity_background).astype(np.float64)
    if spec.psf_sigma > 0:
        sigma_vox = (spec.psf_sigma / sp.sz, spec.psf_sigma / sp.sy,
                     spec.psf_sigma / sp.sx)
        image = ndimage.gaussian_filter(image, sigma=sigma_vox)
    if spec.noise_sigma > 0:
        noise_rng = derive_rng(spec.seed, "noise")
        image = image + noise_rng.normal(0.0, spec.noise_sigma, spec.dims)
    return (Volume(image.astype(np.float32), sp), BinaryMask(mask, sp))


def artery_root_voxel(graph, spec):
    """A voxel just inside the arterial root, used to seed region growing."""
    root_pos, root_r = graph.nodes[0]
    direction = _unit(graph.nodes[graph.edges[0][1]][0] - root_pos)
    p = root_pos + direction * (0.5 * root_r)
    sp = spec.spacing
    voxel = (int(round(p[2] / sp.sz)), int(round(p[1] / sp.sy)),
             int(round(p[0] / sp.sx)))
    return tuple(int(np.clip(v, 0, n - 1)) for v, n in zip(voxel, spec.dims))


def jitter_spec(base, rng, seed):
    """Per-case +/-20% radius jitter with a fresh generator seed."""
    return dataclasses.replace(
        base,
        seed=int(seed),
        root_radius=base.root_radius * rng.uniform(0.8, 1.2),
        min_radius=base.min_radius * rng.uniform(0.8, 1.2),
        nidus_radius=base.nidus_radius * rng.uniform(0.9, 1.1),
        vein_radius=base.vein_radius * rng.uniform(0.8, 1.2),
        nidus_segments=int(rng.integers(max(1, base.nidus_segments - 4),
                                        base.nidus_segments + 5))
        if base.nidus_segments > 0 else 0,
    )


def make_dataset(n_cases, base_spec=None, seed=0, out_dir=None):
    """n jittered cases with exact masks; when out_dir is given, volumes go
    to <case>.f32 fixtures, masks to <case>_mask.nrrd, and manifest.json
    lists cases, specs and derived region-grow seed voxels."""
    if n_cases < 2:
        raise ConfigError("a dataset needs >= 2 cases")
    base = (base_spec or PhantomSpec()).validate()
    cases = []
    for i in range(n_cases):
        rng = derive_rng(seed, "dataset", i)
        spec = jitter_spec(base, rng, seed=int(rng.integers(2 ** 62))).validate()
        graph = generate_centerlines(spec)
        vol, mask = rasterize(graph, spec)
        cases.append({
            "case_id": f"case{i + 1}",
            "volume": vol,
            "mask": mask,
            "spec": spec,
            "graph": graph,
            "seed_voxel": artery_root_voxel(graph, spec),
        })
    if out_dir is not None:
        write_dataset(cases, out_dir)
    return cases


def write_dataset(cases, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    manifest = {"cases": []}
    for case in cases:
        cid = case["case_id"]
        vol_path = os.path.join(out_dir, f"{cid}.f32")
        mask_path = os.path.join(out_dir, f"{cid}_mask.nrrd")
        save_volume(vol_path, case["volume"])
        save_mask(mask_path, case["mask"])
        manifest["cases"].append({
            "case_id": cid,
            "volume": os.path.basename(vol_path),
            "mask": os.path.basename(mask_path),
            "seed_voxel": list(case["seed_voxel"]),
            "spec": case["spec"].to_dict(),
        })
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
    return path


def load_dataset(manifest_path):
    """Load a written dataset back as the make_dataset case list (without
    graphs)."""
    from .volume import load_mask, load_volume

    base = os.path.dirname(os.path.abspath(manifest_path))
    with open(manifest_path) as f:
        manifest = json.load(f)
    cases = []
    for entry in manifest["cases"]:
        cases.append({
            "case_id": entry["case_id"],
            "volume": load_volume(os.path.join(base, entry["volume"])),
            "mask": load_mask(os.path.join(base, entry["mask"])),
            "spec": PhantomSpec.from_dict(entry["spec"]),
            "seed_voxel": tuple(entry["seed_voxel"]),
        })
    return cases
