#!/usr/bin/env python3

'''
controlled two-domain benchmark: rendered source scenes whose labelled objects get colour and
mirror variants (background untouched), and fogged copies of them forming the target domain

every target object can be traced to its exact source counterpart and to the counterpart's
colour / rotation / colour+rotation siblings through the ProvenanceIndex
'''

import logging
import dataclasses

from pathlib import Path

import numpy as np
from matplotlib.colors import rgb_to_hsv, hsv_to_rgb

from memalign.numerics import DTYPE
from memalign.evaluation import iou
from memalign.tools.common import RngStream, parallel_map, make_scene_uid, make_object_uid, stable_hash_int, sha256_of_json, sha256_of_bytes
from memalign.tools.errors import ArgumentError, PreconditionError, LayoutError, DatasetIOError, IntegrityError, ConfigValidationError
from memalign.tools.params import get_params, build_dataclass, dataclass_to_dict
from memalign.tools import artifact_io

logger = logging.getLogger(__name__)

SOURCE = 'source'
TARGET = 'target'
DOMAINS = (SOURCE, TARGET)

# 'rectangle' is symmetric and only used for hand built scenes, the generator uses the other three
SHAPE_KINDS = ('rectangle_car', 'triangle', 'disc', 'rectangle')
SHAPE_KIND_BY_CLASS = ('rectangle_car', 'triangle', 'disc')
ORIENTATIONS = ('normal', 'flipped')
VARIANT_MODES = ('color', 'rotation', 'color_rotation')
MODE_TAGS = {'color': frozenset(['color']),
             'rotation': frozenset(['rotation']),
             'color_rotation': frozenset(['color', 'rotation'])}
FOG_COLOR = (0.9, 0.9, 0.9)
MAX_OBJECTS = 8
MIN_OBJECT_SIDE = 4

@dataclasses.dataclass
class BenchmarkConfig:
    num_scenes: int = 500
    num_classes: int = 3
    image_size: int = 64
    fog_intensity: float = 0.6
    min_objects: int = 1
    max_objects: int = 4
    max_overlap_iou: float = 0.3
    layout_retries: int = 50
    variant_fraction: float = 0.25
    # fractions of the hue circle, picked per object uid
    hue_shift_table: tuple = (0.33, 0.5, 0.67)
    small_side: tuple = (12, 20)
    large_side: tuple = (26, 38)
    background_noise: float = 0.03

    def __post_init__(self):
        self.hue_shift_table = tuple(self.hue_shift_table)
        self.small_side = tuple(self.small_side)
        self.large_side = tuple(self.large_side)
        bad = []
        if self.num_scenes < 1:
            bad.append('num_scenes')
        if self.num_classes < 1:
            bad.append('num_classes')
        if not 0.0 <= self.fog_intensity <= 1.0:
            bad.append('fog_intensity')
        # variants need an object to recolour or mirror
        if self.min_objects < 1:
            bad.append('min_objects')
        if not self.min_objects <= self.max_objects <= MAX_OBJECTS:
            bad.append('max_objects')
        if self.large_side[1] > self.image_size or self.small_side[0] < MIN_OBJECT_SIDE:
            bad.append('large_side' if self.large_side[1] > self.image_size else 'small_side')
        if not 0.0 <= self.variant_fraction <= 1.0:
            bad.append('variant_fraction')
        if bad:
            raise ConfigValidationError('invalid benchmark parameters', bad)

    @classmethod
    def from_params(cls, overrides=None):
        params = dict(get_params('synthgen/benchmark_params.yaml'))
        params.update(overrides or {})
        return build_dataclass(cls, params, 'benchmark config')

    def as_dict(self):
        return dataclass_to_dict(self)

    def config_hash(self):
        return sha256_of_json(self.as_dict())

@dataclasses.dataclass
class ObjectSpec:
    uid: str
    class_id: int
    shape_kind: str
    color: tuple
    orientation: str
    # top-left pixel (x, y) and (width, height)
    position: tuple
    size: tuple

    def validate(self, height, width):
        x, y = self.position
        w, h = self.size
        if self.shape_kind not in SHAPE_KINDS:
            raise ArgumentError(f'unknown shape kind "{self.shape_kind}"')
        if self.orientation not in ORIENTATIONS:
            raise ArgumentError(f'unknown orientation "{self.orientation}"')
        if w < MIN_OBJECT_SIDE or h < MIN_OBJECT_SIDE:
            raise LayoutError(f'object {self.uid} is {w}x{h}, minimum is {MIN_OBJECT_SIDE}x{MIN_OBJECT_SIDE}')
        if x < 0 or y < 0 or x + w > width or y + h > height:
            raise LayoutError(f'object {self.uid} at {self.position} size {self.size} exceeds the {width}x{height} image')
        if any(c < 0.0 or c > 1.0 for c in self.color):
            raise ArgumentError(f'object {self.uid} colour {self.color} is outside [0, 1]')

@dataclasses.dataclass(frozen=True)
class AnnotatedBox:
    x0: float
    y0: float
    x1: float
    y1: float
    class_id: int
    object_uid: str = ''

    def area(self):
        return max(0.0, self.x1 - self.x0) * max(0.0, self.y1 - self.y0)

    def coords(self):
        return (self.x0, self.y0, self.x1, self.y1)

    def geometry(self):
        '''
        box without its uid, handy to compare variants of the same scene
        '''
        return (self.x0, self.y0, self.x1, self.y1, self.class_id)

@dataclasses.dataclass(frozen=True)
class Provenance:
    parent_scene_uid: str
    transform_tags: tuple = ()

@dataclasses.dataclass
class SceneSample:
    image: np.ndarray
    boxes: list
    domain: str
    scene_uid: str
    provenance: Provenance = None
    # render inputs, kept in memory so variants can be re-rendered (not persisted)
    objects: list = None
    background: np.ndarray = None

    @property
    def height(self):
        return self.image.shape[0]

    @property
    def width(self):
        return self.image.shape[1]

    def tags(self):
        return () if self.provenance is None else tuple(self.provenance.transform_tags)

class Dataset():
    '''
    ordered list of scenes of one split with uid lookup
    '''
    def __init__(self, name, scenes, seed=None, config_hash=None):
        self.name = name
        self.scenes = list(scenes)
        self.seed = seed
        self.config_hash = config_hash
        self.by_uid = {}
        for scene in self.scenes:
            if scene.scene_uid in self.by_uid:
                raise ArgumentError(f'duplicated scene uid {scene.scene_uid} in dataset {name}')
            self.by_uid[scene.scene_uid] = scene

    def __len__(self):
        return len(self.scenes)

    def __iter__(self):
        return iter(self.scenes)

    def __getitem__(self, index):
        return self.scenes[index]

    def get(self, scene_uid):
        return self.by_uid.get(scene_uid)

    def box_count(self):
        return sum(len(scene.boxes) for scene in self.scenes)

    def subset(self, indices, name=None):
        return Dataset(name or self.name, [self.scenes[i] for i in indices], self.seed, self.config_hash)

def shape_mask(shape_kind, width, height):
    '''
    returns (mask, shade) for an object in its normal orientation, both (height, width)
    shade multiplies the object colour, every shape but the plain rectangle is left/right asymmetric
    '''
    rows = (np.arange(height) + 0.5)[:, None]
    cols = (np.arange(width) + 0.5)[None, :]
    shade = np.ones((height, width), dtype=DTYPE)
    if shape_kind in ('rectangle', 'rectangle_car'):
        mask = np.ones((height, width), dtype=bool)
        if shape_kind == 'rectangle_car':
            # window band on the right upper part
            window = (cols >= 0.6 * width) & (cols < 0.9 * width) & (rows >= 0.15 * height) & (rows < 0.5 * height)
            shade[window] = 0.55
    elif shape_kind == 'triangle':
        # right angle at the bottom-left corner, first row keeps at least one pixel
        limit = np.maximum(1, np.ceil((np.arange(height) + 1) * width / height))[:, None]
        mask = np.arange(width)[None, :] < limit
    elif shape_kind == 'disc':
        mask = ((cols - width / 2.0) / (width / 2.0)) ** 2 + ((rows - height / 2.0) / (height / 2.0)) ** 2 <= 1.0
        # off-centre hub
        hub = ((cols - 0.3 * width) ** 2 + (rows - 0.5 * height) ** 2) <= (0.15 * min(width, height)) ** 2
        shade[hub & mask] = 0.5
    else:
        raise ArgumentError(f'unknown shape kind "{shape_kind}"')
    return mask, shade

def render_background(height, width, background_params, rng):
    '''
    background_params: base (r, g, b), noise amplitude and horizontal gradient amplitude
    '''
    base = np.asarray(background_params.get('base', (0.5, 0.5, 0.5)), dtype=np.float64)
    noise = float(background_params.get('noise', 0.0))
    gradient = float(background_params.get('gradient', 0.0))
    background = np.broadcast_to(base, (height, width, 3)).astype(np.float64)
    if gradient:
        background = background + gradient * np.linspace(-1.0, 1.0, width)[None, :, None]
    if noise:
        background = background + noise * rng.uniform(-1.0, 1.0, size=(height, width, 1))
    return np.clip(background, 0.0, 1.0).astype(DTYPE)

def paint_objects(background, specs):
    '''
    paint specs in order over a copy of the background, return image and one tight box per object
    '''
    image = background.copy()
    boxes = []
    for spec in specs:
        x, y = spec.position
        w, h = spec.size
        mask, shade = shape_mask(spec.shape_kind, w, h)
        if spec.orientation == 'flipped':
            mask, shade = mask[:, ::-1], shade[:, ::-1]
        patch = image[y:y + h, x:x + w]
        color = np.asarray(spec.color, dtype=DTYPE)
        patch[mask] = (shade[..., None] * color[None, None, :])[mask]
        ys, xs = np.nonzero(mask)
        x0, x1 = x + int(xs.min()), x + int(xs.max()) + 1
        y0, y1 = y + int(ys.min()), y + int(ys.max()) + 1
        if x1 - x0 < MIN_OBJECT_SIDE or y1 - y0 < MIN_OBJECT_SIDE:
            raise LayoutError(f'object {spec.uid} paints a {x1 - x0}x{y1 - y0} region, below {MIN_OBJECT_SIDE}x{MIN_OBJECT_SIDE}')
        boxes.append(AnnotatedBox(float(x0), float(y0), float(x1), float(y1), int(spec.class_id), spec.uid))
    return image, boxes

def render_scene(specs, background_params, rng, image_size=(64, 64), scene_uid='scene', domain=SOURCE,
                 max_overlap_iou=1.0, provenance=None):
    '''
    deterministic raster of 0-8 objects over a (possibly textured) background
    image_size is (height, width); boxes tightly bound each object's painted pixels
    '''
    if len(specs) > MAX_OBJECTS:
        raise LayoutError(f'{len(specs)} objects requested, at most {MAX_OBJECTS} are supported')
    if domain not in DOMAINS:
        raise ArgumentError(f'unknown domain "{domain}"')
    height, width = image_size
    for spec in specs:
        spec.validate(height, width)
    background = render_background(height, width, background_params, rng)
    image, boxes = paint_objects(background, specs)
    for i in range(len(boxes)):
        for j in range(i + 1, len(boxes)):
            overlap = iou(boxes[i], boxes[j])
            if overlap > max_overlap_iou:
                raise LayoutError(f'objects {boxes[i].object_uid} and {boxes[j].object_uid} overlap with IoU {overlap:.2f}')
    return SceneSample(image=image, boxes=boxes, domain=domain, scene_uid=scene_uid, provenance=provenance,
                       objects=list(specs), background=background)

def hue_shift_for(object_uid, hue_shift_table):
    return hue_shift_table[stable_hash_int(object_uid) % len(hue_shift_table)]

def shift_hue(color, shift):
    hsv = rgb_to_hsv(np.asarray(color, dtype=np.float64).reshape(1, 1, 3))
    hsv[..., 0] = (hsv[..., 0] + shift) % 1.0
    return tuple(float(c) for c in hsv_to_rgb(hsv).reshape(3))

def transform_variant(scene, mode, hue_shift_table=BenchmarkConfig.hue_shift_table, scene_uid=None):
    '''
    re-render the labelled objects of a source scene over its untouched background:
    color shifts each object's hue by a table entry keyed on its uid, rotation mirrors each
    object horizontally inside its own box, color_rotation does both
    '''
    if mode not in VARIANT_MODES:
        raise ArgumentError(f'unknown variant mode "{mode}", expected one of {VARIANT_MODES}')
    if scene.domain != SOURCE:
        raise PreconditionError(f'variants are built from source scenes, {scene.scene_uid} is {scene.domain}')
    if len(scene.boxes) == 0:
        raise PreconditionError(f'scene {scene.scene_uid} has no labelled object to transform')
    if scene.objects is None or scene.background is None:
        raise PreconditionError(f'scene {scene.scene_uid} has no render layers (loaded from disk?), cannot build variants')
    scene_uid = scene_uid or f'{scene.scene_uid}_{mode}'
    tags = MODE_TAGS[mode]
    new_specs = []
    for k, spec in enumerate(scene.objects):
        color = spec.color
        orientation = spec.orientation
        if 'color' in tags:
            color = shift_hue(spec.color, hue_shift_for(spec.uid, hue_shift_table))
        if 'rotation' in tags:
            orientation = 'flipped' if spec.orientation == 'normal' else 'normal'
        new_specs.append(dataclasses.replace(spec, uid=make_object_uid(scene_uid, k), color=color, orientation=orientation))
    image, boxes = paint_objects(scene.background, new_specs)
    provenance = Provenance(scene.scene_uid, tuple(sorted(set(scene.tags()) | tags)))
    return SceneSample(image=image, boxes=boxes, domain=SOURCE, scene_uid=scene_uid, provenance=provenance,
                       objects=new_specs, background=scene.background)

def apply_fog(scene, intensity, scene_uid=None, fog_color=FOG_COLOR):
    '''
    out = (1 - intensity) * pixel + intensity * fog_color, boxes unchanged, domain becomes target
    '''
    if not 0.0 <= intensity <= 1.0:
        raise ArgumentError(f'fog intensity must be in [0, 1], got {intensity}')
    scene_uid = scene_uid or f'{scene.scene_uid}_fog'
    beta = DTYPE(intensity)
    fog = np.asarray(fog_color, dtype=DTYPE)
    image = ((DTYPE(1.0) - beta) * scene.image + beta * fog).astype(DTYPE)
    boxes = [dataclasses.replace(box, object_uid=make_object_uid(scene_uid, k)) for k, box in enumerate(scene.boxes)]
    provenance = Provenance(scene.scene_uid, tuple(sorted(set(scene.tags()) | {'fog'})))
    return SceneSample(image=image, boxes=boxes, domain=TARGET, scene_uid=scene_uid, provenance=provenance)

def remove_fog(image, intensity, fog_color=FOG_COLOR):
    '''
    analytic inverse of apply_fog for intensity < 1
    '''
    if not 0.0 <= intensity < 1.0:
        raise ArgumentError(f'fog with intensity {intensity} cannot be inverted')
    fog = np.asarray(fog_color, dtype=np.float64)
    return ((np.asarray(image, dtype=np.float64) - intensity * fog) / (1.0 - intensity)).astype(DTYPE)

def member_key(tags):
    '''
    variant group member name from transform tags (fog ignored)
    '''
    tags = set(tags) - {'fog'}
    if tags == {'color', 'rotation'}:
        return 'color_rotation'
    if tags == {'color'}:
        return 'color'
    if tags == {'rotation'}:
        return 'rotation'
    return 'original'

def toggle_member(key, mode):
    '''
    the group member that differs from `key` in exactly the attributes named by mode
    '''
    tags = set() if key == 'original' else set(MODE_TAGS[key])
    if mode != 'domain_only':
        tags ^= set(MODE_TAGS[mode])
    return member_key(tags)

class ProvenanceIndex():
    '''
    target scene/object -> exact source counterpart, and source object -> its variant siblings

    a variant group holds the four renderings (original, color, rotation, color_rotation) of one
    base scene; the member used in the source split is the counterpart, the other three are kept
    in `siblings` so every alignment strategy can resolve its partner
    '''
    STRATEGIES = ('domain_only', 'color', 'rotation', 'color_rotation')

    def __init__(self):
        self.target_scene_to_source = {}
        self.target_object_to_source = {}
        # base uid -> {member key: scene uid}
        self.groups = {}
        # scene uid -> (base uid, member key)
        self.scene_group = {}
        # object uid -> (scene uid, object index)
        self.object_slot = {}
        self.siblings = Dataset('variants', [])

    def add_group(self, base_uid, members):
        self.groups[base_uid] = {}
        for key, scene in members.items():
            self.groups[base_uid][key] = scene.scene_uid
            self.scene_group[scene.scene_uid] = (base_uid, key)
            for k, box in enumerate(scene.boxes):
                self.object_slot[box.object_uid] = (scene.scene_uid, k)

    def add_target(self, target_scene, source_scene):
        self.target_scene_to_source[target_scene.scene_uid] = source_scene.scene_uid
        for k, (t_box, s_box) in enumerate(zip(target_scene.boxes, source_scene.boxes)):
            self.target_object_to_source[t_box.object_uid] = s_box.object_uid
            self.object_slot[t_box.object_uid] = (target_scene.scene_uid, k)

    def source_scene_for(self, target_scene_uid):
        return self.target_scene_to_source.get(target_scene_uid)

    def source_object_for(self, target_object_uid):
        return self.target_object_to_source.get(target_object_uid)

    def sibling_object(self, source_object_uid, mode):
        '''
        return the uid of the object that plays the role of `mode` for a source object, None if unresolvable
        '''
        if mode not in self.STRATEGIES:
            raise ArgumentError(f'unknown strategy "{mode}", expected one of {self.STRATEGIES}')
        slot = self.object_slot.get(source_object_uid)
        if slot is None:
            return None
        scene_uid, k = slot
        if scene_uid not in self.scene_group:
            return None
        base_uid, key = self.scene_group[scene_uid]
        sibling_scene_uid = self.groups[base_uid].get(toggle_member(key, mode))
        if sibling_scene_uid is None:
            return None
        return make_object_uid(sibling_scene_uid, k)

    def counterpart_for(self, target_object_uid, mode):
        source_object_uid = self.source_object_for(target_object_uid)
        if source_object_uid is None:
            return None
        return self.sibling_object(source_object_uid, mode)

    def tags_of_object(self, object_uid):
        slot = self.object_slot.get(object_uid)
        if slot is None or slot[0] not in self.scene_group:
            return None
        return MODE_TAGS.get(self.scene_group[slot[0]][1], frozenset())

    def to_dict(self):
        return {'target_scene_to_source': self.target_scene_to_source,
                'target_object_to_source': self.target_object_to_source,
                'groups': self.groups,
                'object_slot': {uid: list(slot) for uid, slot in self.object_slot.items()}}

    @classmethod
    def from_dict(cls, d, siblings=None):
        index = cls()
        index.target_scene_to_source = dict(d['target_scene_to_source'])
        index.target_object_to_source = dict(d['target_object_to_source'])
        index.groups = {base: dict(members) for base, members in d['groups'].items()}
        for base, members in index.groups.items():
            for key, scene_uid in members.items():
                index.scene_group[scene_uid] = (base, key)
        index.object_slot = {uid: (slot[0], int(slot[1])) for uid, slot in d['object_slot'].items()}
        if siblings is not None:
            index.siblings = siblings
        return index

def sample_layout(config, rng, scene_uid):
    '''
    sample object specs until pairwise box IoU stays below the limit, dropping one object after
    every `layout_retries` failed attempts
    '''
    size = config.image_size
    n_objects = int(rng.integers(config.min_objects, config.max_objects + 1))
    while True:
        for attempt in range(config.layout_retries):
            specs = []
            for k in range(n_objects):
                class_id = int(rng.integers(0, config.num_classes))
                low, high = config.small_side if rng.random() < 0.5 else config.large_side
                w, h = int(rng.integers(low, high + 1)), int(rng.integers(low, high + 1))
                x, y = int(rng.integers(0, size - w + 1)), int(rng.integers(0, size - h + 1))
                hsv = np.array([rng.random(), rng.uniform(0.6, 1.0), rng.uniform(0.5, 1.0)])
                color = tuple(float(c) for c in hsv_to_rgb(hsv.reshape(1, 1, 3)).reshape(3))
                orientation = ORIENTATIONS[int(rng.integers(0, 2))]
                specs.append(ObjectSpec(make_object_uid(scene_uid, k), class_id, SHAPE_KIND_BY_CLASS[class_id % len(SHAPE_KIND_BY_CLASS)],
                                        color, orientation, (x, y), (w, h)))
            rects = [(s.position[0], s.position[1], s.position[0] + s.size[0], s.position[1] + s.size[1]) for s in specs]
            if all(iou(rects[i], rects[j]) <= config.max_overlap_iou
                   for i in range(len(rects)) for j in range(i + 1, len(rects))):
                return specs
        if n_objects <= max(1, config.min_objects):
            raise LayoutError(f'could not place {n_objects} objects in scene {scene_uid} after {config.layout_retries} attempts')
        logger.debug(f'scene {scene_uid}: dropping to {n_objects - 1} objects after {config.layout_retries} layout attempts')
        n_objects -= 1

def render_variant_group(config, index, seed):
    '''
    render the four members of base scene `index` with its own rng stream (seed, scene, index)
    '''
    rng = RngStream(seed).spawn('scene', index)
    base_uid = make_scene_uid('src', index)
    specs = sample_layout(config, rng, base_uid)
    base_level = rng.uniform(0.3, 0.7)
    background_params = {'base': tuple(float(base_level + t) for t in rng.uniform(-0.05, 0.05, size=3)),
                         'noise': config.background_noise,
                         'gradient': float(rng.uniform(0.0, 0.1))}
    original = render_scene(specs, background_params, rng, image_size=(config.image_size, config.image_size),
                            scene_uid=base_uid, domain=SOURCE, max_overlap_iou=1.0)
    members = {'original': original}
    for mode in VARIANT_MODES:
        members[mode] = transform_variant(original, mode, config.hue_shift_table)
    return base_uid, members

def generate_benchmark(config, seed, threads=1):
    '''
    N base scenes, a `variant_fraction` of them replaced by one of their random variants, all
    fogged copies form the target; returns (source, target, provenance_index)
    '''
    assert isinstance(config, BenchmarkConfig)
    groups = parallel_map(lambda i: render_variant_group(config, i, seed), range(config.num_scenes), threads)

    variant_rng = RngStream(seed).spawn('variants')
    n_replaced = int(round(config.variant_fraction * config.num_scenes))
    replaced = set(int(i) for i in variant_rng.permutation(config.num_scenes)[:n_replaced])
    variant_choice = variant_rng.integers(0, len(VARIANT_MODES), size=config.num_scenes)

    provenance = ProvenanceIndex()
    source_scenes, target_scenes, sibling_scenes = [], [], []
    for i, (base_uid, members) in enumerate(groups):
        chosen_key = VARIANT_MODES[int(variant_choice[i])] if i in replaced else 'original'
        source_scene = members[chosen_key]
        target_scene = apply_fog(source_scene, config.fog_intensity, scene_uid=make_scene_uid('tgt', i))
        provenance.add_group(base_uid, members)
        provenance.add_target(target_scene, source_scene)
        source_scenes.append(source_scene)
        target_scenes.append(target_scene)
        sibling_scenes.extend(members[key] for key in ('original',) + VARIANT_MODES if key != chosen_key)

    config_hash = config.config_hash()
    source = Dataset(SOURCE, source_scenes, seed, config_hash)
    target = Dataset(TARGET, target_scenes, seed, config_hash)
    provenance.siblings = Dataset('variants', sibling_scenes, seed, config_hash)
    logger.info(f'generated benchmark: {len(source)} source scenes ({len(replaced)} replaced by variants, '
                f'{source.box_count()} boxes), {len(target)} target scenes, {len(provenance.siblings)} sibling scenes')
    return source, target, provenance

# persistence: manifest.json, scenes/<uid>.img, scenes/<uid>.ann, provenance.json

def encode_annotations(boxes):
    lines = [f'{b.x0:g} {b.y0:g} {b.x1:g} {b.y1:g} {b.class_id} {b.object_uid}' for b in boxes]
    return ('\n'.join(lines) + ('\n' if lines else '')).encode('utf-8')

def decode_annotations(data, path=None):
    boxes = []
    for line_number, line in enumerate(data.decode('utf-8').splitlines()):
        if not line.strip():
            continue
        fields = line.split()
        if len(fields) != 6:
            raise DatasetIOError(f'annotation line {line_number + 1} has {len(fields)} fields, expected 6', path)
        x0, y0, x1, y1 = (float(v) for v in fields[:4])
        boxes.append(AnnotatedBox(x0, y0, x1, y1, int(fields[4]), fields[5]))
    return boxes

def save_dataset(datasets, out_dir, provenance=None, seed=None, config_hash=None):
    '''
    write one or more splits into a single dataset directory
    '''
    if isinstance(datasets, Dataset):
        datasets = [datasets]
    out_dir = Path(out_dir)
    records = []
    scene_provenance = {}
    for dataset in datasets:
        for scene in dataset:
            image_rel = f'scenes/{scene.scene_uid}.img'
            ann_rel = f'scenes/{scene.scene_uid}.ann'
            image_bytes = artifact_io.encode_image(scene.image)
            ann_bytes = encode_annotations(scene.boxes)
            artifact_io.write_bytes(out_dir / image_rel, image_bytes)
            artifact_io.write_bytes(out_dir / ann_rel, ann_bytes)
            records.append({'uid': scene.scene_uid, 'split': dataset.name, 'domain': scene.domain,
                            'image': image_rel, 'annotations': ann_rel, 'num_boxes': len(scene.boxes),
                            'image_sha256': sha256_of_bytes(image_bytes), 'annotations_sha256': sha256_of_bytes(ann_bytes)})
            if scene.provenance is not None:
                scene_provenance[scene.scene_uid] = {'parent': scene.provenance.parent_scene_uid,
                                                     'tags': list(scene.provenance.transform_tags)}
        seed = dataset.seed if seed is None else seed
        config_hash = dataset.config_hash if config_hash is None else config_hash
    provenance_doc = {'scenes': scene_provenance, 'index': provenance.to_dict() if provenance is not None else None}
    artifact_io.write_json(out_dir / 'provenance.json', provenance_doc, sealed=True)
    manifest = {'schema_version': 1, 'seed': seed, 'config_hash': config_hash,
                'splits': [d.name for d in datasets], 'scenes': records}
    artifact_io.write_json(out_dir / 'manifest.json', manifest, sealed=True)
    logger.info(f'saved {len(records)} scenes ({", ".join(f"{d.name}: {len(d)}" for d in datasets)}) to {out_dir}')
    return manifest

def load_dataset(in_dir, split=None):
    '''
    load one split (or, with split=None, a dict of all splits) and verify every file against the manifest
    '''
    in_dir = Path(in_dir)
    manifest_path = in_dir / 'manifest.json'
    if not manifest_path.is_file():
        raise DatasetIOError('no dataset manifest found', manifest_path)
    manifest = artifact_io.read_json(manifest_path, sealed=True)
    provenance_doc = artifact_io.read_json(in_dir / 'provenance.json', sealed=True)
    scene_provenance = provenance_doc.get('scenes', {})
    splits = {name: [] for name in manifest['splits']}
    if split is not None and split not in splits:
        raise DatasetIOError(f'split "{split}" not found, available: {sorted(splits)}', manifest_path)
    for record in manifest['scenes']:
        if split is not None and record['split'] != split:
            continue
        image_path = in_dir / record['image']
        ann_path = in_dir / record['annotations']
        image = artifact_io.decode_image(artifact_io.verify_file_hash(image_path, record['image_sha256']), image_path)
        boxes = decode_annotations(artifact_io.verify_file_hash(ann_path, record['annotations_sha256']), ann_path)
        if len(boxes) != record['num_boxes']:
            raise IntegrityError(f'{len(boxes)} boxes found, manifest says {record["num_boxes"]}', ann_path)
        provenance = None
        if record['uid'] in scene_provenance:
            p = scene_provenance[record['uid']]
            provenance = Provenance(p['parent'], tuple(p['tags']))
        splits[record['split']].append(SceneSample(image=image, boxes=boxes, domain=record['domain'],
                                                   scene_uid=record['uid'], provenance=provenance))
    datasets = {name: Dataset(name, scenes, manifest['seed'], manifest['config_hash']) for name, scenes in splits.items()}
    if split is not None:
        return datasets[split]
    return datasets

def load_provenance(in_dir, siblings=None):
    doc = artifact_io.read_json(Path(in_dir) / 'provenance.json', sealed=True)
    if doc.get('index') is None:
        raise DatasetIOError('dataset has no provenance index', Path(in_dir) / 'provenance.json')
    return ProvenanceIndex.from_dict(doc['index'], siblings)

def save_benchmark(source, target, provenance, out_dir):
    return save_dataset([source, target, provenance.siblings], out_dir, provenance=provenance)

def load_benchmark(in_dir):
    datasets = load_dataset(in_dir)
    for name in (SOURCE, TARGET):
        if name not in datasets:
            raise DatasetIOError(f'benchmark split "{name}" missing', Path(in_dir) / 'manifest.json')
    siblings = datasets.get('variants', Dataset('variants', []))
    provenance = load_provenance(in_dir, siblings)
    return datasets[SOURCE], datasets[TARGET], provenance
