"""
Script to create sample data for crowdmap.

Writes a synthetic dot dataset plus a sparse face-detection file, laid out the way
the command line expects:

    sample_data/annotations.json
    sample_data/images/<id>.pgm
    sample_data/maps/<id>.dmap
    sample_data/detections.json
"""

import os
import sys

import numpy as np

sys.path.append(os.path.join(os.path.dirname(__file__), '..'))

from crowdmap.annotations import BBox, DetectionSet, serialize_detections
from crowdmap.synthetic import DotDatasetSpec, write_dot_dataset
from crowdmap.utils.helpers import atomic_write_text


def create_sample_detections(annotations, fraction=0.2, seed=0):
    """Pretend a face detector found a random `fraction` of the heads."""
    rng = np.random.default_rng(seed)
    detection_sets = []
    for ann in annotations:
        boxes = []
        for head in ann.heads:
            if rng.uniform() < fraction:
                # faces get smaller towards the top of the frame
                size = 3.0 + 6.0 * head.row / ann.shape[0]
                boxes.append(BBox(head, size, size * 0.8))
        detection_sets.append(DetectionSet(ann.image_id, tuple(boxes)))
    return detection_sets


def main(out_dir='sample_data'):
    spec = DotDatasetSpec(count=50, size=128, min_people=20, max_people=80, seed=42)
    annotations = write_dot_dataset(out_dir, spec, map_sigma=4.0)
    detections = create_sample_detections(annotations)
    atomic_write_text(os.path.join(out_dir, 'detections.json'), serialize_detections(detections))

    heads = [ann.count for ann in annotations]
    faces = [len(d) for d in detections]
    print(f"Sample data written to {out_dir}/")
    print(f"Images: {len(annotations)}")
    print(f"Heads per image: min {min(heads)}, mean {np.mean(heads):.1f}, max {max(heads)}")
    print(f"Face detections: {sum(faces)} total, {sum(f == 0 for f in faces)} images without any")


if __name__ == "__main__":
    main()
