#!/usr/bin/env python3
"""Generate randomized evaluator cases scored by pycocotools.

Writes coco_reference.json next to this script. Each case holds a
ground-truth file and a predictions file in the evaluator's JSON schema
(column-major RLE counts, leading run of zeros first) plus the summary
numbers pycocotools reports for them. Re-run with:

    pip install pycocotools
    python3 gen_coco_reference.py
"""

import contextlib
import io
import json
import os

import numpy as np
from pycocotools import mask as mask_utils
from pycocotools.coco import COCO
from pycocotools.cocoeval import COCOeval

NUM_CASES = 200
SEED = 20240917


def encode_counts(mask):
    flat = mask.flatten(order="F")
    counts = []
    prev, run = 0, 0
    for v in flat:
        if v != prev:
            counts.append(run)
            run = 0
            prev = v
        run += 1
    counts.append(run)
    return counts


def random_blob(rng, h, w):
    m = np.zeros((h, w), dtype=np.uint8)
    y0 = rng.randint(0, h)
    x0 = rng.randint(0, w)
    y1 = rng.randint(y0 + 1, h + 1)
    x1 = rng.randint(x0 + 1, w + 1)
    m[y0:y1, x0:x1] = 1
    # Sprinkle a few flipped pixels so masks are not always boxes.
    flips = rng.rand(h, w) < 0.08
    m[flips] ^= 1
    if m.sum() == 0:
        m[y0, x0] = 1
    return m


def perturb(rng, m, rate):
    out = m.copy()
    flips = rng.rand(*m.shape) < rate
    out[flips] ^= 1
    if out.sum() == 0:
        out = m.copy()
    return out


def make_case(rng):
    num_images = rng.randint(1, 5)
    gt_images, pred_images = [], []
    coco_images, coco_gts, coco_dts = [], [], []
    ann_id = 1
    for img_idx in range(num_images):
        image_id = img_idx + 1
        h = rng.randint(3, 9)
        w = rng.randint(3, 9)
        gts = [random_blob(rng, h, w) for _ in range(rng.randint(0, 5))]
        dets = []
        for g in gts:
            if rng.rand() < 0.75:
                dets.append(perturb(rng, g, rng.choice([0.0, 0.05, 0.15, 0.3])))
            if rng.rand() < 0.2:
                dets.append(perturb(rng, g, 0.1))
        for _ in range(rng.randint(0, 3)):
            dets.append(random_blob(rng, h, w))
        order = rng.permutation(len(dets))
        dets = [dets[i] for i in order]

        gt_images.append(
            {
                "image_id": str(image_id),
                "height": h,
                "width": w,
                "masks": [{"counts": encode_counts(g)} for g in gts],
            }
        )
        coco_images.append({"id": image_id, "height": h, "width": w})
        for g in gts:
            rle = mask_utils.encode(np.asfortranarray(g))
            coco_gts.append(
                {
                    "id": ann_id,
                    "image_id": image_id,
                    "category_id": 1,
                    "segmentation": {"size": [h, w], "counts": rle["counts"].decode()},
                    "area": float(g.sum()),
                    "bbox": list(mask_utils.toBbox(rle)),
                    "iscrowd": 0,
                }
            )
            ann_id += 1

        pred_masks = []
        for d in dets:
            score = float(rng.rand())
            pred_masks.append({"counts": encode_counts(d), "score": score})
            rle = mask_utils.encode(np.asfortranarray(d))
            coco_dts.append(
                {
                    "image_id": image_id,
                    "category_id": 1,
                    "segmentation": {"size": [h, w], "counts": rle["counts"].decode()},
                    "score": score,
                }
            )
        pred_images.append(
            {"image_id": str(image_id), "height": h, "width": w, "masks": pred_masks}
        )
    return gt_images, pred_images, coco_images, coco_gts, coco_dts


def score_case(coco_images, coco_gts, coco_dts):
    gt = COCO()
    gt.dataset = {
        "images": coco_images,
        "annotations": coco_gts,
        "categories": [{"id": 1, "name": "object"}],
    }
    with contextlib.redirect_stdout(io.StringIO()):
        gt.createIndex()
        dt = gt.loadRes(coco_dts)
        ev = COCOeval(gt, dt, "segm")
        ev.evaluate()
        ev.accumulate()
        ev.summarize()
    precision = ev.eval["precision"][:, :, 0, 0, 2]
    per_threshold = [float(np.mean(precision[t])) for t in range(precision.shape[0])]
    return {
        "ap": float(ev.stats[0]),
        "ap50": float(ev.stats[1]),
        "ar100": float(ev.stats[8]),
        "per_threshold_ap": per_threshold,
    }


def main():
    rng = np.random.RandomState(SEED)
    cases = []
    while len(cases) < NUM_CASES:
        gt_images, pred_images, coco_images, coco_gts, coco_dts = make_case(rng)
        # pycocotools needs at least one detection and one ground truth.
        if not coco_dts or not coco_gts:
            continue
        expected = score_case(coco_images, coco_gts, coco_dts)
        cases.append(
            {
                "gt": {"images": gt_images},
                "pred": {"images": pred_images},
                "expected": expected,
            }
        )
    out = os.path.join(os.path.dirname(os.path.abspath(__file__)), "coco_reference.json")
    with open(out, "w") as f:
        json.dump(cases, f)
    print(f"wrote {len(cases)} cases to {out}")


if __name__ == "__main__":
    main()
