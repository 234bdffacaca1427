"""Print the first iterations of a semi-supervised run.

Labelled (L) and unlabelled (U) iterations alternate; unlabelled ones rotate
through three sampling cases that mix the two partitions.

    python demos/semi_schedule.py
"""

import tempfile

from mapcon.network import ModelDims
from mapcon.synthetic import make_dataset
from mapcon.trainer import SEMI_CASES, TrainingConfig, semi_schedule

ds = make_dataset(4, 4, 5, 0.5, tempfile.mkdtemp(prefix="mapcon_semi_"), rings=3, sides=6)
print(f"{len(ds.labelled)} labelled meshes, {len(ds.unlabelled)} unlabelled")
cfg = TrainingConfig(mode="semi", epochs=2, dims=ModelDims.from_scale(1 / 8))
for it in list(semi_schedule(ds, cfg))[:8]:
    for item in it.items:
        names = " ".join(f"{e.identity_id}/{e.pose_id}{'' if e.labelled else '*'}" for e in item.entries)
        if it.tag == "L":
            print(f"epoch {it.epoch} iter {it.index} L   pose, identity, truth: {names}")
        else:
            pairs, ids = SEMI_CASES[it.case]
            print(f"epoch {it.epoch} iter {it.index} U{it.case}  pair from {pairs}, identity "
                  f"from {ids}: {names}")
print("(* = unlabelled)")
