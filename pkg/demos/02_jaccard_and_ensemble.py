"""
Scoring a segmentation
======================

Jaccard is TP / (TP + FN + FP). The reported number for a run is the
mean over its last five checkpoints, with a Student-t interval.
"""
import numpy as np

from codagan.evaluation import confusion_counts, ensemble_ci, jaccard

gt = np.zeros((8, 8), bool)
gt[2:6, 2:6] = True          # a 4x4 square
pred = np.zeros_like(gt)
pred[3:7, 2:6] = True        # the same square, one row lower

c = confusion_counts(pred, gt)
print(c)
print("jaccard", jaccard(pred, gt))          # 12 / (12 + 4 + 4) = 0.6

# two empty masks agree perfectly
print("empty vs empty", jaccard(np.zeros((4, 4)), np.zeros((4, 4))))

# five checkpoint scores in percent
summary = ensemble_ci([91, 92, 93, 92, 92])
print(f"{summary.mean:.2f} +/- {summary.half_width:.3f}  (95% interval {summary.ci[0]:.3f} .. {summary.ci[1]:.3f})")
