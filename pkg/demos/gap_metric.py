"""GAP@20: pool every video's top-20 predictions and compute one average precision.

Run: python3 demos/gap_metric.py
"""

import numpy as np

from gatedpool.metrics import GapAccumulator, gap_at_20

scores = np.array([[0.9, 0.8, 0.7, 0.1],
                   [0.2, 0.6, 0.4, 0.3]])
labels = [{0, 2}, {1}]
print("two videos:", gap_at_20(scores, labels))

# Strictly increasing transforms keep the ranking, so GAP does not move.
print("after exp():", gap_at_20(np.exp(scores), labels))

# Streaming evaluation over batches gives the same value as one call.
acc = GapAccumulator()
for i in range(len(scores)):  # one video at a time
    acc.add(scores[i], labels[i])
print("accumulated:", acc.value())
