"""How often does a random batch contain more same-class than cross-class couplets?

Two readings are tabulated. In the couplet model every one of the C(B, 2)
couplets is independently same-class with probability 1/c^2. In the labeling
model each of the B labels is drawn uniformly from c classes, so couplets are
correlated. Both probabilities shrink as the number of classes grows.

    python demos/05_positive_majority.py
"""

from robult.evaluation import positive_majority_probability

print(f"{'B':>3s} {'c':>3s} {'couplet':>10s} {'labeling':>10s}")
for B in (4, 6, 8, 12):
    for c in (2, 3, 4):
        print(f"{B:3d} {c:3d} {positive_majority_probability(B, c):10.6f} "
              f"{positive_majority_probability(B, c, model='labeling'):10.6f}")
