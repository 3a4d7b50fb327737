"""Reference BDM values for 20 random 7x7 boards, computed with pybdm.

Uses pybdm's recursive boundary (min_length=2) and its bundled
ctm-b2-d4x4 dataset. Output: one record per board, the board as a 49
character row-major bitstring followed by the BDM value in bits.

    pip install pybdm==0.1.0
    python3 scripts/bdm_reference.py > crates/core/tests/fixtures/bdm_reference.txt
"""
import numpy as np
from pybdm import BDM
from pybdm.partitions import PartitionRecursive


def main():
    rng = np.random.RandomState(20240601)
    bdm = BDM(ndim=2, partition=PartitionRecursive, min_length=2)
    print("# pybdm 0.1.0, ctm-b2-d4x4, boundary=recursive min_length=2")
    for _ in range(20):
        board = rng.randint(0, 2, size=(7, 7))
        bits = "".join(str(int(v)) for v in board.flatten())
        print("%s %r" % (bits, float(bdm.bdm(board))))


if __name__ == "__main__":
    main()
