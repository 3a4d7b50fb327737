"""Export the pybdm 2D binary CTM dataset (ctm-b2-d4x4) to the text table format.

pybdm stores one value per symbol-normalised key (the first tile is always
"0"); the complement of each key has the same value, so both are written.

    pip install pybdm==0.1.0
    python3 scripts/export_pybdm_ctm.py data/ctm/ctm-b2-d4x4.txt
"""
import sys

from pybdm.utils import get_ctm_dataset


def complement(key):
    return "".join("1" if c == "0" else "0" for c in key)


def main(out_path):
    ctm, _missing = get_ctm_dataset("CTM-B2-D4x4")
    with open(out_path, "w") as out:
        out.write("ctm-table v1 provenance=published coverage=square source=pybdm-0.1.0/ctm-b2-d4x4\n")
        for (h, w) in sorted(ctm):
            values = {}
            for key, value in ctm[(h, w)].items():
                values[key] = float(value)
                values[complement(key)] = float(value)
            assert len(values) == 2 ** (h * w), (h, w, len(values))
            for key in sorted(values):
                out.write("%d %d %s %r\n" % (h, w, key, values[key]))


if __name__ == "__main__":
    main(sys.argv[1])
