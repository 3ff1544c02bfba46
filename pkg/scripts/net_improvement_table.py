"""Net improvement of each augmentation case from stored row-% confusion matrices.

    python3 scripts/net_improvement_table.py [matrices.json]

Defaults to the matrices in tests/fixtures; the JSON holds ``classes`` and a
``matrices`` mapping with a ``reference`` entry plus one entry per case.
"""
import json
import sys
from pathlib import Path

from ecgaug import MINOR_CLASSES
from ecgaug.evaluate import net_improvement

DEFAULT = Path(__file__).resolve().parents[1] / "tests" / "fixtures" / "target_confusion_matrices.json"


def main():
    data = json.loads(Path(sys.argv[1] if len(sys.argv) > 1 else DEFAULT).read_text())
    classes = tuple(data["classes"])
    ref = (classes, data["matrices"]["reference"])
    cases = [c for c in data["matrices"] if c != "reference"]
    rows = {c: net_improvement((classes, data["matrices"][c]), ref, MINOR_CLASSES) for c in cases}
    print("," + ",".join(f"Case {c}" for c in cases))
    print("Total," + ",".join(f"{rows[c][0]:.2f}" for c in cases))
    print("Minor-Classes," + ",".join(f"{rows[c][1]:.2f}" for c in cases))


if __name__ == "__main__":
    main()
