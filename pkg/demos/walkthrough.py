"""End-to-end tour: synthetic MIDI corpus -> dataset -> training -> generation -> metrics.

Uses the reduced widths from small.cfg so it finishes in a few minutes:

    python demos/walkthrough.py [workdir]
"""

import sys
import tempfile
from pathlib import Path

from srvaegan.cli import main
from srvaegan.mididata import roll_to_midi_bytes, synthetic_scale_corpus

HERE = Path(__file__).resolve().parent


def run(*argv):
    print("\n$ srvg", " ".join(argv))
    code = main(list(argv))
    if code:
        sys.exit(code)


def tour(work: Path):
    midi = work / "midi"
    midi.mkdir(parents=True, exist_ok=True)
    # eight pieces of ascending scale bars, each bar shifted up a whole tone
    for k, seq in enumerate(synthetic_scale_corpus()):
        (midi / f"scale{k}.mid").write_bytes(roll_to_midi_bytes(seq))

    ds, ck = work / "corpus.srvd", work / "model.ckpt"
    run("ingest", "--midi-dir", str(midi), "--out", str(ds))
    run("train", "--config", str(HERE / "small.cfg"), "--dataset", str(ds), "--out-checkpoint", str(ck),
        "--max-iters", "40")
    # mode 1 chains from a real bar, mode 2 starts from pure noise
    run("generate", "--checkpoint", str(ck), "--mode", "1", "--dataset", str(ds), "--bars", "8", "--samples", "4",
        "--seed", "1", "--out", str(work / "chained.srvd"), "--midi", str(work / "chained"))
    run("generate", "--checkpoint", str(ck), "--mode", "2", "--bars", "8", "--seed", "2",
        "--out", str(work / "free.srvd"))
    run("eval", "--in", str(work / "chained.srvd"), "--out", str(work / "report.json"))
    run("export", "--in", str(work / "free.srvd"), "--out-dir", str(work / "free_midi"))
    print(f"\noutputs in {work}")


if __name__ == "__main__":
    if len(sys.argv) > 1:
        tour(Path(sys.argv[1]))
    else:
        tour(Path(tempfile.mkdtemp(prefix="srvg-")))
