"""Smoke test for the arranger_py extension module."""

import json
import tempfile
from pathlib import Path

import arranger_py as ar


def main():
    assert abs(ar.contrastive_loss([0.3] * 5) - 0.8) < 1e-12
    assert ar.pitch_class_map(0, [0, 4, 7], 0, [0, 4, 7]) == list(range(12))
    cmaj_to_amin = ar.pitch_class_map(0, [0, 4, 7], 9, [9, 0, 4])
    assert cmaj_to_amin[0] == 9 and cmaj_to_amin[4] == 0 and cmaj_to_amin[7] == 4

    path, score = ar.viterbi([[0.1, 0.9], [0.5, 0.2]], [[[0.0, 1.0], [0.2, 0.0]]])
    assert path == [0, 1], path

    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        files = ar.synth(tmp / "corpus", songs=12, seed=3)
        assert len(files) == 12

        index = ar.ReferenceIndex.build(tmp / "corpus")
        assert len(index) == 12 * index.source_phrase_count
        index.save(tmp / "index.json")
        index = ar.ReferenceIndex.load(tmp / "index.json")

        weights, report = ar.train(index, seed=1, epochs=3)
        assert report["mean_rank"] >= 1.0
        weights.save(tmp / "weights.json")
        weights = ar.TransitionWeights.load(tmp / "weights.json")

        result = ar.arrange(tmp / "corpus" / "song000.mid", index, weights, rd="high")
        assert result.selections, result
        assert result.midi_bytes()[:4] == b"MThd"
        trace = json.loads(result.trace_json())
        assert abs(trace["total_score"] - result.total_score) < 1e-12
        result.write_midi(tmp / "out.mid")

        print(index, weights, result, sep="\n")
        for s in result.selections:
            print(" ", s)
    print("smoke test ok")


if __name__ == "__main__":
    main()
