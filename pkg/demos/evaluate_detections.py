"""Scoring detections against DETRAC-style annotations.

Writes a two-frame annotation file and a detections file into a temporary
directory, then evaluates them at IoU 0.7 with the library and prints the
per-class table. The same files work with ``focaldet eval``.

    python3 demos/evaluate_detections.py
"""

import tempfile
from pathlib import Path

from focaldet.evaluation import map_eval
from focaldet.ingest import load_sequences, read_detections, write_detections
from focaldet.structures import CLASS_NAMES, Detection

XML = """<?xml version="1.0" encoding="utf-8"?>
<sequence name="MVI_demo">
  <ignored_region><box left="400" top="0" width="200" height="80"/></ignored_region>
  <frame num="1"><target_list>
    <target id="1"><box left="10" top="20" width="60" height="40"/><attribute vehicle_type="car"/></target>
    <target id="2"><box left="150" top="60" width="120" height="90"/><attribute vehicle_type="bus"/></target>
  </target_list></frame>
  <frame num="2"><target_list>
    <target id="1"><box left="14" top="22" width="60" height="40"/><attribute vehicle_type="car"/></target>
    <target id="3"><box left="300" top="200" width="70" height="50"/><attribute vehicle_type="truck"/></target>
  </target_list></frame>
</sequence>
"""

dets = [
    Detection(1, 0, (11, 21, 70, 61), 0.95),
    Detection(1, 2, (150, 60, 268, 152), 0.90),
    Detection(1, 0, (405, 2, 595, 78), 0.85),      # covers the ignored region: neither TP nor FP
    Detection(2, 0, (14, 22, 74, 62), 0.80),
    Detection(2, 3, (300, 200, 370, 250), 0.60),
    Detection(2, 1, (200, 20, 240, 50), 0.55),     # no van ground truth: the class is left out of mAP
]

with tempfile.TemporaryDirectory() as tmp:
    xml_path, det_path = Path(tmp) / "MVI_demo.xml", Path(tmp) / "dets.jsonl"
    xml_path.write_text(XML)
    det_path.write_text(write_detections(dets))
    print(det_path.read_text())
    seq = load_sequences([xml_path])[0]
    print(f"{len(seq.frames)} frames, unknown vehicle types mapped to others: {dict(seq.unknown_types)}\n")
    result = map_eval(read_detections(det_path.read_text()), seq.ground_truths(), range(len(CLASS_NAMES)), 0.7)
    print(result.to_table("demo"))
