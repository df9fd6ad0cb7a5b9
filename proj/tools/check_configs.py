#!/usr/bin/env python3
"""Validate run configurations against config/schema.json."""
import json
import pathlib
import sys

import jsonschema

root = pathlib.Path(__file__).resolve().parent.parent
schema = json.loads((root / "config" / "schema.json").read_text())
paths = [pathlib.Path(p) for p in sys.argv[1:]] or sorted(
    p for p in (root / "config").glob("*.json") if p.name != "schema.json")
bad = 0
for p in paths:
    try:
        jsonschema.validate(json.loads(p.read_text()), schema)
        print(f"ok   {p}")
    except (jsonschema.ValidationError, json.JSONDecodeError) as e:
        bad += 1
        print(f"FAIL {p}: {e}")
sys.exit(1 if bad else 0)
