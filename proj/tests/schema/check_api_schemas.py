"""Validates handler output against the JSON schemas in docs/api."""

import json
import pathlib
import subprocess
import sys

import jsonschema
import referencing

SAMPLES = {
    "score_request.json": "subject_record.schema.json",
    "score_response.json": "score_response.schema.json",
    "whatif_request.json": "whatif_request.schema.json",
    "whatif_response.json": "whatif_response.schema.json",
    "error_400.json": "error.schema.json",
    "error_409.json": "error.schema.json",
    "error_415.json": "error.schema.json",
    "error_422.json": "error.schema.json",
    "health.json": "health.schema.json",
    "model.json": "published_model.schema.json",
}

# Documents that must be rejected.
INVALID = {
    "subject_record.schema.json": lambda d: {**d, "shoe_size": 9},
    "whatif_request.schema.json": lambda d: {**d, "note": "x"},
}


def main(emitter, model, schema_dir, scratch):
    schema_dir = pathlib.Path(schema_dir)
    scratch = pathlib.Path(scratch)
    subprocess.run([emitter, model, str(scratch)], check=True)

    schemas = {p.name: json.loads(p.read_text()) for p in schema_dir.glob("*.schema.json")}
    registry = referencing.Registry().with_resources(
        (s["$id"], referencing.Resource.from_contents(s)) for s in schemas.values())

    failures = 0
    for sample, schema_name in SAMPLES.items():
        schema = schemas[schema_name]
        jsonschema.Draft202012Validator.check_schema(schema)
        validator = jsonschema.Draft202012Validator(schema, registry=registry)
        doc = json.loads((scratch / sample).read_text())
        errors = list(validator.iter_errors(doc))
        for e in errors:
            print(f"{sample}: {e.json_path}: {e.message}")
        failures += bool(errors)
        if schema_name in INVALID and validator.is_valid(INVALID[schema_name](doc)):
            print(f"{schema_name} accepted a document it should reject")
            failures += 1
    status = json.loads((scratch / "error_422.json").read_text())["error"]["status"]
    if status != 422:
        print(f"error_422.json has status {status}")
        failures += 1
    print(f"{len(SAMPLES) - failures} of {len(SAMPLES)} samples valid")
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main(*sys.argv[1:]))
