#!/usr/bin/env python3
"""Convert an adversarial chain-of-thought dataset to the JSONL layout this
toolkit ingests (fields: id, question, flawed_cot, ground_truth, source).

Published datasets name their fields differently, so the mapping is given on
the command line. Input may be JSONL (one object per line) or a JSON array.

Example (HuggingFace-style export):
    python scripts/convert_dataset.py raw.jsonl out.jsonl \
        --question-key question --cot-key wrong_solution \
        --answer-key answer --source gsm8k_adv
"""

import argparse
import json
import sys


def read_records(path):
    with open(path, encoding="utf-8") as f:
        text = f.read().strip()
    if not text:
        return []
    if text.startswith("["):
        return json.loads(text)
    return [json.loads(line) for line in text.splitlines() if line.strip()]


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("input")
    parser.add_argument("output")
    parser.add_argument("--id-key", default=None,
                        help="record key holding a unique id (default: row index)")
    parser.add_argument("--question-key", default="question")
    parser.add_argument("--cot-key", default="flawed_cot",
                        help="key holding the chain-of-thought with the injected error")
    parser.add_argument("--answer-key", default="ground_truth")
    parser.add_argument("--source", default="converted",
                        help="source tag written into every record")
    parser.add_argument("--id-prefix", default="sample",
                        help="prefix for generated ids when --id-key is absent")
    args = parser.parse_args()

    records = read_records(args.input)
    written = 0
    skipped = 0
    with open(args.output, "w", encoding="utf-8") as out:
        for index, record in enumerate(records):
            try:
                sample = {
                    "id": str(record[args.id_key]) if args.id_key
                          else f"{args.id_prefix}-{index:04d}",
                    "question": str(record[args.question_key]),
                    "flawed_cot": str(record[args.cot_key]),
                    "ground_truth": str(record[args.answer_key]),
                    "source": args.source,
                }
            except KeyError as missing:
                print(f"line {index + 1}: missing key {missing}; skipped",
                      file=sys.stderr)
                skipped += 1
                continue
            if not sample["flawed_cot"] or not sample["ground_truth"]:
                print(f"line {index + 1}: empty flawed_cot/ground_truth; skipped",
                      file=sys.stderr)
                skipped += 1
                continue
            out.write(json.dumps(sample, ensure_ascii=False) + "\n")
            written += 1

    print(f"wrote {written} records to {args.output}"
          + (f" ({skipped} skipped)" if skipped else ""))


if __name__ == "__main__":
    main()
