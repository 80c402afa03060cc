#!/usr/bin/env python3
"""Reference mock oracle for the edittraj JSON-lines protocol.

Reads one request per line on stdin and writes one response per line on
stdout. The answers are the same NON-CHEMICAL toy formulas as the built-in
`toy:` oracles, so a run against this script matches a run against
`--oracle toy:<name>`.

    edittraj --oracle "stdio:python3 tools/mock_oracle.py" reward --input rollouts.jsonl
    edittraj editflow MKV --head "stdio:python3 tools/mock_oracle.py --heads uniform:0.5"

Only the standard library is used.
"""

import argparse
import json
import re
import sys
import time

PROTOCOL_VERSION = 1
FINGERPRINT_BITS = 2048

AMINO_ACIDS = "ACDEFGHIKLMNPQRSTVWY"
PROTEIN_TOKENS = set(AMINO_ACIDS) | {"X"}
SMILES_TOKEN = re.compile(
    r"(\[[^\]\s]+]|Br?|Cl?|N|O|S|P|F|I|b|c|n|o|s|p|\(|\)|\.|=|#|-|\+|\\|/|:|~|@|\?|>|\*|\$|%[0-9]{2}|[0-9])"
)
SMILES_SAMPLING = ["C", "c", "N", "n", "O", "o", "S", "s", "F", "Cl", "Br", "I", "P",
                   "(", ")", "=", "#", "1", "2", "[nH]", "[C@H]", "[C@@H]"]


class Refused(Exception):
    pass


def tokenize_protein(s):
    toks = [c.upper() for c in s]
    for i, t in enumerate(toks):
        if t not in PROTEIN_TOKENS:
            raise Refused(f"invalid residue {s[i]!r} at position {i}")
    return toks


def tokenize_smiles(s):
    toks, cursor = [], 0
    for m in SMILES_TOKEN.finditer(s):
        if m.start() != cursor:
            raise Refused(f"untokenizable SMILES at position {cursor}")
        toks.append(m.group(0))
        cursor = m.end()
    if cursor != len(s):
        raise Refused(f"untokenizable SMILES at position {cursor}")
    return toks


def payload_tokens(payload):
    if not isinstance(payload, dict):
        raise Refused("bad payload")
    seq, smi = payload.get("sequence"), payload.get("smiles")
    if (seq is None) == (smi is None):
        raise Refused("payload needs exactly one of sequence or smiles")
    if seq is not None:
        return "protein", tokenize_protein(seq)
    return "smiles", tokenize_smiles(smi)


def parse_fitness(spec):
    if spec in ("glycine", "default"):
        return lambda toks: toks.count("G") - 0.1 * len(toks)
    kind, _, arg = spec.partition(":")
    if kind == "count" and arg:
        return lambda toks: float(toks.count(arg))
    if kind == "constant":
        value = float(arg)
        return lambda toks: value
    raise SystemExit(f"unknown fitness {spec!r}")


def toy_valid(toks):
    depth, rings = 0, {}
    for t in toks:
        if t == "(":
            depth += 1
        elif t == ")":
            depth -= 1
            if depth < 0:
                return False
        elif t.startswith("%") or t.isdigit():
            rings[t] = rings.get(t, 0) + 1
    return depth == 0 and all(c % 2 == 0 for c in rings.values())


def mol_props(toks):
    if not toks or not toy_valid(toks):
        return {"valid": False}
    n_c = sum(t in ("C", "c") for t in toks)
    n_no = sum(t in ("N", "O", "n", "o") for t in toks)
    hbd = sum(t.startswith("[") and "H" in t for t in toks)
    return {
        "valid": True,
        "logp": 0.5 * n_c - 0.3 * n_no,
        "qed": (0.1 * len(toks)) % 1.0,
        "tpsa": 20.0 * n_no,
        "hba": n_no,
        "hbd": hbd,
    }


def fnv1a(data):
    h = 0xCBF29CE484222325
    for b in data:
        h ^= b
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


def fingerprint(toks):
    bits = {fnv1a(t.encode()) % FINGERPRINT_BITS for t in toks}
    bits |= {fnv1a(f"{a}\x1f{b}".encode()) % FINGERPRINT_BITS for a, b in zip(toks, toks[1:])}
    return {"n_bits": FINGERPRINT_BITS, "on_bits": sorted(bits)}


def parse_heads(spec):
    if spec is None:
        return None
    if spec == "zero":
        return (0.0, 0.0, 0.0)
    kind, _, arg = spec.partition(":")
    rates = [float(x) for x in arg.split(",")] if arg else []
    if kind == "uniform" and len(rates) == 1:
        return (rates[0],) * 3
    if kind == "uniform" and len(rates) == 3:
        return tuple(rates)
    raise SystemExit(f"unknown heads {spec!r}")


def editflow_heads(payload, rates):
    kind, toks = payload_tokens(payload)
    vocab = list(AMINO_ACIDS) if kind == "protein" else SMILES_SAMPLING
    n = len(toks)
    u = [1.0 / len(vocab)] * len(vocab)
    ins, dele, sub = rates
    return {
        "vocab": vocab,
        "ins_rate": [ins] * (n + 1),
        "del_rate": [dele] * n,
        "sub_rate": [sub] * n,
        "q_ins": [u] * (n + 1),
        "q_sub": [u] * n,
    }


class Oracle:
    def __init__(self, fitness, heads):
        self.fitness = fitness
        self.heads = heads

    def capabilities(self):
        caps = ["fitness", "mol_props", "validity", "fingerprint", "canonicalize", "batch"]
        if self.heads is not None:
            caps.append("editflow_heads")
        return caps

    def call(self, op, payload):
        if op == "describe":
            return {
                "protocol": PROTOCOL_VERSION,
                "capabilities": self.capabilities(),
                "fingerprint": {"kind": "toy-fnv-bigram", "n_bits": FINGERPRINT_BITS},
                "name": "mock_oracle.py",
            }
        if op == "fitness":
            return {"score": self.fitness(payload_tokens(payload)[1])}
        if op == "mol_props":
            return mol_props(payload_tokens(payload)[1])
        if op == "validity":
            return {"valid": mol_props(payload_tokens(payload)[1])["valid"]}
        if op == "fingerprint":
            return fingerprint(payload_tokens(payload)[1])
        if op == "canonicalize":
            return {"smiles": "".join(payload_tokens(payload)[1]).upper()}
        if op == "editflow_heads" and self.heads is not None:
            return editflow_heads(payload, self.heads)
        if op == "batch":
            requests = payload.get("requests") if isinstance(payload, dict) else None
            if not isinstance(requests, list):
                raise Refused("batch payload needs a requests array")
            results = []
            for r in requests:
                if r.get("op") == "batch":
                    raise Refused("nested batch")
                try:
                    results.append({"ok": True, "result": self.call(r.get("op", ""), r.get("payload"))})
                except Refused as e:
                    results.append({"ok": False, "error": str(e)})
            return {"results": results}
        raise Refused(f"unsupported op {op!r}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--fitness", default="glycine", help="glycine | count:<tok> | constant:<v>")
    ap.add_argument("--heads", default=None, help="answer editflow_heads: zero | uniform:<r>[,<d>,<s>]")
    ap.add_argument("--delay-ms", type=float, default=0.0, help="sleep before every response")
    args = ap.parse_args()
    oracle = Oracle(parse_fitness(args.fitness), parse_heads(args.heads))

    for line in sys.stdin:
        if not line.strip():
            continue
        try:
            req = json.loads(line)
            rid, op = req["id"], req["op"]
        except (ValueError, KeyError, TypeError) as e:
            resp = {"id": 0, "ok": False, "error": f"malformed request: {e}"}
        else:
            try:
                resp = {"id": rid, "ok": True, "result": oracle.call(op, req.get("payload"))}
            except Refused as e:
                resp = {"id": rid, "ok": False, "error": str(e)}
        if args.delay_ms:
            time.sleep(args.delay_ms / 1000.0)
        sys.stdout.write(json.dumps(resp, separators=(",", ":")) + "\n")
        sys.stdout.flush()


if __name__ == "__main__":
    main()
