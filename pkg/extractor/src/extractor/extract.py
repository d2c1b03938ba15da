"""Dump next-token distributions from a pretrained causal language model.

Reads a plain-text corpus (one sequence per line), runs the model over
each sequence, and for every position t >= 1 emits one JSONL record
holding the model's distribution at position t-1 with gold = the token
actually observed at t. The output is the same record format the
conformal-topp package reads: dense rows carry the full probability
vector, top-k rows carry ("ids", "probs", "tail") with tail = 1 - sum of
the kept mass. A first metadata line records the model id, vocabulary
size, tokenizer id, and the fraction of golds found inside the top-k.

Inference is float32 on CPU by default; softmax rounding means row sums
can be off by ~1e-5, so downstream validation should use a relaxed
epsilon (conformal-topp validate --eps 1e-4).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
from transformers import AutoModelForCausalLM, AutoTokenizer

log = logging.getLogger("extractor")

# rows counted as gold_in_topk use this k when running dense
DEFAULT_GOLD_K = 100


@dataclass
class ExtractionJob:
    model: str                      # model id or local path
    corpus: str                     # plain text, one sequence per line
    out: str                        # output JSONL path
    top_k: Optional[int] = None     # None = dense rows
    max_sequences: Optional[int] = None
    device: str = "cpu"
    mask_special_tokens: bool = False


def _context_limit(model) -> int:
    cfg = model.config
    for name in ("n_positions", "max_position_embeddings", "n_ctx"):
        v = getattr(cfg, name, None)
        if v is not None:
            return int(v)
    return 10**9


def _row_obj(seq_id: int, pos: int, gold: int, vocab: int,
             probs: np.ndarray, top_k: Optional[int]) -> dict:
    if top_k is None:
        return {"seq": seq_id, "pos": pos, "gold": gold, "vocab": vocab,
                "probs": [float(x) for x in probs]}
    idx = np.argpartition(probs, -top_k)[-top_k:]
    idx = idx[np.argsort(-probs[idx], kind="stable")]
    kept = probs[idx]
    tail = max(0.0, 1.0 - float(kept.sum()))
    return {"seq": seq_id, "pos": pos, "gold": gold, "vocab": vocab,
            "ids": [int(i) for i in idx],
            "probs": [float(x) for x in kept],
            "tail": tail}


def extract(job: ExtractionJob) -> dict:
    """Run the job; returns a summary dict (counts, truncations)."""
    if job.top_k is not None and job.top_k < 1:
        raise ValueError("top_k must be >= 1 when set")

    tokenizer = AutoTokenizer.from_pretrained(job.model)
    model = AutoModelForCausalLM.from_pretrained(job.model)
    model.to(job.device)
    model.eval()

    vocab = int(model.config.vocab_size)
    if job.top_k is not None and job.top_k >= vocab:
        raise ValueError(f"top_k={job.top_k} must be < vocab_size={vocab}")
    limit = _context_limit(model)

    mask = None
    if job.mask_special_tokens and tokenizer.all_special_ids:
        mask = torch.zeros(vocab, dtype=torch.bool)
        for i in tokenizer.all_special_ids:
            if 0 <= i < vocab:
                mask[i] = True

    gold_k = job.top_k if job.top_k is not None else min(DEFAULT_GOLD_K, vocab)
    n_rows = 0
    n_seqs = 0
    n_truncated = 0
    n_gold_in_topk = 0

    with open(job.corpus, "r", encoding="utf-8") as src, \
            open(job.out, "w", encoding="utf-8") as out, \
            torch.no_grad():
        # the metadata line carries gold_in_topk, which is only known after
        # the last row, so rows are buffered and written after it
        rows: list[str] = []
        for line in src:
            text = line.strip()
            if not text:
                continue
            if job.max_sequences is not None and n_seqs >= job.max_sequences:
                break
            ids = tokenizer.encode(text)
            if len(ids) > limit:
                ids = ids[:limit]
                n_truncated += 1
            if len(ids) < 2:
                continue
            x = torch.tensor([ids], device=job.device)
            logits = model(x).logits[0]          # (L, vocab)
            if mask is not None:
                logits = logits.masked_fill(mask, float("-inf"))
            probs = torch.softmax(logits.float(), dim=-1).cpu().numpy()
            topk_ids = np.argsort(-probs, axis=1, kind="stable")[:, :gold_k]
            for t in range(1, len(ids)):
                gold = int(ids[t])
                n_gold_in_topk += gold in topk_ids[t - 1]
                rows.append(json.dumps(
                    _row_obj(n_seqs, t, gold, vocab, probs[t - 1], job.top_k)))
                n_rows += 1
            n_seqs += 1

        meta = {"model": job.model, "vocab": vocab,
                "tokenizer": tokenizer.__class__.__name__,
                "gold_in_topk": round(n_gold_in_topk / max(1, n_rows), 6)}
        out.write(json.dumps({"meta": meta}) + "\n")
        out.write("\n".join(rows) + "\n")

    if n_truncated:
        log.info("truncated %d sequence(s) to the model context (%d tokens)",
                 n_truncated, limit)
    return {"n_sequences": n_seqs, "n_records": n_rows,
            "n_truncated": n_truncated, "gold_in_topk": meta["gold_in_topk"],
            "out": job.out}


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        description="dump next-token distributions into the JSONL record format")
    ap.add_argument("model", help="model id or local path")
    ap.add_argument("corpus", help="plain text corpus, one sequence per line")
    ap.add_argument("out", help="output JSONL path")
    ap.add_argument("--top-k", type=int, default=None,
                    help="keep only the top-k probabilities per row (default: dense)")
    ap.add_argument("--max-sequences", type=int, default=None)
    ap.add_argument("--device", default="cpu")
    ap.add_argument("--mask-special-tokens", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    job = ExtractionJob(args.model, args.corpus, args.out, top_k=args.top_k,
                        max_sequences=args.max_sequences, device=args.device,
                        mask_special_tokens=args.mask_special_tokens)
    try:
        summary = extract(job)
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    print(json.dumps(summary))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
