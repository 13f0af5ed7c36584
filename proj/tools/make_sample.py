#!/usr/bin/env python3
"""Generate the bundled synthetic sample: tweets, opinion labels, word vectors, EEF, config.

Output is deterministic for a given --seed.
"""
import argparse
import csv
import json
import random
import struct
from pathlib import Path

AIRLINES = ["United", "Delta", "Southwest", "US Airways", "American", "Virgin America"]
REASONS = ["Late Flight", "Customer Service Issue", "Lost Luggage", "Cancelled Flight", "Bad Flight"]

THEMES = {
    "negative": ["late", "delayed", "cancelled", "rude", "lost", "waiting", "worst", "hours", "stuck", "refund",
                 "terrible", "missed", "broken", "dirty", "angry"],
    "neutral": ["boarding", "schedule", "question", "gate", "terminal", "tomorrow", "route", "status", "policy",
                "announcement", "checkin", "itinerary", "weather", "updates", "dm"],
    "positive": ["great", "thanks", "awesome", "friendly", "smooth", "love", "amazing", "helpful", "comfortable",
                 "perfect", "best", "enjoyed", "kudos", "happy", "excellent"],
}
# Product aspects that make a tweet actionable feedback.
ASPECTS = ["seat", "wifi", "food", "baggage", "booking", "app", "legroom", "crew", "service", "upgrade"]
FILLER = ["flight", "plane", "today", "trip", "airport", "ticket", "customer", "agent"]
STOP = ["the", "my", "was", "and", "to", "is", "a", "on", "for", "so", "very", "again", "this", "with"]
PUNCT = ["!", "!!", "?", ".", "...", " :(", " :)", ","]


def tweet(rng, sentiment, opinion, airline):
    words = rng.sample(THEMES[sentiment], rng.randint(2, 4)) + rng.sample(FILLER, rng.randint(1, 2))
    if opinion:
        words += rng.sample(ASPECTS, rng.randint(1, 2))
    words += rng.sample(STOP, rng.randint(2, 4))
    rng.shuffle(words)
    text = " ".join(w.upper() if rng.random() < 0.1 else w for w in words)
    text = f"@{airline.replace(' ', '').lower()} {text}{rng.choice(PUNCT)}"
    if rng.random() < 0.2:
        text += f" http://t.co/{rng.getrandbits(24):06x}"
    return text


def write_vectors(path, vocab, dim, rng):
    centres = {s: [rng.gauss(0, 1) for _ in range(dim)] for s in THEMES}
    aspect_centre = [rng.gauss(0, 1) for _ in range(dim)]
    with open(path, "wb") as f:
        f.write(f"{len(vocab)} {dim}\n".encode())
        for word in vocab:
            base = next((centres[s] for s, ws in THEMES.items() if word in ws), None)
            if base is None:
                base = aspect_centre if word in ASPECTS else [0.0] * dim
            vec = [b + rng.gauss(0, 0.35) for b in base]
            f.write(word.encode() + b" " + struct.pack(f"<{dim}f", *vec) + b"\n")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="data/sample")
    ap.add_argument("--seed", type=int, default=20201)
    ap.add_argument("--n", type=int, default=200)
    ap.add_argument("--dim", type=int, default=50)
    ap.add_argument("--eef-dim", type=int, default=24)
    args = ap.parse_args()
    rng = random.Random(args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    # Roughly the class balance of the real corpus: 63% / 21% / 16%.
    sentiments = ["negative"] * round(args.n * 0.63) + ["neutral"] * round(args.n * 0.21)
    sentiments += ["positive"] * (args.n - len(sentiments))
    rng.shuffle(sentiments)

    rows, labels = [], []
    for i, s in enumerate(sentiments):
        tid = str(570300000000000000 + i * 7919)
        airline = rng.choice(AIRLINES)
        opinion = rng.random() < 0.55
        reason = rng.choice(REASONS) if s == "negative" else ""
        rows.append([tid, s, reason, airline, tweet(rng, s, opinion, airline)])
        if i < int(args.n * 0.6):
            labels.append([tid, "yes" if opinion else "no"])

    with open(out / "tweets.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["tweet_id", "airline_sentiment", "negativereason", "airline", "text"])
        w.writerows(rows)
    with open(out / "opinion_labels.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["tweet_id", "opinion"])
        w.writerows(labels)

    vocab = sorted({w for ws in THEMES.values() for w in ws} | set(ASPECTS) | set(FILLER))
    write_vectors(out / "vectors.bin", vocab, args.dim, rng)

    # Stand-in for contextual sentence embeddings: class centre plus noise.
    centres = {s: [rng.gauss(0, 1) for _ in range(args.eef_dim)] for s in THEMES}
    with open(out / "precomputed.eef", "w") as f:
        f.write(f"EEF1 {len(rows)} {args.eef_dim}\n")
        for tid, s, *_ in rows:
            vec = [c + rng.gauss(0, 0.8) for c in centres[s]]
            f.write(tid + "\t" + " ".join(repr(float(struct.unpack("<f", struct.pack("<f", v))[0])) for v in vec) + "\n")

    config = {
        "dataset": "tweets.csv",
        "opinion_labels": "opinion_labels.csv",
        "stopwords": "../stopwords.txt",
        "vectors": "vectors.bin",
        "precomputed": "precomputed.eef",
        "output_dir": "../../build/sample_run",
        "seed": 7,
        "model": "brf",
        "embedding": "wordvec",
        "brf": {"n_trees": 60},
        "mlp": {"epochs": 60, "batch_size": 32},
        "search": {"n_iter": 4, "n_trees": [20, 60]},
        "wordgraph": {"edge_threshold": 0.2, "top_terms": 60},
    }
    (out / "config.json").write_text(json.dumps(config, indent=2) + "\n")


if __name__ == "__main__":
    main()
