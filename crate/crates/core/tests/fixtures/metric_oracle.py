# Independent reference values for the chrF/BLEU fixtures (sacrebleu 2.6.0).
# Run: python3 metric_oracle.py metric_pairs.tsv
import sys
from sacrebleu.metrics import BLEU, CHRF

hyps, refs = [], []
with open(sys.argv[1], encoding="utf-8") as f:
    for line in f:
        h, r = line.rstrip("\n").split("\t")
        hyps.append(h)
        refs.append(r)

chrf = CHRF()
bleu = BLEU(tokenize="none", smooth_method="add-k")
print("corpus_chrf", chrf.corpus_score(hyps, [refs]).score)
print("corpus_bleu", bleu.corpus_score(hyps, [refs]).score)
print("pair_chrf_abcd_abce", chrf.sentence_score("abcd", ["abce"]).score)
print("tiny_bleu", bleu.corpus_score(["the cat sat on the mat", "a b c"], [["the cat is on the mat", "a b d"]]).score)
for i, (h, r) in enumerate(zip(hyps, refs)):
    print("sent_chrf", i, chrf.sentence_score(h, [r]).score)
