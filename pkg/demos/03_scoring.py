"""Transcript normalization, GLM rewriting, alignment and the report tables.

Run: python demos/03_scoring.py
"""
from convasr.scoring import (
    align,
    error_tables,
    normalize,
    parse_glm,
    render,
    render_error_tables,
    score_corpus,
    wer_table,
)
from convasr.scoring.normalize import describe

line = "well... i was [laughter] %hes at the sto- store -- you know, {no speech} yes!"
print("raw       :", line)
print("normalized:", render(normalize(line)))
print("scorable  :", render(t for t in normalize(line) if t.scorable))
print("tags      :", describe(normalize(line))[1])

glm = parse_glm("T. V. => TV\nokay => ok\n")
refs = {
    "swb_1": "i watched T. V. last night",
    "swb_2": "okay so that was fun",
    "ch_1": "uh we went to the store",
    "ch_2": "it is in the car",
}
hyps = {
    "swb_1": "i watch TV last night",
    "swb_2": "ok so it was fun",
    "ch_1": "we went to a store",
    "ch_2": "it was and the car too",
}

a = align("it is in the car".split(), "it was and the car too".split())
print("\nalignment:", [(op, r, h) for op, r, h in a.pairs])
print(f"sub={a.subs} del={a.dels} ins={a.ins} wer={100 * a.wer:.1f}%")

with_glm = score_corpus(refs, hyps, glm)
plain = score_corpus(refs, hyps)
print()
print(with_glm.text(), end="")
print("\n".join(with_glm.summary_lines()))
print()
print(wer_table({"system (GLM)": with_glm, "system (no GLM)": plain}, ["ch", "swb", "overall"]), end="")
print()
print(render_error_tables(error_tables(list(with_glm.alignments.values()), top_n=5)), end="")
