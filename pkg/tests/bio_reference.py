"""Brute-force BIO span reference, written from the span definition rather than a state machine.

A span (a, b) is decoded iff token a opens a span (it is B, or it is I with
nothing open before it: a == 0 or tag a-1 is O), every token in (a, b] is I,
and the span is maximal (b is last, or tag b+1 is not I).
"""


def reference_spans(tags):
    tags = list(tags)
    n = len(tags)
    out = []
    for a in range(n):
        opens = tags[a] == "B" or (tags[a] == "I" and (a == 0 or tags[a - 1] == "O"))
        if not opens:
            continue
        for b in range(a, n):
            if all(t == "I" for t in tags[a + 1 : b + 1]) and (b == n - 1 or tags[b + 1] != "I"):
                out.append((a, b))
    return sorted(out)
