"""
Asking an LLM how two classes differ
====================================

Builds the chat prompt for a class pair, parses a response into
(attribute, caption 1, caption 2) records and splits them into per-class sets.
"""

from fudd.diffgen import build_pair_prompt, pairwise_sets, parse_differential_response

prompt = build_pair_prompt("black-footed albatross", "laysan albatross")
for role, content in prompt.messages:
    print(f"[{role}]\n{content}\n")

# %%
# A response in the expected block format. The stray chatter and the
# incomplete "Tail" block are tolerated and counted.
response = """Sure, here you go.

Visual characteristic: Bill color
Caption 1: A photo of a black-footed albatross, with a dark bill.
Caption 2: A photo of a laysan albatross, with a pink bill.

Visual characteristic: Tail
Caption 1: A photo of a black-footed albatross, with a dark tail.

Visual characteristic: Plumage
Caption 1: A photo of a black-footed albatross, with sooty brown plumage.
Caption 2: A photo of a laysan albatross, with a white head and body.
"""
records, skipped = parse_differential_response(response)
print(f"{len(records)} records, {skipped} skipped")

bf, ls = pairwise_sets(records, "albatross_bf", "albatross_ls")
for d in bf:
    print(" bf:", d.attribute, "|", d.text)
for d in ls:
    print(" ls:", d.attribute, "|", d.text)
