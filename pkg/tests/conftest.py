import os
import sys

# Add src to path
src_dir = os.path.join(os.path.dirname(__file__), '..', 'src')
if src_dir not in sys.path:
    sys.path.insert(0, src_dir)

from rule_tree import Internal, Leaf, RuleTree  # noqa: E402


def random_node(rng, dim, max_depth):
    if max_depth == 0 or rng.random() < 0.35:
        return Leaf(int(rng.choice((-1, 1))))
    return Internal(tuple(random_node(rng, dim, max_depth - 1) for _ in range(1 << dim)))


def random_rule(rng, dim, max_depth=4):
    return RuleTree(dim, random_node(rng, dim, max_depth))
