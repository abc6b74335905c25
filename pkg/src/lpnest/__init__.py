"""L^p-nested symmetric priors, desk-scale VAEs and variational-bias toy models."""

from .dist import LpNestedDistribution, generalized_gaussian, kurtosis_to_p, p_to_kurtosis
from .tree import Leaf, LpTree, Node, eval_f, flat_tree, make_isa_tree

__version__ = "0.1.0"
